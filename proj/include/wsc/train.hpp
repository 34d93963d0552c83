#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wsc/datagen.hpp"
#include "wsc/glc.hpp"
#include "wsc/model.hpp"

namespace wsc {

struct TrainConfig {
  ModelConfig model;
  PartitionGrid grid{2, 2};
  double alpha = 1.0;
  int batch_size = 6;
  int epochs = 300;
  AdamOptions adam;  // lr 1e-3 suits the from-scratch toy stack
  std::uint64_t seed = 1;
  bool glc_detach_global = false;
  bool use_gt_sum_loss = false;     // ablation arm: L_r + L_gt
  double label_noise_sigma = 0.0;   // perturbs training labels only

  void validate() const {
    model.validate();
    if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("config: epochs must be >= 1");
    if (grid.rows < 1 || grid.cols < 1)
      throw ValidationError("config: grid dims must be positive");
    if (alpha < 0.0) throw ValidationError("config: alpha must be >= 0");
    if (label_noise_sigma < 0.0)
      throw ValidationError("config: label_noise_sigma must be >= 0");
  }
};

struct EpochRecord {
  LossBundle losses;      // epoch means over batches
  double val_mae = 0.0;   // 0 when no validation set is supplied
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochRecord> history;
};

inline double predict_count(const ParamSet& params, const ModelConfig& cfg,
                            const Tensor& image) {
  return predict(params, cfg, image).count.item();
}

// One full training run: per epoch, shuffle (seeded), assemble interleaved
// batches, forward all b*(n+1) items on one tape, combine the losses,
// backpropagate, and take an Adam step. Fully deterministic given cfg.seed.
inline TrainResult train(const TrainConfig& cfg,
                         const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set = {}) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty dataset");

  const int input = cfg.model.backbone.input_size;
  const bool need_locals = cfg.alpha != 0.0 || cfg.use_gt_sum_loss;
  const int n = cfg.grid.n();

  // Fixed noisy labels for the whole run, drawn from a dedicated stream.
  std::vector<double> counts(train_set.size());
  {
    Rng noise_rng = Rng(cfg.seed).substream(0x6e6f697365ULL);  // "noise"
    for (std::size_t i = 0; i < train_set.size(); ++i)
      counts[i] =
          inject_label_noise(train_set[i].count, cfg.label_noise_sigma,
                             noise_rng);
  }

  // Per-sample items are deterministic, so resize/partition once up front.
  std::vector<TrainingBatch> prepared(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    prepared[i] = need_locals
                      ? assemble_batch({train_set[i]}, cfg.grid, input)
                      : TrainingBatch{
                            {resize_bilinear(train_set[i].image, input, input)
                                 .reshape({1, input, input})},
                            {train_set[i].count},
                            1,
                            0};
  }

  TrainResult result;
  result.params = init_model_params(cfg.model, cfg.seed);
  AdamState adam(cfg.adam);
  Rng shuffle_rng = Rng(cfg.seed).substream(0x73687566ULL);  // "shuf"

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    double sum_lr = 0.0, sum_lc = 0.0, sum_lgt = 0.0, sum_total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + cfg.batch_size);

      Tape tape;
      ParamSet watched = tape.watch_all(result.params);
      std::vector<Tensor> global_preds;
      std::vector<std::vector<Tensor>> local_preds;
      std::vector<double> batch_counts;
      for (std::size_t s = start; s < stop; ++s) {
        const TrainingBatch& items = prepared[order[s]];
        batch_counts.push_back(counts[order[s]]);
        global_preds.push_back(
            predict(watched, cfg.model, items.items[0]).count);
        if (need_locals) {
          std::vector<Tensor> locals;
          for (int j = 0; j < n; ++j)
            locals.push_back(
                predict(watched, cfg.model, items.items[1 + j]).count);
          local_preds.push_back(std::move(locals));
        }
      }

      Tensor l_r = regression_loss(global_preds, batch_counts);
      LossBundle bundle;
      bundle.alpha = cfg.alpha;
      bundle.l_r = l_r.item();
      Tensor total = l_r;
      if (cfg.use_gt_sum_loss) {
        Tensor l_gt = gt_sum_loss(local_preds, batch_counts);
        bundle.l_gt = l_gt.item();
        total = total_loss(l_r, l_gt, cfg.alpha);
      } else if (cfg.alpha != 0.0) {
        Tensor l_c = glc_loss(global_preds, local_preds,
                              cfg.glc_detach_global);
        bundle.l_c = l_c.item();
        total = total_loss(l_r, l_c, cfg.alpha);
      }
      bundle.total = total.item();
      if (!std::isfinite(bundle.total))
        throw NumericError("train: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batches));

      GradTable grads = tape.backward(total);
      ParamSet grad_set;
      for (const auto& [name, t] : watched)
        grad_set.emplace(name, grads.at(t));
      adam_step(result.params, grad_set, adam);

      if (result.params.count("sfsl.f_hat")) {
        const Tensor& fh = result.params.at("sfsl.f_hat");
        double sq = 0.0;
        for (int i = 0; i < fh.size(); ++i) sq += fh[i] * fh[i];
        if (std::sqrt(sq) < kFHatNormFloor)
          throw NumericError("train: sfsl.f_hat norm underflow at epoch " +
                             std::to_string(epoch));
      }

      sum_lr += bundle.l_r;
      sum_lc += bundle.l_c;
      if (bundle.l_gt) sum_lgt += *bundle.l_gt;
      sum_total += bundle.total;
      ++batches;
    }

    EpochRecord rec;
    rec.losses.alpha = cfg.alpha;
    rec.losses.l_r = sum_lr / batches;
    rec.losses.l_c = sum_lc / batches;
    if (cfg.use_gt_sum_loss) rec.losses.l_gt = sum_lgt / batches;
    rec.losses.total = sum_total / batches;
    if (!val_set.empty()) {
      double abs_err = 0.0;
      for (const Sample& s : val_set) {
        Tensor img = resize_bilinear(s.image, input, input)
                         .reshape({1, input, input});
        abs_err += std::abs(predict_count(result.params, cfg.model, img) -
                            s.count);
      }
      rec.val_mae = abs_err / val_set.size();
    }
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace wsc
