#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wsc/image.hpp"
#include "wsc/ops.hpp"

namespace wsc {

struct Sample {
  Tensor image;  // [H,W]
  double count = 0.0;
};

// One training batch in interleaved order:
//   (I_1, I_1^1..I_1^n, I_2, ..., I_b^n)
// so item i*(n+1) is the i-th global image. Every item is resized to the
// model input size and carries a leading channel dim.
struct TrainingBatch {
  std::vector<Tensor> items;         // b*(n+1) tensors [1,S,S]
  std::vector<double> global_counts; // length b
  int b = 0;
  int n = 0;

  int global_index(int i) const { return i * (n + 1); }
  int local_index(int i, int j) const { return i * (n + 1) + 1 + j; }
};

inline TrainingBatch assemble_batch(const std::vector<Sample>& samples,
                                    const PartitionGrid& grid,
                                    int input_size) {
  if (samples.empty())
    throw ValidationError("assemble_batch: empty sample list");
  TrainingBatch batch;
  batch.b = static_cast<int>(samples.size());
  batch.n = grid.n();
  batch.items.reserve(batch.b * (batch.n + 1));
  for (const Sample& s : samples) {
    batch.global_counts.push_back(s.count);
    batch.items.push_back(resize_bilinear(s.image, input_size, input_size)
                              .reshape({1, input_size, input_size}));
    for (Tensor& tile : partition_image(s.image, grid))
      batch.items.push_back(resize_bilinear(tile, input_size, input_size)
                                .reshape({1, input_size, input_size}));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Losses (scalar tensors; taped when the predictions are)
// ---------------------------------------------------------------------------

// L_r = (1/b) sum_i (pred_i - count_i)^2
inline Tensor regression_loss(const std::vector<Tensor>& global_preds,
                              const std::vector<double>& counts) {
  if (global_preds.empty())
    throw ValidationError("regression_loss: empty prediction list");
  if (global_preds.size() != counts.size())
    throw ValidationError("regression_loss: " +
                          std::to_string(global_preds.size()) +
                          " predictions vs " + std::to_string(counts.size()) +
                          " counts");
  Tensor preds = concat(global_preds);
  Tensor target({preds.size()}, std::vector<double>(counts));
  Tensor diff = sub(preds, target);
  return mean(mul(diff, diff));
}

// L_c = (1/b) sum_i (sum_j local_ij - global_i)^2. Gradient flows into both
// the global and the local branches unless detach_global is set.
inline Tensor glc_loss(const std::vector<Tensor>& global_preds,
                       const std::vector<std::vector<Tensor>>& local_preds,
                       bool detach_global = false) {
  const std::size_t b = global_preds.size();
  if (b == 0 || local_preds.size() != b)
    throw ValidationError("glc_loss: shape mismatch, " + std::to_string(b) +
                          " globals vs " + std::to_string(local_preds.size()) +
                          " local groups");
  const std::size_t n = local_preds.front().size();
  std::vector<Tensor> squares;
  for (std::size_t i = 0; i < b; ++i) {
    if (local_preds[i].size() != n || n == 0)
      throw ValidationError("glc_loss: inconsistent subimage count at image " +
                            std::to_string(i));
    Tensor local_sum = sum(concat(local_preds[i]));
    Tensor g = detach_global ? global_preds[i].detached() : global_preds[i];
    Tensor gap = sub(local_sum, g);
    squares.push_back(mul(gap, gap));
  }
  return mean(concat(squares));
}

// Ablation arm: ties the local sums to the ground-truth counts instead of
// the global prediction.
inline Tensor gt_sum_loss(const std::vector<std::vector<Tensor>>& local_preds,
                          const std::vector<double>& counts) {
  if (local_preds.empty() || local_preds.size() != counts.size())
    throw ValidationError("gt_sum_loss: " + std::to_string(local_preds.size()) +
                          " local groups vs " + std::to_string(counts.size()) +
                          " counts");
  std::vector<Tensor> as_preds;
  for (double c : counts) as_preds.push_back(Tensor::scalar(c));
  return glc_loss(as_preds, local_preds, false);
}

// L_total = L_r + alpha * L_c (this exact expression; LossBundle records the
// same values).
inline Tensor total_loss(const Tensor& l_r, const Tensor& l_c, double alpha) {
  return add(l_r, scale(l_c, alpha));
}

struct LossBundle {
  double l_r = 0.0;
  double l_c = 0.0;
  std::optional<double> l_gt;
  double alpha = 1.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Standard Adam with bias correction; weight decay enters as an L2 term
// added to the gradient (classic coupled form). sfsl.f_hat is exempt from
// decay: shrinking it toward zero walks into the cosine singularity.
struct AdamState {
  AdamOptions opt;
  ParamSet m;
  ParamSet v;
  long step = 0;

  explicit AdamState(AdamOptions options = {}) : opt(options) {}
};

inline bool decay_exempt(const std::string& name) {
  return name == "sfsl.f_hat";
}

inline void adam_step(ParamSet& params, const ParamSet& grads,
                      AdamState& state) {
  if (state.step == 0) {
    for (const auto& [name, t] : params) {
      state.m.emplace(name, Tensor(t.shape()));
      state.v.emplace(name, Tensor(t.shape()));
    }
  }
  ++state.step;
  const AdamOptions& o = state.opt;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw ValidationError("adam_step: missing gradient for " + name);
    const Tensor& g = git->second;
    if (g.shape() != p.shape())
      throw ValidationError("adam_step: gradient shape " +
                            shape_str(g.shape()) + " vs param " +
                            shape_str(p.shape()) + " for " + name);
    const double wd = decay_exempt(name) ? 0.0 : o.weight_decay;
    Tensor& mt = state.m.at(name);
    Tensor& vt = state.v.at(name);
    for (int i = 0; i < p.size(); ++i) {
      const double gi = g[i] + wd * p[i];
      mt[i] = o.beta1 * mt[i] + (1.0 - o.beta1) * gi;
      vt[i] = o.beta2 * vt[i] + (1.0 - o.beta2) * gi * gi;
      const double mhat = mt[i] / bc1;
      const double vhat = vt[i] / bc2;
      p[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace wsc
