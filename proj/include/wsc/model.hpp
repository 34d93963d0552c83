#pragma once

#include <string>
#include <utility>

#include "wsc/backbone.hpp"
#include "wsc/sfsl.hpp"

namespace wsc {

enum class HeadKind { kSfsl, kDirect };

struct ModelConfig {
  BackboneConfig backbone;
  HeadKind head = HeadKind::kSfsl;
  int mlp_hidden1 = 128;
  int mlp_hidden2 = 64;

  void validate() const {
    backbone.validate();
    if (mlp_hidden1 < 1 || mlp_hidden2 < 1)
      throw ValidationError("config: mlp hidden widths must be positive");
  }
  bool is_token() const {
    return backbone.variant == BackboneVariant::kToken;
  }
};

namespace detail {

inline void init_mlp3(ParamSet& p, const std::string& prefix, int in_width,
                      int h1, int h2, Rng& rng) {
  p[prefix + "fc1.weight"] = glorot({h1, in_width}, in_width, h1, rng);
  p[prefix + "fc1.bias"] = Tensor({h1});
  p[prefix + "fc2.weight"] = glorot({h2, h1}, h1, h2, rng);
  p[prefix + "fc2.bias"] = Tensor({h2});
  p[prefix + "fc3.weight"] = glorot({1, h2}, h2, 1, rng);
  p[prefix + "fc3.bias"] = Tensor({1});
}

}  // namespace detail

// Backbone weights plus head weights in one deterministic draw sequence.
// f_hat initializes uniformly on the unit sphere.
inline ParamSet init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet p = init_backbone_params(cfg.backbone, seed);
  Rng rng = Rng(seed).substream(1);
  const int D = cfg.backbone.feature_dim;
  const int M = cfg.backbone.positions();

  if (cfg.head == HeadKind::kSfsl) {
    Tensor f_hat({D});
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int i = 0; i < D; ++i) {
        f_hat[i] = rng.normal();
        norm += f_hat[i] * f_hat[i];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (int i = 0; i < D; ++i) f_hat[i] /= norm;
    p["sfsl.f_hat"] = f_hat;

    if (cfg.is_token()) {
      if (M != D)
        p["sfsl.p_proj.weight"] = detail::glorot({D, M}, M, D, rng);
      p["sfsl.w"] = detail::glorot({2 * D}, 2 * D, 1, rng);
      p["sfsl.b"] = Tensor({1});
    } else {
      detail::init_mlp3(p, "sfsl.mlp.", 2 * M, cfg.mlp_hidden1,
                        cfg.mlp_hidden2, rng);
    }
  } else {
    if (cfg.is_token()) {
      p["direct.w"] = detail::glorot({D}, D, 1, rng);
      p["direct.b"] = Tensor({1});
    } else {
      // density head emitting d' directly, then the same MLP on [M]
      p["direct.head.weight"] = detail::glorot({D, 1}, D, 1, rng);
      p["direct.head.bias"] = Tensor({1});
      detail::init_mlp3(p, "direct.mlp.", M, cfg.mlp_hidden1, cfg.mlp_hidden2,
                        rng);
    }
  }
  return p;
}

struct Prediction {
  Tensor count;        // [1]
  Tensor probability;  // sfsl heads only: p over M positions / K tokens
  Tensor density;      // conv sfsl head only: d over M positions
  FeatureMap features;
};

// Full forward pass for one image. Runs taped when params are watched,
// plain otherwise.
inline Prediction predict(const ParamSet& params, const ModelConfig& cfg,
                          const Tensor& image) {
  Prediction out;
  if (cfg.is_token()) {
    auto [class_vec, tokens] = attention_encode(params, cfg.backbone, image);
    out.features.features = tokens;
    out.features.rows = out.features.cols = cfg.backbone.grid_side();
    if (cfg.head == HeadKind::kSfsl) {
      out.probability = probability_map(tokens, params.at("sfsl.f_hat"));
      out.count = regress_count_token(class_vec, out.probability, params);
    } else {
      Tensor c = matmul(params.at("direct.w").reshape({1, class_vec.size()}),
                        class_vec.reshape({class_vec.size(), 1}));
      out.count = add(c.reshape({1}), params.at("direct.b"));
    }
    return out;
  }

  out.features = extract_features(params, cfg.backbone, image);
  const int M = out.features.features.shape()[0];
  if (cfg.head == HeadKind::kSfsl) {
    Tensor inv_s = inverse_scale_map(params, cfg.backbone, out.features);
    out.probability = probability_map(out.features.features,
                                      params.at("sfsl.f_hat"));
    out.density = density_map(out.probability, inv_s);
    out.count = regress_count_cnn(out.density, out.probability, params);
  } else {
    Tensor dprime =
        add(matmul(out.features.features, params.at("direct.head.weight")),
            matmul(Tensor::full({M, 1}, 1.0),
                   params.at("direct.head.bias").reshape({1, 1})))
            .reshape({M});
    out.density = dprime;
    out.count = mlp3(params, "direct.mlp.", dprime.reshape({M, 1}));
  }
  return out;
}

// Spec-level entry point: variant dispatch for the count regressor.
// conv: d and p are the length-M density and probability vectors.
// token: d is the class-token output vector, p the token probabilities.
inline Tensor regress_count(const Tensor& d, const Tensor& p,
                            const ParamSet& params, const ModelConfig& cfg) {
  return cfg.is_token() ? regress_count_token(d, p, params)
                        : regress_count_cnn(d, p, params);
}

}  // namespace wsc
