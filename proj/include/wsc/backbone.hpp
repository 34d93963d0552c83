#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wsc/ops.hpp"
#include "wsc/tensor.hpp"

namespace wsc {

enum class BackboneVariant { kConv, kToken };

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kConv;
  int input_size = 64;
  int feature_dim = 16;  // D
  // conv stack
  int conv_layers = 4;
  int conv_kernel = 3;
  int conv_downsample = 8;
  // token encoder
  int token_patch = 16;
  int token_layers = 2;
  int token_heads = 4;
  int token_mlp = 64;

  void validate() const {
    if (input_size < 8)
      throw ValidationError("config: input_size must be >= 8");
    if (feature_dim < 1)
      throw ValidationError("config: feature_dim must be positive");
    if (variant == BackboneVariant::kConv) {
      if (conv_layers < 1)
        throw ValidationError("config: conv_layers must be positive");
      if (conv_kernel < 1 || conv_kernel % 2 == 0)
        throw ValidationError("config: conv_kernel must be odd and positive");
      int d = conv_downsample, twos = 0;
      while (d > 1 && d % 2 == 0) {
        d /= 2;
        ++twos;
      }
      if (d != 1)
        throw ValidationError("config: conv_downsample must be a power of two");
      if (twos > conv_layers)
        throw ValidationError(
            "config: conv_downsample needs more stride-2 layers than "
            "conv_layers provides");
      if (input_size % conv_downsample != 0)
        throw ValidationError(
            "config: input_size not divisible by conv_downsample");
    } else {
      if (token_patch < 1 || input_size % token_patch != 0)
        throw ValidationError("config: input_size not divisible by token_patch");
      if (token_heads < 1 || feature_dim % token_heads != 0)
        throw ValidationError(
            "config: feature_dim not divisible by token_heads");
      if (token_layers < 1)
        throw ValidationError("config: token_layers must be positive");
      if (token_mlp < 1)
        throw ValidationError("config: token_mlp must be positive");
    }
  }

  // side of the feature grid (conv) or patch-token grid (token)
  int grid_side() const {
    return variant == BackboneVariant::kConv ? input_size / conv_downsample
                                             : input_size / token_patch;
  }

  // number of positions M (= K tokens for the token variant)
  int positions() const { return grid_side() * grid_side(); }

  int stride2_layers() const {
    int d = conv_downsample, twos = 0;
    while (d > 1) {
      d /= 2;
      ++twos;
    }
    return twos;
  }
};

// Per-position feature vectors: features is [M, D]; (rows, cols) give the
// spatial layout of the M positions.
struct FeatureMap {
  Tensor features;
  int rows = 0;
  int cols = 0;
};

namespace detail {

inline Tensor glorot(std::vector<int> shape, int fan_in, int fan_out,
                     Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
  return t;
}

// b [n] broadcast over the rows of an [m, n] matrix.
inline Tensor bias_rows(const Tensor& b, int m) {
  const int n = b.size();
  return matmul(Tensor::full({m, 1}, 1.0), b.reshape({1, n}));
}

// b [C] broadcast over the h*w positions of a [C, hw] matrix.
inline Tensor bias_channels(const Tensor& b, int hw) {
  const int c = b.size();
  return matmul(b.reshape({c, 1}), Tensor::full({1, hw}, 1.0));
}

}  // namespace detail

// Deterministic Glorot-uniform weights, zero biases. Draw order is the
// fixed construction order below, never map order.
inline ParamSet init_backbone_params(const BackboneConfig& cfg,
                                     std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p;
  const int D = cfg.feature_dim;
  if (cfg.variant == BackboneVariant::kConv) {
    const int k = cfg.conv_kernel;
    for (int l = 1; l <= cfg.conv_layers; ++l) {
      const int in_ch = l == 1 ? 1 : D;
      const std::string base = "backbone.conv" + std::to_string(l);
      p[base + ".weight"] =
          detail::glorot({D, in_ch, k, k}, in_ch * k * k, D * k * k, rng);
      p[base + ".bias"] = Tensor({D});
    }
    p["backbone.scale_head.weight"] = detail::glorot({D, 1}, D, 1, rng);
    p["backbone.scale_head.bias"] = Tensor({1});
  } else {
    const int P = cfg.token_patch;
    const int dh = D / cfg.token_heads;
    p["backbone.patch_embed.weight"] = detail::glorot({D, P * P}, P * P, D, rng);
    p["backbone.patch_embed.bias"] = Tensor({D});
    p["backbone.class_token"] = detail::glorot({1, D}, D, D, rng);
    for (int l = 1; l <= cfg.token_layers; ++l) {
      const std::string base = "backbone.layer" + std::to_string(l);
      for (int h = 1; h <= cfg.token_heads; ++h) {
        const std::string hb = base + ".attn.head" + std::to_string(h);
        p[hb + ".wq"] = detail::glorot({dh, D}, D, dh, rng);
        p[hb + ".bq"] = Tensor({dh});
        p[hb + ".wk"] = detail::glorot({dh, D}, D, dh, rng);
        p[hb + ".bk"] = Tensor({dh});
        p[hb + ".wv"] = detail::glorot({dh, D}, D, dh, rng);
        p[hb + ".bv"] = Tensor({dh});
      }
      p[base + ".attn.out.weight"] = detail::glorot({D, D}, D, D, rng);
      p[base + ".attn.out.bias"] = Tensor({D});
      p[base + ".mlp.fc1.weight"] =
          detail::glorot({cfg.token_mlp, D}, D, cfg.token_mlp, rng);
      p[base + ".mlp.fc1.bias"] = Tensor({cfg.token_mlp});
      p[base + ".mlp.fc2.weight"] =
          detail::glorot({D, cfg.token_mlp}, cfg.token_mlp, D, rng);
      p[base + ".mlp.fc2.bias"] = Tensor({D});
    }
  }
  return p;
}

namespace detail {

inline void check_image(const BackboneConfig& cfg, const Tensor& image) {
  const std::vector<int> want{1, cfg.input_size, cfg.input_size};
  if (image.shape() != want)
    throw ValidationError("backbone: image shape " + shape_str(image.shape()) +
                          " does not match config " + shape_str(want));
}

// Flattens image patches into a constant [K, P*P] matrix (row-major patch
// order). Patch extraction is pure data movement of the network input, so
// it is not taped.
inline Tensor patchify(const BackboneConfig& cfg, const Tensor& image) {
  const int S = cfg.input_size, P = cfg.token_patch;
  const int side = S / P, K = side * side;
  Tensor out({K, P * P});
  for (int py = 0; py < side; ++py)
    for (int px = 0; px < side; ++px) {
      double* dst = out.data() + (py * side + px) * P * P;
      for (int y = 0; y < P; ++y) {
        const double* src = image.data() + (py * P + y) * S + px * P;
        std::copy(src, src + P, dst + y * P);
      }
    }
  return out;
}

}  // namespace detail

// Multi-head self-attention for one encoder layer; returns the pre-residual
// output along with each head's attention matrix.
struct MhsaResult {
  Tensor output;                // [K+1, D]
  std::vector<Tensor> probs;    // per head, [K+1, K+1], rows sum to 1
};

inline MhsaResult multi_head_attention(const ParamSet& params,
                                       const BackboneConfig& cfg, int layer,
                                       const Tensor& x) {
  const int rows = x.shape()[0];
  const int dh = cfg.feature_dim / cfg.token_heads;
  const std::string base = "backbone.layer" + std::to_string(layer);
  MhsaResult res;
  std::vector<Tensor> heads;
  for (int h = 1; h <= cfg.token_heads; ++h) {
    const std::string hb = base + ".attn.head" + std::to_string(h);
    Tensor q = add(matmul(x, transpose(params.at(hb + ".wq"))),
                   detail::bias_rows(params.at(hb + ".bq"), rows));
    Tensor k = add(matmul(x, transpose(params.at(hb + ".wk"))),
                   detail::bias_rows(params.at(hb + ".bk"), rows));
    Tensor v = add(matmul(x, transpose(params.at(hb + ".wv"))),
                   detail::bias_rows(params.at(hb + ".bv"), rows));
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(dh)));
    Tensor probs = softmax_rows(scores);
    res.probs.push_back(probs);
    heads.push_back(matmul(probs, v));
  }
  Tensor cat = concat(heads, 1);
  res.output = add(matmul(cat, transpose(params.at(base + ".attn.out.weight"))),
                   detail::bias_rows(params.at(base + ".attn.out.bias"), rows));
  return res;
}

// Class-token encoder: patch embedding, learnable class token, then
// token_layers blocks of (self-attention + residual, relu MLP + residual).
// Returns the class-token output vector and the K token outputs.
inline std::pair<Tensor, Tensor> attention_encode(const ParamSet& params,
                                                  const BackboneConfig& cfg,
                                                  const Tensor& image) {
  if (cfg.variant != BackboneVariant::kToken)
    throw ValidationError("attention_encode: conv variant has no encoder");
  detail::check_image(cfg, image);
  const int D = cfg.feature_dim;
  const int K = cfg.positions();

  Tensor patches = detail::patchify(cfg, image);  // [K, P*P]
  Tensor tokens =
      add(matmul(patches, transpose(params.at("backbone.patch_embed.weight"))),
          detail::bias_rows(params.at("backbone.patch_embed.bias"), K));
  Tensor x = concat({params.at("backbone.class_token"), tokens}, 0);  // [K+1, D]

  for (int l = 1; l <= cfg.token_layers; ++l) {
    x = add(x, multi_head_attention(params, cfg, l, x).output);
    const std::string base = "backbone.layer" + std::to_string(l);
    Tensor h1 = relu(add(matmul(x, transpose(params.at(base + ".mlp.fc1.weight"))),
                         detail::bias_rows(params.at(base + ".mlp.fc1.bias"), K + 1)));
    Tensor h2 = add(matmul(h1, transpose(params.at(base + ".mlp.fc2.weight"))),
                    detail::bias_rows(params.at(base + ".mlp.fc2.bias"), K + 1));
    x = add(x, h2);
  }

  // split rows via constant selectors (no slice op needed)
  Tensor sel_class({1, K + 1});
  sel_class[0] = 1.0;
  Tensor sel_tokens({K, K + 1});
  for (int i = 0; i < K; ++i) sel_tokens[i * (K + 1) + i + 1] = 1.0;
  Tensor class_vec = matmul(sel_class, x).reshape({D});
  Tensor token_mat = matmul(sel_tokens, x);
  return {class_vec, token_mat};
}

// Per-position features f_i for either variant, differentiable through the
// tape when params are watched.
inline FeatureMap extract_features(const ParamSet& params,
                                   const BackboneConfig& cfg,
                                   const Tensor& image) {
  cfg.validate();
  detail::check_image(cfg, image);
  FeatureMap fm;
  fm.rows = fm.cols = cfg.grid_side();
  if (cfg.variant == BackboneVariant::kToken) {
    fm.features = attention_encode(params, cfg, image).second;
    return fm;
  }
  const int D = cfg.feature_dim, k = cfg.conv_kernel;
  const int s2 = cfg.stride2_layers();
  Tensor x = image;
  int side = cfg.input_size;
  for (int l = 1; l <= cfg.conv_layers; ++l) {
    const std::string base = "backbone.conv" + std::to_string(l);
    const int stride = l <= s2 ? 2 : 1;
    x = conv2d(x, params.at(base + ".weight"), stride, k / 2);
    side = x.shape()[1];
    Tensor biased = add(x.reshape({D, side * side}),
                        detail::bias_channels(params.at(base + ".bias"),
                                              side * side));
    x = relu(biased).reshape({D, side, side});
  }
  fm.features = transpose(x.reshape({D, side * side}));  // [M, D]
  return fm;
}

// 1x1 conv head on the feature map: one raw linear scalar per position,
// the predicted inverse scale. Conv variant only.
inline Tensor inverse_scale_map(const ParamSet& params,
                                const BackboneConfig& cfg,
                                const FeatureMap& fm) {
  if (cfg.variant != BackboneVariant::kConv)
    throw ValidationError(
        "inverse_scale_map: token variant has no scale map (the token head "
        "regresses from the class vector directly)");
  const int M = fm.features.shape()[0];
  Tensor out = add(matmul(fm.features, params.at("backbone.scale_head.weight")),
                   matmul(Tensor::full({M, 1}, 1.0),
                          params.at("backbone.scale_head.bias").reshape({1, 1})));
  return out.reshape({M});
}

}  // namespace wsc
