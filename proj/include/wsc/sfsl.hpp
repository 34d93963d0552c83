#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wsc/backbone.hpp"
#include "wsc/ops.hpp"

namespace wsc {

// The learnable cluster-center estimate for the positive (person) class.
// Its norm must stay above 1e-8; runs that drive it below are rejected
// rather than silently renormalized.
constexpr double kFHatNormFloor = 1e-8;
constexpr double kCosineEps = 1e-12;

namespace detail {

inline void check_f_hat_norm(const Tensor& f_hat) {
  double sq = 0.0;
  for (int i = 0; i < f_hat.size(); ++i) sq += f_hat[i] * f_hat[i];
  if (std::sqrt(sq) < kFHatNormFloor)
    throw NumericError(
        "sfsl.f_hat norm " + std::to_string(std::sqrt(sq)) +
        " underflowed the 1e-8 floor; rejecting the run");
}

}  // namespace detail

// Normalized cosine similarity of each feature row against f_hat:
//   p_i = dot(f_i, f_hat) / (2 * max(|f_i| * |f_hat|, 1e-12)) + 0.5
// The max() keeps the division guard clear of zero-feature rows; values lie
// in [0, 1] and the map is differentiable w.r.t. both arguments.
inline Tensor probability_map(const Tensor& features, const Tensor& f_hat) {
  if (features.shape().size() != 2)
    throw ValidationError("probability_map: features must be [M,D], got " +
                          shape_str(features.shape()));
  const int M = features.shape()[0], D = features.shape()[1];
  if (f_hat.size() != D)
    throw ValidationError("probability_map: dim mismatch, features " +
                          shape_str(features.shape()) + " vs f_hat " +
                          shape_str(f_hat.shape()));
  detail::check_f_hat_norm(f_hat);

  Tensor ones_d = Tensor::full({D, 1}, 1.0);
  Tensor dots = matmul(features, f_hat.reshape({D, 1}));            // [M,1]
  Tensor fnorm = sqrt(matmul(mul(features, features), ones_d));     // [M,1]
  Tensor hnorm = sqrt(sum(mul(f_hat, f_hat)));                      // [1]
  Tensor hcast = matmul(Tensor::full({M, 1}, 1.0), hnorm.reshape({1, 1}));
  Tensor u = mul(fnorm, hcast);
  Tensor eps = Tensor::full({M, 1}, kCosineEps);
  Tensor den = add(relu(sub(u, eps)), eps);
  Tensor half = Tensor::full({M, 1}, 0.5);
  return add(div(dots, scale(den, 2.0)), half).reshape({M});
}

// Scalar form of the map above.
inline Tensor cosine_similarity(const Tensor& f, const Tensor& f_hat) {
  if (f.shape().size() != 1 || f_hat.shape().size() != 1 ||
      f.size() != f_hat.size())
    throw ValidationError("cosine_similarity: length mismatch, " +
                          shape_str(f.shape()) + " vs " +
                          shape_str(f_hat.shape()));
  return probability_map(f.reshape({1, f.size()}), f_hat).reshape({1});
}

// d_i = p_i * inv_s_i
inline Tensor density_map(const Tensor& p, const Tensor& inv_s) {
  if (p.shape() != inv_s.shape())
    throw ValidationError("density_map: length mismatch, " +
                          shape_str(p.shape()) + " vs " +
                          shape_str(inv_s.shape()));
  return mul(p, inv_s);
}

// Validation-only score of the cluster-center objective: the sum over all
// positions of sim(f_i, f_hat)^2. Never trained on directly; the training
// loop moves f_hat through the count loss instead.
inline Tensor unbiased_objective(const std::vector<FeatureMap>& maps,
                                 const Tensor& f_hat) {
  Tensor total = Tensor::scalar(0.0);
  for (const FeatureMap& fm : maps) {
    Tensor p = probability_map(fm.features, f_hat);
    total = add(total, sum(mul(p, p)));
  }
  return total;
}

// Three fully-connected layers with relu, linear final layer. x is a column
// of width fc1's input; widths are fixed at head construction.
inline Tensor mlp3(const ParamSet& params, const std::string& prefix,
                   const Tensor& x_col) {
  auto layer = [&](const std::string& name, const Tensor& in) {
    const Tensor& w = params.at(prefix + name + ".weight");
    if (w.shape()[1] != in.shape()[0])
      throw ValidationError("regress_count: input width " +
                            std::to_string(in.shape()[0]) +
                            " does not match stored " + prefix + name +
                            " width " + std::to_string(w.shape()[1]));
    return add(matmul(w, in),
               params.at(prefix + name + ".bias").reshape({w.shape()[0], 1}));
  };
  Tensor h1 = relu(layer("fc1", x_col));
  Tensor h2 = relu(layer("fc2", h1));
  return layer("fc3", h2).reshape({1});
}

// CNN head: MLP over the concatenated density and probability vectors.
inline Tensor regress_count_cnn(const Tensor& d, const Tensor& p,
                                const ParamSet& params) {
  if (d.shape().size() != 1 || p.shape().size() != 1 || d.size() != p.size())
    throw ValidationError("regress_count: d " + shape_str(d.shape()) +
                          " and p " + shape_str(p.shape()) +
                          " must be equal-length vectors");
  Tensor x = concat({d, p});
  return mlp3(params, "sfsl.mlp.", x.reshape({x.size(), 1}));
}

// Token head: linear regression w^T (d, p) + b where d is the class-token
// vector. When the token count K differs from D, p first passes through the
// learnable projection sfsl.p_proj.
inline Tensor regress_count_token(const Tensor& class_vec, const Tensor& p,
                                  const ParamSet& params) {
  Tensor p_d = p;
  if (params.count("sfsl.p_proj.weight")) {
    const Tensor& proj = params.at("sfsl.p_proj.weight");
    if (proj.shape()[1] != p.size())
      throw ValidationError("regress_count: p length " +
                            std::to_string(p.size()) +
                            " does not match stored projection width " +
                            std::to_string(proj.shape()[1]));
    p_d = matmul(proj, p.reshape({p.size(), 1})).reshape({proj.shape()[0]});
  }
  Tensor x = concat({class_vec, p_d});
  const Tensor& w = params.at("sfsl.w");
  if (w.size() != x.size())
    throw ValidationError("regress_count: input width " +
                          std::to_string(x.size()) +
                          " does not match stored sfsl.w width " +
                          std::to_string(w.size()));
  Tensor c = matmul(w.reshape({1, w.size()}), x.reshape({x.size(), 1}));
  return add(c.reshape({1}), params.at("sfsl.b"));
}

}  // namespace wsc
