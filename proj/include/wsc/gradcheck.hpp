#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wsc/ops.hpp"
#include "wsc/tensor.hpp"

namespace wsc {

// Central-difference verification of reverse-mode gradients.
// Returns max over coordinates of |analytic - fd| / max(1, |fd|).
inline double grad_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& point, double step) {
  Tape tape;
  Tensor x = tape.watch(point);
  Tensor loss = f(x);
  if (loss.size() != 1)
    throw ValidationError("grad_check: function must return a scalar");
  GradTable grads = tape.backward(loss);
  const Tensor& analytic = grads.at(x);

  double max_err = 0.0;
  Tensor probe = point.clone();
  for (int i = 0; i < point.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double fp = f(probe).item();
    probe[i] = saved - step;
    const double fm = f(probe).item();
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite value at coordinate " +
                         std::to_string(i));
    const double fd = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// Same check against every named parameter. When sample_per_tensor > 0 only
// that many coordinates per tensor are probed (deterministic choice via rng);
// full sweeps over a whole network would cost two forwards per weight.
inline double grad_check_params(
    const std::function<Tensor(const ParamSet&)>& fn, const ParamSet& params,
    double step, int sample_per_tensor = -1, Rng* rng = nullptr) {
  Tape tape;
  ParamSet watched = tape.watch_all(params);
  Tensor loss = fn(watched);
  if (loss.size() != 1)
    throw ValidationError("grad_check_params: function must return a scalar");
  GradTable grads = tape.backward(loss);

  ParamSet probe;
  for (const auto& [name, t] : params) probe.emplace(name, t.clone());

  double max_err = 0.0;
  for (auto& [name, tensor] : probe) {
    const Tensor& analytic = grads.at(watched.at(name));
    std::vector<int> coords;
    if (sample_per_tensor <= 0 || tensor.size() <= sample_per_tensor) {
      coords.resize(tensor.size());
      for (int i = 0; i < tensor.size(); ++i) coords[i] = i;
    } else {
      for (int k = 0; k < sample_per_tensor; ++k)
        coords.push_back(rng ? rng->uniform_int(0, tensor.size() - 1)
                             : (k * tensor.size()) / sample_per_tensor);
    }
    for (int i : coords) {
      const double saved = tensor[i];
      tensor[i] = saved + step;
      const double fp = fn(probe).item();
      tensor[i] = saved - step;
      const double fm = fn(probe).item();
      tensor[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check_params: non-finite value at " + name +
                           "[" + std::to_string(i) + "]");
      const double fd = (fp - fm) / (2.0 * step);
      const double err =
          std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace wsc
