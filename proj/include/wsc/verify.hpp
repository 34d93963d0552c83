#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wsc/gradcheck.hpp"
#include "wsc/ops.hpp"

namespace wsc {

struct CheckCase {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

namespace detail {

inline Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -2.0,
                          double hi = 2.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps every coordinate at least `margin` away from zero so central
// differences never straddle a relu/sign kink.
inline Tensor rand_tensor_margin(std::vector<int> shape, Rng& rng,
                                 double margin) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) {
    const double u = rng.uniform(margin, 2.0);
    t[i] = rng.uniform() < 0.5 ? -u : u;
  }
  return t;
}

// Weighted sum with fixed weights; gives the checked op a non-uniform
// output gradient so index mix-ups cannot cancel.
inline Tensor scalarize(const Tensor& t, const Tensor& weights) {
  return sum(mul(t, weights));
}

}  // namespace detail

// Randomized central-difference sweep over every tensor op, `cases_per_op`
// seeded cases each. Gradients checked against 1e-4 relative tolerance.
inline std::vector<CheckCase> op_gradient_sweep(int cases_per_op,
                                                std::uint64_t seed0) {
  using detail::rand_tensor;
  using detail::rand_tensor_margin;
  std::vector<CheckCase> out;
  const double tol = 1e-4;
  const double step = 1e-5;

  auto run = [&](const std::string& name, std::uint64_t c,
                 const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& point) {
    CheckCase cc;
    cc.name = name + "#" + std::to_string(c);
    cc.tol = tol;
    cc.err = grad_check(f, point, step);
    cc.pass = cc.err <= tol;
    out.push_back(cc);
  };

  for (int c = 0; c < cases_per_op; ++c) {
    Rng rng(splitmix64(seed0) + 1000003ULL * c);
    const int n = rng.uniform_int(2, 6);
    const int m = rng.uniform_int(2, 5);
    const bool lhs = c % 2 == 0;

    {  // add / sub / mul / div
      Tensor x = rand_tensor({n}, rng);
      Tensor other = rand_tensor({n}, rng);
      Tensor w = rand_tensor({n}, rng);
      auto bin = [&](const char* nm, auto op) {
        run(nm, c,
            [&, w, other](const Tensor& t) {
              return detail::scalarize(lhs ? op(t, other) : op(other, t), w);
            },
            x);
      };
      bin("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
      bin("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
      bin("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
      Tensor den = rand_tensor_margin({n}, rng, 0.5);
      Tensor xden = rand_tensor_margin({n}, rng, 0.5);
      run("div", c,
          [&, w, den, other](const Tensor& t) {
            return detail::scalarize(lhs ? div(t, den) : div(other, t), w);
          },
          lhs ? x : xden);
    }
    {  // matmul
      Tensor a = rand_tensor({m, n}, rng);
      Tensor b = rand_tensor({n, m}, rng);
      Tensor w = rand_tensor({m, m}, rng);
      run("matmul", c,
          [&, a, b, w](const Tensor& t) {
            return detail::scalarize(lhs ? matmul(t, b) : matmul(a, t), w);
          },
          lhs ? a : b);
    }
    {  // relu (inputs kept off the kink)
      Tensor x = rand_tensor_margin({n}, rng, 0.05);
      Tensor w = rand_tensor({n}, rng);
      run("relu", c,
          [w](const Tensor& t) { return detail::scalarize(relu(t), w); }, x);
    }
    {  // sum / mean / scale / exp / sqrt
      Tensor x = rand_tensor({n}, rng);
      run("sum", c, [](const Tensor& t) { return sum(t); }, x);
      run("mean", c, [](const Tensor& t) { return mean(t); }, x);
      Tensor w = rand_tensor({n}, rng);
      run("scale", c,
          [w](const Tensor& t) { return detail::scalarize(scale(t, 1.7), w); },
          x);
      Tensor xe = rand_tensor({n}, rng, -1.0, 1.0);
      run("exp", c,
          [w](const Tensor& t) { return detail::scalarize(wsc::exp(t), w); },
          xe);
      Tensor xs = rand_tensor({n}, rng, 0.25, 4.0);
      run("sqrt", c,
          [w](const Tensor& t) { return detail::scalarize(wsc::sqrt(t), w); },
          xs);
    }
    {  // concat, including a fan-out case (same tensor twice)
      Tensor x = rand_tensor({n}, rng);
      Tensor other = rand_tensor({m}, rng);
      Tensor w = rand_tensor({2 * n + m}, rng);
      run("concat", c,
          [w, other](const Tensor& t) {
            return detail::scalarize(concat({t, other, t}), w);
          },
          x);
      Tensor x2 = rand_tensor({m, n}, rng);
      Tensor o2 = rand_tensor({m, n}, rng);
      Tensor w2 = rand_tensor({m, 2 * n}, rng);
      run("concat-axis1", c,
          [w2, o2](const Tensor& t) {
            return detail::scalarize(concat({t, o2}, 1), w2);
          },
          x2);
    }
    {  // softmax-rows / transpose
      Tensor x = rand_tensor({m, n}, rng);
      Tensor w = rand_tensor({m, n}, rng);
      run("softmax-rows", c,
          [w](const Tensor& t) {
            return detail::scalarize(softmax_rows(t), w);
          },
          x);
      Tensor wt = rand_tensor({n, m}, rng);
      run("transpose", c,
          [wt](const Tensor& t) { return detail::scalarize(transpose(t), wt); },
          x);
    }
    {  // conv2d: input side and kernel side
      const int C = rng.uniform_int(1, 2);
      const int H = rng.uniform_int(4, 6);
      const int O = rng.uniform_int(1, 2);
      const int k = rng.uniform_int(1, 3);
      const int stride = rng.uniform_int(1, 2);
      const int pad = rng.uniform_int(0, 1);
      Tensor img = rand_tensor({C, H, H}, rng);
      Tensor ker = rand_tensor({O, C, k, k}, rng);
      const int Ho = (H + 2 * pad - k) / stride + 1;
      Tensor w = rand_tensor({O, Ho, Ho}, rng);
      run("conv2d", c,
          [&, img, ker, w](const Tensor& t) {
            return detail::scalarize(
                lhs ? conv2d(t, ker, stride, pad) : conv2d(img, t, stride, pad),
                w);
          },
          lhs ? img : ker);
    }
  }
  return out;
}

// Negative control: with the mul adjoint deliberately scaled by 1.01, the
// checker must flag a composite of two muls (error compounds past 1e-2).
inline CheckCase adjoint_fault_control() {
  CheckCase cc;
  cc.name = "negative-control(adjoint*1.01)";
  cc.tol = 1e-2;
  Tensor x({3}, {1.2, 1.5, 1.9});
  ScopedAdjointFault fault(1.01);
  cc.err = grad_check(
      [](const Tensor& t) { return sum(mul(mul(t, t), t)); }, x, 1e-5);
  cc.pass = cc.err > 1e-2;  // detected
  return cc;
}

}  // namespace wsc
