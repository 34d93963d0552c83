#include <gtest/gtest.h>

#include "wsc/gradcheck.hpp"
#include "wsc/verify.hpp"

using namespace wsc;

TEST(GradCheck, ExactQuadratic) {
  double err = grad_check(
      [](const Tensor& x) { return mul(x, x); }, Tensor::scalar(3.0), 1e-5);
  EXPECT_LE(err, 1e-8);
}

TEST(GradCheck, ConvReluMeanComposite) {
  Rng rng(17);
  Tensor ker({2, 1, 3, 3});
  for (int i = 0; i < ker.size(); ++i) ker[i] = rng.uniform(-1.0, 1.0);
  Tensor img({1, 6, 6});
  for (int i = 0; i < img.size(); ++i) img[i] = rng.uniform(-1.0, 1.0);
  // check against the input image
  double err_in = grad_check(
      [ker](const Tensor& t) { return mean(relu(conv2d(t, ker, 1, 1))); }, img,
      1e-5);
  EXPECT_LE(err_in, 1e-5);
  // and against the kernels
  double err_k = grad_check(
      [img](const Tensor& t) { return mean(relu(conv2d(img, t, 1, 1))); }, ker,
      1e-5);
  EXPECT_LE(err_k, 1e-5);
}

TEST(GradCheck, NegativeControlDetected) {
  CheckCase cc = adjoint_fault_control();
  EXPECT_TRUE(cc.pass);
  EXPECT_GT(cc.err, 1e-2);
}

TEST(GradCheck, FaultScopeRestores) {
  { ScopedAdjointFault fault(1.01); }
  double err = grad_check(
      [](const Tensor& x) { return mul(x, x); }, Tensor::scalar(2.0), 1e-5);
  EXPECT_LE(err, 1e-8);
}

TEST(GradCheck, ReportsNonFiniteCoordinate) {
  // finite at the point itself, overflows to inf under the +step probe
  try {
    grad_check([](const Tensor& x) { return sum(wsc::exp(x)); },
               Tensor({2}, {0.5, 709.78271}), 1e-5);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

// Every op's analytic gradient matches central differences within 1e-4 over
// randomized shapes; 8 seeded cases per op kind here, the acceptance suite
// runs 100.
TEST(GradCheck, OpSweep) {
  auto cases = op_gradient_sweep(8, 20260810ULL);
  EXPECT_GE(cases.size(), 100u);
  for (const auto& c : cases)
    EXPECT_TRUE(c.pass) << c.name << " err=" << c.err;
}

TEST(GradCheckParams, MultiTensorSampled) {
  Rng rng(23);
  ParamSet params;
  Tensor w({3, 3});
  for (int i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  Tensor b({3});
  for (int i = 0; i < b.size(); ++i) b[i] = rng.uniform(-1.0, 1.0);
  params["w"] = w;
  params["b"] = b;
  Tensor x({3, 1}, {0.3, -0.8, 1.1});
  auto fn = [x](const ParamSet& p) {
    return sum(add(matmul(p.at("w"), x), p.at("b").reshape({3, 1})));
  };
  double err = grad_check_params(fn, params, 1e-5);
  EXPECT_LE(err, 1e-8);
}
