#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "wsc/gradcheck.hpp"
#include "wsc/model.hpp"
#include "wsc/sfsl.hpp"

using namespace wsc;

namespace {

// Position-wise scalar oracle replicating the normalized-cosine expression
// term by term (same accumulation order as the vectorized path).
double cosine_oracle(const double* f, const double* fh, int d) {
  double dot = 0.0, fsq = 0.0, hsq = 0.0;
  for (int i = 0; i < d; ++i) dot += f[i] * fh[i];
  for (int i = 0; i < d; ++i) fsq += f[i] * f[i];
  for (int i = 0; i < d; ++i) hsq += fh[i] * fh[i];
  const double u = std::sqrt(fsq) * std::sqrt(hsq);
  const double r = u - 1e-12;
  const double den = (r > 0.0 ? r : 0.0) + 1e-12;
  return dot / (den * 2.0) + 0.5;
}

std::vector<double> probability_oracle(const Tensor& features,
                                       const Tensor& f_hat) {
  const int m = features.shape()[0], d = features.shape()[1];
  std::vector<double> p(m);
  for (int i = 0; i < m; ++i)
    p[i] = cosine_oracle(features.data() + i * d, f_hat.data(), d);
  return p;
}

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -2.0,
                   double hi = 2.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

ModelConfig small_cnn_model() {
  ModelConfig cfg;
  cfg.backbone.input_size = 16;
  cfg.backbone.feature_dim = 4;
  cfg.backbone.conv_layers = 3;
  cfg.backbone.conv_downsample = 4;
  cfg.mlp_hidden1 = 16;
  cfg.mlp_hidden2 = 8;
  return cfg;
}

ModelConfig small_token_model(int feature_dim = 8) {
  ModelConfig cfg;
  cfg.backbone.variant = BackboneVariant::kToken;
  cfg.backbone.input_size = 16;
  cfg.backbone.feature_dim = feature_dim;
  cfg.backbone.token_patch = 8;  // K = 4
  cfg.backbone.token_layers = 1;
  cfg.backbone.token_heads = 2;
  cfg.backbone.token_mlp = 16;
  return cfg;
}

}  // namespace

TEST(Cosine, ParallelAntiparallelOrthogonal) {
  Tensor f({3}, {0.4, -1.2, 2.0});
  Tensor neg({3}, {-0.4, 1.2, -2.0});
  EXPECT_NEAR(cosine_similarity(f, f).item(), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(f, neg).item(), 0.0, 1e-12);
  Tensor a({2}, {1.0, 0.0});
  Tensor b({2}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b).item(), 0.5);
  EXPECT_THROW(cosine_similarity(a, f), ValidationError);
}

TEST(Cosine, FHatNormFloorRejected) {
  Tensor f({2}, {1.0, 1.0});
  Tensor tiny({2}, {1e-9, 1e-9});
  EXPECT_THROW(cosine_similarity(f, tiny), NumericError);
}

TEST(ProbabilityMap, AllEqualFeaturesGiveOnes) {
  Tensor f_hat({3}, {0.3, -0.7, 1.1});
  Tensor features({4, 3});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) features[i * 3 + j] = f_hat[j];
  Tensor p = probability_map(features, f_hat);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p[i], 1.0, 1e-12);
}

TEST(ProbabilityMap, MatchesScalarLoopOracleBitExact) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = rng.uniform_int(1, 12), d = rng.uniform_int(1, 9);
    Tensor features = rand_tensor({m, d}, rng);
    Tensor f_hat = rand_tensor({d}, rng, 0.2, 2.0);
    Tensor p = probability_map(features, f_hat);
    std::vector<double> want = probability_oracle(features, f_hat);
    for (int i = 0; i < m; ++i) EXPECT_EQ(p[i], want[i]) << trial;
  }
}

TEST(ProbabilityMap, RangeAndZeroFeatures) {
  Rng rng(78);
  Tensor features = rand_tensor({32, 6}, rng);
  Tensor f_hat = rand_tensor({6}, rng, 0.3, 1.5);
  Tensor p = probability_map(features, f_hat);
  for (int i = 0; i < p.size(); ++i) {
    EXPECT_GE(p[i], 0.0);
    EXPECT_LE(p[i], 1.0);
  }
  // zero feature rows sit exactly at 0.5
  Tensor zeros({2, 6});
  Tensor pz = probability_map(zeros, f_hat);
  EXPECT_DOUBLE_EQ(pz[0], 0.5);
  EXPECT_THROW(probability_map(features, Tensor({4}, {1, 2, 3, 4})),
               ValidationError);
}

TEST(ProbabilityMap, ScaleInvariantInBothArguments) {
  Rng rng(79);
  Tensor features = rand_tensor({16, 5}, rng);
  Tensor f_hat = rand_tensor({5}, rng, 0.2, 1.0);
  Tensor p0 = probability_map(features, f_hat);
  for (double c : {0.1, 10.0}) {
    Tensor scaled_f = features.clone();
    for (int i = 0; i < scaled_f.size(); ++i) scaled_f[i] *= c;
    Tensor p1 = probability_map(scaled_f, f_hat);
    Tensor scaled_h = f_hat.clone();
    for (int i = 0; i < scaled_h.size(); ++i) scaled_h[i] *= c;
    Tensor p2 = probability_map(features, scaled_h);
    for (int i = 0; i < p0.size(); ++i) {
      EXPECT_NEAR(p1[i], p0[i], 1e-12);
      EXPECT_NEAR(p2[i], p0[i], 1e-12);
    }
  }
}

TEST(DensityMap, ElementwiseProduct) {
  Tensor p({2}, {0.8, 0.3});
  Tensor inv_s({2}, {0.5, 0.0});
  Tensor d = density_map(p, inv_s);
  EXPECT_DOUBLE_EQ(d[0], 0.4);
  EXPECT_DOUBLE_EQ(d[1], 0.0);
  EXPECT_THROW(density_map(p, Tensor({3})), ValidationError);

  Rng rng(80);
  Tensor pr = rand_tensor({20}, rng, 0.0, 1.0);
  Tensor sr = rand_tensor({20}, rng, -1.0, 1.0);
  Tensor dr = density_map(pr, sr);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(dr[i], pr[i] * sr[i]);

  // unit inverse scale leaves p untouched
  Tensor ones = Tensor::full({20}, 1.0);
  Tensor du = density_map(pr, ones);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(du[i], pr[i]);
}

TEST(RegressCount, ZeroWeightsYieldBias) {
  ModelConfig cfg = small_cnn_model();
  ParamSet p = init_model_params(cfg, 5);
  for (auto& [name, t] : p)
    if (name.rfind("sfsl.mlp.", 0) == 0)
      for (int i = 0; i < t.size(); ++i) t[i] = 0.0;
  p["sfsl.mlp.fc3.bias"][0] = 4.25;
  const int M = cfg.backbone.positions();
  Rng rng(6);
  Tensor d = rand_tensor({M}, rng);
  Tensor pv = rand_tensor({M}, rng, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(regress_count_cnn(d, pv, p).item(), 4.25);
}

TEST(RegressCount, WidthEnforced) {
  ModelConfig cfg = small_cnn_model();
  ParamSet p = init_model_params(cfg, 7);
  const int M = cfg.backbone.positions();
  EXPECT_EQ(p.at("sfsl.mlp.fc1.weight").shape()[1], 2 * M);
  Rng rng(8);
  Tensor wrong = rand_tensor({M + 1}, rng);
  EXPECT_THROW(regress_count_cnn(wrong, wrong, p), ValidationError);
}

TEST(RegressCount, TokenHandExample) {
  ParamSet p;
  p["sfsl.w"] = Tensor({4}, {1, 1, 1, 1});
  p["sfsl.b"] = Tensor({1}, {1.0});
  Tensor d({2}, {1.0, 2.0});
  Tensor pv({2}, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(regress_count_token(d, pv, p).item(), 11.0);
}

TEST(RegressCount, LambdaAbsorptionExactTokenLinear) {
  // doubling p and halving the weights that consume it leaves the count
  // bit-identical (the regressor is fully linear in the token head)
  Rng rng(9);
  {  // K == D: p feeds w directly
    ParamSet p;
    const int D = 4;
    p["sfsl.w"] = rand_tensor({2 * D}, rng);
    p["sfsl.b"] = Tensor({1}, {0.37});
    Tensor cls = rand_tensor({D}, rng);
    Tensor prob = rand_tensor({D}, rng, 0.0, 1.0);
    double c1 = regress_count_token(cls, prob, p).item();

    ParamSet p2 = p;
    Tensor w2 = p.at("sfsl.w").clone();
    for (int i = D; i < 2 * D; ++i) w2[i] *= 0.5;
    p2["sfsl.w"] = w2;
    Tensor prob2 = prob.clone();
    for (int i = 0; i < D; ++i) prob2[i] *= 2.0;
    EXPECT_EQ(regress_count_token(cls, prob2, p2).item(), c1);
  }
  {  // K != D: p feeds the projection first
    ParamSet p;
    const int D = 3, K = 5;
    p["sfsl.p_proj.weight"] = rand_tensor({D, K}, rng);
    p["sfsl.w"] = rand_tensor({2 * D}, rng);
    p["sfsl.b"] = Tensor({1}, {-0.2});
    Tensor cls = rand_tensor({D}, rng);
    Tensor prob = rand_tensor({K}, rng, 0.0, 1.0);
    double c1 = regress_count_token(cls, prob, p).item();

    ParamSet p2 = p;
    Tensor proj2 = p.at("sfsl.p_proj.weight").clone();
    for (int i = 0; i < proj2.size(); ++i) proj2[i] *= 0.5;
    p2["sfsl.p_proj.weight"] = proj2;
    Tensor prob2 = prob.clone();
    for (int i = 0; i < K; ++i) prob2[i] *= 2.0;
    EXPECT_EQ(regress_count_token(cls, prob2, p2).item(), c1);
  }
}

TEST(UnbiasedObjective, ParallelAndZeroCases) {
  Tensor f_hat({4}, {0.5, -0.5, 0.5, -0.5});
  FeatureMap single;
  single.features = Tensor({1, 4}, {0.5, -0.5, 0.5, -0.5});
  single.rows = single.cols = 1;
  EXPECT_NEAR(unbiased_objective({single}, f_hat).item(), 1.0, 1e-12);

  FeatureMap zeros;
  zeros.features = Tensor({6, 4});
  zeros.rows = 2;
  zeros.cols = 3;
  EXPECT_NEAR(unbiased_objective({zeros}, f_hat).item(), 0.25 * 6, 1e-12);
}

TEST(Model, PredictShapesAndDeterminism) {
  ModelConfig cfg = small_cnn_model();
  ParamSet p = init_model_params(cfg, 11);
  Rng rng(12);
  Tensor img = rand_tensor({1, 16, 16}, rng, 0.0, 1.0);
  Prediction a = predict(p, cfg, img);
  Prediction b = predict(p, cfg, img);
  EXPECT_EQ(a.count.size(), 1);
  EXPECT_EQ(a.probability.shape(), (std::vector<int>{cfg.backbone.positions()}));
  EXPECT_EQ(a.density.shape(), (std::vector<int>{cfg.backbone.positions()}));
  EXPECT_EQ(a.count.item(), b.count.item());

  ModelConfig tok = small_token_model();
  ParamSet tp = init_model_params(tok, 13);
  ASSERT_TRUE(tp.count("sfsl.p_proj.weight"));  // K=4 != D=8
  Prediction t = predict(tp, tok, img);
  EXPECT_EQ(t.probability.shape(), (std::vector<int>{4}));
  EXPECT_EQ(t.count.size(), 1);

  ModelConfig tok_kd = small_token_model(4);  // K == D == 4
  ParamSet tkp = init_model_params(tok_kd, 14);
  EXPECT_FALSE(tkp.count("sfsl.p_proj.weight"));
  EXPECT_EQ(predict(tkp, tok_kd, img).count.size(), 1);
}

TEST(Model, DirectHeadVariant) {
  ModelConfig cfg = small_cnn_model();
  cfg.head = HeadKind::kDirect;
  ParamSet p = init_model_params(cfg, 15);
  EXPECT_FALSE(p.count("sfsl.f_hat"));
  Rng rng(16);
  Tensor img = rand_tensor({1, 16, 16}, rng, 0.0, 1.0);
  Prediction out = predict(p, cfg, img);
  EXPECT_EQ(out.count.size(), 1);
  EXPECT_FALSE(out.probability.defined());
}

TEST(Model, FHatUnitNormInit) {
  ModelConfig cfg = small_cnn_model();
  ParamSet p = init_model_params(cfg, 17);
  const Tensor& fh = p.at("sfsl.f_hat");
  double sq = 0.0;
  for (int i = 0; i < fh.size(); ++i) sq += fh[i] * fh[i];
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-12);
}

TEST(Model, CountGradientsPassForAllParams) {
  ModelConfig cfg = small_cnn_model();
  ParamSet p = init_model_params(cfg, 18);
  Rng rng(19);
  Tensor img = rand_tensor({1, 16, 16}, rng, 0.0, 1.0);
  Rng sampler(20);
  auto fn = [&](const ParamSet& params) {
    return predict(params, cfg, img).count;
  };
  EXPECT_LE(grad_check_params(fn, p, 1e-5, 5, &sampler), 1e-4);

  ModelConfig tok = small_token_model();
  ParamSet tp = init_model_params(tok, 21);
  Rng sampler2(22);
  auto fn2 = [&](const ParamSet& params) {
    return predict(params, tok, img).count;
  };
  EXPECT_LE(grad_check_params(fn2, tp, 1e-5, 5, &sampler2), 1e-4);
}
