#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "wsc/datagen.hpp"

using namespace wsc;

namespace {

DatasetSpec quick_spec() {
  DatasetSpec spec;
  spec.num_scenes = 20;
  spec.image_size = 32;
  spec.count_min = 3;
  spec.count_max = 15;
  spec.background_noise_std = 0.01;
  spec.seed = 99;
  return spec;
}

}  // namespace

TEST(Datagen, DeterministicGivenSeed) {
  DatasetSpec spec = quick_spec();
  auto a = generate_dataset(spec);
  auto b = generate_dataset(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].count, b[i].count);
    ASSERT_EQ(a[i].dots, b[i].dots);
    for (int p = 0; p < a[i].image.size(); ++p)
      ASSERT_EQ(a[i].image[p], b[i].image[p]);
  }
  spec.seed = 100;
  auto c = generate_dataset(spec);
  bool differs = false;
  for (std::size_t i = 0; i < a.size() && !differs; ++i)
    if (a[i].count != c[i].count || a[i].dots != c[i].dots) differs = true;
  EXPECT_TRUE(differs);
}

TEST(Datagen, CountsInRangeAndDotsInside) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 100;
  for (const SyntheticScene& s : generate_dataset(spec)) {
    EXPECT_GE(s.count, spec.count_min);
    EXPECT_LE(s.count, spec.count_max);
    EXPECT_EQ(static_cast<int>(s.dots.size()), s.count);
    for (const auto& [row, col] : s.dots) {
      EXPECT_GE(row, 0.0);
      EXPECT_LT(row, spec.image_size);
      EXPECT_GE(col, 0.0);
      EXPECT_LT(col, spec.image_size);
    }
  }
}

TEST(Datagen, ImageValuesClamped) {
  DatasetSpec spec = quick_spec();
  spec.count_min = spec.count_max = 200;  // heavy overlap
  spec.background_noise_std = 0.3;
  Rng rng(1);
  SyntheticScene s = generate_scene(spec, rng);
  for (int i = 0; i < s.image.size(); ++i) {
    EXPECT_GE(s.image[i], 0.0);
    EXPECT_LE(s.image[i], 1.0);
  }
}

TEST(Datagen, InteriorBlobsHaveUnitMass) {
  // blobs >= 3 sigma from every border carry mass count*1 within 5%
  Tensor img({64, 64});
  const double sigma = 2.0;
  const int k = 5;
  const double positions[k][2] = {
      {12.3, 14.8}, {30.0, 30.0}, {50.2, 12.9}, {25.7, 49.1}, {40.4, 40.6}};
  for (const auto& rc : positions)
    detail::render_dot(img, rc[0], rc[1], sigma);
  double mass = 0.0;
  for (int i = 0; i < img.size(); ++i) mass += img[i];
  EXPECT_NEAR(mass, k, 0.05 * k);
}

TEST(Datagen, PerspectiveGrowsSigmaTowardBottom) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 40;
  spec.perspective_gradient = true;
  double top_sum = 0.0, bot_sum = 0.0;
  int top_n = 0, bot_n = 0;
  for (const SyntheticScene& s : generate_dataset(spec))
    for (std::size_t d = 0; d < s.dots.size(); ++d) {
      if (s.dots[d].first < spec.image_size / 4.0) {
        top_sum += s.blob_sigmas[d];
        ++top_n;
      } else if (s.dots[d].first > 3.0 * spec.image_size / 4.0) {
        bot_sum += s.blob_sigmas[d];
        ++bot_n;
      }
    }
  ASSERT_GT(top_n, 10);
  ASSERT_GT(bot_n, 10);
  EXPECT_GT(bot_sum / bot_n, top_sum / top_n);
}

TEST(LabelNoise, ZeroSigmaIsIdentity) {
  Rng rng(5);
  EXPECT_EQ(inject_label_noise(37.0, 0.0, rng), 37.0);
  EXPECT_THROW(inject_label_noise(37.0, -0.1, rng), ValidationError);
}

TEST(LabelNoise, FormulaMatchesDirectSubstitution) {
  // c' = c(1 + eps): replicate the draw with an identical stream
  Rng a(42), b(42);
  const double got = inject_label_noise(100.0, 0.05, a);
  const double eps = 0.05 * b.normal();
  EXPECT_EQ(got, 100.0 * (1.0 + eps));
  // the worked example: eps = 0.05 exactly gives 105
  EXPECT_DOUBLE_EQ(100.0 * (1.0 + 0.05), 105.0);
}

TEST(LabelNoise, ClampsAtZero) {
  Rng rng(7);
  int zeros = 0;
  for (int i = 0; i < 1000; ++i) {
    const double c = inject_label_noise(10.0, 5.0, rng);
    EXPECT_GE(c, 0.0);
    if (c == 0.0) ++zeros;
  }
  EXPECT_GT(zeros, 100);  // P(1 + 5z < 0) ~ 0.42
}

TEST(LabelNoise, MonteCarloMoments) {
  Rng rng(11);
  const double c = 40.0, sigma = 0.1;
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = inject_label_noise(c, sigma, rng);
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sumsq / n - mean * mean);
  EXPECT_NEAR(mean, c, 0.01 * c);        // within 1%
  EXPECT_NEAR(sd, sigma * c, 0.02 * sigma * c);  // within 2%
}

TEST(Oracle, TileCountsSumToGlobal) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 30;
  Rng grids(13);
  for (const SyntheticScene& s : generate_dataset(spec)) {
    PartitionGrid g{grids.uniform_int(1, 4), grids.uniform_int(1, 4)};
    std::vector<int> counts = subimage_count_oracle(s, g);
    int total = 0;
    for (int c : counts) total += c;
    EXPECT_EQ(total, s.count);
  }
}

TEST(Oracle, BoundaryDotFollowsHalfOpenRule) {
  SyntheticScene s;
  s.image = Tensor({64, 64});
  s.count = 2;
  // row boundary for 2 rows at 32: dot at exactly 32 belongs to the tile
  // whose half-open interval [32, 64) starts there
  s.dots = {{32.0, 5.0}, {31.9999, 5.0}};
  auto counts = subimage_count_oracle(s, {2, 1});
  EXPECT_EQ(counts[0], 1);
  EXPECT_EQ(counts[1], 1);
}

TEST(Oracle, UniformDotsRoughlyBalanced) {
  DatasetSpec spec;
  spec.num_scenes = 1;
  spec.image_size = 64;
  spec.count_min = spec.count_max = 400;
  spec.perspective_gradient = false;
  spec.background_noise_std = 0.0;
  spec.seed = 17;
  auto scenes = generate_dataset(spec);
  auto counts = subimage_count_oracle(scenes[0], {2, 2});
  for (int c : counts) EXPECT_NEAR(c, 100.0, 30.0);  // 3 sigma of Binomial
}

TEST(PatchDataset, SixPatchesPerSceneWithExactCounts) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 50;
  auto scenes = generate_dataset(spec);
  auto patches = make_patch_dataset(scenes);
  EXPECT_EQ(patches.size(), 300u);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    double sum = 0.0;
    int pixels = 0;
    for (int j = 0; j < 6; ++j) {
      sum += patches[i * 6 + j].count;
      pixels += patches[i * 6 + j].image.size();
    }
    EXPECT_DOUBLE_EQ(sum, scenes[i].count);
    EXPECT_EQ(pixels, spec.image_size * spec.image_size);  // exhaustive tiles
  }
}

TEST(PatchDataset, PaperScaleSixfold) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 300;
  spec.image_size = 16;
  spec.count_min = 1;
  spec.count_max = 4;
  EXPECT_EQ(make_patch_dataset(generate_dataset(spec)).size(), 1800u);
}

TEST(DatasetFile, RoundTripExact) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 6;
  auto scenes = generate_dataset(spec);
  const std::string path = "wcds_roundtrip.bin";
  save_dataset(path, scenes);
  auto loaded = load_dataset(path);
  ASSERT_EQ(loaded.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(loaded[i].count, scenes[i].count);
    EXPECT_EQ(loaded[i].dots, scenes[i].dots);
    for (int p = 0; p < scenes[i].image.size(); ++p)
      ASSERT_EQ(loaded[i].image[p], scenes[i].image[p]);
  }
  std::remove(path.c_str());
}

TEST(DatasetFile, BadMagicAndTruncationRejected) {
  DatasetSpec spec = quick_spec();
  spec.num_scenes = 2;
  auto scenes = generate_dataset(spec);
  const std::string path = "wcds_corrupt.bin";
  save_dataset(path, scenes);

  {  // corrupt the magic
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_dataset(path), ValidationError);

  save_dataset(path, scenes);
  {  // truncate
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
  }
  try {
    load_dataset(path);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  std::remove(path.c_str());
}
