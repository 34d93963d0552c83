#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wsc/binio.hpp"
#include "wsc/glc.hpp"
#include "wsc/image.hpp"

namespace wsc {

// Rendered scene with an exact object count. The dot coordinates are an
// oracle for tests and per-tile counting; they are never a training label in
// the weak setting.
struct SyntheticScene {
  Tensor image;  // [H,W], values in [0,1]
  int count = 0;
  std::vector<std::pair<double, double>> dots;  // (row, col) in [0,H)x[0,W)
  std::vector<double> blob_sigmas;              // per-dot render width, px
};

struct DatasetSpec {
  int num_scenes = 250;
  int image_size = 64;
  int count_min = 5;
  int count_max = 50;
  double blob_sigma_min = 1.0;
  double blob_sigma_max = 2.5;
  double background_noise_std = 0.01;
  bool perspective_gradient = true;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_scenes < 1)
      throw ValidationError("dataset: num_scenes must be positive");
    if (image_size < 16)
      throw ValidationError("dataset: image_size must be >= 16");
    if (count_min < 1 || count_min > count_max)
      throw ValidationError("dataset: need 0 < count_min <= count_max");
    if (blob_sigma_min <= 0.0 || blob_sigma_min > blob_sigma_max)
      throw ValidationError("dataset: need 0 < blob_sigma_min <= blob_sigma_max");
    if (background_noise_std < 0.0)
      throw ValidationError("dataset: background_noise_std must be >= 0");
  }
};

namespace detail {

// Adds one unit-mass Gaussian blob (truncated at 4 sigma). Discrete mass of
// an interior blob is within a fraction of a percent of 1.
inline void render_dot(Tensor& image, double row, double col, double sigma) {
  const int H = image.shape()[0], W = image.shape()[1];
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  const int y0 = std::max(0, static_cast<int>(row) - r);
  const int y1 = std::min(H - 1, static_cast<int>(row) + r);
  const int x0 = std::max(0, static_cast<int>(col) - r);
  const int x1 = std::min(W - 1, static_cast<int>(col) + r);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double norm = 1.0 / (2.0 * 3.14159265358979323846 * sigma * sigma);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - row, dx = x - col;
      image[y * W + x] += norm * std::exp(-(dy * dy + dx * dx) * inv2s2);
    }
}

}  // namespace detail

// Draw order: count, then (row, col, sigma) per dot, then pixel noise in
// row-major order. perspective_gradient scales sigma by (0.5 + row/H) so
// blobs grow toward the bottom of the frame.
inline SyntheticScene generate_scene(const DatasetSpec& spec, Rng& rng) {
  spec.validate();
  const int S = spec.image_size;
  SyntheticScene scene;
  scene.image = Tensor({S, S});
  scene.count = rng.uniform_int(spec.count_min, spec.count_max);
  for (int i = 0; i < scene.count; ++i) {
    const double row = rng.uniform(0.0, S);
    const double col = rng.uniform(0.0, S);
    double sigma = rng.uniform(spec.blob_sigma_min, spec.blob_sigma_max);
    if (spec.perspective_gradient) sigma *= 0.5 + row / S;
    scene.dots.emplace_back(row, col);
    scene.blob_sigmas.push_back(sigma);
    detail::render_dot(scene.image, row, col, sigma);
  }
  if (spec.background_noise_std > 0.0)
    for (int i = 0; i < scene.image.size(); ++i)
      scene.image[i] += spec.background_noise_std * rng.normal();
  for (int i = 0; i < scene.image.size(); ++i)
    scene.image[i] = std::min(1.0, std::max(0.0, scene.image[i]));
  return scene;
}

// Scene i draws from substream (seed, i), so parallel and serial generation
// agree bit-exactly.
inline std::vector<SyntheticScene> generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<SyntheticScene> scenes;
  scenes.reserve(spec.num_scenes);
  Rng root(spec.seed);
  for (int i = 0; i < spec.num_scenes; ++i) {
    Rng sub = root.substream(static_cast<std::uint64_t>(i));
    scenes.push_back(generate_scene(spec, sub));
  }
  return scenes;
}

// c' = c * (1 + eps), eps ~ N(0, sigma^2), clamped below at zero so labels
// stay physical.
inline double inject_label_noise(double count, double sigma, Rng& rng) {
  if (sigma < 0.0)
    throw ValidationError("inject_label_noise: sigma must be >= 0");
  const double noisy = count * (1.0 + sigma * rng.normal());
  return noisy < 0.0 ? 0.0 : noisy;
}

// Assigns each dot to the unique tile whose half-open interval contains it;
// tile sums therefore reproduce the global count exactly.
inline std::vector<int> subimage_count_oracle(const SyntheticScene& scene,
                                              const PartitionGrid& grid) {
  const int H = scene.image.shape()[0], W = scene.image.shape()[1];
  if (grid.rows < 1 || grid.cols < 1 || grid.rows > H || grid.cols > W)
    throw ValidationError("subimage_count_oracle: invalid grid");
  std::vector<int> counts(grid.n(), 0);
  for (const auto& [row, col] : scene.dots) {
    int r = grid.rows - 1;
    for (int i = 0; i < grid.rows; ++i)
      if (row < tile_boundary(H, grid.rows, i + 1)) {
        r = i;
        break;
      }
    int c = grid.cols - 1;
    for (int i = 0; i < grid.cols; ++i)
      if (col < tile_boundary(W, grid.cols, i + 1)) {
        c = i;
        break;
      }
    ++counts[r * grid.cols + c];
  }
  return counts;
}

inline Sample scene_to_sample(const SyntheticScene& scene) {
  return Sample{scene.image, static_cast<double>(scene.count)};
}

inline std::vector<Sample> scenes_to_samples(
    const std::vector<SyntheticScene>& scenes) {
  std::vector<Sample> out;
  out.reserve(scenes.size());
  for (const SyntheticScene& s : scenes) out.push_back(scene_to_sample(s));
  return out;
}

// Patch-label mode: crops every scene into grid.n() patches (default 2x3 =
// 6) and labels each patch with its exact dot count, multiplying the number
// of labeled samples by grid.n().
inline std::vector<Sample> make_patch_dataset(
    const std::vector<SyntheticScene>& scenes,
    const PartitionGrid& grid = {2, 3}) {
  std::vector<Sample> out;
  out.reserve(scenes.size() * grid.n());
  for (const SyntheticScene& scene : scenes) {
    std::vector<Tensor> patches = partition_image(scene.image, grid);
    std::vector<int> counts = subimage_count_oracle(scene, grid);
    for (int i = 0; i < grid.n(); ++i)
      out.push_back(Sample{patches[i], static_cast<double>(counts[i])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file format (WCDS)
// ---------------------------------------------------------------------------
// header: magic "WCDS", version u32, scene count u32, H u16, W u16
// per scene: count f64, dot count u32, (row f64, col f64) per dot,
//            pixels f64 row-major; all little-endian.

constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path,
                         const std::vector<SyntheticScene>& scenes) {
  if (scenes.empty()) throw ValidationError("save_dataset: no scenes");
  const int H = scenes[0].image.shape()[0], W = scenes[0].image.shape()[1];
  ByteWriter w;
  w.str("WCDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(scenes.size()));
  w.u16(static_cast<std::uint16_t>(H));
  w.u16(static_cast<std::uint16_t>(W));
  for (const SyntheticScene& s : scenes) {
    if (s.image.shape() != std::vector<int>{H, W})
      throw ValidationError("save_dataset: mixed scene sizes");
    w.f64(static_cast<double>(s.count));
    w.u32(static_cast<std::uint32_t>(s.dots.size()));
    for (const auto& [row, col] : s.dots) {
      w.f64(row);
      w.f64(col);
    }
    for (int i = 0; i < s.image.size(); ++i) w.f64(s.image[i]);
  }
  w.to_file(path);
}

inline std::vector<SyntheticScene> load_dataset(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.str(4) != "WCDS")
    throw ValidationError("load_dataset: bad magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw ValidationError("load_dataset: unsupported version " +
                          std::to_string(version));
  const std::uint32_t n = r.u32();
  const int H = r.u16(), W = r.u16();
  std::vector<SyntheticScene> scenes;
  scenes.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    SyntheticScene s;
    s.count = static_cast<int>(std::llround(r.f64()));
    const std::uint32_t dots = r.u32();
    for (std::uint32_t d = 0; d < dots; ++d) {
      const double row = r.f64();
      const double col = r.f64();
      s.dots.emplace_back(row, col);
    }
    s.image = Tensor({H, W});
    for (int p = 0; p < H * W; ++p) s.image[p] = r.f64();
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace wsc
