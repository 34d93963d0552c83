#pragma once

#include <vector>

#include "wsc/tensor.hpp"

namespace wsc {

// rows x cols tiling; n = rows*cols subimages.
struct PartitionGrid {
  int rows = 2;
  int cols = 2;
  int n() const { return rows * cols; }
};

namespace detail {

inline void check_image_rank(const Tensor& image, const char* op) {
  const auto r = image.shape().size();
  if (r != 2 && r != 3)
    throw ValidationError(std::string(op) + ": expected [H,W] or [C,H,W], got " +
                          shape_str(image.shape()));
}

}  // namespace detail

// Tile boundaries along an axis of length `len` split into `parts`:
// tile r covers [floor(r*len/parts), floor((r+1)*len/parts)).
inline int tile_boundary(int len, int parts, int r) {
  return static_cast<int>((static_cast<long long>(r) * len) / parts);
}

// Cuts the image into grid.n() disjoint tiles (row-major tile order) whose
// union is the full image. Data-pipeline op: output tensors are constants.
inline std::vector<Tensor> partition_image(const Tensor& image,
                                           const PartitionGrid& grid) {
  detail::check_image_rank(image, "partition_image");
  const bool chw = image.shape().size() == 3;
  const int C = chw ? image.shape()[0] : 1;
  const int H = chw ? image.shape()[1] : image.shape()[0];
  const int W = chw ? image.shape()[2] : image.shape()[1];
  if (grid.rows < 1 || grid.cols < 1)
    throw ValidationError("partition_image: grid must be positive");
  if (grid.rows > H || grid.cols > W)
    throw ValidationError("partition_image: grid " + std::to_string(grid.rows) +
                          "x" + std::to_string(grid.cols) +
                          " larger than image " + shape_str(image.shape()));
  std::vector<Tensor> tiles;
  tiles.reserve(grid.n());
  for (int r = 0; r < grid.rows; ++r) {
    const int y0 = tile_boundary(H, grid.rows, r);
    const int y1 = tile_boundary(H, grid.rows, r + 1);
    for (int c = 0; c < grid.cols; ++c) {
      const int x0 = tile_boundary(W, grid.cols, c);
      const int x1 = tile_boundary(W, grid.cols, c + 1);
      const int th = y1 - y0, tw = x1 - x0;
      Tensor tile(chw ? std::vector<int>{C, th, tw} : std::vector<int>{th, tw});
      for (int ch = 0; ch < C; ++ch)
        for (int y = 0; y < th; ++y) {
          const double* src = image.data() + (ch * H + y0 + y) * W + x0;
          double* dst = tile.data() + (ch * th + y) * tw;
          std::copy(src, src + tw, dst);
        }
      tiles.push_back(std::move(tile));
    }
  }
  return tiles;
}

// Corner-aligned bilinear interpolation; bit-identical when dims are
// unchanged. Data-pipeline op: output is a constant.
inline Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  detail::check_image_rank(image, "resize_bilinear");
  if (out_h < 1 || out_w < 1)
    throw ValidationError("resize_bilinear: target dims must be positive");
  const bool chw = image.shape().size() == 3;
  const int C = chw ? image.shape()[0] : 1;
  const int H = chw ? image.shape()[1] : image.shape()[0];
  const int W = chw ? image.shape()[2] : image.shape()[1];
  if (out_h == H && out_w == W) return image.clone().reshape(image.shape());

  Tensor out(chw ? std::vector<int>{C, out_h, out_w}
                 : std::vector<int>{out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(H - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(W - 1) / (out_w - 1) : 0.0;
  for (int ch = 0; ch < C; ++ch) {
    const double* src = image.data() + ch * H * W;
    double* dst = out.data() + ch * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const double fy = y * sy;
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        const double fx = x * sx;
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - x0;
        const double v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
        const double v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
        dst[y * out_w + x] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                             wy * ((1.0 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

}  // namespace wsc
