#pragma once

// 8-bit binary PGM (P5) and PPM (P6) images as [C x H x W] float tensors in
// [0, 1].

#include <array>
#include <filesystem>
#include <span>

#include "homofm/geometry/homography.hpp"
#include "homofm/tensor/tensor.hpp"

namespace homofm::data {

/// Returns [1 x H x W] for P5, [3 x H x W] for P6. Throws FormatError on a
/// malformed header, maxval above 255 or truncated pixel data.
Tensor<float> read_pnm(const std::filesystem::path& path);

/// Writes P5 for one channel, P6 for three; values are clamped and rounded.
void write_pnm(const std::filesystem::path& path, const Tensor<float>& img);

/// Replicates a single-channel image to three channels; 3-channel input is
/// returned unchanged.
Tensor<float> to_rgb(const Tensor<float>& img);

/// Draws the closed polygon through `points` into a [3 x H x W] image with
/// one-pixel lines; segments are clipped to the image.
void draw_polygon(Tensor<float>& rgb, std::span<const geometry::Point2> points,
                  std::array<float, 3> color);

}  // namespace homofm::data
