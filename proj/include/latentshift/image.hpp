#pragma once

#include "latentshift/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace latentshift {

/// Row-major H×W arrays; raster order is the storage order.
using Map2D = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale raster as stored in PNG files (8- or 16-bit samples).
struct GrayImage {
  Index width = 0;
  Index height = 0;
  int bit_depth = 16;
  std::vector<std::uint16_t> pixels;  // row-major
};

void write_png(const std::filesystem::path& path, const GrayImage& image);
std::string encode_png(const GrayImage& image);
GrayImage read_png(const std::filesystem::path& path);
GrayImage decode_png(const std::string& bytes);

/// Affine map of [lo, hi] onto the full sample range of `bit_depth`, rounded.
GrayImage quantize(const Map2D& values, double lo, double hi, int bit_depth);
Map2D dequantize(const GrayImage& image, double lo, double hi);

/// 1×H×W image tensor <-> 16-bit PNG over the image range [-1024, 1024].
GrayImage image_to_png16(const Tensor& image);
Tensor png16_to_image(const GrayImage& png);

Mask mask_from_png(const GrayImage& png);
GrayImage mask_to_png(const Mask& mask);

/// Channel 0 of a C×H×W tensor as a 2-D array.
Map2D channel(const Tensor& image, Index c = 0);

std::string base64_encode(const std::string& bytes);

}  // namespace latentshift
