#pragma once

#include "latentshift/image.hpp"
#include "latentshift/latent_shift.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace latentshift {

struct GifOptions {
  int delay_cs = 10;  // hundredths of a second per frame
  bool loop = true;   // NETSCAPE2.0 infinite loop, multi-frame only
};

/// GIF89a with one 256-level grayscale global palette. Frames must be 8-bit
/// and share one size.
std::string encode_gif(const std::vector<GrayImage>& frames, const GifOptions& options = {});

/// 0, 1, ..., n-1, n-2, ..., 1: 2n - 2 indices for n >= 2, {0} for n = 1.
std::vector<std::size_t> boomerang_order(std::size_t n);

/// Channel 0 of an image tensor as 8 bits over [-1024, 1024].
GrayImage image_to_gray8(const Tensor& image);

/// Boomerang animation of a sweep's frames, lowest lambda first.
std::string sweep_gif(const LambdaSweep& sweep, const GifOptions& options = {});

/// Sidecar path for a map PNG: same stem, ".json".
std::filesystem::path sidecar_path(const std::filesystem::path& png);

/// 16-bit PNG over [min, max] of the map plus a JSON sidecar holding the range
/// and `metadata`.
void write_map(const std::filesystem::path& png, const Map2D& map, const nlohmann::json& metadata = {});
Map2D read_map(const std::filesystem::path& png);

/// Largest absolute error of a write_map/read_map round trip.
double map_quantization_error(const Map2D& map);

/// Frames side by side as one 16-bit PNG raster over the image range.
GrayImage frame_strip(const std::vector<Tensor>& frames);

/// 8-bit image with the top `fraction` of map pixels drawn at full white.
GrayImage overlay(const Tensor& image, const Map2D& map, double fraction = 0.05);

}  // namespace latentshift
