#pragma once

#include "latentshift/image.hpp"
#include "latentshift/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace latentshift {

/// Finding names in task order: a global size feature, a local blob, and a regional fill.
inline const std::vector<std::string> kFindings{"bigheart", "blob", "basefill"};

/// Geometry drawn for one synthetic image, in pixel units.
struct GenParams {
  double body_cx = 0, body_cy = 0, body_rx = 0, body_ry = 0;
  double lung_offset = 0, lung_cy = 0, lung_rx = 0, lung_ry = 0;
  double heart_ratio = 0;  // heart width / body width
  double heart_cx = 0, heart_cy = 0, heart_rx = 0, heart_ry = 0;
  double blob_draw = 0;  // blob placed iff < 0.5
  int blob_lung = 0;     // 0 = left, 1 = right
  double blob_cx = 0, blob_cy = 0, blob_r = 0;
  double fill_draw = 0;  // base fill iff < 0.5
  double fill_fraction = 0;
};

struct Sample {
  std::string id;
  Tensor image;  // 1×H×W in [-1024, 1024]
  std::map<std::string, int> labels;
  /// Present only for findings with a label of 1 (and, for external data, an annotation).
  std::map<std::string, Mask> masks;
  std::optional<GenParams> gen_params;
  std::uint64_t seed = 0;

  int label(const std::string& finding) const;
  std::vector<int> label_row(const std::vector<std::string>& findings) const;
};

/// Positive-class thresholds; each lies strictly inside its parameter's sampled range.
struct FindingRule {
  std::string name;
  double range_lo, range_hi;
  double threshold;
};
const std::vector<FindingRule>& finding_rules();

bool supported_size(Index size);

/// Deterministic in (seed, index): sample i of generate(seed, n, size) equals
/// generate_sample(seed, i, size).
Sample generate_sample(std::uint64_t seed, Index index, Index size);
std::vector<Sample> generate(std::uint64_t seed, Index count, Index size);

std::string sample_id(Index index);

/// Dataset directory layout:
///   images/<id>.png            16-bit grayscale, [-1024, 1024] mapped onto [0, 65535]
///   labels.csv                 id,finding,label
///   masks/<id>_<finding>.png   binary (nonzero = inside)
///   boxes.csv                  id,finding,x,y,w,h
///   manifest.json              {"count", "size", "seed", "findings"}
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, std::uint64_t seed);

struct IngestResult {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
};

/// Loads a dataset directory. Boxes are rasterized as filled rectangles and
/// merged with any mask of the same finding. A positive label without any
/// annotation keeps the sample for label-only use and records a warning.
IngestResult ingest_external(const std::filesystem::path& dir);

Mask rasterize_box(Index height, Index width, Index x, Index y, Index w, Index h);

}  // namespace latentshift
