#include "latentshift/synth.hpp"

#include "latentshift/checkpoint.hpp"
#include "latentshift/models.hpp"
#include "latentshift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace latentshift {

namespace {

constexpr double kBackground = -900;
constexpr double kBody = 60;
constexpr double kLung = -650;
constexpr double kHeart = 320;
constexpr double kBlob = 560;
constexpr double kFillTop = -120;
constexpr double kFillBottom = 240;
constexpr double kNoiseSigma = 30;

bool in_ellipse(Index y, Index x, double cx, double cy, double rx, double ry) {
  const double dx = (x + 0.5 - cx) / rx;
  const double dy = (y + 0.5 - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

int Sample::label(const std::string& finding) const {
  auto it = labels.find(finding);
  return it == labels.end() ? 0 : it->second;
}

std::vector<int> Sample::label_row(const std::vector<std::string>& findings) const {
  std::vector<int> row;
  for (const auto& f : findings) row.push_back(label(f));
  return row;
}

const std::vector<FindingRule>& finding_rules() {
  static const std::vector<FindingRule> rules{
      {"bigheart", 0.35, 0.65, 0.50},
      {"blob", 0.0, 1.0, 0.5},
      {"basefill", 0.0, 1.0, 0.5},
  };
  return rules;
}

bool supported_size(Index size) { return size == 32 || size == 64 || size == 128; }

std::string sample_id(Index index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06ld", static_cast<long>(index));
  return buf;
}

Sample generate_sample(std::uint64_t seed, Index index, Index size) {
  if (!supported_size(size)) throw std::invalid_argument("unsupported image size " + std::to_string(size));
  const double s = static_cast<double>(size);
  const std::uint64_t sample_seed = derive_seed(seed, static_cast<std::uint64_t>(index));
  Rng rng(sample_seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  GenParams p;
  p.body_cx = s * (0.5 + uniform(-0.02, 0.02));
  p.body_cy = s * (0.52 + uniform(-0.02, 0.02));
  p.body_rx = s * uniform(0.40, 0.46);
  p.body_ry = s * uniform(0.42, 0.47);
  p.lung_offset = 0.48 * p.body_rx;
  p.lung_cy = p.body_cy - 0.06 * s;
  p.lung_rx = 0.36 * p.body_rx;
  p.lung_ry = 0.70 * p.body_ry;

  const auto& rules = finding_rules();
  p.heart_ratio = uniform(rules[0].range_lo, rules[0].range_hi);
  p.heart_rx = p.heart_ratio * p.body_rx;
  p.heart_ry = 0.55 * p.heart_rx + 0.08 * p.body_ry;
  p.heart_cx = p.body_cx + 0.06 * p.body_rx;
  p.heart_cy = p.body_cy + 0.20 * p.body_ry;

  p.fill_draw = uniform(0.0, 1.0);
  p.fill_fraction = uniform(0.25, 0.45);

  p.blob_draw = uniform(0.0, 1.0);
  p.blob_lung = uniform(0.0, 1.0) < 0.5 ? 0 : 1;
  p.blob_r = std::max(3.0, uniform(3.0, 5.0) * s / 64.0);
  {
    // Uniform point in the lung ellipse shrunk so the disc stays inside the lung.
    const double cx = p.body_cx + (p.blob_lung ? 1 : -1) * p.lung_offset;
    const double rx = p.lung_rx - p.blob_r, ry = p.lung_ry - p.blob_r;
    double u, v;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
    } while (u * u + v * v > 1.0);
    p.blob_cx = cx + u * rx;
    p.blob_cy = p.lung_cy + v * ry;
  }

  const bool bigheart = p.heart_ratio > rules[0].threshold;
  const bool blob = p.blob_draw < rules[1].threshold;
  const bool basefill = p.fill_draw < rules[2].threshold;

  Map2D img = Map2D::Constant(size, size, kBackground);
  Mask heart = Mask::Zero(size, size), disc = Mask::Zero(size, size), fill = Mask::Zero(size, size);
  const double fill_line = p.lung_cy + p.lung_ry - 2.0 * p.lung_ry * p.fill_fraction;
  const double lung_bottom = p.lung_cy + p.lung_ry;
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      if (!in_ellipse(y, x, p.body_cx, p.body_cy, p.body_rx, p.body_ry)) continue;
      double v = kBody;
      const bool lung = in_ellipse(y, x, p.body_cx - p.lung_offset, p.lung_cy, p.lung_rx, p.lung_ry) ||
                        in_ellipse(y, x, p.body_cx + p.lung_offset, p.lung_cy, p.lung_rx, p.lung_ry);
      if (lung) {
        v = kLung;
        if (basefill && y + 0.5 >= fill_line) {
          const double t = std::clamp((y + 0.5 - fill_line) / (lung_bottom - fill_line), 0.0, 1.0);
          v = kFillTop + t * (kFillBottom - kFillTop);
          fill(y, x) = 1;
        }
      }
      if (in_ellipse(y, x, p.heart_cx, p.heart_cy, p.heart_rx, p.heart_ry)) {
        v = kHeart;
        heart(y, x) = 1;
        fill(y, x) = 0;
      }
      if (blob && in_ellipse(y, x, p.blob_cx, p.blob_cy, p.blob_r, p.blob_r)) {
        v = kBlob;
        disc(y, x) = 1;
      }
      img(y, x) = v;
    }
  }
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = std::clamp(img.data()[i] + noise(rng), -kImageRange, kImageRange);

  Sample out;
  out.id = sample_id(index);
  out.seed = sample_seed;
  out.image = Tensor({1, size, size});
  std::copy(img.data(), img.data() + img.size(), out.image.data());
  out.labels = {{"bigheart", bigheart}, {"blob", blob}, {"basefill", basefill}};
  if (bigheart) out.masks.emplace("bigheart", heart);
  if (blob) out.masks.emplace("blob", disc);
  if (basefill) out.masks.emplace("basefill", fill);
  out.gen_params = p;
  return out;
}

std::vector<Sample> generate(std::uint64_t seed, Index count, Index size) {
  if (count < 1) throw std::invalid_argument("count must be at least 1");
  if (!supported_size(size)) throw std::invalid_argument("unsupported image size " + std::to_string(size));
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.push_back(generate_sample(seed, i, size));
  return out;
}

Mask rasterize_box(Index height, Index width, Index x, Index y, Index w, Index h) {
  Mask m = Mask::Zero(height, width);
  const Index x0 = std::max<Index>(0, x), y0 = std::max<Index>(0, y);
  const Index x1 = std::min(width, x + w), y1 = std::min(height, y + h);
  for (Index r = y0; r < y1; ++r)
    for (Index c = x0; c < x1; ++c) m(r, c) = 1;
  return m;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  labels << "id,finding,label\n";
  std::ofstream boxes(dir / "boxes.csv", std::ios::trunc);
  boxes << "id,finding,x,y,w,h\n";
  Index size = 0;
  for (const auto& s : samples) {
    size = s.image.dim(1);
    write_png(dir / "images" / (s.id + ".png"), image_to_png16(s.image));
    for (const auto& [finding, label] : s.labels) labels << s.id << ',' << finding << ',' << label << '\n';
    for (const auto& [finding, mask] : s.masks) write_png(dir / "masks" / (s.id + "_" + finding + ".png"), mask_to_png(mask));
  }
  json manifest{{"count", samples.size()}, {"size", size}, {"seed", seed}, {"findings", kFindings}};
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream is(path);
  if (!is) return rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

long parse_int(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": expected an integer, got '" + s + "'");
  }
}

bool is_header(const std::vector<std::string>& row) { return !row.empty() && row[0] == "id"; }

}  // namespace

IngestResult ingest_external(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  IngestResult result;
  if (!fs::is_directory(dir / "images")) return result;

  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(dir / "images"))
    if (e.path().extension() == ".png") image_files.push_back(e.path());
  std::sort(image_files.begin(), image_files.end());

  std::map<std::string, std::size_t> by_id;
  for (const auto& path : image_files) {
    Sample s;
    s.id = path.stem().string();
    GrayImage png;
    try {
      png = read_png(path);
    } catch (const std::exception& e) {
      throw FormatError(e.what());
    }
    if (png.bit_depth == 8) {
      // 8-bit images are spread over the same affine range.
      for (auto& v : png.pixels) v = static_cast<std::uint16_t>(v * 257);
      png.bit_depth = 16;
    }
    s.image = png16_to_image(png);
    by_id.emplace(s.id, result.samples.size());
    result.samples.push_back(std::move(s));
  }

  const auto labels_path = dir / "labels.csv";
  const auto rows = read_csv(labels_path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == 0 && is_header(rows[i])) continue;
    if (rows[i].size() != 3) throw FormatError(labels_path.string() + ":" + std::to_string(i + 1) + ": expected id,finding,label");
    auto it = by_id.find(rows[i][0]);
    if (it == by_id.end()) {
      result.warnings.push_back("labels.csv references unknown image '" + rows[i][0] + "'");
      continue;
    }
    const long label = parse_int(rows[i][2], labels_path, i + 1);
    if (label != 0 && label != 1) throw FormatError(labels_path.string() + ":" + std::to_string(i + 1) + ": label must be 0 or 1");
    result.samples[it->second].labels[rows[i][1]] = static_cast<int>(label);
  }

  auto merge_mask = [&](Sample& s, const std::string& finding, const Mask& m) {
    auto [it, inserted] = s.masks.emplace(finding, m);
    if (!inserted) it->second = it->second.max(m);
  };

  if (fs::is_directory(dir / "masks")) {
    std::vector<fs::path> mask_files;
    for (const auto& e : fs::directory_iterator(dir / "masks"))
      if (e.path().extension() == ".png") mask_files.push_back(e.path());
    std::sort(mask_files.begin(), mask_files.end());
    for (const auto& path : mask_files) {
      const std::string stem = path.stem().string();
      const auto us = stem.rfind('_');
      if (us == std::string::npos) throw FormatError(path.string() + ": mask name must be <id>_<finding>.png");
      auto it = by_id.find(stem.substr(0, us));
      if (it == by_id.end()) {
        result.warnings.push_back(path.string() + ": no matching image");
        continue;
      }
      Sample& s = result.samples[it->second];
      GrayImage png;
      try {
        png = read_png(path);
      } catch (const std::exception& e) {
        throw FormatError(e.what());
      }
      if (png.height != s.image.dim(1) || png.width != s.image.dim(2)) {
        throw FormatError(path.string() + ": mask size does not match image");
      }
      merge_mask(s, stem.substr(us + 1), mask_from_png(png));
    }
  }

  const auto boxes_path = dir / "boxes.csv";
  const auto box_rows = read_csv(boxes_path);
  for (std::size_t i = 0; i < box_rows.size(); ++i) {
    if (i == 0 && is_header(box_rows[i])) continue;
    const auto& r = box_rows[i];
    if (r.size() != 6) throw FormatError(boxes_path.string() + ":" + std::to_string(i + 1) + ": expected id,finding,x,y,w,h");
    auto it = by_id.find(r[0]);
    if (it == by_id.end()) {
      result.warnings.push_back("boxes.csv references unknown image '" + r[0] + "'");
      continue;
    }
    Sample& s = result.samples[it->second];
    merge_mask(s, r[1],
               rasterize_box(s.image.dim(1), s.image.dim(2), parse_int(r[2], boxes_path, i + 1),
                             parse_int(r[3], boxes_path, i + 1), parse_int(r[4], boxes_path, i + 1),
                             parse_int(r[5], boxes_path, i + 1)));
  }

  for (auto& s : result.samples) {
    for (auto it = s.masks.begin(); it != s.masks.end();) {
      if ((it->second != 0).count() == 0) {
        it = s.masks.erase(it);
      } else {
        ++it;
      }
    }
    for (const auto& [finding, label] : s.labels) {
      if (label == 1 && !s.masks.count(finding)) {
        result.warnings.push_back(s.id + ": positive '" + finding + "' has no mask or box; kept for label-only use");
      }
    }
  }
  return result;
}

}  // namespace latentshift
