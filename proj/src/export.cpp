#include "latentshift/export.hpp"

#include "latentshift/attribution.hpp"
#include "latentshift/models.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace latentshift {

using json = nlohmann::json;

namespace {

constexpr int kMinCodeSize = 8;
constexpr unsigned kClear = 256, kEnd = 257, kMaxCode = 4095;

void put16(std::string& out, unsigned v) {
  out += static_cast<char>(v & 0xff);
  out += static_cast<char>((v >> 8) & 0xff);
}

/// LSB-first bit packer that flushes 255-byte sub-blocks.
class BlockWriter {
 public:
  explicit BlockWriter(std::string& out) : out_(out) {}

  void code(unsigned value, int bits) {
    acc_ |= static_cast<std::uint32_t>(value) << nbits_;
    nbits_ += bits;
    while (nbits_ >= 8) {
      byte(static_cast<char>(acc_ & 0xff));
      acc_ >>= 8;
      nbits_ -= 8;
    }
  }

  void finish() {
    if (nbits_ > 0) byte(static_cast<char>(acc_ & 0xff));
    flush();
    out_ += '\0';
  }

 private:
  void byte(char c) {
    block_ += c;
    if (block_.size() == 255) flush();
  }
  void flush() {
    if (block_.empty()) return;
    out_ += static_cast<char>(block_.size());
    out_ += block_;
    block_.clear();
  }

  std::string& out_;
  std::string block_;
  std::uint32_t acc_ = 0;
  int nbits_ = 0;
};

void lzw_encode(const std::vector<std::uint16_t>& pixels, std::string& out) {
  out += static_cast<char>(kMinCodeSize);
  BlockWriter w(out);
  std::vector<std::array<std::uint16_t, 256>> children(kMaxCode + 1);
  auto reset = [&] {
    for (auto& c : children) c.fill(0);
  };
  reset();
  int size = kMinCodeSize + 1;
  unsigned last = kEnd;  // most recently assigned code
  w.code(kClear, size);
  unsigned cur = pixels.at(0);
  for (std::size_t i = 1; i < pixels.size(); ++i) {
    const unsigned p = pixels[i];
    if (children[cur][p] != 0) {
      cur = children[cur][p];
      continue;
    }
    w.code(cur, size);
    children[cur][p] = static_cast<std::uint16_t>(++last);
    if (last >= (1u << size) && size < 12) ++size;
    if (last == kMaxCode) {
      w.code(kClear, size);
      reset();
      size = kMinCodeSize + 1;
      last = kEnd;
    }
    cur = p;
  }
  w.code(cur, size);
  // A decoder adds one more entry on reading the final code.
  if (last + 1 >= (1u << size) && size < 12) ++size;
  w.code(kEnd, size);
  w.finish();
}

}  // namespace

std::string encode_gif(const std::vector<GrayImage>& frames, const GifOptions& options) {
  if (frames.empty()) throw std::invalid_argument("GIF needs at least one frame");
  const Index width = frames[0].width, height = frames[0].height;
  if (width < 1 || height < 1 || width > 65535 || height > 65535)
    throw std::invalid_argument("GIF frame size out of range");
  for (const auto& f : frames) {
    if (f.bit_depth != 8) throw std::invalid_argument("GIF frames must be 8-bit");
    if (f.width != width || f.height != height) throw std::invalid_argument("GIF frames must share one size");
  }
  std::string out = "GIF89a";
  put16(out, static_cast<unsigned>(width));
  put16(out, static_cast<unsigned>(height));
  out += static_cast<char>(0xf7);  // global table, 8-bit color resolution, 256 entries
  out += '\0';
  out += '\0';
  for (int v = 0; v < 256; ++v) out.append(3, static_cast<char>(v));
  if (options.loop && frames.size() > 1) {
    out += "\x21\xff\x0bNETSCAPE2.0\x03\x01";
    put16(out, 0);
    out += '\0';
  }
  for (const auto& f : frames) {
    out += "\x21\xf9\x04";
    out += static_cast<char>(0x04);  // leave the frame in place
    put16(out, static_cast<unsigned>(options.delay_cs));
    out += '\0';
    out += '\0';
    out += '\x2c';
    put16(out, 0);
    put16(out, 0);
    put16(out, static_cast<unsigned>(width));
    put16(out, static_cast<unsigned>(height));
    out += '\0';
    lzw_encode(f.pixels, out);
  }
  out += '\x3b';
  return out;
}

std::vector<std::size_t> boomerang_order(std::size_t n) {
  if (n == 0) throw std::invalid_argument("boomerang needs at least one frame");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) order.push_back(i);
  for (std::size_t i = n - 1; i-- > 1;) order.push_back(i);
  return order;
}

GrayImage image_to_gray8(const Tensor& image) { return quantize(channel(image), -kImageRange, kImageRange, 8); }

std::string sweep_gif(const LambdaSweep& sweep, const GifOptions& options) {
  if (sweep.frames.empty()) throw std::invalid_argument("sweep has no frames");
  std::vector<GrayImage> frames;
  for (std::size_t i : boomerang_order(sweep.frames.size())) frames.push_back(image_to_gray8(sweep.frames[i]));
  return encode_gif(frames, options);
}

std::filesystem::path sidecar_path(const std::filesystem::path& png) {
  auto p = png;
  return p.replace_extension(".json");
}

void write_map(const std::filesystem::path& png, const Map2D& map, const json& metadata) {
  if (map.size() == 0) throw std::invalid_argument("cannot export an empty map");
  if (!map.allFinite()) throw std::invalid_argument("cannot export a map with non-finite values");
  const double lo = map.minCoeff(), hi = map.maxCoeff();
  write_png(png, quantize(map, lo, hi, 16));
  json side = metadata.is_object() ? metadata : json::object();
  side["lo"] = lo;
  side["hi"] = hi;
  side["bit_depth"] = 16;
  side["height"] = map.rows();
  side["width"] = map.cols();
  std::ofstream f(sidecar_path(png), std::ios::binary);
  f << side.dump(2) << '\n';
  if (!f) throw std::runtime_error("failed to write " + sidecar_path(png).string());
}

Map2D read_map(const std::filesystem::path& png) {
  std::ifstream f(sidecar_path(png), std::ios::binary);
  if (!f) throw std::runtime_error("missing map sidecar " + sidecar_path(png).string());
  const json side = json::parse(f);
  const GrayImage img = read_png(png);
  if (img.height != side.at("height").get<Index>() || img.width != side.at("width").get<Index>())
    throw std::runtime_error("map sidecar does not match " + png.string());
  return dequantize(img, side.at("lo").get<double>(), side.at("hi").get<double>());
}

double map_quantization_error(const Map2D& map) { return (map.maxCoeff() - map.minCoeff()) / 65535.0 / 2.0; }

GrayImage frame_strip(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw std::invalid_argument("frame strip needs at least one frame");
  const Index h = frames[0].dim(1), w = frames[0].dim(2);
  Map2D strip(h, w * static_cast<Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].dim(1) != h || frames[i].dim(2) != w) throw std::invalid_argument("frames must share one size");
    strip.block(0, static_cast<Index>(i) * w, h, w) = channel(frames[i]);
  }
  return quantize(strip, -kImageRange, kImageRange, 16);
}

GrayImage overlay(const Tensor& image, const Map2D& map, double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("overlay fraction must lie in (0, 1]");
  GrayImage out = image_to_gray8(image);
  if (map.rows() != out.height || map.cols() != out.width) throw std::invalid_argument("map and image sizes differ");
  const Index k = std::max<Index>(1, static_cast<Index>(std::ceil(fraction * static_cast<double>(map.size()))));
  const Mask top = binarize_topk(map, k);
  for (Index i = 0; i < top.size(); ++i)
    if (top.data()[i]) out.pixels[static_cast<std::size_t>(i)] = 255;
  return out;
}

}  // namespace latentshift
