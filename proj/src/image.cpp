#include "latentshift/image.hpp"

#include "latentshift/models.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latentshift {

namespace {

void png_error_fn(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}
void flush_noop(png_structp) {}

struct ReadCursor {
  const std::string* bytes;
  std::size_t pos;
};

void read_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->bytes->size()) png_error(png, "unexpected end of data");
  std::memcpy(data, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

}  // namespace

std::string encode_png(const GrayImage& img) {
  if (img.bit_depth != 8 && img.bit_depth != 16) throw std::invalid_argument("bit depth must be 8 or 16");
  if (static_cast<Index>(img.pixels.size()) != img.width * img.height) throw std::invalid_argument("pixel count mismatch");
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, append_bytes, flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t bpp = img.bit_depth / 8;
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * bpp);
    for (Index y = 0; y < img.height; ++y) {
      for (Index x = 0; x < img.width; ++x) {
        const std::uint16_t v = img.pixels[static_cast<std::size_t>(y * img.width + x)];
        if (bpp == 2) {
          row[2 * x] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
          row[2 * x + 1] = static_cast<png_byte>(v & 0xFF);
        } else {
          row[x] = static_cast<png_byte>(v);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  const std::string bytes = encode_png(image);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

GrayImage decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw std::runtime_error("png: bad signature");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  GrayImage img;
  try {
    ReadCursor cur{&bytes, 0};
    png_set_read_fn(png, &cur, read_bytes);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
      depth = 8;
    }
    if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> row(rowbytes);
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
    for (Index y = 0; y < img.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (Index x = 0; x < img.width; ++x) {
        img.pixels[static_cast<std::size_t>(y * img.width + x)] =
            img.bit_depth == 16 ? static_cast<std::uint16_t>(row[2 * x] << 8 | row[2 * x + 1]) : row[x];
      }
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

GrayImage read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_png(ss.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

GrayImage quantize(const Map2D& values, double lo, double hi, int bit_depth) {
  GrayImage img;
  img.width = values.cols();
  img.height = values.rows();
  img.bit_depth = bit_depth;
  const double top = bit_depth == 16 ? 65535.0 : 255.0;
  const double span = hi - lo;
  img.pixels.resize(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    const double u = span > 0 ? (values.data()[i] - lo) / span : 0.0;
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(std::lround(std::clamp(u, 0.0, 1.0) * top));
  }
  return img;
}

Map2D dequantize(const GrayImage& img, double lo, double hi) {
  const double top = img.bit_depth == 16 ? 65535.0 : 255.0;
  Map2D out(img.height, img.width);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = lo + (hi - lo) * img.pixels[static_cast<std::size_t>(i)] / top;
  return out;
}

Map2D channel(const Tensor& image, Index c) {
  if (image.rank() != 3) throw std::invalid_argument("expected a C×H×W image, got " + shape_string(image.shape()));
  const Index h = image.dim(1), w = image.dim(2);
  return Eigen::Map<const Map2D>(image.data() + c * h * w, h, w);
}

GrayImage image_to_png16(const Tensor& image) { return quantize(channel(image), -kImageRange, kImageRange, 16); }

Tensor png16_to_image(const GrayImage& png) {
  const Map2D v = dequantize(png, -kImageRange, kImageRange);
  Tensor t({1, png.height, png.width});
  std::copy(v.data(), v.data() + v.size(), t.data());
  return t;
}

Mask mask_from_png(const GrayImage& png) {
  Mask m(png.height, png.width);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = png.pixels[static_cast<std::size_t>(i)] != 0;
  return m;
}

GrayImage mask_to_png(const Mask& mask) {
  GrayImage img;
  img.width = mask.cols();
  img.height = mask.rows();
  img.bit_depth = 8;
  img.pixels.resize(static_cast<std::size_t>(mask.size()));
  for (Index i = 0; i < mask.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
  return img;
}

std::string base64_encode(const std::string& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16 | static_cast<unsigned char>(bytes[i + 1]) << 8 |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[v >> 18 & 63];
    out += kAlphabet[v >> 12 & 63];
    out += kAlphabet[v >> 6 & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[v >> 18 & 63];
    out += kAlphabet[v >> 12 & 63];
    out += i + 1 < bytes.size() ? kAlphabet[v >> 6 & 63] : '=';
    out += '=';
  }
  return out;
}

}  // namespace latentshift
