#include "nst/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace nst::io {

namespace {

std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void check_rgb(const Tensor<float>& pixels) {
  const Shape& s = pixels.shape();
  if (s.n != 1 || s.c != 3) throw ImageError("images must be (1,3,h,w) tensors, got " + s.str());
}

Tensor<float> from_interleaved(const std::uint8_t* rgb, std::size_t h, std::size_t w) {
  Tensor<float> t({1, 3, h, w});
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = static_cast<float>(rgb[3 * i + c]) / 255.0f;
  return t;
}

std::vector<std::uint8_t> to_interleaved(const Tensor<float>& pixels) {
  const std::size_t plane = pixels.shape().plane();
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) rgb[3 * i + c] = quantize(pixels[c * plane + i]);
  return rgb;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError(path.string() + ": cannot open image");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// --- PNG via libpng -----------------------------------------------------------

struct PngReadSource {
  const std::string* bytes;
  std::size_t pos;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* src = static_cast<PngReadSource*>(png_get_io_ptr(png));
  if (src->bytes->size() - src->pos < n) png_error(png, "truncated PNG data");
  std::memcpy(out, src->bytes->data() + src->pos, n);
  src->pos += n;
}

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  *err = msg;
  png_longjmp(png, 1);
}

void png_warn_fn(png_structp, png_const_charp) {}

Image decode_png(const std::string& bytes, const std::string& source) {
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warn_fn);
  if (!png) throw ImageError(source + ": libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> rgb;
  std::vector<png_bytep> rows;
  std::string unsupported;
  png_uint_32 w = 0, h = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(source + ": corrupt PNG (" + err + ")");
  }
  PngReadSource src{&bytes, 0};
  png_set_read_fn(png, &src, png_read_mem);
  png_read_info(png, info);
  int depth = 0, color = 0, interlace = 0;
  png_get_IHDR(png, info, &w, &h, &depth, &color, &interlace, nullptr, nullptr);
  if (color != PNG_COLOR_TYPE_RGB)
    unsupported = "only 8-bit RGB PNG is supported (color type " + std::to_string(color) + ")";
  else if (depth != 8)
    unsupported = "only 8-bit RGB PNG is supported (bit depth " + std::to_string(depth) + ")";
  else if (interlace != PNG_INTERLACE_NONE)
    unsupported = "interlaced PNG is not supported";
  if (unsupported.empty()) {
    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = rgb.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!unsupported.empty()) throw ImageError(source + ": unsupported format: " + unsupported);
  return {from_interleaved(rgb.data(), h, w), ImageFormat::PNG};
}

void png_write_mem(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}
void png_flush_mem(png_structp) {}

std::string encode_png(const Tensor<float>& pixels) {
  const std::size_t h = pixels.shape().h, w = pixels.shape().w;
  auto rgb = to_interleaved(pixels);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = rgb.data() + y * w * 3;

  std::string out, err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warn_fn);
  if (!png) throw ImageError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encoding failed (" + err + ")");
  }
  png_set_write_fn(png, &out, png_write_mem, png_flush_mem);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// --- PPM -------------------------------------------------------------------------

class PpmHeader {
 public:
  PpmHeader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::size_t next_number(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > (1u << 24)) fail(std::string(what) + " is too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) fail(std::string("expected ") + what);
    return v;
  }

  /// Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      fail("missing whitespace after maxval");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ImageError(source_ + ": corrupt PPM header: " + what);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 2;
};

}  // namespace

std::string_view format_name(ImageFormat f) { return f == ImageFormat::PNG ? "png" : "ppm"; }

Image decode_ppm(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw ImageError(source + ": not a PPM file");
  if (bytes[1] != '6')
    throw ImageError(source + ": unsupported format: only binary PPM (P6) is supported, got P" + bytes[1]);
  PpmHeader hdr(bytes, source);
  const std::size_t w = hdr.next_number("width");
  const std::size_t h = hdr.next_number("height");
  const std::size_t maxval = hdr.next_number("maxval");
  if (w == 0 || h == 0) hdr.fail("zero image dimension");
  if (maxval != 255) throw ImageError(source + ": unsupported format: PPM maxval must be 255, got " + std::to_string(maxval));
  const std::size_t start = hdr.raster_start();
  const std::size_t need = w * h * 3;
  if (bytes.size() - start < need)
    throw ImageError(source + ": truncated PPM raster (" + std::to_string(bytes.size() - start) + " of " +
                     std::to_string(need) + " bytes)");
  return {from_interleaved(reinterpret_cast<const std::uint8_t*>(bytes.data() + start), h, w), ImageFormat::PPM};
}

std::string encode_ppm(const Tensor<float>& pixels) {
  check_rgb(pixels);
  const auto rgb = to_interleaved(pixels);
  std::string out = "P6\n" + std::to_string(pixels.shape().w) + " " + std::to_string(pixels.shape().h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

Image load_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes, path.string());
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_ppm(bytes, path.string());
  throw ImageError(path.string() + ": unsupported format (expected PPM P6 or PNG)");
}

void save_image(const Tensor<float>& pixels, const std::filesystem::path& path) {
  check_rgb(pixels);
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const std::string bytes = ext == ".png" ? encode_png(pixels) : encode_ppm(pixels);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageError(path.string() + ": cannot open for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ImageError(path.string() + ": write failed");
}

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".png";
}

}  // namespace nst::io
