#pragma once

#include <filesystem>
#include <string>

#include "nst/tensor.hpp"

namespace nst::io {

enum class ImageFormat { PPM, PNG };

std::string_view format_name(ImageFormat f);

struct Image {
  Tensor<float> pixels;  // (1,3,h,w), values in [0,1]
  ImageFormat format = ImageFormat::PPM;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PPM (P6, maxval 255) or 8-bit RGB non-interlaced PNG, chosen by the
/// file's magic bytes.
Image load_image(const std::filesystem::path& path);

/// Format follows the extension: .png writes PNG, anything else PPM.
/// Values are clamped to [0,1] and rounded to the nearest 1/255.
void save_image(const Tensor<float>& pixels, const std::filesystem::path& path);

Image decode_ppm(const std::string& bytes, const std::string& source = "<memory>");
std::string encode_ppm(const Tensor<float>& pixels);

bool is_image_file(const std::filesystem::path& path);

}  // namespace nst::io
