#include "symnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "symnet/error.hpp"

namespace symnet {

namespace {

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads one header token, skipping whitespace and '#' comments.
std::string token(const std::vector<std::uint8_t>& b, std::size_t& pos, const std::string& path) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string t;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') t.push_back(static_cast<char>(b[pos++]));
  if (t.empty()) throw FormatError(path + ": truncated header at offset " + std::to_string(pos));
  return t;
}

std::size_t header_number(const std::vector<std::uint8_t>& b, std::size_t& pos, const std::string& path) {
  const std::size_t at = pos;
  const std::string t = token(b, pos, path);
  if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw FormatError(path + ": bad header field '" + t + "' at offset " + std::to_string(at));
  return std::stoul(t);
}

ImageU8 read_netpbm(const std::string& path, const char* magic, std::size_t channels) {
  const auto b = slurp(path);
  std::size_t pos = 0;
  if (token(b, pos, path) != magic) throw FormatError(path + ": expected " + magic + " magic");
  ImageU8 img;
  img.width = header_number(b, pos, path);
  img.height = header_number(b, pos, path);
  const std::size_t maxval = header_number(b, pos, path);
  if (maxval != 255) throw FormatError(path + ": only 8-bit images (maxval 255) are supported");
  if (img.width == 0 || img.height == 0) throw FormatError(path + ": zero image extent");
  if (pos >= b.size() || !std::isspace(b[pos])) throw FormatError(path + ": missing raster separator");
  ++pos;
  img.channels = channels;
  const std::size_t n = img.width * img.height * channels;
  if (b.size() - pos < n)
    throw FormatError(path + ": raster truncated at offset " + std::to_string(b.size()));
  img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos),
                    b.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write_netpbm(const std::string& path, const ImageU8& img, const char* magic,
                  std::size_t channels) {
  require(img.channels == channels, path + ": wrong channel count for " + magic);
  require(img.pixels.size() == img.width * img.height * channels, path + ": pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << magic << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace

ImageU8 read_ppm(const std::string& path) { return read_netpbm(path, "P6", 3); }
ImageU8 read_pgm(const std::string& path) { return read_netpbm(path, "P5", 1); }
void write_ppm(const std::string& path, const ImageU8& img) { write_netpbm(path, img, "P6", 3); }
void write_pgm(const std::string& path, const ImageU8& img) { write_netpbm(path, img, "P5", 1); }

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
  require(img.channels == 3, "image_to_tensor: expected a colour image");
  Tensor<T> t(Shape{img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]) / T(255);
  return t;
}

template <typename T>
Tensor<T> mask_to_tensor(const ImageU8& img) {
  require(img.channels == 1, "mask_to_tensor: expected a single-channel mask");
  Tensor<T> t(Shape{img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] ? T(1) : T(0);
  return t;
}

template <typename T>
ImageU8 tensor_to_gray(const Tensor<T>& map) {
  require(map.rank() == 2, "tensor_to_gray: expected an H x W map");
  ImageU8 img{map.dim(0), map.dim(1), 1, std::vector<std::uint8_t>(map.size())};
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = std::clamp(static_cast<double>(map[i]), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

template Tensor<float> image_to_tensor(const ImageU8&);
template Tensor<double> image_to_tensor(const ImageU8&);
template Tensor<float> mask_to_tensor(const ImageU8&);
template Tensor<double> mask_to_tensor(const ImageU8&);
template ImageU8 tensor_to_gray(const Tensor<float>&);
template ImageU8 tensor_to_gray(const Tensor<double>&);

}  // namespace symnet
