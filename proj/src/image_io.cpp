#include "samtta/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace samtta {

Tensor Image::tensor() const {
  if (channels == 1) return Tensor::from({height, width}, data);
  return Tensor::from({channels, height, width}, data);
}

std::uint8_t quantize(double v) {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

std::vector<std::uint8_t> encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("pnm: only 1 or 3 channels can be written, got " + std::to_string(image.channels));
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t plane = image.height * image.width;
  out.reserve(out.size() + plane * image.channels);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < image.channels; ++c) out.push_back(quantize(image.data[c * plane + i]));
  }
  return out;
}

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    bool any = false;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      value = value * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      ++pos_;
      any = true;
      if (value > (1u << 24)) throw FormatError(std::string("pnm: ") + what + " too large");
    }
    if (!any) throw FormatError(std::string("pnm: malformed ") + what);
    return value;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError("pnm: missing separator before payload");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("pnm: bad magic (expected P5 or P6)");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  HeaderParser parser(bytes);
  const std::size_t width = parser.number("width");
  const std::size_t height = parser.number("height");
  const std::size_t maxval = parser.number("maxval");
  if (maxval != 255) throw FormatError("pnm: maxval must be 255, got " + std::to_string(maxval));
  const std::size_t start = parser.payload_start();
  const std::size_t plane = width * height;
  if (bytes.size() < start + plane * channels) {
    throw FormatError("pnm: truncated payload (" + std::to_string(bytes.size() - start) + " of " +
                      std::to_string(plane * channels) + " bytes)");
  }
  Image image(channels, height, width);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      image.data[c * plane + i] = static_cast<double>(bytes[start + i * channels + c]) / 255.0;
    }
  }
  return image;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  auto bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void normalize_minmax(Image& image) {
  if (image.data.empty()) return;
  auto [lo, hi] = std::minmax_element(image.data.begin(), image.data.end());
  const double a = *lo, range = *hi - *lo;
  for (auto& v : image.data) v = range > 0.0 ? (v - a) / range : 0.0;
}

Image replicate_channels(const Image& gray) {
  if (gray.channels != 1) throw ShapeError("replicate_channels expects a single-channel image");
  Image out(3, gray.height, gray.width);
  for (std::size_t c = 0; c < 3; ++c) {
    std::copy(gray.data.begin(), gray.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(c * gray.data.size()));
  }
  return out;
}

}  // namespace samtta
