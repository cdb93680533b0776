#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>

#include "doctest.h"
#include "samtta/error.hpp"
#include "samtta/image_io.hpp"

using namespace samtta;

TEST_CASE("quantisation") {
  CHECK(quantize(0.0) == 0);
  CHECK(quantize(1.0) == 255);
  CHECK(quantize(0.5) == 128);
  CHECK(quantize(-1.0) == 0);
  CHECK(quantize(2.0) == 255);
}

TEST_CASE("gray and colour round trip through quantised values") {
  for (std::size_t c : {1u, 3u}) {
    Image img(c, 5, 7);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>((i * 37) % 256) / 255.0;
    const auto bytes = encode_pnm(img);
    CHECK(bytes[1] == (c == 1 ? '5' : '6'));
    CHECK(decode_pnm(bytes) == img);
    const auto path = std::filesystem::temp_directory_path() / ("samtta_io_" + std::to_string(c) + ".pnm");
    write_pnm(path, img);
    CHECK(read_pnm(path) == img);
    std::filesystem::remove(path);
  }
}

TEST_CASE("header comments and whitespace are accepted") {
  std::string text = "P5\n# comment\n2 1\n255\n";
  text += static_cast<char>(0);
  text += static_cast<char>(255);
  const Image img = decode_pnm({text.begin(), text.end()});
  CHECK(img.width == 2);
  CHECK(img.data[1] == 1.0);
}

TEST_CASE("malformed files are rejected") {
  auto bytes = [](std::string s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  CHECK_THROWS_AS(decode_pnm(bytes("P2\n1 1\n255\n0")), FormatError);
  CHECK_THROWS_AS(decode_pnm(bytes("P5\n2 2\n255\n\x01")), FormatError);
  CHECK_THROWS_AS(decode_pnm(bytes("P5\n1 1\n65535\n\x01\x02")), FormatError);
  CHECK_THROWS_AS(decode_pnm(bytes("")), FormatError);
  CHECK_THROWS(read_pnm("/nonexistent/file.pgm"));
}

TEST_CASE("min-max normalisation and replication") {
  Image img(1, 1, 3);
  img.data = {2.0, 4.0, 6.0};
  normalize_minmax(img);
  CHECK(img.data == std::vector<double>{0.0, 0.5, 1.0});
  Image flat(1, 1, 2, 0.7);
  normalize_minmax(flat);
  CHECK(flat.data == std::vector<double>{0.0, 0.0});
  const Image rgb = replicate_channels(img);
  CHECK(rgb.channels == 3);
  CHECK(rgb.at(2, 0, 1) == 0.5);
  CHECK(rgb.tensor().shape() == Shape{3, 1, 3});
}
