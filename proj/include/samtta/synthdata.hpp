#pragma once

// Synthetic source/target domains. Source scenes are RGB with a warm object
// on a cool textured background and crisp edges; target scenes are the same
// scenes converted to grayscale, then passed through an intensity power law,
// a Gaussian blur and additive noise.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "samtta/image_io.hpp"
#include "samtta/model.hpp"

namespace samtta {

inline constexpr std::size_t kCanvas = 64;
inline constexpr std::size_t kMinForeground = 16;

enum class ObjectKind { Ellipse, Blob, Lesion };

struct ShiftProfile {
  std::string name;
  bool grayscale = true;
  double gamma_lo = 1.0, gamma_hi = 1.0;
  double blur_lo = 0.0, blur_hi = 0.0;
  double noise = 0.0;
};

// "source", "mri-like" or "ct-like"; throws DomainError otherwise.
ShiftProfile shift_profile(const std::string& name);

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  std::size_t canvas = kCanvas;
  ObjectKind kind = ObjectKind::Ellipse;
  double object_rgb[3] = {0, 0, 0};
  double background_rgb[3] = {0, 0, 0};
  double texture_amplitude = 0;
  double blur_sigma = 0;
  double noise_sigma = 0;
  double gamma = 1;
};

struct StreamSample {
  Image image;             // [0,1], 1 or 3 channels
  std::vector<double> gt;  // H*W binary
  BoxPrompt box;
  SceneSpec spec;
};

// Bounding box of the foreground grown by `pad`, clipped to the canvas.
BoxPrompt oracle_box(std::span<const double> mask, std::size_t height, std::size_t width, std::size_t pad = 2);

StreamSample make_source_sample(std::uint64_t seed, std::size_t index);
StreamSample make_target_sample(std::uint64_t seed, std::size_t index, const ShiftProfile& shift);
// Degrades an explicit source sample with fixed shift values.
StreamSample degrade(const StreamSample& source, double gamma, double blur_sigma, double noise_sigma,
                     std::uint64_t noise_seed);

std::vector<StreamSample> gen_source(std::uint64_t seed, std::size_t n, std::size_t first_index = 0);
std::vector<StreamSample> gen_target(std::uint64_t seed, std::size_t n, const ShiftProfile& shift,
                                     std::size_t first_index = 0);

Image gaussian_blur(const Image& image, double sigma);
Image to_grayscale(const Image& rgb);

// Mean Sobel gradient magnitude over the band of pixels adjacent to the mask
// contour (RMS across channels for colour images).
double boundary_gradient(const Image& image, std::span<const double> mask);

// Manifest: CSV with header "image,mask" and paths relative to its directory.
struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Writes img_%05d.p{g,p}m, mask_%05d.pgm and manifest.csv into `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<StreamSample>& samples);

// Loads image + mask for one manifest row; the box is derived from the mask
// (full canvas when the mask is empty).
StreamSample load_sample(const ManifestEntry& entry, std::size_t pad = 2);

std::string indexed_name(const std::string& prefix, std::size_t index, const std::string& ext);

}  // namespace samtta
