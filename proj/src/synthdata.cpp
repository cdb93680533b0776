#include "samtta/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "samtta/rng.hpp"

namespace samtta {

ShiftProfile shift_profile(const std::string& name) {
  if (name == "source") return {"source", false, 1.0, 1.0, 0.0, 0.0, 0.0};
  if (name == "mri-like") return {"mri-like", true, 0.4, 0.7, 1.0, 2.0, 0.05};
  if (name == "ct-like") return {"ct-like", true, 1.5, 2.5, 0.5, 1.5, 0.03};
  throw DomainError("unknown shift profile '" + name + "' (expected source, mri-like or ct-like)");
}

BoxPrompt oracle_box(std::span<const double> mask, std::size_t height, std::size_t width, std::size_t pad) {
  if (mask.size() != height * width) throw ShapeError("oracle_box: mask size does not match canvas");
  std::size_t y0 = height, y1 = 0, x0 = width, x1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (mask[y * width + x] > 0.5) {
        any = true;
        y0 = std::min(y0, y);
        y1 = std::max(y1, y + 1);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x + 1);
      }
    }
  }
  if (!any) throw DomainError("oracle_box: mask has no foreground");
  auto lo = [pad](std::size_t v) { return v > pad ? v - pad : 0; };
  BoxPrompt box;
  box.x0 = static_cast<double>(lo(x0));
  box.y0 = static_cast<double>(lo(y0));
  box.x1 = static_cast<double>(std::min(width, x1 + pad));
  box.y1 = static_cast<double>(std::min(height, y1 + pad));
  return box;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct Shape2D {
  ObjectKind kind;
  double cx, cy, r;
  double ax, ay, angle;            // ellipse
  double harm_amp[3], harm_phase[3];  // blob radius modulation, harmonics 2..4
  double sx, sy, sr;               // lesion satellite

  bool inside(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    if (kind == ObjectKind::Ellipse) {
      const double c = std::cos(angle), s = std::sin(angle);
      const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
      return u * u + v * v <= 1.0;
    }
    const double phi = std::atan2(dy, dx);
    double radius = r;
    for (int k = 0; k < 3; ++k) radius += r * harm_amp[k] * std::cos((k + 2) * phi + harm_phase[k]);
    if (std::hypot(dx, dy) <= radius) return true;
    if (kind == ObjectKind::Lesion) return std::hypot(x - sx, y - sy) <= sr;
    return false;
  }
};

Shape2D random_shape(Rng& rng, ObjectKind kind, double canvas) {
  Shape2D s{};
  s.kind = kind;
  s.r = uniform(rng, 8.0, 15.0);
  s.cx = uniform(rng, 0.3 * canvas, 0.7 * canvas);
  s.cy = uniform(rng, 0.3 * canvas, 0.7 * canvas);
  s.ax = s.r * uniform(rng, 0.7, 1.2);
  s.ay = s.r * uniform(rng, 0.5, 0.9);
  s.angle = uniform(rng, 0.0, std::numbers::pi);
  for (int k = 0; k < 3; ++k) {
    s.harm_amp[k] = uniform(rng, 0.0, 0.18);
    s.harm_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  s.sr = uniform(rng, 3.0, 5.0);
  // Satellite straddles the main body's rim so the object stays connected.
  const double dist = s.r * 0.8 + s.sr * 0.6;
  s.sx = s.cx + dist * std::cos(theta);
  s.sy = s.cy + dist * std::sin(theta);
  return s;
}

// Smooth low-frequency field in roughly [-1,1].
std::vector<double> texture_field(Rng& rng, std::size_t canvas) {
  std::vector<double> field(canvas * canvas, 0.0);
  for (int k = 0; k < 4; ++k) {
    const double fx = uniform(rng, -3.0, 3.0), fy = uniform(rng, -3.0, 3.0), ph = uniform(rng, 0.0, 6.283);
    for (std::size_t y = 0; y < canvas; ++y) {
      for (std::size_t x = 0; x < canvas; ++x) {
        field[y * canvas + x] +=
            0.5 * std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) / static_cast<double>(canvas) + ph);
      }
    }
  }
  return field;
}

void add_noise(Image& image, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& v : image.data) v = std::clamp(v + normal(rng), 0.0, 1.0);
}

}  // namespace

StreamSample make_source_sample(std::uint64_t seed, std::size_t index) {
  auto rng = make_rng(seed, "scene", index);
  const std::size_t n = kCanvas;
  StreamSample out;
  out.spec.seed = seed;
  out.spec.index = index;
  for (int attempt = 0;; ++attempt) {
    const auto kind = static_cast<ObjectKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    const auto shape = random_shape(rng, kind, static_cast<double>(n));
    std::vector<double> mask(n * n, 0.0);
    std::size_t area = 0;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        if (shape.inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          mask[y * n + x] = 1.0;
          ++area;
        }
      }
    }
    if (area < kMinForeground && attempt < 100) continue;
    out.spec.kind = kind;
    out.gt = std::move(mask);
    break;
  }

  // Warm object over a cool, darker background.
  double* obj = out.spec.object_rgb;
  double* bg = out.spec.background_rgb;
  obj[0] = uniform(rng, 0.65, 0.95);
  obj[1] = uniform(rng, 0.35, 0.70);
  obj[2] = uniform(rng, 0.05, 0.35);
  bg[0] = uniform(rng, 0.05, 0.30);
  bg[1] = uniform(rng, 0.15, 0.45);
  bg[2] = uniform(rng, 0.40, 0.75);
  out.spec.texture_amplitude = uniform(rng, 0.03, 0.12);
  out.spec.noise_sigma = 0.02;
  const auto field = texture_field(rng, n);
  const auto obj_field = texture_field(rng, n);

  Image image(3, n, n);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n * n; ++i) {
      const bool fg = out.gt[i] > 0.5;
      const double base = fg ? obj[c] : bg[c];
      const double tex = fg ? 0.5 * out.spec.texture_amplitude * obj_field[i] : out.spec.texture_amplitude * field[i];
      image.data[c * n * n + i] = std::clamp(base + tex, 0.0, 1.0);
    }
  }
  auto noise_rng = make_rng(seed, "source-noise", index);
  add_noise(image, out.spec.noise_sigma, noise_rng);
  out.image = std::move(image);
  out.box = oracle_box(out.gt, n, n);
  return out;
}

Image to_grayscale(const Image& rgb) {
  if (rgb.channels == 1) return rgb;
  Image gray(1, rgb.height, rgb.width);
  const std::size_t plane = rgb.height * rgb.width;
  for (std::size_t i = 0; i < plane; ++i) {
    gray.data[i] = std::clamp(0.299 * rgb.data[i] + 0.587 * rgb.data[plane + i] + 0.114 * rgb.data[2 * plane + i],
                              0.0, 1.0);
  }
  return gray;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (auto& k : kernel) k /= total;
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  Image tmp = image, out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * image.at(c, y, std::clamp(x + k, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(c, std::clamp(y + k, 0, h - 1), x);
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

StreamSample degrade(const StreamSample& source, double gamma, double blur_sigma, double noise_sigma,
                     std::uint64_t noise_seed) {
  StreamSample out = source;
  out.spec.gamma = gamma;
  out.spec.blur_sigma = blur_sigma;
  out.spec.noise_sigma = noise_sigma;
  Image gray = to_grayscale(source.image);
  if (gamma != 1.0) {
    for (auto& v : gray.data) v = std::pow(v, gamma);
  }
  gray = gaussian_blur(gray, blur_sigma);
  Rng rng(noise_seed);
  add_noise(gray, noise_sigma, rng);
  for (auto& v : gray.data) v = std::clamp(v, 0.0, 1.0);
  out.image = std::move(gray);
  return out;
}

StreamSample make_target_sample(std::uint64_t seed, std::size_t index, const ShiftProfile& shift) {
  StreamSample src = make_source_sample(seed, index);
  if (!shift.grayscale) return src;
  auto rng = make_rng(seed, "shift:" + shift.name, index);
  const double gamma = uniform(rng, shift.gamma_lo, std::nextafter(shift.gamma_hi, 1e9));
  const double blur = uniform(rng, shift.blur_lo, std::nextafter(shift.blur_hi, 1e9));
  return degrade(src, gamma, blur, shift.noise, rng());
}

std::vector<StreamSample> gen_source(std::uint64_t seed, std::size_t n, std::size_t first_index) {
  if (n == 0) throw DomainError("gen_source: n must be at least 1");
  std::vector<StreamSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_source_sample(seed, first_index + i));
  return out;
}

std::vector<StreamSample> gen_target(std::uint64_t seed, std::size_t n, const ShiftProfile& shift,
                                     std::size_t first_index) {
  if (n == 0) throw DomainError("gen_target: n must be at least 1");
  std::vector<StreamSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_target_sample(seed, first_index + i, shift));
  return out;
}

double boundary_gradient(const Image& image, std::span<const double> mask) {
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  if (mask.size() != image.height * image.width) throw ShapeError("boundary_gradient: mask size mismatch");
  auto fg = [&](int y, int x) { return mask[static_cast<std::size_t>(y * w + x)] > 0.5; };
  double total = 0.0;
  std::size_t count = 0;
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const bool f = fg(y, x);
      if (f == fg(y - 1, x) && f == fg(y + 1, x) && f == fg(y, x - 1) && f == fg(y, x + 1)) continue;
      double sq = 0.0;
      for (std::size_t c = 0; c < image.channels; ++c) {
        auto p = [&](int yy, int xx) { return image.at(c, yy, xx); };
        const double gx = (p(y - 1, x + 1) + 2 * p(y, x + 1) + p(y + 1, x + 1)) -
                          (p(y - 1, x - 1) + 2 * p(y, x - 1) + p(y + 1, x - 1));
        const double gy = (p(y + 1, x - 1) + 2 * p(y + 1, x) + p(y + 1, x + 1)) -
                          (p(y - 1, x - 1) + 2 * p(y - 1, x) + p(y - 1, x + 1));
        sq += gx * gx + gy * gy;
      }
      total += std::sqrt(sq / static_cast<double>(image.channels));
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

std::string indexed_name(const std::string& prefix, std::size_t index, const std::string& ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05zu.%s", prefix.c_str(), index, ext.c_str());
  return buf;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image,mask") throw FormatError("manifest header must be 'image,mask', got '" + line + "'");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("manifest row without comma: '" + line + "'");
    entries.push_back({base / line.substr(0, comma), base / line.substr(comma + 1)});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << "image,mask\n";
  for (const auto& e : entries) out << e.image.generic_string() << ',' << e.mask.generic_string() << '\n';
}

void write_dataset(const std::filesystem::path& dir, const std::vector<StreamSample>& samples) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto img = indexed_name("img", i, s.image.channels == 1 ? "pgm" : "ppm");
    const auto msk = indexed_name("mask", i, "pgm");
    write_pnm(dir / img, s.image);
    Image mask(1, s.image.height, s.image.width);
    mask.data = s.gt;
    write_pnm(dir / msk, mask);
    entries.push_back({img, msk});
  }
  write_manifest(dir / "manifest.csv", entries);
}

StreamSample load_sample(const ManifestEntry& entry, std::size_t pad) {
  StreamSample s;
  s.image = read_pnm(entry.image);
  Image mask = read_pnm(entry.mask);
  if (mask.channels != 1 || mask.height != s.image.height || mask.width != s.image.width) {
    throw ShapeError("mask " + entry.mask.string() + " does not match image " + entry.image.string());
  }
  s.gt.resize(mask.data.size());
  for (std::size_t i = 0; i < mask.data.size(); ++i) s.gt[i] = mask.data[i] > 0.5 ? 1.0 : 0.0;
  const bool any = std::any_of(s.gt.begin(), s.gt.end(), [](double v) { return v > 0.5; });
  if (any) {
    s.box = oracle_box(s.gt, mask.height, mask.width, pad);
  } else {
    s.box = {0.0, 0.0, static_cast<double>(mask.width), static_cast<double>(mask.height)};
  }
  return s;
}

}  // namespace samtta
