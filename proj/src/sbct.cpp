#include "samtta/sbct.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace samtta {

double eval_curve(double t, const ControlHeights& p) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("eval_curve: intensity " + std::to_string(t) + " outside [0,1]");
  }
  const double s = 1.0 - t;
  return s * s * s * p[0] + 3.0 * t * s * s * p[1] + 3.0 * t * t * s * p[2] + t * t * t * p[3];
}

namespace {

// dB/dt for the same curve.
double curve_slope(double t, const ControlHeights& p) {
  const double s = 1.0 - t;
  return 3.0 * (s * s * (p[1] - p[0]) + 2.0 * s * t * (p[2] - p[1]) + t * t * (p[3] - p[2]));
}

std::array<double, 4> bernstein(double t) {
  const double s = 1.0 - t;
  return {s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t};
}

ControlHeights row_of(std::span<const double> h, std::size_t c) {
  return {h[c * 4 + 0], h[c * 4 + 1], h[c * 4 + 2], h[c * 4 + 3]};
}

}  // namespace

Tensor bezier_map(const Tensor& image, const Tensor& heights, bool per_channel_input) {
  if (heights.shape() != Shape{kSbctChannels, kSbctControlPoints}) {
    throw ShapeError("bezier_map: control heights must be [3,4], got " + shape_str(heights.shape()));
  }
  if (per_channel_input && (image.rank() != 3 || image.dim(0) != kSbctChannels)) {
    throw ShapeError("sbct: color input must be [3,H,W], got " + shape_str(image.shape()));
  }
  if (!per_channel_input && image.rank() != 2) {
    throw ShapeError("sbct: grayscale input must be [H,W], got " + shape_str(image.shape()));
  }
  const auto x = image.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0 && x[i] <= 1.0)) {
      throw DomainError("sbct: pixel " + std::to_string(i) + " = " + std::to_string(x[i]) +
                        " is outside [0,1]; normalise the image first");
    }
  }
  const std::size_t plane = per_channel_input ? image.numel() / kSbctChannels : image.numel();
  const auto h = heights.data();
  std::vector<double> out(kSbctChannels * plane);
  for (std::size_t c = 0; c < kSbctChannels; ++c) {
    const auto p = row_of(h, c);
    const std::size_t in_off = per_channel_input ? c * plane : 0;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = eval_curve(x[in_off + i], p);
  }
  Shape shape{kSbctChannels};
  for (std::size_t d = per_channel_input ? 1 : 0; d < image.rank(); ++d) shape.push_back(image.dim(d));
  return make_result("bezier_map", std::move(shape), std::move(out), {image, heights},
                     [image, heights, plane, per_channel_input](std::span<const double> g) {
                       const auto x = image.data();
                       const auto h = heights.data();
                       double* gh = heights.grad_sink();
                       double* gx = image.grad_sink();
                       for (std::size_t c = 0; c < kSbctChannels; ++c) {
                         const auto p = row_of(h, c);
                         const std::size_t in_off = per_channel_input ? c * plane : 0;
                         for (std::size_t i = 0; i < plane; ++i) {
                           const double t = x[in_off + i];
                           const double go = g[c * plane + i];
                           if (gh) {
                             const auto b = bernstein(t);
                             for (std::size_t j = 0; j < 4; ++j) gh[c * 4 + j] += go * b[j];
                           }
                           if (gx) gx[in_off + i] += go * curve_slope(t, p);
                         }
                       }
                     });
}

Sbct::Sbct(std::vector<double> u) {
  if (u.size() != kSbctScalars) {
    throw ShapeError("sbct: expected " + std::to_string(kSbctScalars) + " scalars, got " + std::to_string(u.size()));
  }
  u_ = Tensor::parameter({kSbctChannels, kSbctControlPoints}, std::move(u));
}

Sbct Sbct::identity(double delta) {
  std::vector<double> u(kSbctScalars);
  for (std::size_t c = 0; c < kSbctChannels; ++c) {
    for (std::size_t j = 0; j < kSbctControlPoints; ++j) {
      const double p = std::clamp(static_cast<double>(j) / 3.0, delta, 1.0 - delta);
      u[c * kSbctControlPoints + j] = std::log(p / (1.0 - p));
    }
  }
  return Sbct(std::move(u));
}

Tensor Sbct::control_heights() const { return sigmoid(u_); }

std::array<ControlHeights, kSbctChannels> Sbct::heights() const {
  NoGradGuard no_grad;
  const auto h = control_heights();
  std::array<ControlHeights, kSbctChannels> out{};
  for (std::size_t c = 0; c < kSbctChannels; ++c) out[c] = row_of(h.data(), c);
  return out;
}

Tensor Sbct::transform_gray(const Tensor& image) const {
  return bezier_map(image, control_heights(), false);
}

Tensor Sbct::transform_color(const Tensor& image) const {
  return bezier_map(image, control_heights(), true);
}

Tensor Sbct::transform(const Tensor& image) const {
  return image.rank() == 3 ? transform_color(image) : transform_gray(image);
}

std::array<std::array<double, 256>, kSbctChannels> Sbct::lookup_table() const {
  const auto h = heights();
  std::array<std::array<double, 256>, kSbctChannels> lut{};
  for (std::size_t c = 0; c < kSbctChannels; ++c) {
    for (std::size_t k = 0; k < 256; ++k) lut[c][k] = eval_curve(static_cast<double>(k) / 255.0, h[c]);
  }
  return lut;
}

Sbct Sbct::clone() const {
  auto d = u_.data();
  Sbct copy(std::vector<double>(d.begin(), d.end()));
  copy.u_.set_requires_grad(u_.requires_grad());
  return copy;
}

}  // namespace samtta
