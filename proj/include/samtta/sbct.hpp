#pragma once

// Self-adaptive Bezier curve transform: three cubic intensity curves, one per
// output channel, whose control-point heights are sigmoid(u) for 12 free
// scalars u. Control-point x-coordinates are fixed at {0, 1/3, 2/3, 1}.

#include <array>
#include <vector>

#include "samtta/tensor.hpp"

namespace samtta {

inline constexpr std::size_t kSbctChannels = 3;
inline constexpr std::size_t kSbctControlPoints = 4;
inline constexpr std::size_t kSbctScalars = kSbctChannels * kSbctControlPoints;

using ControlHeights = std::array<double, kSbctControlPoints>;

// Cubic Bernstein form; t must lie in [0,1].
double eval_curve(double t, const ControlHeights& p);

class Sbct {
 public:
  // u is 3x4, row c holds the logits of channel c's control heights.
  explicit Sbct(std::vector<double> u);

  // u = logit(clamp(j/3, delta, 1-delta)): every channel starts as ~identity.
  static Sbct identity(double delta = 1e-3);

  // [3,4] trainable leaf.
  Tensor& logits() { return u_; }
  const Tensor& logits() const { return u_; }

  // sigmoid(u), differentiable.
  Tensor control_heights() const;
  std::array<ControlHeights, kSbctChannels> heights() const;

  // [H,W] -> [3,H,W]; channel c = B(X; P_c).
  Tensor transform_gray(const Tensor& image) const;
  // [3,H,W] -> [3,H,W]; channel c = B(X_c; P_c).
  Tensor transform_color(const Tensor& image) const;
  // Dispatches on the rank of `image`.
  Tensor transform(const Tensor& image) const;

  // 256-entry table per channel for non-differentiable export paths.
  std::array<std::array<double, 256>, kSbctChannels> lookup_table() const;

  Sbct clone() const;

 private:
  Tensor u_;
};

// Differentiable per-pixel Bezier map. `heights` is [3,4]; when
// `per_channel_input` is set, image is [3,H,W] and channel c uses curve c,
// otherwise image is [H,W] and is replicated through all three curves.
Tensor bezier_map(const Tensor& image, const Tensor& heights, bool per_channel_input);

}  // namespace samtta
