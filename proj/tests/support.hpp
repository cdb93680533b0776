#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "samtta/tensor.hpp"

namespace samtta::test {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Tensor random_param(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return Tensor::parameter(std::move(shape), random_values(n, seed, lo, hi));
}

// Central differences of `loss` with respect to every element of `leaf`.
inline std::vector<double> numeric_grad(Tensor& leaf, const std::function<double()>& loss, double h = 1e-5) {
  NoGradGuard guard;
  auto d = leaf.mutable_data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double saved = d[i];
    d[i] = saved + h;
    const double up = loss();
    d[i] = saved - h;
    const double down = loss();
    d[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max_i |b_i|; absolute when b vanishes.
inline double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return scale > 0 ? diff / scale : diff;
}

// Autodiff gradient of `build()` (a scalar) for each leaf, compared with
// central differences; returns the worst relative error.
inline double gradient_error(std::vector<Tensor> leaves, const std::function<Tensor()>& build) {
  for (auto& l : leaves) l.zero_grad();
  backward(build());
  double worst = 0;
  for (auto& l : leaves) {
    const auto analytic = l.grad_or_zeros();
    const auto numeric = numeric_grad(l, [&] { return build().item(); });
    worst = std::max(worst, max_rel_error(analytic, numeric));
  }
  return worst;
}

}  // namespace samtta::test
