#include "samtta/optim.hpp"

#include <cmath>

namespace samtta {

Adam::Adam(std::vector<ParamGroup> groups) : groups_(std::move(groups)) { reset(); }

void Adam::reset() {
  m_.assign(groups_.size(), {});
  v_.assign(groups_.size(), {});
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (const auto& p : groups_[g].params) {
      m_[g].emplace_back(p.numel(), 0.0);
      v_[g].emplace_back(p.numel(), 0.0);
    }
  }
  t_ = 0;
}

void Adam::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) p.zero_grad();
  }
}

void Adam::step() {
  for (const auto& g : groups_) {
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      if (!g.params[i].has_grad()) {
        throw GraphError("adam: parameter " + std::to_string(i) + " of group '" + g.name + "' has no gradient");
      }
    }
  }
  ++t_;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& group = groups_[gi];
    const auto& o = group.options;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      auto& p = group.params[pi];
      auto theta = p.mutable_data();
      auto grad = p.grad();
      auto& m = m_[gi][pi];
      auto& v = v_[gi][pi];
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const double gk = grad[k] + o.weight_decay * theta[k];
        m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * gk;
        v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * gk * gk;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        theta[k] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
      }
      p.zero_grad();
    }
  }
}

}  // namespace samtta
