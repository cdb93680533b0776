#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "samtta/tensor.hpp"

namespace samtta {

struct AdamOptions {
  double lr = 1e-3;
  // L2 penalty folded into the gradient before the moment updates.
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamGroup {
  std::string name;
  std::vector<Tensor> params;
  AdamOptions options;
};

// Adam over named parameter groups with independent learning rates. Moments
// and the step counter persist across step() calls until reset().
class Adam {
 public:
  explicit Adam(std::vector<ParamGroup> groups);

  // Applies one update to every parameter and clears their gradients.
  // Throws GraphError if a parameter has no gradient.
  void step();
  void zero_grad();
  void reset();

  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<std::vector<double>>> m_;
  std::vector<std::vector<std::vector<double>>> v_;
  std::size_t t_ = 0;
};

}  // namespace samtta
