#pragma once

#include <cstddef>
#include <vector>

#include "kat/tensor.hpp"

namespace kat::optim {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. step() consumes the grads
// accumulated by backward passes since the last zero_grad().
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions opts = {});

  void step(double lr);
  void zero_grad();
  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace kat::optim
