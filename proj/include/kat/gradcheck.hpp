#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kat/tensor.hpp"

namespace kat {

struct GradCheckReport {
  struct PerInput {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<PerInput> inputs;
  double max_rel_error = 0.0;
  double tol = 0.0;
  bool passed = false;
};

// Compares reverse-mode gradients of a scalar-valued f against central finite
// differences at `at`. Relative error is |ga - gf| / max(1, |ga|, |gf|).
// Throws if f evaluates non-finitely at the point or at any perturbation,
// naming the offending input/coordinate/direction.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& at, double step, double tol);

}  // namespace kat
