#include "kat/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace kat {

namespace {

double eval_scalar(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                   const std::vector<Tensor>& points, const std::string& context) {
  NoGradGuard ng;
  Tensor y = f(points);
  if (y.numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a single value, got " +
                                shape_str(y.shape()));
  }
  const double v = y.item();
  if (!std::isfinite(v)) {
    throw std::runtime_error("grad_check: non-finite evaluation at " + context);
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& at, double step, double tol) {
  // Analytic pass on leaf copies of the inputs.
  std::vector<Tensor> leaves;
  leaves.reserve(at.size());
  for (const Tensor& t : at) {
    Tensor leaf = Tensor::from_data(t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                                    true);
    leaves.push_back(leaf);
  }
  Tensor y = f(leaves);
  if (y.numel() != 1) {
    throw std::invalid_argument("grad_check: f must return a single value, got " +
                                shape_str(y.shape()));
  }
  if (!std::isfinite(y.item())) {
    throw std::runtime_error("grad_check: non-finite evaluation at the base point");
  }
  if (y.requires_grad()) y.backward();  // constants have all-zero gradients

  GradCheckReport report;
  report.tol = tol;
  report.inputs.resize(at.size());

  // Finite-difference pass: fresh constant inputs per perturbation.
  std::vector<Tensor> probe;
  probe.reserve(at.size());
  for (const Tensor& t : at) probe.push_back(t.detached());

  for (std::size_t i = 0; i < at.size(); ++i) {
    auto& per = report.inputs[i];
    std::vector<double> base(at[i].data().begin(), at[i].data().end());
    for (std::size_t j = 0; j < base.size(); ++j) {
      const double saved = base[j];

      auto eval_at = [&](double v, const char* dir) {
        std::vector<double> nudged = base;
        nudged[j] = v;
        probe[i] = Tensor::from_data(at[i].shape(), std::move(nudged), false);
        return eval_scalar(f, probe,
                           "input " + std::to_string(i) + ", coordinate " + std::to_string(j) +
                               ", direction " + dir);
      };
      const double fp = eval_at(saved + step, "+");
      const double fm = eval_at(saved - step, "-");
      probe[i] = at[i].detached();

      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = leaves[i].has_grad() ? leaves[i].grad()[j] : 0.0;
      const double rel =
          std::abs(analytic - numeric) /
          std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel >= per.max_rel_error) {
        per.max_rel_error = rel;
        per.worst_index = j;
        per.analytic = analytic;
        per.numeric = numeric;
      }
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace kat
