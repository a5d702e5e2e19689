#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "kat/tensor.hpp"

namespace kat::featmap {

// Exponent vector of one monomial feature; degree is the sum of entries.
struct MultiIndex {
  std::vector<int> p;
  int degree = 0;
};

// All multi-indices of dimension d and degree <= max_degree, in deterministic
// order: ascending degree, lexicographically descending within a degree
// (e.g. d=2, degree 2: (2,0), (1,1), (0,2)).
std::vector<MultiIndex> enumerate_multi_indices(int d, int max_degree);

// C(max_degree + d, d)
std::size_t feature_count(int d, int max_degree);

// Truncation of the infinite monomial feature map whose pairing reproduces
// exp(q.k / sqrt(d)). The coefficient for an index p of degree n is
// 1 / (sqrt(p_1! ... p_d!) * d^(n/4)); factorials are taken in log space.
class TruncatedFeatureMap {
 public:
  static constexpr int kMaxDegreeLimit = 30;
  static constexpr std::size_t kMaxFeatures = 1000000;

  TruncatedFeatureMap(int head_dim, int max_degree);

  int head_dim() const { return d_; }
  int max_degree() const { return n_; }
  std::size_t size() const { return indices_.size(); }
  const std::vector<MultiIndex>& indices() const { return indices_; }
  double coefficient(std::size_t i) const { return coeff_[i]; }

  std::vector<double> feature_vector(std::span<const double> v) const;
  Tensor feature_vector(const Tensor& v) const;

  // <Phi(q), Phi(k)> over the truncation: the degree-<=N partial sum of
  // exp(q.k / sqrt(d)).
  double truncated_kernel(std::span<const double> q, std::span<const double> k) const;
  double truncated_kernel(const Tensor& q, const Tensor& k) const;

 private:
  int d_;
  int n_;
  std::vector<MultiIndex> indices_;
  std::vector<double> coeff_;
};

struct ConvergenceRow {
  int max_degree;
  double value;
  double abs_error;
  double rel_error;
};

// Truncated values for N = 0..n_max against the exponentiated query-key
// kernel evaluated directly.
std::vector<ConvergenceRow> convergence_report(int d, std::span<const double> q,
                                               std::span<const double> k, int n_max);

// CSV with header N,value,abs_error,rel_error
void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows);

}  // namespace kat::featmap
