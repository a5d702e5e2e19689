#include "kat/featmap.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "kat/io.hpp"
#include "kat/kernels.hpp"

namespace kat::featmap {

namespace {

void check_args(int d, int max_degree) {
  if (d < 1) throw std::invalid_argument("featmap: head_dim must be >= 1");
  if (max_degree < 0) throw std::invalid_argument("featmap: max_degree must be >= 0");
  if (max_degree > TruncatedFeatureMap::kMaxDegreeLimit) {
    throw std::invalid_argument("featmap: max_degree " + std::to_string(max_degree) +
                                " exceeds the hard limit " +
                                std::to_string(TruncatedFeatureMap::kMaxDegreeLimit));
  }
}

void emit(std::vector<MultiIndex>& out, std::vector<int>& scratch, int pos, int remaining) {
  const int d = static_cast<int>(scratch.size());
  if (pos == d - 1) {
    scratch[pos] = remaining;
    MultiIndex mi;
    mi.p = scratch;
    mi.degree = 0;
    for (int v : scratch) mi.degree += v;
    out.push_back(std::move(mi));
    return;
  }
  for (int v = remaining; v >= 0; --v) {
    scratch[pos] = v;
    emit(out, scratch, pos + 1, remaining - v);
  }
}

}  // namespace

std::vector<MultiIndex> enumerate_multi_indices(int d, int max_degree) {
  check_args(d, max_degree);
  std::vector<MultiIndex> out;
  out.reserve(feature_count(d, max_degree));
  std::vector<int> scratch(static_cast<std::size_t>(d), 0);
  for (int n = 0; n <= max_degree; ++n) emit(out, scratch, 0, n);
  return out;
}

std::size_t feature_count(int d, int max_degree) {
  check_args(d, max_degree);
  // C(max_degree + d, d), guarded against the configured feature cap.
  double approx = 1.0;
  for (int i = 1; i <= d; ++i) {
    approx *= static_cast<double>(max_degree + i) / static_cast<double>(i);
  }
  if (approx > 1.5 * static_cast<double>(TruncatedFeatureMap::kMaxFeatures)) {
    throw std::invalid_argument("featmap: C(" + std::to_string(max_degree + d) + ", " +
                                std::to_string(d) + ") exceeds the feature cap " +
                                std::to_string(TruncatedFeatureMap::kMaxFeatures));
  }
  unsigned long long count = 1;
  for (int i = 1; i <= d; ++i) {
    count = count * static_cast<unsigned long long>(max_degree + i) /
            static_cast<unsigned long long>(i);
  }
  return static_cast<std::size_t>(count);
}

TruncatedFeatureMap::TruncatedFeatureMap(int head_dim, int max_degree)
    : d_(head_dim), n_(max_degree) {
  check_args(head_dim, max_degree);
  const std::size_t count = feature_count(head_dim, max_degree);
  if (count > kMaxFeatures) {
    throw std::invalid_argument("featmap: " + std::to_string(count) +
                                " features exceed the cap " + std::to_string(kMaxFeatures));
  }
  indices_ = enumerate_multi_indices(head_dim, max_degree);
  coeff_.resize(indices_.size());
  const double log_d = std::log(static_cast<double>(head_dim));
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    const MultiIndex& mi = indices_[i];
    double log_coeff = -0.25 * static_cast<double>(mi.degree) * log_d;
    for (int p : mi.p) log_coeff -= 0.5 * std::lgamma(static_cast<double>(p) + 1.0);
    coeff_[i] = std::exp(log_coeff);
  }
}

std::vector<double> TruncatedFeatureMap::feature_vector(std::span<const double> v) const {
  if (v.size() != static_cast<std::size_t>(d_)) {
    throw std::invalid_argument("feature_vector: input length " + std::to_string(v.size()) +
                                " does not match head_dim " + std::to_string(d_));
  }
  std::vector<double> out(indices_.size());
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    double monomial = 1.0;
    const MultiIndex& mi = indices_[i];
    for (int l = 0; l < d_; ++l) {
      for (int rep = 0; rep < mi.p[static_cast<std::size_t>(l)]; ++rep) {
        monomial *= v[static_cast<std::size_t>(l)];
      }
    }
    out[i] = coeff_[i] * monomial;
  }
  return out;
}

Tensor TruncatedFeatureMap::feature_vector(const Tensor& v) const {
  auto out = feature_vector(std::span<const double>(v.data()));
  const std::size_t n = out.size();
  return Tensor::from_data({n}, std::move(out));
}

double TruncatedFeatureMap::truncated_kernel(std::span<const double> q,
                                             std::span<const double> k) const {
  const auto fq = feature_vector(q);
  const auto fk = feature_vector(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < fq.size(); ++i) acc += fq[i] * fk[i];
  return acc;
}

double TruncatedFeatureMap::truncated_kernel(const Tensor& q, const Tensor& k) const {
  return truncated_kernel(std::span<const double>(q.data()), std::span<const double>(k.data()));
}

std::vector<ConvergenceRow> convergence_report(int d, std::span<const double> q,
                                               std::span<const double> k, int n_max) {
  check_args(d, n_max);
  kernels::KernelSpec edp = kernels::make_spec(kernels::KernelKind::EDP, d);
  Tensor qt = Tensor::from_data({q.size()}, std::vector<double>(q.begin(), q.end()));
  Tensor kt = Tensor::from_data({k.size()}, std::vector<double>(k.begin(), k.end()));
  const double exact = kernels::kernel_eval(edp, qt, kt).item();

  std::vector<ConvergenceRow> rows;
  rows.reserve(static_cast<std::size_t>(n_max) + 1);
  for (int n = 0; n <= n_max; ++n) {
    TruncatedFeatureMap fm(d, n);
    ConvergenceRow row;
    row.max_degree = n;
    row.value = fm.truncated_kernel(q, k);
    row.abs_error = std::abs(row.value - exact);
    row.rel_error = row.abs_error / std::abs(exact);
    rows.push_back(row);
  }
  return rows;
}

void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows) {
  os << "N,value,abs_error,rel_error\n";
  for (const ConvergenceRow& r : rows) {
    os << r.max_degree << "," << io::g17(r.value) << "," << io::g17(r.abs_error) << ","
       << io::g17(r.rel_error) << "\n";
  }
}

}  // namespace kat::featmap
