#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kat/tensor.hpp"

namespace kat::kernels {

enum class KernelKind { EDP, RBF, L2, ExpIntersection, Quadratic };

constexpr std::array<KernelKind, 5> kAllKinds = {KernelKind::EDP, KernelKind::RBF, KernelKind::L2,
                                                 KernelKind::ExpIntersection,
                                                 KernelKind::Quadratic};

// Exact config strings: "edp", "rbf", "l2", "exp_intersection", "quadratic".
const char* kind_name(KernelKind kind);
std::optional<KernelKind> kind_from_name(const std::string& name);

// One attention kernel with its per-head learned scalars. tau = exp(theta_tau)
// keeps tau > 0 under unconstrained gradient steps; theta_tau exists only for
// RBF/L2 and gamma only for Quadratic.
struct KernelSpec {
  KernelKind kind = KernelKind::EDP;
  int head_dim = 0;
  Tensor theta_tau;  // rank-0
  Tensor gamma;      // rank-0

  double tau() const { return theta_tau.valid() ? std::exp(theta_tau.item()) : 1.0; }
};

KernelSpec make_spec(KernelKind kind, int head_dim, double tau_init = 1.0, double gamma_init = 0.0,
                     bool trainable = false);

// The learned scalar tensors present on this spec (0 or 1 of them).
std::vector<Tensor> scalar_params(const KernelSpec& spec);

// kappa(q, k) for rank-1 q, k of length head_dim; composed from elementwise
// primitives, differentiable through q, k and the spec scalars.
Tensor kernel_eval(const KernelSpec& spec, const Tensor& q, const Tensor& k);

// [T x S] matrix of kernel_eval over all row pairs, as one fused graph node.
// Entry arithmetic matches kernel_eval bit for bit.
Tensor cross_gram(const KernelSpec& spec, const Tensor& queries, const Tensor& keys);

// Row-normalizes a matrix of non-negative kernel values into attention
// weights. mask (true = valid entry), when present, zeroes masked entries and
// excludes them from the row sums. Rows whose valid sum falls below eps get
// uniform weights over their valid entries.
Tensor normalize_rows(const Tensor& kmat, const std::optional<std::vector<std::uint8_t>>& mask,
                      double eps = 1e-12);

}  // namespace kat::kernels
