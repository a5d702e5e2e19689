#include "kat/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace kat::kernels {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_vector(const Tensor& v, int d, const char* name) {
  if (v.rank() != 1 || v.shape()[0] != static_cast<std::size_t>(d)) {
    fail(std::string("kernel_eval: ") + name + " has shape " + shape_str(v.shape()) +
         ", expected length " + std::to_string(d));
  }
}

void check_spec(const KernelSpec& spec) {
  const bool wants_theta = spec.kind == KernelKind::RBF || spec.kind == KernelKind::L2;
  if (wants_theta != spec.theta_tau.valid()) {
    fail(std::string("kernel spec: theta_tau must be present iff kind is rbf/l2 (kind ") +
         kind_name(spec.kind) + ")");
  }
  const bool wants_gamma = spec.kind == KernelKind::Quadratic;
  if (wants_gamma != spec.gamma.valid()) {
    fail(std::string("kernel spec: gamma must be present iff kind is quadratic (kind ") +
         kind_name(spec.kind) + ")");
  }
  if (spec.head_dim <= 0) fail("kernel spec: head_dim must be positive");
}

}  // namespace

const char* kind_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::EDP: return "edp";
    case KernelKind::RBF: return "rbf";
    case KernelKind::L2: return "l2";
    case KernelKind::ExpIntersection: return "exp_intersection";
    case KernelKind::Quadratic: return "quadratic";
  }
  return "?";
}

std::optional<KernelKind> kind_from_name(const std::string& name) {
  for (KernelKind k : kAllKinds) {
    if (name == kind_name(k)) return k;
  }
  return std::nullopt;
}

KernelSpec make_spec(KernelKind kind, int head_dim, double tau_init, double gamma_init,
                     bool trainable) {
  if (head_dim <= 0) fail("make_spec: head_dim must be positive");
  KernelSpec spec;
  spec.kind = kind;
  spec.head_dim = head_dim;
  if (kind == KernelKind::RBF || kind == KernelKind::L2) {
    if (!(tau_init > 0.0)) fail("make_spec: tau must be positive");
    spec.theta_tau = Tensor::scalar(std::log(tau_init), trainable);
  }
  if (kind == KernelKind::Quadratic) {
    spec.gamma = Tensor::scalar(gamma_init, trainable);
  }
  return spec;
}

std::vector<Tensor> scalar_params(const KernelSpec& spec) {
  std::vector<Tensor> out;
  if (spec.theta_tau.valid()) out.push_back(spec.theta_tau);
  if (spec.gamma.valid()) out.push_back(spec.gamma);
  return out;
}

Tensor kernel_eval(const KernelSpec& spec, const Tensor& q, const Tensor& k) {
  check_spec(spec);
  check_vector(q, spec.head_dim, "q");
  check_vector(k, spec.head_dim, "k");
  const Tensor inv_sqrt_d = Tensor::scalar(1.0 / std::sqrt(static_cast<double>(spec.head_dim)));
  switch (spec.kind) {
    case KernelKind::EDP: {
      Tensor dot = sum(multiply(q, k));
      return exp(multiply(dot, inv_sqrt_d));
    }
    case KernelKind::RBF: {
      Tensor scale = multiply(exp(spec.theta_tau), inv_sqrt_d);
      Tensor sq_dist = sum(square(subtract(q, k)));
      return exp(negate(multiply(scale, sq_dist)));
    }
    case KernelKind::L2: {
      Tensor scale = multiply(exp(spec.theta_tau), inv_sqrt_d);
      Tensor sq_dist = sum(square(subtract(q, k)));
      return multiply(scale, sqrt(sq_dist));
    }
    case KernelKind::ExpIntersection: {
      return exp(sum(minimum(q, k)));
    }
    case KernelKind::Quadratic: {
      Tensor dot = sum(multiply(q, k));
      return square(add(multiply(dot, inv_sqrt_d), spec.gamma));
    }
  }
  fail("kernel_eval: unknown kernel kind");
}

Tensor cross_gram(const KernelSpec& spec, const Tensor& queries, const Tensor& keys) {
  check_spec(spec);
  if (queries.rank() != 2 || keys.rank() != 2) {
    fail("cross_gram: expected rank-2 inputs, got " + shape_str(queries.shape()) + " and " +
         shape_str(keys.shape()));
  }
  const std::size_t d = static_cast<std::size_t>(spec.head_dim);
  if (queries.shape()[1] != d || keys.shape()[1] != d) {
    fail("cross_gram: inner dimensions " + shape_str(queries.shape()) + " / " +
         shape_str(keys.shape()) + " do not match head_dim " + std::to_string(spec.head_dim));
  }
  const std::size_t t = queries.shape()[0];
  const std::size_t s = keys.shape()[0];
  const double inv = 1.0 / std::sqrt(static_cast<double>(spec.head_dim));
  const auto qv = queries.data();
  const auto kv = keys.data();

  std::vector<double> out(t * s);
  // Per-pair accumulators saved for the backward pass where the chain rule
  // needs them (RBF: squared distance, Quadratic: the pre-square value).
  std::vector<double> aux;

  switch (spec.kind) {
    case KernelKind::EDP: {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          double acc = 0.0;
          for (std::size_t l = 0; l < d; ++l) acc += qv[i * d + l] * kv[j * d + l];
          out[i * s + j] = std::exp(acc * inv);
        }
      }
      break;
    }
    case KernelKind::RBF: {
      aux.resize(t * s);
      const double scale = std::exp(spec.theta_tau.item()) * inv;
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          double acc = 0.0;
          for (std::size_t l = 0; l < d; ++l) {
            const double diff = qv[i * d + l] - kv[j * d + l];
            acc += diff * diff;
          }
          aux[i * s + j] = acc;
          out[i * s + j] = std::exp(-(scale * acc));
        }
      }
      break;
    }
    case KernelKind::L2: {
      const double scale = std::exp(spec.theta_tau.item()) * inv;
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          double acc = 0.0;
          for (std::size_t l = 0; l < d; ++l) {
            const double diff = qv[i * d + l] - kv[j * d + l];
            acc += diff * diff;
          }
          out[i * s + j] = scale * std::sqrt(acc);
        }
      }
      break;
    }
    case KernelKind::ExpIntersection: {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          double acc = 0.0;
          for (std::size_t l = 0; l < d; ++l) {
            const double a = qv[i * d + l];
            const double b = kv[j * d + l];
            acc += a <= b ? a : b;
          }
          out[i * s + j] = std::exp(acc);
        }
      }
      break;
    }
    case KernelKind::Quadratic: {
      aux.resize(t * s);
      const double g = spec.gamma.item();
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < s; ++j) {
          double acc = 0.0;
          for (std::size_t l = 0; l < d; ++l) acc += qv[i * d + l] * kv[j * d + l];
          const double u = acc * inv + g;
          aux[i * s + j] = u;
          out[i * s + j] = u * u;
        }
      }
      break;
    }
  }

  std::vector<Tensor> parents = {queries, keys};
  const bool has_theta = spec.theta_tau.valid();
  const bool has_gamma = spec.gamma.valid();
  if (has_theta) parents.push_back(spec.theta_tau);
  if (has_gamma) parents.push_back(spec.gamma);

  const KernelKind kind = spec.kind;
  return make_op_result(
      {t, s}, std::move(out), std::move(parents),
      [kind, t, s, d, inv, aux = std::move(aux)](detail::Node& self) {
        detail::Node& pq = *self.parents[0];
        detail::Node& pk = *self.parents[1];
        detail::Node* scalar = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const bool want_q = pq.requires_grad;
        const bool want_k = pk.requires_grad;
        const bool want_s = scalar && scalar->requires_grad;
        if (want_q) pq.ensure_grad();
        if (want_k) pk.ensure_grad();
        if (want_s) scalar->ensure_grad();
        const auto& qv = pq.value;
        const auto& kv = pk.value;
        for (std::size_t i = 0; i < t; ++i) {
          for (std::size_t j = 0; j < s; ++j) {
            const double g = self.grad[i * s + j];
            if (g == 0.0) continue;
            const double val = self.value[i * s + j];
            switch (kind) {
              case KernelKind::EDP: {
                const double c = g * val * inv;
                for (std::size_t l = 0; l < d; ++l) {
                  if (want_q) pq.grad[i * d + l] += c * kv[j * d + l];
                  if (want_k) pk.grad[j * d + l] += c * qv[i * d + l];
                }
                break;
              }
              case KernelKind::RBF: {
                const double tau = std::exp(scalar->value[0]);
                const double scale = tau * inv;
                const double dacc = -g * val * scale;
                for (std::size_t l = 0; l < d; ++l) {
                  const double diff = qv[i * d + l] - kv[j * d + l];
                  if (want_q) pq.grad[i * d + l] += dacc * 2.0 * diff;
                  if (want_k) pk.grad[j * d + l] -= dacc * 2.0 * diff;
                }
                if (want_s) scalar->grad[0] += -g * val * scale * aux[i * s + j];
                break;
              }
              case KernelKind::L2: {
                const double r = std::sqrt([&] {
                  double acc = 0.0;
                  for (std::size_t l = 0; l < d; ++l) {
                    const double diff = qv[i * d + l] - kv[j * d + l];
                    acc += diff * diff;
                  }
                  return acc;
                }());
                const double tau = std::exp(scalar->value[0]);
                const double scale = tau * inv;
                for (std::size_t l = 0; l < d; ++l) {
                  const double diff = qv[i * d + l] - kv[j * d + l];
                  if (want_q) pq.grad[i * d + l] += g * scale * diff / r;
                  if (want_k) pk.grad[j * d + l] -= g * scale * diff / r;
                }
                if (want_s) scalar->grad[0] += g * val;
                break;
              }
              case KernelKind::ExpIntersection: {
                for (std::size_t l = 0; l < d; ++l) {
                  const bool take_q = qv[i * d + l] <= kv[j * d + l];
                  if (take_q) {
                    if (want_q) pq.grad[i * d + l] += g * val;
                  } else {
                    if (want_k) pk.grad[j * d + l] += g * val;
                  }
                }
                break;
              }
              case KernelKind::Quadratic: {
                const double u = aux[i * s + j];
                const double c = g * 2.0 * u * inv;
                for (std::size_t l = 0; l < d; ++l) {
                  if (want_q) pq.grad[i * d + l] += c * kv[j * d + l];
                  if (want_k) pk.grad[j * d + l] += c * qv[i * d + l];
                }
                if (want_s) scalar->grad[0] += g * 2.0 * u;
                break;
              }
            }
          }
        }
      });
}

Tensor normalize_rows(const Tensor& kmat, const std::optional<std::vector<std::uint8_t>>& mask,
                      double eps) {
  if (kmat.rank() != 2) {
    fail("normalize_rows: expected rank-2 input, got " + shape_str(kmat.shape()));
  }
  const std::size_t t = kmat.shape()[0];
  const std::size_t s = kmat.shape()[1];
  if (mask && mask->size() != t * s) {
    fail("normalize_rows: mask size " + std::to_string(mask->size()) + " does not match " +
         shape_str(kmat.shape()));
  }
  const auto xv = kmat.data();
  std::vector<std::uint8_t> valid(t * s, 1);
  if (mask) valid = *mask;

  for (std::size_t idx = 0; idx < t * s; ++idx) {
    if (xv[idx] < 0.0) {
      throw std::domain_error("normalize_rows: negative entry at row " + std::to_string(idx / s) +
                              ", column " + std::to_string(idx % s) +
                              " (kernel contract violated)");
    }
  }

  std::vector<double> out(t * s, 0.0);
  std::vector<double> row_sum(t, 0.0);
  std::vector<std::uint8_t> fallback(t, 0);
  for (std::size_t i = 0; i < t; ++i) {
    std::size_t n_valid = 0;
    double r = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      if (valid[i * s + j]) {
        r += xv[i * s + j];
        ++n_valid;
      }
    }
    if (n_valid == 0) {
      throw std::domain_error("normalize_rows: row " + std::to_string(i) + " is fully masked");
    }
    row_sum[i] = r;
    if (r < eps) {
      fallback[i] = 1;
      const double u = 1.0 / static_cast<double>(n_valid);
      for (std::size_t j = 0; j < s; ++j) {
        if (valid[i * s + j]) out[i * s + j] = u;
      }
    } else {
      for (std::size_t j = 0; j < s; ++j) {
        if (valid[i * s + j]) out[i * s + j] = xv[i * s + j] / r;
      }
    }
  }

  return make_op_result(
      {t, s}, std::move(out), {kmat},
      [t, s, valid = std::move(valid), row_sum = std::move(row_sum),
       fallback = std::move(fallback)](detail::Node& self) {
        detail::Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < t; ++i) {
          if (fallback[i]) continue;  // uniform fallback is locally constant
          double dot = 0.0;
          for (std::size_t j = 0; j < s; ++j) {
            if (valid[i * s + j]) dot += self.grad[i * s + j] * self.value[i * s + j];
          }
          for (std::size_t j = 0; j < s; ++j) {
            if (valid[i * s + j]) {
              p.grad[i * s + j] += (self.grad[i * s + j] - dot) / row_sum[i];
            }
          }
        }
      });
}

}  // namespace kat::kernels
