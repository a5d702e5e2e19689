#include "kat/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace kat {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

CMap map_of(const detail::Node& n) {
  return CMap(n.value.data(), static_cast<Eigen::Index>(n.shape[0]),
              static_cast<Eigen::Index>(n.shape[1]));
}

MMap grad_map_of(detail::Node& n) {
  n.ensure_grad();
  return MMap(n.grad.data(), static_cast<Eigen::Index>(n.shape[0]),
              static_cast<Eigen::Index>(n.shape[1]));
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) fail(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace

namespace detail {
bool grad_enabled() { return g_grad_enabled; }
}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

// ---- Tensor basics ---------------------------------------------------------

Tensor make_op_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward_fn) {
  if (shape_numel(shape) != value.size()) {
    fail("make_op_result: shape " + shape_str(shape) + " does not match " +
         std::to_string(value.size()) + " elements");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = false;
    for (const Tensor& p : parents) {
      if (p.valid() && p.requires_grad()) {
        needs = true;
        break;
      }
    }
    if (needs) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const Tensor& p : parents) n->parents.push_back(p.n_);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data(Shape{}, std::vector<double>{v}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, 1.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    fail("from_data: shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
         " elements");
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

const Shape& Tensor::shape() const {
  if (!n_) fail("shape(): empty tensor");
  return n_->shape;
}

std::size_t Tensor::numel() const { return n_ ? n_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!n_) fail("data(): empty tensor");
  return {n_->value.data(), n_->value.size()};
}

std::span<double> Tensor::data_mut() {
  if (!n_) fail("data_mut(): empty tensor");
  return {n_->value.data(), n_->value.size()};
}

double Tensor::item() const {
  if (numel() != 1) fail("item(): tensor has shape " + shape_str(shape()));
  return n_->value[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) fail("at(i,j): tensor has shape " + shape_str(shape()));
  return n_->value[i * n_->shape[1] + j];
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (!n_) fail("set_requires_grad: empty tensor");
  n_->requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) fail("grad(): no gradient present");
  return {n_->grad.data(), n_->grad.size()};
}

std::span<double> Tensor::grad_mut() {
  if (!n_) fail("grad_mut(): empty tensor");
  n_->ensure_grad();
  return {n_->grad.data(), n_->grad.size()};
}

void Tensor::zero_grad() {
  if (n_) n_->grad.assign(n_->value.size(), 0.0);
}

Tensor Tensor::detached() const {
  if (!n_) return Tensor();
  return from_data(n_->shape, n_->value, false);
}

void Tensor::backward() {
  if (!n_) fail("backward(): empty tensor");
  if (numel() != 1) fail("backward(): output must be a single value, got " + shape_str(shape()));
  if (!n_->requires_grad) fail("backward(): output does not depend on any requires_grad tensor");

  // Iterative post-order over the requires_grad subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(n_.get(), 0);
  visited.insert(n_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  n_->ensure_grad();
  n_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
  // Free graph edges; values and accumulated grads stay with their handles.
  for (detail::Node* node : order) {
    node->parents.clear();
    node->backward_fn = nullptr;
  }
}

// ---- random fills ----------------------------------------------------------

Tensor randu(Rng& rng, Shape shape, double lo, double hi, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor randn(Rng& rng, Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// ---- elementwise machinery --------------------------------------------------

namespace {

enum class Bc { Equal, ScalarA, ScalarB };

Bc broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bc::Equal;
  if (a.numel() == 1) return Bc::ScalarA;
  if (b.numel() == 1) return Bc::ScalarB;
  fail(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
       " are not broadcast-compatible (equal shapes or single-element only)");
}

template <typename ValueFn, typename DaFn, typename DbFn>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, ValueFn value_fn, DaFn da_fn,
                 DbFn db_fn) {
  const Bc bc = broadcast_kind(a, b, name);
  const Shape& out_shape = (bc == Bc::ScalarA) ? b.shape() : a.shape();
  const std::size_t n = (bc == Bc::ScalarA) ? b.numel() : a.numel();
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (bc == Bc::ScalarA) ? av[0] : av[i];
    const double y = (bc == Bc::ScalarB) ? bv[0] : bv[i];
    out[i] = value_fn(x, y);
  }
  return make_op_result(out_shape, std::move(out), {a, b},
                        [bc, da_fn, db_fn](detail::Node& self) {
                          detail::Node& pa = *self.parents[0];
                          detail::Node& pb = *self.parents[1];
                          const std::size_t n = self.numel();
                          if (pa.requires_grad) pa.ensure_grad();
                          if (pb.requires_grad) pb.ensure_grad();
                          for (std::size_t i = 0; i < n; ++i) {
                            const double g = self.grad[i];
                            const double x = (bc == Bc::ScalarA) ? pa.value[0] : pa.value[i];
                            const double y = (bc == Bc::ScalarB) ? pb.value[0] : pb.value[i];
                            if (pa.requires_grad) {
                              pa.grad[(bc == Bc::ScalarA) ? 0 : i] += g * da_fn(x, y, self.value[i]);
                            }
                            if (pb.requires_grad) {
                              pb.grad[(bc == Bc::ScalarB) ? 0 : i] += g * db_fn(x, y, self.value[i]);
                            }
                          }
                        });
}

template <typename ValueFn, typename DxFn>
Tensor unary_op(const Tensor& x, ValueFn value_fn, DxFn dx_fn) {
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value_fn(xv[i]);
  return make_op_result(x.shape(), std::move(out), {x}, [dx_fn](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.numel(); ++i) {
      p.grad[i] += self.grad[i] * dx_fn(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  return binary_op(
      "subtract", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  return binary_op(
      "multiply", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "divide", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor negate(const Tensor& x) {
  return unary_op(
      x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

// ---- matmul / structural ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    fail("matmul: inner extents disagree: lhs " + shape_str(a.shape()) + ", rhs " +
         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t n = b.shape()[1];
  std::vector<double> out(m * n);
  {
    CMap A(a.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(a.shape()[1]));
    CMap B(b.data().data(), static_cast<Eigen::Index>(b.shape()[0]), static_cast<Eigen::Index>(n));
    MMap O(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    O.noalias() = A * B;
  }
  return make_op_result({m, n}, std::move(out), {a, b}, [](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    CMap G(self.grad.data(), static_cast<Eigen::Index>(self.shape[0]),
           static_cast<Eigen::Index>(self.shape[1]));
    if (pa.requires_grad) grad_map_of(pa).noalias() += G * map_of(pb).transpose();
    if (pb.requires_grad) grad_map_of(pb).noalias() += map_of(pa).transpose() * G;
  });
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  const std::size_t m = a.shape()[0];
  const std::size_t n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto av = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  return make_op_result({n, m}, std::move(out), {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const std::size_t n = self.shape[0];
    const std::size_t m = self.shape[1];
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) p.grad[i * n + j] += self.grad[j * m + i];
    }
  });
}

// ---- reductions -------------------------------------------------------------

namespace {

Tensor full_reduce(Reduce op, const Tensor& x) {
  const auto xv = x.data();
  if (xv.empty()) fail("reduce: empty tensor");
  double acc;
  std::size_t arg = 0;
  switch (op) {
    case Reduce::Sum:
    case Reduce::Mean: {
      acc = 0.0;
      for (double v : xv) acc += v;
      if (op == Reduce::Mean) acc /= static_cast<double>(xv.size());
      break;
    }
    case Reduce::Max: {
      acc = xv[0];
      for (std::size_t i = 1; i < xv.size(); ++i) {
        if (xv[i] > acc) {
          acc = xv[i];
          arg = i;
        }
      }
      break;
    }
  }
  return make_op_result(Shape{}, {acc}, {x}, [op, arg](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0];
    switch (op) {
      case Reduce::Sum:
        for (double& d : p.grad) d += g;
        break;
      case Reduce::Mean: {
        const double s = g / static_cast<double>(p.value.size());
        for (double& d : p.grad) d += s;
        break;
      }
      case Reduce::Max:
        p.grad[arg] += g;
        break;
    }
  });
}

}  // namespace

Tensor reduce(Reduce op, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    fail("reduce: axis " + std::to_string(axis) + " out of range for shape " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  const std::size_t ext = s[axis];
  if (ext == 0) fail("reduce: empty extent along axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  const auto xv = x.data();
  std::vector<double> out(outer * inner);
  std::vector<std::size_t> argmax(op == Reduce::Max ? outer * inner : 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * ext * inner + i;
      if (op == Reduce::Max) {
        double best = xv[base];
        std::size_t best_e = 0;
        for (std::size_t e = 1; e < ext; ++e) {
          const double v = xv[base + e * inner];
          if (v > best) {
            best = v;
            best_e = e;
          }
        }
        out[o * inner + i] = best;
        argmax[o * inner + i] = best_e;
      } else {
        double acc = 0.0;
        for (std::size_t e = 0; e < ext; ++e) acc += xv[base + e * inner];
        out[o * inner + i] = (op == Reduce::Mean) ? acc / static_cast<double>(ext) : acc;
      }
    }
  }
  return make_op_result(std::move(out_shape), std::move(out), {x},
                        [op, outer, inner, ext, argmax = std::move(argmax)](detail::Node& self) {
                          detail::Node& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t i = 0; i < inner; ++i) {
                              const double g = self.grad[o * inner + i];
                              const std::size_t base = o * ext * inner + i;
                              switch (op) {
                                case Reduce::Sum:
                                  for (std::size_t e = 0; e < ext; ++e) p.grad[base + e * inner] += g;
                                  break;
                                case Reduce::Mean: {
                                  const double s = g / static_cast<double>(ext);
                                  for (std::size_t e = 0; e < ext; ++e) p.grad[base + e * inner] += s;
                                  break;
                                }
                                case Reduce::Max:
                                  p.grad[base + argmax[o * inner + i] * inner] += g;
                                  break;
                              }
                            }
                          }
                        });
}

Tensor sum(const Tensor& x) { return full_reduce(Reduce::Sum, x); }
Tensor mean(const Tensor& x) { return full_reduce(Reduce::Mean, x); }
Tensor max(const Tensor& x) { return full_reduce(Reduce::Max, x); }

// ---- structural -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("concat_cols: no inputs");
  const std::size_t rows = xs[0].shape().at(0);
  std::size_t cols = 0;
  for (const Tensor& t : xs) {
    check_rank2(t, "concat_cols");
    if (t.shape()[0] != rows) {
      fail("concat_cols: row counts disagree: " + shape_str(xs[0].shape()) + " vs " +
           shape_str(t.shape()));
    }
    cols += t.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t col_off = 0;
  for (const Tensor& t : xs) {
    const std::size_t c = t.shape()[1];
    const auto tv = t.data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(tv.begin() + i * c, tv.begin() + (i + 1) * c, out.begin() + i * cols + col_off);
    }
    col_off += c;
  }
  std::vector<Tensor> parents(xs.begin(), xs.end());
  return make_op_result({rows, cols}, std::move(out), std::move(parents),
                        [rows, cols](detail::Node& self) {
                          std::size_t col_off = 0;
                          for (auto& pp : self.parents) {
                            detail::Node& p = *pp;
                            const std::size_t c = p.shape[1];
                            if (p.requires_grad) {
                              p.ensure_grad();
                              for (std::size_t i = 0; i < rows; ++i) {
                                for (std::size_t j = 0; j < c; ++j) {
                                  p.grad[i * c + j] += self.grad[i * cols + col_off + j];
                                }
                              }
                            }
                            col_off += c;
                          }
                        });
}

Tensor select_rows(const Tensor& x, std::vector<std::size_t> rows) {
  check_rank2(x, "select_rows");
  const std::size_t c = x.shape()[1];
  for (std::size_t r : rows) {
    if (r >= x.shape()[0]) {
      fail("select_rows: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
    }
  }
  const std::size_t n_rows = rows.size();
  std::vector<double> out(n_rows * c);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::copy(xv.begin() + rows[i] * c, xv.begin() + (rows[i] + 1) * c, out.begin() + i * c);
  }
  return make_op_result({n_rows, c}, std::move(out), {x},
                        [rows = std::move(rows), c](detail::Node& self) {
                          detail::Node& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (std::size_t i = 0; i < rows.size(); ++i) {
                            for (std::size_t j = 0; j < c; ++j) {
                              p.grad[rows[i] * c + j] += self.grad[i * c + j];
                            }
                          }
                        });
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    fail("pick: index " + std::to_string(flat_index) + " out of range for " + shape_str(x.shape()));
  }
  return make_op_result(Shape{}, {x.data()[flat_index]}, {x}, [flat_index](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    p.grad[flat_index] += self.grad[0];
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  check_rank2(x, "add_rowwise");
  if (b.rank() != 1 || b.shape()[0] != x.shape()[1]) {
    fail("add_rowwise: bias shape " + shape_str(b.shape()) + " does not match columns of " +
         shape_str(x.shape()));
  }
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  const auto xv = x.data();
  const auto bv = b.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  return make_op_result({m, n}, std::move(out), {x, b}, [m, n](detail::Node& self) {
    detail::Node& px = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) px.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_rank2(x, "layer_norm");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  if (gain.rank() != 1 || gain.shape()[0] != n || bias.rank() != 1 || bias.shape()[0] != n) {
    fail("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
         " do not match columns of " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xv[i * n + j] - mu) * is;
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_op_result({m, n}, std::move(out), {x, gain, bias},
                        [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                          detail::Node& px = *self.parents[0];
                          detail::Node& pg = *self.parents[1];
                          detail::Node& pb = *self.parents[2];
                          if (pg.requires_grad) {
                            pg.ensure_grad();
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) {
                                pg.grad[j] += self.grad[i * n + j] * xhat[i * n + j];
                              }
                            }
                          }
                          if (pb.requires_grad) {
                            pb.ensure_grad();
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
                            }
                          }
                          if (px.requires_grad) {
                            px.ensure_grad();
                            const auto& gv = pg.value;
                            for (std::size_t i = 0; i < m; ++i) {
                              double m1 = 0.0, m2 = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                const double dh = self.grad[i * n + j] * gv[j];
                                m1 += dh;
                                m2 += dh * xhat[i * n + j];
                              }
                              m1 /= static_cast<double>(n);
                              m2 /= static_cast<double>(n);
                              for (std::size_t j = 0; j < n; ++j) {
                                const double dh = self.grad[i * n + j] * gv[j];
                                px.grad[i * n + j] +=
                                    inv_std[i] * (dh - m1 - xhat[i * n + j] * m2);
                              }
                            }
                          }
                        });
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& x, const std::string& what) {
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!std::isfinite(xv[i])) {
      throw std::runtime_error(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace kat
