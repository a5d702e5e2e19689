#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kat/rng.hpp"

namespace kat {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated on first write, same length as value
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // empty for leaves

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Graph recording switch; ops evaluated under NoGradGuard record no tape.
bool grad_enabled();

}  // namespace detail

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense float64 tensor: a shared handle to one node of a dynamically recorded
// computation graph. Values are written at construction only; gradients are
// written during backward() and cleared by zero_grad(). Optimizer steps may
// rewrite leaf values through data_mut() between passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool valid() const { return n_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t extent(std::size_t axis) const { return shape().at(axis); }

  std::span<const double> data() const;
  std::span<double> data_mut();  // leaf updates between passes only
  double item() const;           // requires numel() == 1
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;  // rank-2

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Reverse-mode pass from this rank-0 tensor. Seeds d(self)/d(self) = 1,
  // accumulates into every reachable requires_grad tensor's grad, then frees
  // the recorded graph edges.
  void backward();

  Tensor detached() const;  // same value buffer copied, no history, no grad

  detail::Node* node() const { return n_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
  std::shared_ptr<detail::Node> n_;

  friend Tensor make_op_result(Shape shape, std::vector<double> value,
                               std::vector<Tensor> parents,
                               std::function<void(detail::Node&)> backward_fn);
};

// Extension point for custom differentiable ops: wraps a freshly computed
// value into a graph node. backward_fn reads self.grad and accumulates into
// self.parents[k]->grad (after ensure_grad). Parents are recorded only when
// grad recording is on and some parent requires grad.
Tensor make_op_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward_fn);

// ---- random fills ---------------------------------------------------------

Tensor randu(Rng& rng, Shape shape, double lo, double hi, bool requires_grad = false);
Tensor randn(Rng& rng, Shape shape, bool requires_grad = false);

// ---- ops ------------------------------------------------------------------
// Binary elementwise ops accept equal shapes or a rank-anything single-element
// tensor broadcast against the other operand; anything else throws.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
Tensor transpose(const Tensor& a);                // rank-2

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);  // IEEE semantics at 0 denominators
Tensor minimum(const Tensor& a, const Tensor& b);  // ties route gradient to a

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor negate(const Tensor& x);
Tensor square(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);

enum class Reduce { Sum, Mean, Max };

// Reduces one axis away; Max routes gradient to the first maximizer along the
// axis (lowest index on ties).
Tensor reduce(Reduce op, const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);   // all axes -> rank-0
Tensor mean(const Tensor& x);  // all axes -> rank-0
Tensor max(const Tensor& x);   // all axes -> rank-0, first-maximizer gradient

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& xs);                   // [T x d_i] -> [T x sum d_i]
Tensor select_rows(const Tensor& x, std::vector<std::size_t> rows);  // rank-2 gather
Tensor pick(const Tensor& x, std::size_t flat_index);                // -> rank-0
Tensor add_rowwise(const Tensor& x, const Tensor& b);                // [m x n] + [n] per row

// Row-wise normalization: y = (x - mean) / sqrt(var + eps) * gain + bias,
// mean/var taken over each row of a rank-2 input.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

bool all_finite(const Tensor& x);
void require_finite(const Tensor& x, const std::string& what);

}  // namespace kat
