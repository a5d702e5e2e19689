#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "kat/rng.hpp"
#include "kat/tensor.hpp"

namespace kat::qknet {

// Two-layer relu network, m hidden units, shared trunk across outputs:
// X [N x d_in] -> relu(X W1^T + b1) W2^T + b2 -> [N x d_out].
struct TwoLayerNet {
  Tensor w1;  // [m x d_in]
  Tensor b1;  // [m]
  Tensor w2;  // [d_out x m]
  Tensor b2;  // [d_out]
};

TwoLayerNet init_net(Rng& rng, int d_in, int hidden, int d_out);
Tensor forward(const TwoLayerNet& net, const Tensor& x);
std::vector<Tensor> parameters(const TwoLayerNet& net);

struct QkFactorization {
  TwoLayerNet q;
  TwoLayerNet k;
  double scale = 1.0;  // prediction is q(x)^T k(y) * scale
};

struct FactorTrainOptions {
  int iters = 3000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

// Fits q(x)^T k(y) * scale to target[i][j] over all row pairs of xs and ys by
// full-batch Adam on the mean squared error. Throws on divergence.
QkFactorization train_qk(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys,
                         const Eigen::MatrixXd& target, int dh, int hidden, double scale,
                         const FactorTrainOptions& opts);

// q(xs) k(ys)^T * scale for every pair.
Eigen::MatrixXd predict_qk(const QkFactorization& nets, const Eigen::MatrixXd& xs,
                           const Eigen::MatrixXd& ys);

}  // namespace kat::qknet
