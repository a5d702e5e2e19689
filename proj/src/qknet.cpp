#include "kat/qknet.hpp"

#include <cmath>
#include <stdexcept>

#include "kat/optim.hpp"

namespace kat::qknet {

namespace {

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  return randu(rng, {rows, cols}, -bound, bound, true);
}

Tensor to_tensor(const Eigen::MatrixXd& m, bool requires_grad = false) {
  std::vector<double> data(static_cast<std::size_t>(m.rows() * m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    }
  }
  return Tensor::from_data({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                           std::move(data), requires_grad);
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.shape()[0], t.shape()[1]);
  for (std::size_t i = 0; i < t.shape()[0]; ++i) {
    for (std::size_t j = 0; j < t.shape()[1]; ++j) m(i, j) = t.at(i, j);
  }
  return m;
}

}  // namespace

TwoLayerNet init_net(Rng& rng, int d_in, int hidden, int d_out) {
  if (d_in < 1 || hidden < 1 || d_out < 1) {
    throw std::invalid_argument("init_net: dimensions must be positive");
  }
  TwoLayerNet net;
  net.w1 = init_weight(rng, static_cast<std::size_t>(hidden), static_cast<std::size_t>(d_in));
  net.b1 = Tensor::zeros({static_cast<std::size_t>(hidden)}, true);
  net.w2 = init_weight(rng, static_cast<std::size_t>(d_out), static_cast<std::size_t>(hidden));
  net.b2 = Tensor::zeros({static_cast<std::size_t>(d_out)}, true);
  return net;
}

Tensor forward(const TwoLayerNet& net, const Tensor& x) {
  Tensor hidden = relu(add_rowwise(matmul(x, transpose(net.w1)), net.b1));
  return add_rowwise(matmul(hidden, transpose(net.w2)), net.b2);
}

std::vector<Tensor> parameters(const TwoLayerNet& net) {
  return {net.w1, net.b1, net.w2, net.b2};
}

QkFactorization train_qk(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys,
                         const Eigen::MatrixXd& target, int dh, int hidden, double scale,
                         const FactorTrainOptions& opts) {
  if (dh < 1 || hidden < 1) throw std::invalid_argument("train_qk: dh and hidden must be >= 1");
  if (target.rows() != xs.rows() || target.cols() != ys.rows()) {
    throw std::invalid_argument("train_qk: target must be n_x x n_y over the sample points");
  }
  Rng rng(opts.seed);
  QkFactorization nets;
  nets.q = init_net(rng, static_cast<int>(xs.cols()), hidden, dh);
  nets.k = init_net(rng, static_cast<int>(ys.cols()), hidden, dh);
  nets.scale = scale;

  std::vector<Tensor> params = parameters(nets.q);
  for (const Tensor& p : parameters(nets.k)) params.push_back(p);
  optim::Adam adam(params);

  const Tensor x_in = to_tensor(xs);
  const Tensor y_in = to_tensor(ys);
  const Tensor z = to_tensor(target);
  const Tensor scale_t = Tensor::scalar(scale);

  for (int it = 0; it < opts.iters; ++it) {
    adam.zero_grad();
    Tensor pred = multiply(matmul(forward(nets.q, x_in), transpose(forward(nets.k, y_in))), scale_t);
    Tensor loss = mean(square(subtract(pred, z)));
    const double lv = loss.item();
    if (!std::isfinite(lv)) {
      throw std::runtime_error("train_qk: loss diverged to " + std::to_string(lv) +
                               " at iteration " + std::to_string(it));
    }
    loss.backward();
    adam.step(opts.learning_rate);
  }
  return nets;
}

Eigen::MatrixXd predict_qk(const QkFactorization& nets, const Eigen::MatrixXd& xs,
                           const Eigen::MatrixXd& ys) {
  NoGradGuard ng;
  Tensor q_feat = forward(nets.q, to_tensor(xs));
  Tensor k_feat = forward(nets.k, to_tensor(ys));
  Eigen::MatrixXd out = to_matrix(matmul(q_feat, transpose(k_feat)));
  out *= nets.scale;
  return out;
}

}  // namespace kat::qknet
