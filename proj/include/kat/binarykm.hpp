#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kat/kernels.hpp"
#include "kat/qknet.hpp"

namespace kat::binarykm {

// Paired-domain data: one response z_ij for every (x_i, y_j) cross pair.
struct BinaryDataset {
  Eigen::MatrixXd xs;  // n_x x d_t, one point per row
  Eigen::MatrixXd ys;  // n_y x d_s
  Eigen::MatrixXd Z;   // n_x x n_y
};

void validate(const BinaryDataset& data);

// Kernel matrix with entries kernel(A_i, B_j); evaluation arithmetic matches
// kernels::cross_gram.
Eigen::MatrixXd gram(const kernels::KernelSpec& spec, const Eigen::MatrixXd& a,
                     const Eigen::MatrixXd& b);

struct IndependenceReport {
  bool full_rank = false;
  double min_singular_value = 0.0;
  double max_singular_value = 0.0;
};

// Existence condition for interpolation, as a Gram rank check:
// full_rank iff the smallest singular value exceeds tol * largest.
IndependenceReport independence_check(const Eigen::MatrixXd& k, double tol);

// Predicts z(x, y) = sum_ij C_ij kernel_x(x, x_i) kernel_y(y, y_j); rank-1
// models store C = xi zeta^T.
struct BinaryKernelModel {
  kernels::KernelSpec kernel_x;
  kernels::KernelSpec kernel_y;
  Eigen::MatrixXd support_x;
  Eigen::MatrixXd support_y;
  bool rank1 = false;
  Eigen::MatrixXd coeffs;  // full mode
  Eigen::VectorXd xi;      // rank-1 mode
  Eigen::VectorXd zeta;
  double lambda_x = 0.0;
  double lambda_y = 0.0;

  double predict(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
  Eigen::MatrixXd predict_grid(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys) const;
};

// Exact interpolation K_X C K_Y = Z. Both Grams must pass independence_check
// at `rank_tol`, otherwise the existence-condition error names the failing
// side.
BinaryKernelModel interpolate(const BinaryDataset& data, const kernels::KernelSpec& kx,
                              const kernels::KernelSpec& ky, double rank_tol = 1e-10);

// Square-loss objective of the full-mode machine:
// (1/(n_x n_y)) ||K_X C K_Y - Z||_F^2 + lambda <C, K_X C K_Y>.
double regularized_objective(const Eigen::MatrixXd& z, const Eigen::MatrixXd& kx,
                             const Eigen::MatrixXd& ky, const Eigen::MatrixXd& c, double lambda);

// Closed-form minimizer of regularized_objective with lambda = lambda_x +
// lambda_y, via eigendecompositions of the two Grams. Eigenvalues below
// -psd_tol raise; small negatives are clipped to zero before inversion.
BinaryKernelModel fit_regularized(const BinaryDataset& data, const kernels::KernelSpec& kx,
                                  const kernels::KernelSpec& ky, double lambda_x, double lambda_y,
                                  double psd_tol = 1e-10);

struct Rank1Options {
  int max_iters = 200;
  double tol = 1e-12;
};

struct Rank1Report {
  double objective = 0.0;
  int iterations = 0;
  bool ridge_fallback = false;
  std::vector<double> objective_trace;  // value after every half-step
};

// Alternating exact least squares on C = xi zeta^T. Objective never increases
// across half-steps; singular subproblems fall back to a ridge-stabilized
// solve and set ridge_fallback.
BinaryKernelModel fit_rank1(const BinaryDataset& data, const kernels::KernelSpec& kx,
                            const kernels::KernelSpec& ky, double lambda_x, double lambda_y,
                            const Rank1Options& opts = {}, Rank1Report* report = nullptr);

struct DistillOptions {
  int dh = 8;
  int hidden = 64;
  int iters = 3000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

struct DistillResult {
  qknet::QkFactorization nets;  // predictor is exp(q(x)^T k(y) / sqrt(dh))
  double sup_error = 0.0;       // of exp(q k / sqrt(dh)) vs model on the held-out grid
  double mean_abs_error = 0.0;
};

// Trains q/k networks so that q(x)^T k(y) / sqrt(dh) matches log z(x, y) on
// the training grid. Throws if the model is not strictly positive there.
DistillResult distill(const BinaryKernelModel& model, const Eigen::MatrixXd& grid_x,
                      const Eigen::MatrixXd& grid_y, const Eigen::MatrixXd& holdout_x,
                      const Eigen::MatrixXd& holdout_y, const DistillOptions& opts);

// File formats: dataset JSON {"xs", "ys", "Z"}; model JSON with kernel specs,
// support points and coefficients.
BinaryDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const BinaryDataset& data);
void save_model(const std::filesystem::path& path, const BinaryKernelModel& model);
BinaryKernelModel load_model(const std::filesystem::path& path);

}  // namespace kat::binarykm
