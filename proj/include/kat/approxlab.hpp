#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kat/qknet.hpp"

namespace kat::approxlab {

// Catalog names: "product" (t*s), "constant" (1), "sincos_plus_product"
// (sin(3t)cos(2s) + t*s), "gauss_bump" (exp(-5(t-s)^2)), "exp_product"
// (exp(t*s)); all on [0,1] x [0,1].
struct GridFunctionSpec {
  std::string name = "product";
  int grid_resolution = 64;  // points per axis, endpoints included
};

const std::vector<std::string>& target_names();
double target_value(const std::string& name, double t, double s);  // throws on unknown name

std::vector<double> grid_points(int resolution);
Eigen::MatrixXd sample_grid(const GridFunctionSpec& spec, int resolution = 0);

struct FactorizationResult {
  int rank_or_width = 0;
  double sup_error = 0.0;
  double mean_abs_error = 0.0;
  std::vector<double> error_curve;  // sup errors per rank 1..rank_or_width (SVD only)
};

struct SvdFactors {
  Eigen::MatrixXd phi;  // [G x r], column l is phi_l on the t grid
  Eigen::MatrixXd psi;  // [G x r]
};

// Best Frobenius rank-r approximation of the sampled target (truncated SVD).
FactorizationResult svd_separable(const GridFunctionSpec& spec, int rank,
                                  SvdFactors* factors = nullptr);

struct FitOptions {
  int iters = 3000;
  double learning_rate = 1e-2;
};

// Trains q/k networks so q(t)^T k(s) matches the target on the training grid;
// errors are reported on an evaluation grid twice as fine.
FactorizationResult fit_qk_networks(const GridFunctionSpec& spec, int dh, int hidden,
                                    const FitOptions& opts, std::uint64_t seed,
                                    qknet::QkFactorization* nets = nullptr);

struct SweepRow {
  int dh = 0;
  int hidden = 0;
  std::uint64_t seed = 0;
  double sup_error = 0.0;
  double mean_error = 0.0;
  double svd_lower_bound = 0.0;  // rank-dh SVD sup error, reference column only
};

std::vector<SweepRow> width_sweep(const GridFunctionSpec& spec, const std::vector<int>& dh_list,
                                  const std::vector<int>& hidden_list,
                                  const std::vector<std::uint64_t>& seeds, const FitOptions& opts);

// CSV with header dh,m,seed,sup_error,mean_error,svd_lower_bound
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace kat::approxlab
