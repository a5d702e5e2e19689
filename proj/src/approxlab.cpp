#include "kat/approxlab.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "kat/io.hpp"

namespace kat::approxlab {

const std::vector<std::string>& target_names() {
  static const std::vector<std::string> names = {"product", "constant", "sincos_plus_product",
                                                 "gauss_bump", "exp_product"};
  return names;
}

double target_value(const std::string& name, double t, double s) {
  if (name == "product") return t * s;
  if (name == "constant") return 1.0;
  if (name == "sincos_plus_product") return std::sin(3.0 * t) * std::cos(2.0 * s) + t * s;
  if (name == "gauss_bump") return std::exp(-5.0 * (t - s) * (t - s));
  if (name == "exp_product") return std::exp(t * s);
  throw std::invalid_argument("unknown grid function \"" + name + "\"");
}

std::vector<double> grid_points(int resolution) {
  if (resolution < 2) throw std::invalid_argument("grid resolution must be >= 2");
  std::vector<double> pts(static_cast<std::size_t>(resolution));
  for (int i = 0; i < resolution; ++i) {
    pts[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(resolution - 1);
  }
  return pts;
}

Eigen::MatrixXd sample_grid(const GridFunctionSpec& spec, int resolution) {
  const int g = resolution > 0 ? resolution : spec.grid_resolution;
  const auto pts = grid_points(g);
  Eigen::MatrixXd f(g, g);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      f(i, j) = target_value(spec.name, pts[static_cast<std::size_t>(i)],
                             pts[static_cast<std::size_t>(j)]);
    }
  }
  return f;
}

FactorizationResult svd_separable(const GridFunctionSpec& spec, int rank, SvdFactors* factors) {
  const Eigen::MatrixXd f = sample_grid(spec);
  const int g = static_cast<int>(f.rows());
  if (rank < 1 || rank > g) {
    throw std::invalid_argument("svd_separable: rank " + std::to_string(rank) +
                                " outside [1, " + std::to_string(g) + "]");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();

  FactorizationResult result;
  result.rank_or_width = rank;
  Eigen::MatrixXd approx = Eigen::MatrixXd::Zero(g, g);
  for (int r = 1; r <= rank; ++r) {
    approx += sv(r - 1) * svd.matrixU().col(r - 1) * svd.matrixV().col(r - 1).transpose();
    result.error_curve.push_back((f - approx).cwiseAbs().maxCoeff());
  }
  const Eigen::MatrixXd residual = (f - approx).cwiseAbs();
  result.sup_error = residual.maxCoeff();
  result.mean_abs_error = residual.mean();

  if (factors) {
    factors->phi.resize(g, rank);
    factors->psi.resize(g, rank);
    for (int r = 0; r < rank; ++r) {
      const double root = std::sqrt(sv(r));
      factors->phi.col(r) = root * svd.matrixU().col(r);
      factors->psi.col(r) = root * svd.matrixV().col(r);
    }
  }
  return result;
}

FactorizationResult fit_qk_networks(const GridFunctionSpec& spec, int dh, int hidden,
                                    const FitOptions& opts, std::uint64_t seed,
                                    qknet::QkFactorization* nets) {
  if (dh < 1 || hidden < 1) {
    throw std::invalid_argument("fit_qk_networks: dh and hidden units must be >= 1");
  }
  const int g = spec.grid_resolution;
  const auto pts = grid_points(g);
  Eigen::MatrixXd ts(g, 1);
  for (int i = 0; i < g; ++i) ts(i, 0) = pts[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd target = sample_grid(spec);

  qknet::FactorTrainOptions train_opts;
  train_opts.iters = opts.iters;
  train_opts.learning_rate = opts.learning_rate;
  train_opts.seed = seed;
  qknet::QkFactorization fit = qknet::train_qk(ts, ts, target, dh, hidden, 1.0, train_opts);

  // Evaluation on a 2x-finer grid.
  const int ge = 2 * g;
  const auto eval_pts = grid_points(ge);
  Eigen::MatrixXd eval_ts(ge, 1);
  for (int i = 0; i < ge; ++i) eval_ts(i, 0) = eval_pts[static_cast<std::size_t>(i)];
  GridFunctionSpec eval_spec = spec;
  const Eigen::MatrixXd truth = sample_grid(eval_spec, ge);
  const Eigen::MatrixXd pred = qknet::predict_qk(fit, eval_ts, eval_ts);
  const Eigen::MatrixXd abs_err = (pred - truth).cwiseAbs();

  FactorizationResult result;
  result.rank_or_width = dh;
  result.sup_error = abs_err.maxCoeff();
  result.mean_abs_error = abs_err.mean();
  if (nets) *nets = std::move(fit);
  return result;
}

std::vector<SweepRow> width_sweep(const GridFunctionSpec& spec, const std::vector<int>& dh_list,
                                  const std::vector<int>& hidden_list,
                                  const std::vector<std::uint64_t>& seeds, const FitOptions& opts) {
  if (dh_list.empty() || hidden_list.empty() || seeds.empty()) {
    throw std::invalid_argument("width_sweep: sweep lists must be non-empty");
  }
  std::vector<SweepRow> rows;
  for (int dh : dh_list) {
    const FactorizationResult svd_ref = svd_separable(spec, dh);
    for (int hidden : hidden_list) {
      for (std::uint64_t seed : seeds) {
        const FactorizationResult fit = fit_qk_networks(spec, dh, hidden, opts, seed);
        SweepRow row;
        row.dh = dh;
        row.hidden = hidden;
        row.seed = seed;
        row.sup_error = fit.sup_error;
        row.mean_error = fit.mean_abs_error;
        row.svd_lower_bound = svd_ref.sup_error;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "dh,m,seed,sup_error,mean_error,svd_lower_bound\n";
  for (const SweepRow& r : rows) {
    os << r.dh << "," << r.hidden << "," << r.seed << "," << io::g17(r.sup_error) << ","
       << io::g17(r.mean_error) << "," << io::g17(r.svd_lower_bound) << "\n";
  }
}

}  // namespace kat::approxlab
