#include "kat/binarykm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "kat/io.hpp"

namespace kat::binarykm {

namespace {

Tensor to_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> data(static_cast<std::size_t>(m.rows() * m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    }
  }
  return Tensor::from_data({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                           std::move(data));
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty()) throw std::runtime_error(std::string(what) + ": expected rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j.at(0).size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (j.at(i).size() != cols) {
      throw std::runtime_error(std::string(what) + ": ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j.at(i).at(c).get<double>();
  }
  return m;
}

nlohmann::json spec_to_json(const kernels::KernelSpec& spec) {
  nlohmann::json j;
  j["kind"] = kernels::kind_name(spec.kind);
  j["head_dim"] = spec.head_dim;
  if (spec.theta_tau.valid()) j["tau"] = spec.tau();
  if (spec.gamma.valid()) j["gamma"] = spec.gamma.item();
  return j;
}

kernels::KernelSpec spec_from_json(const nlohmann::json& j) {
  const auto kind = kernels::kind_from_name(j.at("kind").get<std::string>());
  if (!kind) throw std::runtime_error("unknown kernel kind " + j.at("kind").get<std::string>());
  return kernels::make_spec(*kind, j.at("head_dim").get<int>(), j.value("tau", 1.0),
                            j.value("gamma", 0.0));
}

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

// Eigendecomposition with the PSD gate and clipping used by the closed-form
// solvers.
struct ClippedEig {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;  // clipped at zero
};

ClippedEig clipped_eig(const Eigen::MatrixXd& k, double psd_tol, const char* side) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error(std::string("fit_regularized: eigendecomposition failed on ") + side);
  }
  Eigen::VectorXd vals = eig.eigenvalues();
  const double scale = std::max(1.0, std::abs(vals.maxCoeff()));
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals(i) < -psd_tol * scale) {
      throw std::domain_error(std::string("fit_regularized: Gram matrix on ") + side +
                              " is not positive semidefinite (eigenvalue " +
                              std::to_string(vals(i)) + ")");
    }
    vals(i) = std::max(0.0, vals(i));
  }
  return {eig.eigenvectors(), vals};
}

}  // namespace

void validate(const BinaryDataset& data) {
  if (data.xs.rows() < 1 || data.ys.rows() < 1) {
    throw std::invalid_argument("binary dataset: need at least one point on each side");
  }
  if (data.Z.rows() != data.xs.rows() || data.Z.cols() != data.ys.rows()) {
    throw std::invalid_argument("binary dataset: Z must be n_x x n_y (" +
                                std::to_string(data.xs.rows()) + " x " +
                                std::to_string(data.ys.rows()) + "), got " +
                                std::to_string(data.Z.rows()) + " x " +
                                std::to_string(data.Z.cols()));
  }
  check_finite(data.xs, "binary dataset xs");
  check_finite(data.ys, "binary dataset ys");
  check_finite(data.Z, "binary dataset Z");
}

Eigen::MatrixXd gram(const kernels::KernelSpec& spec, const Eigen::MatrixXd& a,
                     const Eigen::MatrixXd& b) {
  NoGradGuard ng;
  Tensor g = kernels::cross_gram(spec, to_tensor(a), to_tensor(b));
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = g.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
  }
  return out;
}

IndependenceReport independence_check(const Eigen::MatrixXd& k, double tol) {
  if (k.rows() != k.cols()) {
    throw std::invalid_argument("independence_check: matrix must be square");
  }
  check_finite(k, "independence_check");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(k);
  IndependenceReport rep;
  rep.max_singular_value = svd.singularValues()(0);
  rep.min_singular_value = svd.singularValues()(svd.singularValues().size() - 1);
  rep.full_rank = rep.min_singular_value > tol * rep.max_singular_value;
  return rep;
}

double BinaryKernelModel::predict(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  Eigen::MatrixXd xg = x.transpose();
  Eigen::MatrixXd yg = y.transpose();
  return predict_grid(xg, yg)(0, 0);
}

Eigen::MatrixXd BinaryKernelModel::predict_grid(const Eigen::MatrixXd& xs,
                                                const Eigen::MatrixXd& ys) const {
  const Eigen::MatrixXd kxg = gram(kernel_x, xs, support_x);  // [G_x x n_x]
  const Eigen::MatrixXd kyg = gram(kernel_y, ys, support_y);  // [G_y x n_y]
  if (rank1) {
    return (kxg * xi) * (kyg * zeta).transpose();
  }
  return kxg * coeffs * kyg.transpose();
}

BinaryKernelModel interpolate(const BinaryDataset& data, const kernels::KernelSpec& kx,
                              const kernels::KernelSpec& ky, double rank_tol) {
  validate(data);
  const Eigen::MatrixXd gx = gram(kx, data.xs, data.xs);
  const Eigen::MatrixXd gy = gram(ky, data.ys, data.ys);
  const IndependenceReport rx = independence_check(gx, rank_tol);
  if (!rx.full_rank) {
    throw std::domain_error(
        "interpolate: kernel sections on the x side are not linearly independent "
        "(existence condition fails; min/max singular value " +
        std::to_string(rx.min_singular_value) + " / " + std::to_string(rx.max_singular_value) +
        ")");
  }
  const IndependenceReport ry = independence_check(gy, rank_tol);
  if (!ry.full_rank) {
    throw std::domain_error(
        "interpolate: kernel sections on the y side are not linearly independent "
        "(existence condition fails; min/max singular value " +
        std::to_string(ry.min_singular_value) + " / " + std::to_string(ry.max_singular_value) +
        ")");
  }

  // K_X C K_Y = Z, solved side by side.
  const Eigen::MatrixXd w = gx.colPivHouseholderQr().solve(data.Z);
  const Eigen::MatrixXd c = gy.colPivHouseholderQr().solve(w.transpose()).transpose();

  BinaryKernelModel model;
  model.kernel_x = kx;
  model.kernel_y = ky;
  model.support_x = data.xs;
  model.support_y = data.ys;
  model.coeffs = c;
  return model;
}

double regularized_objective(const Eigen::MatrixXd& z, const Eigen::MatrixXd& kx,
                             const Eigen::MatrixXd& ky, const Eigen::MatrixXd& c, double lambda) {
  const double n = static_cast<double>(z.rows() * z.cols());
  const Eigen::MatrixXd kck = kx * c * ky;
  const double fit = (kck - z).squaredNorm() / n;
  const double reg = (c.array() * kck.array()).sum();
  return fit + lambda * reg;
}

BinaryKernelModel fit_regularized(const BinaryDataset& data, const kernels::KernelSpec& kx,
                                  const kernels::KernelSpec& ky, double lambda_x, double lambda_y,
                                  double psd_tol) {
  validate(data);
  if (lambda_x < 0.0 || lambda_y < 0.0) {
    throw std::invalid_argument("fit_regularized: lambdas must be >= 0");
  }
  const double lambda = lambda_x + lambda_y;
  const double n = static_cast<double>(data.Z.rows() * data.Z.cols());

  const Eigen::MatrixXd gx = gram(kx, data.xs, data.xs);
  const Eigen::MatrixXd gy = gram(ky, data.ys, data.ys);
  const ClippedEig ex = clipped_eig(gx, psd_tol, "the x side");
  const ClippedEig ey = clipped_eig(gy, psd_tol, "the y side");

  // In the eigenbases the objective separates per coefficient: with
  // a = eig_x(i) * eig_y(j), the minimizer is z~ / (a + n*lambda), and 0 on
  // the nullspace (a = 0) where the objective is flat.
  const Eigen::MatrixXd zt = ex.vectors.transpose() * data.Z * ey.vectors;
  Eigen::MatrixXd ct(zt.rows(), zt.cols());
  for (Eigen::Index i = 0; i < zt.rows(); ++i) {
    for (Eigen::Index j = 0; j < zt.cols(); ++j) {
      const double a = ex.values(i) * ey.values(j);
      const double denom = a + n * lambda;
      ct(i, j) = (a > 0.0 && denom > 0.0) ? zt(i, j) / denom : 0.0;
    }
  }

  BinaryKernelModel model;
  model.kernel_x = kx;
  model.kernel_y = ky;
  model.support_x = data.xs;
  model.support_y = data.ys;
  model.coeffs = ex.vectors * ct * ey.vectors.transpose();
  model.lambda_x = lambda_x;
  model.lambda_y = lambda_y;
  return model;
}

namespace {

double rank1_objective(const Eigen::MatrixXd& z, const Eigen::MatrixXd& kx,
                       const Eigen::MatrixXd& ky, const Eigen::VectorXd& xi,
                       const Eigen::VectorXd& zeta, double lambda) {
  const double n = static_cast<double>(z.rows() * z.cols());
  const Eigen::VectorXd px = kx * xi;
  const Eigen::VectorXd py = ky * zeta;
  const double fit = (px * py.transpose() - z).squaredNorm() / n;
  const double reg = xi.dot(px) * zeta.dot(py);
  return fit + lambda * reg;
}

// Exact minimizer over one factor: solves
//   (||u||^2 / n) K xi + lambda beta xi = Z u / n
// where u is the other side's section image; falls back to a tiny ridge when
// the system is singular.
Eigen::VectorXd solve_factor(const Eigen::MatrixXd& k, const Eigen::MatrixXd& z_u, double u_norm2,
                             double beta, double lambda, double n, bool* ridge_used) {
  Eigen::MatrixXd a = (u_norm2 / n) * k;
  a.diagonal().array() += lambda * beta;
  const Eigen::VectorXd b = z_u / n;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (lu.isInvertible()) {
    return lu.solve(b);
  }
  *ridge_used = true;
  const double ridge = 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff());
  a.diagonal().array() += ridge;
  return a.fullPivLu().solve(b);
}

}  // namespace

BinaryKernelModel fit_rank1(const BinaryDataset& data, const kernels::KernelSpec& kx,
                            const kernels::KernelSpec& ky, double lambda_x, double lambda_y,
                            const Rank1Options& opts, Rank1Report* report) {
  validate(data);
  if (lambda_x < 0.0 || lambda_y < 0.0) {
    throw std::invalid_argument("fit_rank1: lambdas must be >= 0");
  }
  const double lambda = lambda_x + lambda_y;
  const double n = static_cast<double>(data.Z.rows() * data.Z.cols());

  const Eigen::MatrixXd gx = gram(kx, data.xs, data.xs);
  const Eigen::MatrixXd gy = gram(ky, data.ys, data.ys);
  clipped_eig(gx, 1e-10, "the x side");  // PSD gate only
  clipped_eig(gy, 1e-10, "the y side");

  // All-ones start scaled so the initial prediction mean matches mean(Z);
  // the sign goes to xi.
  const Eigen::VectorXd ones_x = Eigen::VectorXd::Ones(data.Z.rows());
  const Eigen::VectorXd ones_y = Eigen::VectorXd::Ones(data.Z.cols());
  const double m0 = (gx * ones_x).mean() * (gy * ones_y).mean();
  double r = m0 != 0.0 ? data.Z.mean() / m0 : 1.0;
  const double sign = r < 0.0 ? -1.0 : 1.0;
  const double mag = std::sqrt(std::abs(r));
  Eigen::VectorXd xi = sign * mag * ones_x;
  Eigen::VectorXd zeta = mag * ones_y;

  Rank1Report local;
  Rank1Report& rep = report ? *report : local;
  rep = {};
  double obj = rank1_objective(data.Z, gx, gy, xi, zeta, lambda);
  rep.objective_trace.push_back(obj);

  int it = 0;
  for (; it < opts.max_iters; ++it) {
    const double obj_before = obj;

    // xi given zeta
    {
      const Eigen::VectorXd u = gy * zeta;
      const double beta = zeta.dot(u);
      Eigen::VectorXd cand = solve_factor(gx, data.Z * u, u.squaredNorm(), beta, lambda, n,
                                          &rep.ridge_fallback);
      const double cand_obj = rank1_objective(data.Z, gx, gy, cand, zeta, lambda);
      if (cand_obj <= obj) {
        xi = cand;
        obj = cand_obj;
      }
      rep.objective_trace.push_back(obj);
    }
    // zeta given xi
    {
      const Eigen::VectorXd v = gx * xi;
      const double beta = xi.dot(v);
      Eigen::VectorXd cand = solve_factor(gy, data.Z.transpose() * v, v.squaredNorm(), beta,
                                          lambda, n, &rep.ridge_fallback);
      const double cand_obj = rank1_objective(data.Z, gx, gy, xi, cand, lambda);
      if (cand_obj <= obj) {
        zeta = cand;
        obj = cand_obj;
      }
      rep.objective_trace.push_back(obj);
    }

    const double decrease = (obj_before - obj) / std::max(1.0, std::abs(obj_before));
    if (decrease < opts.tol) {
      ++it;
      break;
    }
  }
  rep.iterations = it;
  rep.objective = obj;

  BinaryKernelModel model;
  model.kernel_x = kx;
  model.kernel_y = ky;
  model.support_x = data.xs;
  model.support_y = data.ys;
  model.rank1 = true;
  model.xi = xi;
  model.zeta = zeta;
  model.lambda_x = lambda_x;
  model.lambda_y = lambda_y;
  return model;
}

DistillResult distill(const BinaryKernelModel& model, const Eigen::MatrixXd& grid_x,
                      const Eigen::MatrixXd& grid_y, const Eigen::MatrixXd& holdout_x,
                      const Eigen::MatrixXd& holdout_y, const DistillOptions& opts) {
  const Eigen::MatrixXd targets = model.predict_grid(grid_x, grid_y);
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      if (!(targets(i, j) > 0.0)) {
        throw std::domain_error(
            "distill: model output " + std::to_string(targets(i, j)) + " at grid pair (" +
            std::to_string(i) + ", " + std::to_string(j) +
            ") is not positive; the machine is not a valid exponentiated-kernel target");
      }
    }
  }
  const Eigen::MatrixXd log_targets = targets.array().log();
  const double scale = 1.0 / std::sqrt(static_cast<double>(opts.dh));
  qknet::FactorTrainOptions train_opts;
  train_opts.iters = opts.iters;
  train_opts.learning_rate = opts.learning_rate;
  train_opts.seed = opts.seed;
  DistillResult result;
  result.nets = qknet::train_qk(grid_x, grid_y, log_targets, opts.dh, opts.hidden, scale,
                                train_opts);

  const Eigen::MatrixXd holdout_truth = model.predict_grid(holdout_x, holdout_y);
  const Eigen::MatrixXd holdout_pred =
      qknet::predict_qk(result.nets, holdout_x, holdout_y).array().exp();
  const Eigen::MatrixXd abs_err = (holdout_pred - holdout_truth).cwiseAbs();
  result.sup_error = abs_err.maxCoeff();
  result.mean_abs_error = abs_err.mean();
  return result;
}

BinaryDataset load_dataset(const std::filesystem::path& path) {
  const nlohmann::json j = nlohmann::json::parse(io::read_file(path));
  BinaryDataset data;
  data.xs = matrix_from_json(j.at("xs"), "xs");
  data.ys = matrix_from_json(j.at("ys"), "ys");
  data.Z = matrix_from_json(j.at("Z"), "Z");
  validate(data);
  return data;
}

void save_dataset(const std::filesystem::path& path, const BinaryDataset& data) {
  nlohmann::json j;
  j["xs"] = matrix_to_json(data.xs);
  j["ys"] = matrix_to_json(data.ys);
  j["Z"] = matrix_to_json(data.Z);
  io::write_file(path, j.dump(2) + "\n");
}

void save_model(const std::filesystem::path& path, const BinaryKernelModel& model) {
  nlohmann::json j;
  j["kernel_x"] = spec_to_json(model.kernel_x);
  j["kernel_y"] = spec_to_json(model.kernel_y);
  j["support_x"] = matrix_to_json(model.support_x);
  j["support_y"] = matrix_to_json(model.support_y);
  j["lambda_x"] = model.lambda_x;
  j["lambda_y"] = model.lambda_y;
  if (model.rank1) {
    j["mode"] = "rank1";
    nlohmann::json xi = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.xi.size(); ++i) xi.push_back(model.xi(i));
    nlohmann::json zeta = nlohmann::json::array();
    for (Eigen::Index i = 0; i < model.zeta.size(); ++i) zeta.push_back(model.zeta(i));
    j["xi"] = std::move(xi);
    j["zeta"] = std::move(zeta);
  } else {
    j["mode"] = "full";
    j["coeffs"] = matrix_to_json(model.coeffs);
  }
  io::write_file(path, j.dump(2) + "\n");
}

BinaryKernelModel load_model(const std::filesystem::path& path) {
  const nlohmann::json j = nlohmann::json::parse(io::read_file(path));
  BinaryKernelModel model;
  model.kernel_x = spec_from_json(j.at("kernel_x"));
  model.kernel_y = spec_from_json(j.at("kernel_y"));
  model.support_x = matrix_from_json(j.at("support_x"), "support_x");
  model.support_y = matrix_from_json(j.at("support_y"), "support_y");
  model.lambda_x = j.value("lambda_x", 0.0);
  model.lambda_y = j.value("lambda_y", 0.0);
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "rank1") {
    model.rank1 = true;
    const auto xi = j.at("xi").get<std::vector<double>>();
    const auto zeta = j.at("zeta").get<std::vector<double>>();
    model.xi = Eigen::Map<const Eigen::VectorXd>(xi.data(), static_cast<Eigen::Index>(xi.size()));
    model.zeta =
        Eigen::Map<const Eigen::VectorXd>(zeta.data(), static_cast<Eigen::Index>(zeta.size()));
  } else if (mode == "full") {
    model.coeffs = matrix_from_json(j.at("coeffs"), "coeffs");
  } else {
    throw std::runtime_error(path.string() + ": unknown model mode " + mode);
  }
  return model;
}

}  // namespace kat::binarykm
