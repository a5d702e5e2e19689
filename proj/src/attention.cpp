#include "kat/attention.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace kat::attention {

namespace {

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  return randu(rng, {rows, cols}, -bound, bound, true);
}

int numeric_rank(const Tensor& w) {
  Eigen::MatrixXd m(w.shape()[0], w.shape()[1]);
  for (std::size_t i = 0; i < w.shape()[0]; ++i) {
    for (std::size_t j = 0; j < w.shape()[1]; ++j) m(i, j) = w.at(i, j);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double thresh = sv(0) * 1e-12;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > thresh) ++rank;
  }
  return rank;
}

std::optional<std::vector<std::uint8_t>> expand_mask(
    const std::optional<std::vector<std::uint8_t>>& source_pad, std::size_t t, std::size_t s) {
  if (!source_pad) return std::nullopt;
  if (source_pad->size() != s) {
    throw std::invalid_argument("attend: pad mask length " + std::to_string(source_pad->size()) +
                                " does not match " + std::to_string(s) + " sources");
  }
  bool any_valid = false;
  for (std::uint8_t pad : *source_pad) {
    if (!pad) any_valid = true;
  }
  if (!any_valid) throw std::domain_error("attend: every source position is masked");
  std::vector<std::uint8_t> valid(t * s);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < s; ++j) valid[i * s + j] = (*source_pad)[j] ? 0 : 1;
  }
  return valid;
}

void check_inputs(const AttentionLayerParams& params, const Tensor& targets,
                  const Tensor& sources) {
  if (targets.rank() != 2 || targets.shape()[1] != static_cast<std::size_t>(params.d_target)) {
    throw std::invalid_argument("attend: targets " + shape_str(targets.shape()) +
                                " do not match d_target " + std::to_string(params.d_target));
  }
  if (sources.rank() != 2 || sources.shape()[1] != static_cast<std::size_t>(params.d_source)) {
    throw std::invalid_argument("attend: sources " + shape_str(sources.shape()) +
                                " do not match d_source " + std::to_string(params.d_source));
  }
  if (sources.shape()[0] == 0) throw std::domain_error("attend: no source positions");
}

// Per-head kernel values with the non-finite check the layer contract requires.
Tensor head_gram(const AttentionLayerParams& params, int head, const Tensor& queries,
                 const Tensor& keys) {
  Tensor gram = kernels::cross_gram(params.head_kernels[static_cast<std::size_t>(head)], queries,
                                    keys);
  const auto gv = gram.data();
  const std::size_t s = gram.shape()[1];
  for (std::size_t idx = 0; idx < gv.size(); ++idx) {
    if (!std::isfinite(gv[idx])) {
      throw std::runtime_error("attend: non-finite kernel value at head " + std::to_string(head) +
                               ", pair (" + std::to_string(idx / s) + ", " +
                               std::to_string(idx % s) + ")");
    }
  }
  return gram;
}

}  // namespace

AttentionLayerParams init_attention(Rng& rng, int num_heads, int head_dim, int d_target,
                                    int d_source, int d_model, kernels::KernelKind kind,
                                    double tau_init, double gamma_init) {
  if (num_heads <= 0 || head_dim <= 0 || d_target <= 0 || d_source <= 0 || d_model <= 0) {
    throw std::invalid_argument("init_attention: all extents must be positive");
  }
  if (head_dim > d_target || head_dim > d_source) {
    throw std::invalid_argument("init_attention: head_dim must not exceed d_target or d_source");
  }
  AttentionLayerParams params;
  params.num_heads = num_heads;
  params.head_dim = head_dim;
  params.d_target = d_target;
  params.d_source = d_source;
  params.d_model = d_model;
  for (int h = 0; h < num_heads; ++h) {
    params.w_query.push_back(init_weight(rng, head_dim, d_target));
    params.w_key.push_back(init_weight(rng, head_dim, d_source));
    params.w_value.push_back(init_weight(rng, head_dim, d_source));
    params.head_kernels.push_back(kernels::make_spec(kind, head_dim, tau_init, gamma_init, true));
    if (numeric_rank(params.w_query.back()) != head_dim ||
        numeric_rank(params.w_key.back()) != head_dim) {
      throw std::runtime_error("init_attention: projection of head " + std::to_string(h) +
                               " is rank-deficient at initialization");
    }
  }
  params.w_out = init_weight(rng, static_cast<std::size_t>(d_model),
                             static_cast<std::size_t>(num_heads * head_dim));
  return params;
}

std::vector<Tensor> parameters(const AttentionLayerParams& params) {
  std::vector<Tensor> out;
  for (int h = 0; h < params.num_heads; ++h) {
    out.push_back(params.w_query[static_cast<std::size_t>(h)]);
    out.push_back(params.w_key[static_cast<std::size_t>(h)]);
    out.push_back(params.w_value[static_cast<std::size_t>(h)]);
    for (const Tensor& p : kernels::scalar_params(params.head_kernels[static_cast<std::size_t>(h)])) {
      out.push_back(p);
    }
  }
  out.push_back(params.w_out);
  return out;
}

Tensor attend(const AttentionLayerParams& params, const Tensor& targets, const Tensor& sources,
              const std::optional<std::vector<std::uint8_t>>& source_pad) {
  check_inputs(params, targets, sources);
  const std::size_t t = targets.shape()[0];
  const std::size_t s = sources.shape()[0];
  const auto valid = expand_mask(source_pad, t, s);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(params.num_heads));
  for (int h = 0; h < params.num_heads; ++h) {
    const std::size_t hs = static_cast<std::size_t>(h);
    Tensor queries = matmul(targets, transpose(params.w_query[hs]));
    Tensor keys = matmul(sources, transpose(params.w_key[hs]));
    Tensor values = matmul(sources, transpose(params.w_value[hs]));
    Tensor gram = head_gram(params, h, queries, keys);
    Tensor weights = kernels::normalize_rows(gram, valid);
    head_outputs.push_back(matmul(weights, values));
  }
  Tensor out = matmul(concat_cols(head_outputs), transpose(params.w_out));
  require_finite(out, "attend: output");
  return out;
}

Tensor attention_weights(const AttentionLayerParams& params, const Tensor& targets,
                         const Tensor& sources,
                         const std::optional<std::vector<std::uint8_t>>& source_pad) {
  check_inputs(params, targets, sources);
  const std::size_t t = targets.shape()[0];
  const std::size_t s = sources.shape()[0];
  const auto valid = expand_mask(source_pad, t, s);

  NoGradGuard ng;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(params.num_heads) * t * s);
  for (int h = 0; h < params.num_heads; ++h) {
    const std::size_t hs = static_cast<std::size_t>(h);
    Tensor queries = matmul(targets, transpose(params.w_query[hs]));
    Tensor keys = matmul(sources, transpose(params.w_key[hs]));
    Tensor gram = head_gram(params, h, queries, keys);
    Tensor weights = kernels::normalize_rows(gram, valid);
    const auto wv = weights.data();
    out.insert(out.end(), wv.begin(), wv.end());
  }
  return Tensor::from_data({static_cast<std::size_t>(params.num_heads), t, s}, std::move(out));
}

}  // namespace kat::attention
