#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kat/kernels.hpp"
#include "kat/rng.hpp"
#include "kat/tensor.hpp"

namespace kat::attention {

// Multi-head kernelized attention parameters. Per head h:
//   q_i = Wq[h] t_i, k_j = Wk[h] s_j, v_j = Wv[h] s_j,
//   weights = normalize_rows(cross_gram(kernel[h], Q, K)),
// head outputs are concatenated in head order and projected by w_out.
struct AttentionLayerParams {
  int num_heads = 0;
  int head_dim = 0;
  int d_target = 0;
  int d_source = 0;
  int d_model = 0;
  std::vector<Tensor> w_query;  // per head [head_dim x d_target]
  std::vector<Tensor> w_key;    // per head [head_dim x d_source]
  std::vector<Tensor> w_value;  // per head [head_dim x d_source]
  Tensor w_out;                 // [d_model x num_heads*head_dim]
  std::vector<kernels::KernelSpec> head_kernels;
};

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights; verifies the query/key
// projections have full rank head_dim (checked at init only, never re-checked
// during training).
AttentionLayerParams init_attention(Rng& rng, int num_heads, int head_dim, int d_target,
                                    int d_source, int d_model, kernels::KernelKind kind,
                                    double tau_init = 1.0, double gamma_init = 0.0);

std::vector<Tensor> parameters(const AttentionLayerParams& params);

// source_pad, when present, marks padding positions (true = pad, excluded
// from every attention row). Throws if every source is padded or a head
// produces a non-finite kernel value.
Tensor attend(const AttentionLayerParams& params, const Tensor& targets, const Tensor& sources,
              const std::optional<std::vector<std::uint8_t>>& source_pad = std::nullopt);

// [num_heads x T x S] row-stochastic weights (detached from the graph).
Tensor attention_weights(const AttentionLayerParams& params, const Tensor& targets,
                         const Tensor& sources,
                         const std::optional<std::vector<std::uint8_t>>& source_pad = std::nullopt);

}  // namespace kat::attention
