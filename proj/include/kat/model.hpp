#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kat/attention.hpp"
#include "kat/io.hpp"
#include "kat/kernels.hpp"
#include "kat/rng.hpp"
#include "kat/tensor.hpp"

namespace kat::model {

struct KernelInit {
  kernels::KernelKind kind = kernels::KernelKind::EDP;
  double tau_init = 1.0;
  double gamma_init = 0.0;
};

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 0;
  int num_layers = 0;
  int num_heads = 0;
  int head_dim = 0;
  int ffn_hidden = 0;
  int num_classes = 0;
  int max_seq_len = 0;
  KernelInit kernel;
};

void validate(const EncoderConfig& config);  // throws std::invalid_argument

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int warmup_steps = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double lr_decay_factor = 0.1;
  int patience = 8;
};

// Pre-norm encoder block: both sublayers run
//   layernorm -> (attention | FC stack) -> relu -> add residual,
// with the FC stack being FC(ffn_hidden) -> relu -> FC(d_model) -> relu.
struct EncoderBlockParams {
  Tensor ln1_gain, ln1_bias;
  attention::AttentionLayerParams attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1;  // [ffn_hidden x d_model], [ffn_hidden]
  Tensor ffn_w2, ffn_b2;  // [d_model x ffn_hidden], [d_model]
};

struct EncoderModel {
  EncoderConfig config;
  Tensor token_embedding;     // [vocab_size x d_model]
  Tensor position_embedding;  // [max_seq_len x d_model]
  std::vector<EncoderBlockParams> blocks;
  Tensor head_w1, head_b1;  // [d_model x d_model], [d_model]
  Tensor head_w2, head_b2;  // [num_classes x d_model], [num_classes]

  // Declaration order; checkpoints store blobs in exactly this order.
  std::vector<Tensor> parameters() const;
};

EncoderModel init_model(const EncoderConfig& config, Rng& rng);

Tensor encoder_block(const EncoderBlockParams& params, const Tensor& x,
                     const std::optional<std::vector<std::uint8_t>>& pad_mask, int layer_index);

// Token embedding + learned positions, num_layers blocks, mean pooling over
// non-pad positions, two-layer head. Returns [num_classes] logits.
Tensor classify(const EncoderModel& model, const std::vector<int>& token_ids,
                const std::optional<std::vector<std::uint8_t>>& pad_mask = std::nullopt);

Tensor cross_entropy(const Tensor& logits, int label);

using io::SequenceRecord;

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_acc = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_valid_acc = 0.0;
  std::uint64_t steps = 0;
};

// Adam with linear warmup from min(1e-7, learning_rate), times
// lr_decay_factor after 3 epochs without validation improvement, early stop
// after `patience` such epochs. The model is left at its best-validation
// parameters. Deterministic given cfg.seed.
TrainReport train(EncoderModel& model, const std::vector<SequenceRecord>& train_data,
                  const std::vector<SequenceRecord>& valid_data, const TrainConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<int> per_class_correct;
  std::vector<int> per_class_total;
};

EvalResult evaluate(const EncoderModel& model, const std::vector<SequenceRecord>& data);

// epoch,train_loss,valid_acc,lr rows
void write_report_csv(const std::filesystem::path& path, const TrainReport& report);
void write_report_json(const std::filesystem::path& path, const TrainReport& report);

// Single file: magic, length-prefixed JSON header (config, seed, step), then
// raw little-endian float64 blobs in parameters() order.
void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     std::uint64_t seed, std::uint64_t step);
struct Checkpoint {
  EncoderModel model;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kat::model
