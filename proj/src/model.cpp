#include "kat/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "kat/optim.hpp"

namespace kat::model {

namespace {

constexpr char kCheckpointMagic[8] = {'K', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  return randu(rng, {rows, cols}, -bound, bound, true);
}

std::uint64_t swap_bytes(std::uint64_t v) {
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xFFULL) << (8 * (7 - i));
  return out;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return swap_bytes(v);
  } else {
    return v;
  }
}

double double_to_from_le(double v) {
  if constexpr (std::endian::native == std::endian::big) {
    return std::bit_cast<double>(swap_bytes(std::bit_cast<std::uint64_t>(v)));
  } else {
    return v;
  }
}

nlohmann::json config_to_json(const EncoderConfig& c) {
  return nlohmann::json{{"vocab_size", c.vocab_size},
                        {"d_model", c.d_model},
                        {"num_layers", c.num_layers},
                        {"num_heads", c.num_heads},
                        {"head_dim", c.head_dim},
                        {"ffn_hidden", c.ffn_hidden},
                        {"num_classes", c.num_classes},
                        {"max_seq_len", c.max_seq_len},
                        {"kernel",
                         {{"kind", kernels::kind_name(c.kernel.kind)},
                          {"tau_init", c.kernel.tau_init},
                          {"gamma_init", c.kernel.gamma_init}}}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.head_dim = j.at("head_dim").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  const auto& k = j.at("kernel");
  const auto kind = kernels::kind_from_name(k.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown kernel kind in config");
  c.kernel.kind = *kind;
  c.kernel.tau_init = k.value("tau_init", 1.0);
  c.kernel.gamma_init = k.value("gamma_init", 0.0);
  return c;
}

}  // namespace

void validate(const EncoderConfig& c) {
  if (c.vocab_size < 1 || c.d_model < 1 || c.num_layers < 1 || c.num_heads < 1 ||
      c.head_dim < 1 || c.ffn_hidden < 1 || c.num_classes < 1 || c.max_seq_len < 1) {
    throw std::invalid_argument("encoder config: all extents must be positive");
  }
  if (c.d_model != c.num_heads * c.head_dim) {
    throw std::invalid_argument("encoder config: d_model " + std::to_string(c.d_model) +
                                " != num_heads * head_dim " +
                                std::to_string(c.num_heads * c.head_dim));
  }
}

std::vector<Tensor> EncoderModel::parameters() const {
  std::vector<Tensor> out;
  out.push_back(token_embedding);
  out.push_back(position_embedding);
  for (const EncoderBlockParams& b : blocks) {
    out.push_back(b.ln1_gain);
    out.push_back(b.ln1_bias);
    for (const Tensor& p : attention::parameters(b.attn)) out.push_back(p);
    out.push_back(b.ln2_gain);
    out.push_back(b.ln2_bias);
    out.push_back(b.ffn_w1);
    out.push_back(b.ffn_b1);
    out.push_back(b.ffn_w2);
    out.push_back(b.ffn_b2);
  }
  out.push_back(head_w1);
  out.push_back(head_b1);
  out.push_back(head_w2);
  out.push_back(head_b2);
  return out;
}

EncoderModel init_model(const EncoderConfig& config, Rng& rng) {
  validate(config);
  EncoderModel m;
  m.config = config;
  const auto d = static_cast<std::size_t>(config.d_model);
  m.token_embedding = init_weight(rng, static_cast<std::size_t>(config.vocab_size), d);
  m.position_embedding = init_weight(rng, static_cast<std::size_t>(config.max_seq_len), d);
  for (int layer = 0; layer < config.num_layers; ++layer) {
    EncoderBlockParams b;
    b.ln1_gain = Tensor::ones({d}, true);
    b.ln1_bias = Tensor::zeros({d}, true);
    b.attn = attention::init_attention(rng, config.num_heads, config.head_dim, config.d_model,
                                       config.d_model, config.d_model, config.kernel.kind,
                                       config.kernel.tau_init, config.kernel.gamma_init);
    b.ln2_gain = Tensor::ones({d}, true);
    b.ln2_bias = Tensor::zeros({d}, true);
    b.ffn_w1 = init_weight(rng, static_cast<std::size_t>(config.ffn_hidden), d);
    b.ffn_b1 = Tensor::zeros({static_cast<std::size_t>(config.ffn_hidden)}, true);
    b.ffn_w2 = init_weight(rng, d, static_cast<std::size_t>(config.ffn_hidden));
    b.ffn_b2 = Tensor::zeros({d}, true);
    m.blocks.push_back(std::move(b));
  }
  m.head_w1 = init_weight(rng, d, d);
  m.head_b1 = Tensor::zeros({d}, true);
  m.head_w2 = init_weight(rng, static_cast<std::size_t>(config.num_classes), d);
  m.head_b2 = Tensor::zeros({static_cast<std::size_t>(config.num_classes)}, true);
  return m;
}

Tensor encoder_block(const EncoderBlockParams& params, const Tensor& x,
                     const std::optional<std::vector<std::uint8_t>>& pad_mask, int layer_index) {
  Tensor h = layer_norm(x, params.ln1_gain, params.ln1_bias);
  Tensor attn_out = relu(attention::attend(params.attn, h, h, pad_mask));
  Tensor mid = add(x, attn_out);

  Tensor h2 = layer_norm(mid, params.ln2_gain, params.ln2_bias);
  Tensor f = relu(add_rowwise(matmul(h2, transpose(params.ffn_w1)), params.ffn_b1));
  f = relu(add_rowwise(matmul(f, transpose(params.ffn_w2)), params.ffn_b2));
  Tensor out = add(mid, f);
  if (!all_finite(out)) {
    throw std::runtime_error("encoder_block: non-finite activations in layer " +
                             std::to_string(layer_index));
  }
  return out;
}

Tensor classify(const EncoderModel& model, const std::vector<int>& token_ids,
                const std::optional<std::vector<std::uint8_t>>& pad_mask) {
  const EncoderConfig& cfg = model.config;
  if (token_ids.empty()) throw std::domain_error("classify: empty token sequence");
  if (token_ids.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw std::invalid_argument("classify: sequence length " + std::to_string(token_ids.size()) +
                                " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  if (pad_mask && pad_mask->size() != token_ids.size()) {
    throw std::invalid_argument("classify: pad mask length does not match sequence length");
  }
  const std::size_t len = token_ids.size();
  std::vector<std::size_t> rows(len);
  for (std::size_t i = 0; i < len; ++i) {
    if (token_ids[i] < 0 || token_ids[i] >= cfg.vocab_size) {
      throw std::invalid_argument("classify: token id " + std::to_string(token_ids[i]) +
                                  " outside vocabulary of size " + std::to_string(cfg.vocab_size));
    }
    rows[i] = static_cast<std::size_t>(token_ids[i]);
  }
  std::vector<std::size_t> positions(len);
  std::iota(positions.begin(), positions.end(), 0);

  Tensor x = add(select_rows(model.token_embedding, rows),
                 select_rows(model.position_embedding, positions));
  for (std::size_t layer = 0; layer < model.blocks.size(); ++layer) {
    x = encoder_block(model.blocks[layer], x, pad_mask, static_cast<int>(layer));
  }

  // Mean pooling over non-pad positions as a constant-weight projection.
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < len; ++i) {
    if (!pad_mask || !(*pad_mask)[i]) ++n_valid;
  }
  if (n_valid == 0) throw std::domain_error("classify: every position is padding");
  std::vector<double> weights(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    if (!pad_mask || !(*pad_mask)[i]) weights[i] = 1.0 / static_cast<double>(n_valid);
  }
  Tensor pooled = matmul(Tensor::from_data({1, len}, std::move(weights)), x);

  Tensor h = relu(add_rowwise(matmul(pooled, transpose(model.head_w1)), model.head_b1));
  Tensor logits = add_rowwise(matmul(h, transpose(model.head_w2)), model.head_b2);
  return reshape(logits, {static_cast<std::size_t>(cfg.num_classes)});
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) {
    throw std::invalid_argument("cross_entropy: expected rank-1 logits, got " +
                                shape_str(logits.shape()));
  }
  if (label < 0 || static_cast<std::size_t>(label) >= logits.shape()[0]) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + shape_str(logits.shape()));
  }
  Tensor shifted = subtract(logits, max(logits));
  return subtract(log(sum(exp(shifted))), pick(shifted, static_cast<std::size_t>(label)));
}

namespace {

int argmax_label(const Tensor& logits) {
  const auto v = logits.data();
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

void check_record(const SequenceRecord& rec, const EncoderConfig& cfg) {
  if (rec.tokens.empty()) throw std::invalid_argument("train: record with empty token list");
  if (rec.label < 0 || rec.label >= cfg.num_classes) {
    throw std::invalid_argument("train: label " + std::to_string(rec.label) +
                                " outside num_classes " + std::to_string(cfg.num_classes));
  }
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(std::vector<Tensor>& params, const std::vector<std::vector<double>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].data_mut();
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

}  // namespace

EvalResult evaluate(const EncoderModel& model, const std::vector<SequenceRecord>& data) {
  NoGradGuard ng;
  EvalResult res;
  res.per_class_correct.assign(static_cast<std::size_t>(model.config.num_classes), 0);
  res.per_class_total.assign(static_cast<std::size_t>(model.config.num_classes), 0);
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  int correct = 0;
  for (const SequenceRecord& rec : data) {
    check_record(rec, model.config);
    const int pred = argmax_label(classify(model, rec.tokens));
    res.per_class_total[static_cast<std::size_t>(rec.label)] += 1;
    if (pred == rec.label) {
      ++correct;
      res.per_class_correct[static_cast<std::size_t>(rec.label)] += 1;
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return res;
}

TrainReport train(EncoderModel& model, const std::vector<SequenceRecord>& train_data,
                  const std::vector<SequenceRecord>& valid_data, const TrainConfig& cfg) {
  if (train_data.empty() || valid_data.empty()) {
    throw std::invalid_argument("train: train and valid datasets must be non-empty");
  }
  if (cfg.learning_rate < 0.0) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (cfg.adam_beta1 < 0.0 || cfg.adam_beta1 >= 1.0 || cfg.adam_beta2 < 0.0 ||
      cfg.adam_beta2 >= 1.0) {
    throw std::invalid_argument("train: betas must lie in [0, 1)");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  for (const SequenceRecord& rec : train_data) check_record(rec, model.config);
  for (const SequenceRecord& rec : valid_data) check_record(rec, model.config);

  std::vector<Tensor> params = model.parameters();
  optim::Adam adam(params, {cfg.adam_beta1, cfg.adam_beta2, 1e-8});

  const double lr_peak = cfg.learning_rate;
  const double lr_start = std::min(1e-7, lr_peak);
  constexpr int kDecayPatience = 3;

  Rng rng(cfg.seed);
  TrainReport report;
  auto best_params = snapshot(params);
  int stall_decay = 0;
  int stall_early = 0;
  int num_decays = 0;
  std::uint64_t step = 0;

  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t batch = std::min<std::size_t>(cfg.batch_size, order.size() - pos);
      ++step;
      double lr = lr_peak * std::pow(cfg.lr_decay_factor, num_decays);
      if (cfg.warmup_steps > 0 && step <= static_cast<std::uint64_t>(cfg.warmup_steps)) {
        lr = lr_start + (lr_peak - lr_start) * static_cast<double>(step) /
                            static_cast<double>(cfg.warmup_steps);
      }
      adam.zero_grad();
      Tensor batch_loss;
      for (std::size_t b = 0; b < batch; ++b) {
        const SequenceRecord& rec = train_data[order[pos + b]];
        Tensor loss = cross_entropy(classify(model, rec.tokens), rec.label);
        batch_loss = b == 0 ? loss : add(batch_loss, loss);
      }
      batch_loss = multiply(batch_loss, Tensor::scalar(1.0 / static_cast<double>(batch)));
      const double lv = batch_loss.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train: loss diverged to " + std::to_string(lv) + " at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss_sum += lv * static_cast<double>(batch);
      batch_loss.backward();
      adam.step(lr);
      pos += batch;
    }

    const double valid_acc = evaluate(model, valid_data).accuracy;
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_data.size());
    stats.valid_acc = valid_acc;
    stats.lr = lr_peak * std::pow(cfg.lr_decay_factor, num_decays);
    report.epochs.push_back(stats);

    if (valid_acc > report.best_valid_acc || report.best_epoch < 0) {
      report.best_valid_acc = valid_acc;
      report.best_epoch = epoch;
      best_params = snapshot(params);
      stall_decay = 0;
      stall_early = 0;
    } else {
      ++stall_decay;
      ++stall_early;
      if (stall_decay >= kDecayPatience) {
        ++num_decays;
        stall_decay = 0;
      }
      if (stall_early >= cfg.patience) break;
    }
  }

  restore(params, best_params);
  report.steps = step;
  return report;
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,valid_acc,lr\n";
  for (const EpochStats& e : report.epochs) {
    out << e.epoch << "," << io::g17(e.train_loss) << "," << io::g17(e.valid_acc) << ","
        << io::g17(e.lr) << "\n";
  }
}

void write_report_json(const std::filesystem::path& path, const TrainReport& report) {
  nlohmann::json j;
  j["best_epoch"] = report.best_epoch;
  j["best_valid_acc"] = report.best_valid_acc;
  j["steps"] = report.steps;
  j["epochs"] = nlohmann::json::array();
  for (const EpochStats& e : report.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"valid_acc", e.valid_acc},
                           {"lr", e.lr}});
  }
  io::write_file(path, j.dump(2) + "\n");
}

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     std::uint64_t seed, std::uint64_t step) {
  const std::vector<Tensor> params = model.parameters();
  std::size_t total = 0;
  for (const Tensor& p : params) total += p.numel();

  nlohmann::json header;
  header["config"] = config_to_json(model.config);
  header["seed"] = seed;
  header["step"] = step;
  header["param_count"] = total;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t len = to_le(header_str.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const Tensor& p : params) {
    for (double v : p.data()) {
      const double le = double_to_from_le(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(le));
    }
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  len = to_le(len);
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated checkpoint header");
  const nlohmann::json header = nlohmann::json::parse(header_str);

  Checkpoint ck;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.step = header.at("step").get<std::uint64_t>();
  const EncoderConfig config = config_from_json(header.at("config"));
  Rng rng(ck.seed);
  ck.model = init_model(config, rng);

  std::vector<Tensor> params = ck.model.parameters();
  std::size_t total = 0;
  for (const Tensor& p : params) total += p.numel();
  if (header.at("param_count").get<std::size_t>() != total) {
    throw std::runtime_error(path.string() + ": parameter count does not match config");
  }
  for (Tensor& p : params) {
    auto dst = p.data_mut();
    for (double& v : dst) {
      double raw = 0.0;
      in.read(reinterpret_cast<char*>(&raw), sizeof(raw));
      if (!in) throw std::runtime_error(path.string() + ": truncated parameter blob");
      v = double_to_from_le(raw);
    }
  }
  return ck;
}

}  // namespace kat::model
