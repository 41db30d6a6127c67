#include "mlmgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "mlmgen/errors.hpp"
#include "mlmgen/ops.hpp"

namespace mlmgen {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"warmup_steps", c.warmup_steps},
                     {"grad_clip", c.grad_clip},
                     {"seed", c.seed},
                     {"pack", c.pack},
                     {"mask_rate", c.masking.rate},
                     {"max_span", c.masking.max_span},
                     {"mask_prob", c.masking.mask_prob},
                     {"random_prob", c.masking.random_prob}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train", "expected an object");
  TrainConfig out;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "steps") out.steps = value.get<std::size_t>();
      else if (key == "batch_size") out.batch_size = value.get<std::size_t>();
      else if (key == "lr") out.lr = value.get<double>();
      else if (key == "beta1") out.beta1 = value.get<double>();
      else if (key == "beta2") out.beta2 = value.get<double>();
      else if (key == "adam_eps") out.adam_eps = value.get<double>();
      else if (key == "weight_decay") out.weight_decay = value.get<double>();
      else if (key == "warmup_steps") out.warmup_steps = value.get<std::size_t>();
      else if (key == "grad_clip") out.grad_clip = value.get<double>();
      else if (key == "seed") out.seed = value.get<std::uint64_t>();
      else if (key == "pack") out.pack = value.get<bool>();
      else if (key == "mask_rate") out.masking.rate = value.get<double>();
      else if (key == "max_span") out.masking.max_span = value.get<std::size_t>();
      else if (key == "mask_prob") out.masking.mask_prob = value.get<double>();
      else if (key == "random_prob") out.masking.random_prob = value.get<double>();
      else throw ConfigError("train." + key, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train." + key, e.what());
    }
  }
  if (out.batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (!(out.lr > 0.0)) throw ConfigError("train.lr", "must be positive");
  if (out.masking.rate < 0.0 || out.masking.rate > 1.0) throw ConfigError("train.mask_rate", "must be in [0, 1]");
  if (out.masking.max_span == 0) throw ConfigError("train.max_span", "must be positive");
  c = out;
}

double learning_rate(const TrainConfig& train, std::size_t step) {
  if (train.warmup_steps == 0 || step >= train.warmup_steps) return train.lr;
  return train.lr * static_cast<double>(step + 1) / static_cast<double>(train.warmup_steps);
}

namespace {

struct Batch {
  std::vector<std::vector<TokenId>> inputs;
  std::vector<std::size_t> rows;  // packed row indices carrying a target
  std::vector<TokenId> targets;
};

std::vector<TokenId> crop(const std::vector<TokenId>& seq, std::size_t max_len) {
  return {seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(std::min(seq.size(), max_len))};
}

// Adds one sequence; returns false if it contributes no target.
bool add_mlm(Batch& b, const std::vector<TokenId>& seq, std::size_t vocab, Rng& rng,
             const MaskingOptions& masking, std::size_t offset) {
  MaskedSequence m = sample_span_mask(seq, vocab, rng, masking);
  if (m.plan.positions.empty()) return false;
  for (auto p : m.plan.positions) {
    b.rows.push_back(offset + p);
    b.targets.push_back(m.targets[p]);
  }
  b.inputs.push_back(std::move(m.corrupted));
  return true;
}

bool add_causal(Batch& b, const std::vector<TokenId>& seq, std::size_t offset) {
  if (seq.size() < 2) return false;
  for (std::size_t p = 0; p + 1 < seq.size(); ++p) {
    b.rows.push_back(offset + p);
    b.targets.push_back(seq[p + 1]);
  }
  b.inputs.emplace_back(seq.begin(), seq.end() - 1);
  return true;
}

// CLS + lines from `first` on, each followed by SEP, cut at max_len tokens.
std::vector<TokenId> packed_window(std::span<const std::vector<TokenId>> corpus, std::size_t first,
                                   std::size_t max_len) {
  std::vector<TokenId> out{special::kCls};
  for (std::size_t i = first; out.size() < max_len; i = (i + 1) % corpus.size()) {
    for (TokenId t : corpus[i]) {
      if (t != special::kCls && t != special::kSep) out.push_back(t);
    }
    out.push_back(special::kSep);
  }
  out.resize(max_len);
  if (out.back() != special::kSep) out.back() = special::kSep;
  return out;
}

std::size_t packed_rows(const Batch& b) {
  std::size_t n = 0;
  for (const auto& s : b.inputs) n += s.size();
  return n;
}

Tensor batch_loss(const Transformer& model, const Batch& b, const ForwardOptions& options) {
  Tensor h = model.hidden(b.inputs, options);
  return cross_entropy(model.head(gather_rows(h, b.rows)), b.targets);
}

bool decayed(const std::string& name) {
  // Matrices only; norms, biases and the position tables are exempt.
  return name.find("_weight") != std::string::npos || name == "token_embedding";
}

}  // namespace

TrainResult train(const ModelConfig& config, std::span<const std::vector<TokenId>> corpus,
                  const TrainConfig& tc) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  if (tc.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");

  TrainResult result{init_weights(config, tc.seed), {}};
  Transformer model(config, result.weights.clone());
  const auto params = model.weights().parameters();
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].tensor.numel(), 0.0);
    m2[i].assign(params[i].tensor.numel(), 0.0);
  }

  const bool causal = config.attention_mode == AttentionMode::causal;
  Rng data_rng(derive_seed(tc.seed, {1}));
  Rng dropout_rng(derive_seed(tc.seed, {2}));
  ForwardOptions options{true, &dropout_rng};

  for (std::size_t step = 0; step < tc.steps; ++step) {
    Batch batch;
    std::size_t attempts = 0;
    while (batch.inputs.size() < tc.batch_size) {
      if (++attempts > 100 * tc.batch_size) {
        throw std::invalid_argument("train: corpus yields no trainable targets");
      }
      const auto idx = static_cast<std::size_t>(uniform01(data_rng) * static_cast<double>(corpus.size()));
      const auto seq = tc.pack ? packed_window(corpus, idx, config.max_train_len)
                               : crop(corpus[idx], config.max_train_len);
      const std::size_t offset = packed_rows(batch);
      if (causal) add_causal(batch, seq, offset);
      else if (seq.size() >= 4) add_mlm(batch, seq, config.vocab_size, data_rng, tc.masking, offset);
    }

    Tensor loss = batch_loss(model, batch, options);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw TrainingDiverged("loss is not finite at step " + std::to_string(step));
    }
    try {
      loss.backward();
    } catch (const NumericError& e) {
      throw TrainingDiverged("gradient is not finite at step " + std::to_string(step) + ": " + e.what());
    }

    double norm2 = 0.0;
    for (const auto& p : params) {
      for (double g : p.tensor.grad()) norm2 += g * g;
    }
    const double norm = std::sqrt(norm2);
    const double clip = (tc.grad_clip > 0.0 && norm > tc.grad_clip) ? tc.grad_clip / norm : 1.0;

    const double lr = learning_rate(tc, step);
    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(tc.beta1, t);
    const double c2 = 1.0 - std::pow(tc.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor p = params[i].tensor;
      if (!p.has_grad()) continue;  // unused this step, e.g. an absent position table
      const auto g = p.grad();
      auto w = p.mutable_data();
      const double decay = decayed(params[i].name) ? tc.weight_decay : 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k] * clip;
        m1[i][k] = tc.beta1 * m1[i][k] + (1.0 - tc.beta1) * gk;
        m2[i][k] = tc.beta2 * m2[i][k] + (1.0 - tc.beta2) * gk * gk;
        w[k] -= lr * ((m1[i][k] / c1) / (std::sqrt(m2[i][k] / c2) + tc.adam_eps) + decay * w[k]);
      }
      p.zero_grad();
    }
    result.trace.push_back({step, value, lr});
  }
  result.weights = std::move(model.weights());
  return result;
}

void write_loss_csv(std::ostream& out, std::span<const LossRecord> trace) {
  out << "step,loss,lr\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.step, r.loss, r.lr);
    out << buf;
  }
}

double heldout_mlm_loss(const Transformer& model, std::span<const std::vector<TokenId>> data,
                        std::uint64_t seed, const MaskingOptions& masking) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    Batch batch;
    for (std::size_t i = begin; i < std::min(data.size(), begin + kChunk); ++i) {
      const auto seq = crop(data[i], model.config().max_train_len);
      if (seq.size() < 4) continue;
      Rng rng(derive_seed(seed, {i}));
      add_mlm(batch, seq, model.vocab_size(), rng, masking, packed_rows(batch));
    }
    if (batch.targets.empty()) continue;
    total += batch_loss(model, batch, {}).item() * static_cast<double>(batch.targets.size());
    count += batch.targets.size();
  }
  if (count == 0) throw std::invalid_argument("heldout_mlm_loss: no maskable tokens");
  return total / static_cast<double>(count);
}

double heldout_causal_perplexity(const Transformer& model,
                                 std::span<const std::vector<TokenId>> data) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& raw : data) {
    Batch batch;
    if (!add_causal(batch, crop(raw, model.config().max_train_len), 0)) continue;
    total += batch_loss(model, batch, {}).item() * static_cast<double>(batch.targets.size());
    count += batch.targets.size();
  }
  if (count == 0) throw std::invalid_argument("heldout_causal_perplexity: no targets");
  return std::exp(total / static_cast<double>(count));
}

std::vector<std::vector<TokenId>> encode_corpus(std::span<const std::string> lines,
                                                const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(encode(line, vocab, true, true));
  return out;
}

}  // namespace mlmgen
