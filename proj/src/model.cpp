#include "mlmgen/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "mlmgen/errors.hpp"
#include "mlmgen/ops.hpp"
#include "mlmgen/parallel.hpp"

namespace mlmgen {

std::vector<std::vector<double>> MaskedLM::logits_batch(std::span<const Readout> readouts) const {
  std::vector<std::vector<double>> out(readouts.size());
  parallel_for(readouts.size(), [&](std::size_t i) {
    out[i] = logits_at(readouts[i].ids, readouts[i].position);
  });
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const char* key, const std::string& what) { throw ConfigError(key, what); };
  if (vocab_size < special::kCount) fail("vocab_size", "must cover the special tokens");
  if (heads == 0) fail("heads", "must be positive");
  if (d_model == 0 || d_model % heads != 0) fail("d_model", "must be a positive multiple of heads");
  if (d_ff == 0) fail("d_ff", "must be positive");
  if (position_mode == PositionMode::relative) {
    if (num_buckets < 4 || num_buckets % 2 != 0) fail("num_buckets", "must be even and >= 4");
    if (max_distance <= num_buckets / 4) fail("max_distance", "must exceed num_buckets / 4");
  } else if (max_positions == 0) {
    fail("max_positions", "must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout", "must be in [0, 1)");
  if (!(init_std > 0.0)) fail("init_std", "must be positive");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps", "must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"vocab_size", c.vocab_size},
      {"layers", c.layers},
      {"heads", c.heads},
      {"d_model", c.d_model},
      {"d_ff", c.d_ff},
      {"num_buckets", c.num_buckets},
      {"max_distance", c.max_distance},
      {"attention_mode", c.attention_mode == AttentionMode::causal ? "causal" : "bidirectional"},
      {"position_mode", c.position_mode == PositionMode::absolute ? "absolute" : "relative"},
      {"max_train_len", c.max_train_len},
      {"max_positions", c.max_positions},
      {"dropout", c.dropout},
      {"tie_embeddings", c.tie_embeddings},
      {"init_std", c.init_std},
      {"layer_norm_eps", c.layer_norm_eps},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"vocab_size",    "layers",        "heads",        "d_model",
                                           "d_ff",          "num_buckets",   "max_distance", "attention_mode",
                                           "position_mode", "max_train_len", "max_positions", "dropout",
                                           "tie_embeddings", "init_std",     "layer_norm_eps"};
  if (!j.is_object()) throw ConfigError("model", "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("model." + key, "unknown key");
  }
  ModelConfig d;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
  get("vocab_size", d.vocab_size);
  get("layers", d.layers);
  get("heads", d.heads);
  get("d_model", d.d_model);
  get("d_ff", d.d_ff);
  get("num_buckets", d.num_buckets);
  get("max_distance", d.max_distance);
  get("max_train_len", d.max_train_len);
  get("max_positions", d.max_positions);
  get("dropout", d.dropout);
  get("tie_embeddings", d.tie_embeddings);
  get("init_std", d.init_std);
  get("layer_norm_eps", d.layer_norm_eps);
  if (j.contains("attention_mode")) {
    const auto mode = j.at("attention_mode").get<std::string>();
    if (mode == "causal") d.attention_mode = AttentionMode::causal;
    else if (mode == "bidirectional") d.attention_mode = AttentionMode::bidirectional;
    else throw ConfigError("attention_mode", "expected bidirectional or causal, got " + mode);
  }
  if (j.contains("position_mode")) {
    const auto mode = j.at("position_mode").get<std::string>();
    if (mode == "absolute") d.position_mode = PositionMode::absolute;
    else if (mode == "relative") d.position_mode = PositionMode::relative;
    else throw ConfigError("position_mode", "expected relative or absolute, got " + mode);
  }
  c = d;
}

std::size_t rel_bucket(std::ptrdiff_t offset, std::size_t num_buckets, std::size_t max_distance) {
  if (num_buckets < 4 || num_buckets % 2 != 0 || max_distance <= num_buckets / 4) {
    throw std::invalid_argument("rel_bucket: need even num_buckets >= 4 and max_distance > num_buckets / 4");
  }
  const std::size_t half = num_buckets / 2;
  const std::size_t exact = half / 2;
  const std::size_t base = offset > 0 ? half : 0;
  const auto n = static_cast<std::size_t>(offset < 0 ? -offset : offset);
  if (n < exact) return base + n;
  const double ratio = std::log(static_cast<double>(n) / static_cast<double>(exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(exact));
  const double scaled = ratio * static_cast<double>(half - exact);
  const std::size_t step = scaled >= static_cast<double>(half - exact)
                               ? half - exact
                               : static_cast<std::size_t>(scaled);
  return base + std::min(exact + step, half - 1);
}

std::vector<NamedTensor> ModelWeights::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"token_embedding", token_embedding});
  if (position_embedding.defined()) out.push_back({"position_embedding", position_embedding});
  if (relative_bias.defined()) out.push_back({"relative_bias", relative_bias});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "ln1_gain", w.ln1_gain});
    out.push_back({p + "ln1_bias", w.ln1_bias});
    out.push_back({p + "qkv_weight", w.qkv_weight});
    out.push_back({p + "qkv_bias", w.qkv_bias});
    out.push_back({p + "out_weight", w.out_weight});
    out.push_back({p + "out_bias", w.out_bias});
    out.push_back({p + "ln2_gain", w.ln2_gain});
    out.push_back({p + "ln2_bias", w.ln2_bias});
    out.push_back({p + "ff1_weight", w.ff1_weight});
    out.push_back({p + "ff1_bias", w.ff1_bias});
    out.push_back({p + "ff2_weight", w.ff2_weight});
    out.push_back({p + "ff2_bias", w.ff2_bias});
  }
  out.push_back({"final_gain", final_gain});
  out.push_back({"final_bias", final_bias});
  if (output_weight.defined()) out.push_back({"output_weight", output_weight});
  out.push_back({"output_bias", output_bias});
  return out;
}

ModelWeights ModelWeights::clone() const {
  auto copy = [](const Tensor& t) {
    if (!t.defined()) return Tensor();
    return Tensor::from_data(t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                             t.requires_grad());
  };
  ModelWeights w;
  w.token_embedding = copy(token_embedding);
  w.position_embedding = copy(position_embedding);
  w.relative_bias = copy(relative_bias);
  for (const auto& l : layers) {
    w.layers.push_back({copy(l.ln1_gain), copy(l.ln1_bias), copy(l.qkv_weight), copy(l.qkv_bias),
                        copy(l.out_weight), copy(l.out_bias), copy(l.ln2_gain), copy(l.ln2_bias),
                        copy(l.ff1_weight), copy(l.ff1_bias), copy(l.ff2_weight),
                        copy(l.ff2_bias)});
  }
  w.final_gain = copy(final_gain);
  w.final_bias = copy(final_bias);
  w.output_weight = copy(output_weight);
  w.output_bias = copy(output_bias);
  return w;
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = config.d_model;
  auto gaussian = [&](Shape shape, double std) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = normal(rng) * std;
    return Tensor::from_data(std::move(shape), std::move(v), true);
  };
  auto constant = [](Shape shape, double value) {
    return Tensor::from_data(shape, std::vector<double>(shape_numel(shape), value), true);
  };
  const double s = config.init_std;
  const double residual_s = s / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, config.layers)));

  ModelWeights w;
  w.token_embedding = gaussian({config.vocab_size, d}, s);
  if (config.position_mode == PositionMode::absolute) {
    w.position_embedding = gaussian({config.max_positions, d}, s);
  } else {
    w.relative_bias = constant({config.heads, config.num_buckets}, 0.0);
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerWeights lw;
    lw.ln1_gain = constant({d}, 1.0);
    lw.ln1_bias = constant({d}, 0.0);
    lw.qkv_weight = gaussian({d, 3 * d}, s);
    lw.qkv_bias = constant({3 * d}, 0.0);
    lw.out_weight = gaussian({d, d}, residual_s);
    lw.out_bias = constant({d}, 0.0);
    lw.ln2_gain = constant({d}, 1.0);
    lw.ln2_bias = constant({d}, 0.0);
    lw.ff1_weight = gaussian({d, config.d_ff}, s);
    lw.ff1_bias = constant({config.d_ff}, 0.0);
    lw.ff2_weight = gaussian({config.d_ff, d}, residual_s);
    lw.ff2_bias = constant({d}, 0.0);
    w.layers.push_back(std::move(lw));
  }
  w.final_gain = constant({d}, 1.0);
  w.final_bias = constant({d}, 0.0);
  if (!config.tie_embeddings) w.output_weight = gaussian({d, config.vocab_size}, s);
  w.output_bias = constant({config.vocab_size}, 0.0);
  return w;
}

Transformer::Transformer(ModelConfig config, ModelWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  if (weights_.layers.size() != config_.layers) {
    throw DimensionError("weights have " + std::to_string(weights_.layers.size()) +
                         " layers, config expects " + std::to_string(config_.layers));
  }
}

Transformer::Transformer(ModelConfig config, std::uint64_t seed)
    : Transformer(config, init_weights(config, seed)) {}

std::size_t Transformer::max_input_length() const {
  return config_.position_mode == PositionMode::absolute ? config_.max_positions
                                                         : MaskedLM::max_input_length();
}

Tensor Transformer::hidden(std::span<const std::vector<TokenId>> sequences,
                           const ForwardOptions& options) const {
  std::vector<TokenId> ids;
  std::vector<std::size_t> lengths;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw std::invalid_argument("forward: empty input sequence");
    ids.insert(ids.end(), seq.begin(), seq.end());
    lengths.push_back(seq.size());
  }
  if (ids.empty()) throw std::invalid_argument("forward: empty input");
  const bool drop = options.training && config_.dropout > 0.0;
  if (drop && options.dropout_rng == nullptr) throw UsageError("dropout needs an rng");

  Tensor x = embedding(weights_.token_embedding, ids);
  if (config_.position_mode == PositionMode::absolute) {
    std::vector<TokenId> positions;
    positions.reserve(ids.size());
    for (auto len : lengths) {
      if (len > config_.max_positions) {
        throw LengthError("input of " + std::to_string(len) + " tokens exceeds " +
                          std::to_string(config_.max_positions) + " absolute positions");
      }
      for (std::size_t p = 0; p < len; ++p) positions.push_back(static_cast<TokenId>(p));
    }
    x = add(x, embedding(weights_.position_embedding, positions));
  }

  const std::size_t buckets = config_.num_buckets, max_distance = config_.max_distance;
  const auto bucket = [buckets, max_distance](std::ptrdiff_t offset) {
    return rel_bucket(offset, buckets, max_distance);
  };
  const bool causal = config_.attention_mode == AttentionMode::causal;
  const double eps = config_.layer_norm_eps;

  for (const auto& w : weights_.layers) {
    Tensor h = layer_norm(x, w.ln1_gain, w.ln1_bias, eps);
    Tensor qkv = add_bias(matmul(h, w.qkv_weight), w.qkv_bias);
    Tensor a = attention(qkv, lengths, config_.heads, causal, weights_.relative_bias, bucket);
    Tensor o = add_bias(matmul(a, w.out_weight), w.out_bias);
    if (drop) o = dropout(o, config_.dropout, *options.dropout_rng);
    x = add(x, o);

    Tensor h2 = layer_norm(x, w.ln2_gain, w.ln2_bias, eps);
    Tensor f = gelu(add_bias(matmul(h2, w.ff1_weight), w.ff1_bias));
    f = add_bias(matmul(f, w.ff2_weight), w.ff2_bias);
    if (drop) f = dropout(f, config_.dropout, *options.dropout_rng);
    x = add(x, f);
  }
  return layer_norm(x, weights_.final_gain, weights_.final_bias, eps);
}

Tensor Transformer::head(const Tensor& hidden_rows) const {
  Tensor logits = config_.tie_embeddings ? matmul_bt(hidden_rows, weights_.token_embedding)
                                         : matmul(hidden_rows, weights_.output_weight);
  return add_bias(logits, weights_.output_bias);
}

std::vector<double> Transformer::logits_at(std::span<const TokenId> ids, std::size_t position) const {
  if (position >= ids.size()) throw std::out_of_range("readout position beyond input");
  NoGradGuard guard;
  const std::vector<std::vector<TokenId>> seqs{std::vector<TokenId>(ids.begin(), ids.end())};
  Tensor h = hidden(seqs);
  const std::size_t row[] = {position};
  Tensor logits = head(gather_rows(h, row));
  return {logits.data().begin(), logits.data().end()};
}

std::vector<std::vector<double>> Transformer::logits_batch(std::span<const Readout> readouts) const {
  // Packed rows never interact across sequences, so a chunk's results equal
  // separate passes. Chunks are evaluated in parallel.
  constexpr std::size_t kMaxRows = 2048;
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t begin = 0; begin < readouts.size();) {
    std::size_t end = begin, rows = 0;
    while (end < readouts.size() && (end == begin || rows + readouts[end].ids.size() <= kMaxRows)) {
      rows += readouts[end].ids.size();
      ++end;
    }
    chunks.emplace_back(begin, end);
    begin = end;
  }

  std::vector<std::vector<double>> out(readouts.size());
  const std::size_t vocab = config_.vocab_size;
  parallel_for(chunks.size(), [&](std::size_t c) {
    NoGradGuard guard;
    const auto [begin, end] = chunks[c];
    std::vector<std::vector<TokenId>> seqs;
    std::vector<std::size_t> rows;
    std::size_t offset = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = readouts[i];
      if (r.position >= r.ids.size()) throw std::out_of_range("readout position beyond input");
      seqs.push_back(r.ids);
      rows.push_back(offset + r.position);
      offset += r.ids.size();
    }
    Tensor logits = head(gather_rows(hidden(seqs), rows));
    const auto data = logits.data();
    for (std::size_t i = begin; i < end; ++i) {
      const auto base = static_cast<std::ptrdiff_t>((i - begin) * vocab);
      out[i].assign(data.begin() + base, data.begin() + base + static_cast<std::ptrdiff_t>(vocab));
    }
  });
  return out;
}

Tensor forward(std::span<const TokenId> ids, const ModelConfig& config, const ModelWeights& weights) {
  if (ids.empty()) throw std::invalid_argument("forward: empty input");
  Transformer model(config, weights);
  NoGradGuard guard;
  const std::vector<std::vector<TokenId>> seqs{std::vector<TokenId>(ids.begin(), ids.end())};
  return model.head(model.hidden(seqs));
}

}  // namespace mlmgen
