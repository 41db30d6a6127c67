#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmgen/lm.hpp"
#include "mlmgen/rng.hpp"
#include "mlmgen/tensor.hpp"

namespace mlmgen {

enum class AttentionMode { bidirectional, causal };
enum class PositionMode { relative, absolute };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  std::size_t num_buckets = 32;
  std::size_t max_distance = 128;
  AttentionMode attention_mode = AttentionMode::bidirectional;
  /// relative: per-head bucketed bias; absolute: learned position table.
  PositionMode position_mode = PositionMode::relative;
  std::size_t max_train_len = 64;
  /// Rows in the absolute position table (absolute mode only). Rows at or
  /// beyond max_train_len are never trained.
  std::size_t max_positions = 512;
  double dropout = 0.0;
  bool tie_embeddings = true;
  double init_std = 0.02;
  double layer_norm_eps = 1e-5;

  void validate() const;
  std::size_t head_dim() const { return d_model / heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Signed offset (key - query) to a bucket in [0, num_buckets).
///
/// With half = num_buckets / 2 and exact = half / 2:
///   offset <= 0 uses buckets [0, half), offset > 0 uses [half, num_buckets);
///   n = |offset|; n < exact maps to n;
///   otherwise exact + floor(ln(n / exact) / ln(max_distance / exact) * (half - exact)),
///   capped at half - 1.
/// Every |offset| >= max_distance lands in the last bucket of its sign.
std::size_t rel_bucket(std::ptrdiff_t offset, std::size_t num_buckets, std::size_t max_distance);

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;  // [d x 3d], [3d]
  Tensor out_weight, out_bias;  // [d x d], [d]
  Tensor ln2_gain, ln2_bias;
  Tensor ff1_weight, ff1_bias;  // [d x d_ff], [d_ff]
  Tensor ff2_weight, ff2_bias;  // [d_ff x d], [d]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelWeights {
  Tensor token_embedding;      // [V x d]
  Tensor position_embedding;   // [max_positions x d], absolute mode only
  Tensor relative_bias;        // [heads x num_buckets], relative mode only
  std::vector<LayerWeights> layers;
  Tensor final_gain, final_bias;
  Tensor output_weight;        // [d x V], untied only
  Tensor output_bias;          // [V]

  /// Every parameter, in checkpoint order.
  std::vector<NamedTensor> parameters() const;
  /// Independent copy (fresh leaves).
  ModelWeights clone() const;
};

/// Scaled Gaussian initialization: matrices and embeddings ~ N(0, init_std),
/// residual output projections scaled by 1/sqrt(2 * layers), gains 1, biases 0.
ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;  // required when training with dropout > 0
};

/// Bidirectional (or causal) transformer encoder with an MLM head.
class Transformer : public MaskedLM {
 public:
  Transformer(ModelConfig config, ModelWeights weights);
  Transformer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }
  ModelWeights& weights() { return weights_; }

  /// Final hidden states [sum(len) x d] for sequences packed row-wise.
  Tensor hidden(std::span<const std::vector<TokenId>> sequences,
                const ForwardOptions& options = {}) const;
  /// MLM head applied to hidden rows: [n x d] -> [n x V].
  Tensor head(const Tensor& hidden_rows) const;

  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_input_length() const override;
  std::vector<double> logits_at(std::span<const TokenId> ids, std::size_t position) const override;
  std::vector<std::vector<double>> logits_batch(std::span<const Readout> readouts) const override;

 private:
  ModelConfig config_;
  ModelWeights weights_;
};

/// Full logits [len x V] for one sequence (eval mode).
Tensor forward(std::span<const TokenId> ids, const ModelConfig& config, const ModelWeights& weights);

/// Checkpoint: "MLMG", u32 version, u32-length-prefixed JSON config, then
/// each parameter as u64 element count followed by little-endian f32 values.
void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelWeights& weights);
std::vector<std::uint8_t> checkpoint_bytes(const ModelConfig& config, const ModelWeights& weights);
Transformer load_checkpoint(const std::string& path);
Transformer checkpoint_from_bytes(std::span<const std::uint8_t> bytes);

}  // namespace mlmgen
