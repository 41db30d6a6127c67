#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmgen/model.hpp"
#include "mlmgen/rng.hpp"
#include "mlmgen/tokenizer.hpp"

namespace mlmgen {

inline constexpr TokenId kIgnoreTarget = -100;

enum class Replacement { mask, random, keep };

struct MaskingPlan {
  std::vector<std::size_t> positions;       // sorted
  std::vector<std::size_t> span_lengths;    // one per span, in sampling order
  std::vector<Replacement> replacement;     // parallel to positions
};

struct MaskingOptions {
  double rate = 0.15;
  std::size_t max_span = 3;
  double mask_prob = 0.8;    // remaining split evenly between random and keep
  double random_prob = 0.1;

  friend bool operator==(const MaskingOptions&, const MaskingOptions&) = default;
};

struct MaskedSequence {
  std::vector<TokenId> corrupted;
  std::vector<TokenId> targets;  // original id at masked positions, kIgnoreTarget elsewhere
  MaskingPlan plan;
};

/// Span corruption over non-special positions. The budget is
/// round(rate * eligible); span lengths are uniform over 1..max_span, the last
/// span clipped to the remaining budget; spans never touch special tokens.
/// Random replacements draw from the regular (non-special) ids below vocab_size.
MaskedSequence sample_span_mask(std::span<const TokenId> ids, std::size_t vocab_size, Rng& rng,
                                const MaskingOptions& options = {});

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  std::uint64_t seed = 1;
  /// Pack consecutive lines, SEP-separated, into windows of max_train_len
  /// tokens cut wherever the window fills. Otherwise one line per sequence.
  bool pack = false;
  MaskingOptions masking;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<LossRecord> trace;
};

/// Thrown when the loss stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains from init_weights(config, train.seed). Bidirectional models learn
/// span-masked MLM; causal models learn next-token prediction on every
/// position. Sequences longer than config.max_train_len are cropped.
TrainResult train(const ModelConfig& config, std::span<const std::vector<TokenId>> corpus,
                  const TrainConfig& train);

/// Learning rate at a step: linear warmup, then constant.
double learning_rate(const TrainConfig& train, std::size_t step);

void write_loss_csv(std::ostream& out, std::span<const LossRecord> trace);

/// Mean MLM loss with masks drawn from `seed` (fixed across calls).
double heldout_mlm_loss(const Transformer& model, std::span<const std::vector<TokenId>> data,
                        std::uint64_t seed, const MaskingOptions& masking = {});

/// Perplexity of next-token predictions (causal models).
double heldout_causal_perplexity(const Transformer& model,
                                 std::span<const std::vector<TokenId>> data);

/// Encodes corpus lines with CLS/SEP.
std::vector<std::vector<TokenId>> encode_corpus(std::span<const std::string> lines,
                                                const Vocabulary& vocab);

}  // namespace mlmgen
