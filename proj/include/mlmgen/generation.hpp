#pragma once

// Next-token prediction from a masked LM: the prefix is followed by a readout
// MASK, n_pad_masks further MASKs and SEP; the readout mask's logits give the
// distribution. Pad masks are never read.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmgen/lm.hpp"
#include "mlmgen/rng.hpp"
#include "mlmgen/tokenizer.hpp"

namespace mlmgen {

enum class Strategy { greedy, beam, sample };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy s);

/// Per-step restriction of the next token, given the tokens generated so far.
struct TokenConstraint {
  std::function<std::vector<TokenId>(std::span<const TokenId>)> allowed;
  /// True once the generated tokens satisfy the constraint; generation stops.
  std::function<bool(std::span<const TokenId>)> complete;
};

/// Exactly `count` digit tokens.
TokenConstraint digit_constraint(std::size_t count = 6);

struct GenerationConfig {
  std::size_t n_pad_masks = 2;
  bool append_sep = true;
  std::size_t max_new_tokens = 32;
  Strategy strategy = Strategy::beam;
  std::size_t beam_width = 4;
  std::size_t top_k = 64;   // 0 disables
  double top_p = 0.9;
  double temperature = 1.0;
  /// Finished beams compare by score / length^length_penalty; 0 = raw sums.
  double length_penalty = 0.0;
  std::vector<TokenId> stop_tokens;
  std::optional<TokenConstraint> constraint;
  /// Hard cap on the assembled input length (also bounded by the model).
  std::size_t max_input_length = 4096;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
};

/// JSON round trip for everything except `constraint`.
void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

/// prefix + MASK + MASK * n_pad_masks (+ SEP); the readout is at prefix.size().
std::vector<TokenId> mask_append_input(std::span<const TokenId> prefix, const GenerationConfig& cfg);

/// Natural-log next-token distribution (log-softmax of the readout logits).
std::vector<double> next_token_log_dist(const MaskedLM& model, std::span<const TokenId> prefix,
                                        const GenerationConfig& cfg);
/// Same for several prefixes at once; equal to separate calls.
std::vector<std::vector<double>> next_token_log_dists(const MaskedLM& model,
                                                      std::span<const std::vector<TokenId>> prefixes,
                                                      const GenerationConfig& cfg);
/// Probabilities; sums to 1.
std::vector<double> next_token_dist(const MaskedLM& model, std::span<const TokenId> prefix,
                                    const GenerationConfig& cfg);

/// Restricts a log distribution to `allowed` and renormalizes.
/// Throws ConstraintError if no allowed token has positive probability.
void apply_constraint(std::vector<double>& log_probs, std::span<const TokenId> allowed);

struct Hypothesis {
  std::vector<TokenId> tokens;  // continuation only
  double score = 0.0;           // sum of chosen-token log-probabilities
};

struct BeamState {
  std::vector<Hypothesis> hypotheses;  // score descending, at most beam_width
  std::vector<Hypothesis> finished;
};

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> finished;  // every completed hypothesis, best first
};

/// Argmax decoding, ties to the lowest id. Stop tokens are kept in the output.
std::vector<TokenId> greedy(const MaskedLM& model, std::span<const TokenId> prompt,
                            const GenerationConfig& cfg);

/// Length-unnormalized beam search (unless length_penalty != 0). Candidates
/// rank by score, ties lexicographically by tokens. Stops once the best
/// finished score is no lower than every active one.
BeamResult beam_search(const MaskedLM& model, std::span<const TokenId> prompt,
                       const GenerationConfig& cfg);

/// Temperature, then the intersection of the top-k and top-p sets, renormalized.
std::vector<double> filter_distribution(std::span<const double> logits, std::size_t top_k,
                                        double top_p, double temperature);

/// Draws an index from a probability vector.
std::size_t draw(std::span<const double> probs, Rng& rng);

std::vector<TokenId> sample(const MaskedLM& model, std::span<const TokenId> prompt,
                            const GenerationConfig& cfg, Rng& rng);

/// Dispatches on cfg.strategy; `rng` is only read by sampling.
std::vector<TokenId> generate(const MaskedLM& model, std::span<const TokenId> prompt,
                              const GenerationConfig& cfg, Rng& rng);

enum class GibbsInit { mask, random };

struct GibbsConfig {
  std::size_t iters = 500;
  std::size_t burn_in = 250;
  std::size_t top_k = 100;
  double temperature = 1.0;
  GibbsInit init = GibbsInit::mask;
  bool append_sep = true;
};

/// Gibbs sampling of a fixed-length continuation: each iteration masks one
/// uniformly chosen continuation position and resamples it from the model.
/// Burn-in iterations sample from the full distribution, later ones from the
/// top-k. Special tokens are never proposed.
std::vector<TokenId> gibbs_generate(const MaskedLM& model, std::span<const TokenId> prompt,
                                    std::size_t length, const GibbsConfig& cfg, Rng& rng);

}  // namespace mlmgen
