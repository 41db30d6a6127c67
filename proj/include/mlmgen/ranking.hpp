#pragma once

// Candidate scoring with a masked LM. Context tokens are never masked; the
// scored input is context + completion (+ pad masks) + SEP. Natural log.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmgen/generation.hpp"
#include "mlmgen/lm.hpp"

namespace mlmgen {

enum class ScoringKind { exact_unidirectional, pll, pll_word_l2r, pll_whole_word };

struct ScoringMethod {
  ScoringKind kind = ScoringKind::pll;
  /// pll only: position i is read with i..i+n_extra_masks masked (clipped
  /// to the completion).
  std::size_t n_extra_masks = 2;
  bool normalize_by_unconditional = false;
  std::optional<std::vector<TokenId>> answer_context;
  /// PLL kinds: MASKs inserted between the completion and SEP.
  std::size_t pad_masks = 0;
  bool append_sep = true;
  /// exact_unidirectional: the mask-append construction used for generation.
  GenerationConfig generation;

  void validate() const;
  /// "exact_unidirectional", "pll_m<m>", "pll_word_l2r" or "pll_whole_word".
  std::string name() const;
};

/// Parses a method name as produced by ScoringMethod::name().
ScoringMethod scoring_method_from_string(const std::string& name);

void to_json(nlohmann::json& j, const ScoringMethod& m);
void from_json(const nlohmann::json& j, ScoringMethod& m);

struct ScoredCandidate {
  std::vector<TokenId> tokens;
  double score = 0.0;             // sum of per_token, summed left to right
  std::vector<double> per_token;  // log-probability of each completion token
};

/// sum_i log P(w_i | c + w_<i) via the generation module's next-token distribution.
ScoredCandidate score_exact_unidirectional(const MaskedLM& model, std::span<const TokenId> context,
                                           std::span<const TokenId> completion,
                                           const GenerationConfig& cfg = {});

/// PLL where position i is scored with positions i..min(i+m, k-1) masked.
ScoredCandidate score_pll(const MaskedLM& model, std::span<const TokenId> context,
                          std::span<const TokenId> completion, std::size_t n_extra_masks,
                          std::size_t pad_masks = 0, bool append_sep = true);

/// `word_lengths` partitions the completion (positive lengths summing to its
/// size); malformed partitions throw std::invalid_argument.
/// word-l2r: position i is read with i and the rest of its word masked.
ScoredCandidate score_pll_word_l2r(const MaskedLM& model, std::span<const TokenId> context,
                                   std::span<const TokenId> completion,
                                   std::span<const std::size_t> word_lengths,
                                   std::size_t pad_masks = 0, bool append_sep = true);
/// whole-word: position i is read with its entire word masked.
ScoredCandidate score_pll_whole_word(const MaskedLM& model, std::span<const TokenId> context,
                                     std::span<const TokenId> completion,
                                     std::span<const std::size_t> word_lengths,
                                     std::size_t pad_masks = 0, bool append_sep = true);

struct Candidate {
  std::vector<TokenId> tokens;
  /// Tokens per word; empty means one word per token.
  std::vector<std::size_t> word_lengths;
};

/// Score of one candidate under a method (no normalization).
ScoredCandidate score_candidate(const MaskedLM& model, std::span<const TokenId> context,
                                const Candidate& candidate, const ScoringMethod& method);

struct RankResult {
  std::size_t winner = 0;
  std::vector<ScoredCandidate> scores;   // conditional scores
  std::vector<ScoredCandidate> unconditional;  // filled when normalizing
  std::vector<double> decision;          // what the argmax ran over
};

/// Argmax of score(context, c) [- score(answer_context, c)]; ties to the
/// lowest index. Requires at least two candidates.
RankResult rank(const MaskedLM& model, std::span<const TokenId> context,
                std::span<const Candidate> candidates, const ScoringMethod& method);

/// One JSON object per line: {index, tokens, method, score, per_token}.
void write_score_table(std::ostream& out, std::span<const ScoredCandidate> scores,
                       const std::string& method);

}  // namespace mlmgen
