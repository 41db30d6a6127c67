#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mlmgen/tokenizer.hpp"

namespace mlmgen {

/// One input sequence and the position whose vocabulary logits are wanted.
struct Readout {
  std::vector<TokenId> ids;
  std::size_t position = 0;
};

/// Anything that maps a token sequence to per-position vocabulary logits.
/// Implementations must be safe for concurrent calls.
class MaskedLM {
 public:
  virtual ~MaskedLM() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_input_length() const { return std::numeric_limits<std::size_t>::max(); }

  /// Logits at `position` of `ids`.
  virtual std::vector<double> logits_at(std::span<const TokenId> ids, std::size_t position) const = 0;

  /// One logit row per readout. Results must equal logits_at() called on
  /// each readout separately; the default runs them in parallel.
  virtual std::vector<std::vector<double>> logits_batch(std::span<const Readout> readouts) const;
};

}  // namespace mlmgen
