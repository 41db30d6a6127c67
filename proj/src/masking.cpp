#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mlmgen/trainer.hpp"

namespace mlmgen {

MaskedSequence sample_span_mask(std::span<const TokenId> ids, std::size_t vocab_size, Rng& rng,
                                const MaskingOptions& options) {
  if (ids.size() < 4) throw std::invalid_argument("sample_span_mask: sequence shorter than 4 tokens");
  if (options.max_span == 0) throw std::invalid_argument("sample_span_mask: max_span must be positive");
  if (vocab_size <= static_cast<std::size_t>(special::kFirstRegular) && options.random_prob > 0.0) {
    throw std::invalid_argument("sample_span_mask: vocabulary has no regular tokens");
  }

  const std::size_t n = ids.size();
  std::vector<bool> eligible(n);
  std::size_t eligible_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    eligible[i] = !Vocabulary::is_special(ids[i]);
    eligible_count += eligible[i];
  }
  if (eligible_count == 0) throw std::invalid_argument("sample_span_mask: sequence has only special tokens");

  MaskedSequence out;
  out.corrupted.assign(ids.begin(), ids.end());
  out.targets.assign(n, kIgnoreTarget);

  std::size_t budget = static_cast<std::size_t>(std::lround(options.rate * static_cast<double>(eligible_count)));
  std::vector<bool> masked(n, false);
  std::vector<std::size_t> starts;
  while (budget > 0) {
    std::size_t len = 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(options.max_span));
    len = std::min(len, budget);
    // Shrink the span if no free run is long enough.
    for (;; --len) {
      starts.clear();
      for (std::size_t s = 0; s + len <= n; ++s) {
        bool ok = true;
        for (std::size_t t = s; t < s + len && ok; ++t) ok = eligible[t] && !masked[t];
        if (ok) starts.push_back(s);
      }
      if (!starts.empty() || len == 1) break;
    }
    if (starts.empty()) break;  // every eligible position is already masked
    const std::size_t start = starts[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(starts.size()))];
    for (std::size_t t = start; t < start + len; ++t) masked[t] = true;
    out.plan.span_lengths.push_back(len);
    budget -= len;
  }

  const auto regular = static_cast<double>(vocab_size - static_cast<std::size_t>(special::kFirstRegular));
  for (std::size_t i = 0; i < n; ++i) {
    if (!masked[i]) continue;
    out.plan.positions.push_back(i);
    out.targets[i] = ids[i];
    const double u = uniform01(rng);
    if (u < options.mask_prob) {
      out.corrupted[i] = special::kMask;
      out.plan.replacement.push_back(Replacement::mask);
    } else if (u < options.mask_prob + options.random_prob) {
      out.corrupted[i] = special::kFirstRegular + static_cast<TokenId>(uniform01(rng) * regular);
      out.plan.replacement.push_back(Replacement::random);
    } else {
      out.plan.replacement.push_back(Replacement::keep);
    }
  }
  return out;
}

}  // namespace mlmgen
