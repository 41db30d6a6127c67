#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mlmgen/generation.hpp"
#include "mlmgen/harness.hpp"

namespace mlmgen {

struct AblationRow {
  std::string setting;
  std::string metric;
  double value = 0.0;
};

/// One row per pad-mask count ("pad_masks=<n>"), then Gibbs rows with mask
/// and random initialization. Gibbs samples `gibbs_length` tokens (0: the
/// task's max_new_tokens) and its output is cut after the first stop token.
std::vector<AblationRow> ablate_generation(const MaskedLM& model, const Vocabulary& vocab,
                                           const TaskSpec& task, std::span<const std::size_t> pad_masks,
                                           const GibbsConfig& gibbs, std::uint64_t seed,
                                           std::size_t gibbs_length = 0);

/// One row per scoring method name (see scoring_method_from_string).
std::vector<AblationRow> ablate_ranking(const MaskedLM& model, const Vocabulary& vocab,
                                        const TaskSpec& task, std::span<const std::string> methods,
                                        std::uint64_t seed);

/// The seven methods compared by default.
std::vector<std::string> default_ranking_methods();

/// CSV: setting,metric,value
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace mlmgen
