#include "mlmgen/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace mlmgen {

std::vector<AblationRow> ablate_generation(const MaskedLM& model, const Vocabulary& vocab,
                                           const TaskSpec& task, std::span<const std::size_t> pad_masks,
                                           const GibbsConfig& gibbs, std::uint64_t seed,
                                           std::size_t gibbs_length) {
  std::vector<AblationRow> rows;
  const std::string metric = to_string(task.metric);
  for (std::size_t n : pad_masks) {
    TaskSpec t = task;
    t.generation.n_pad_masks = n;
    rows.push_back({"pad_masks=" + std::to_string(n), metric, run_generation_task(model, vocab, t, seed).metric});
  }
  for (GibbsInit init : {GibbsInit::mask, GibbsInit::random}) {
    GibbsConfig g = gibbs;
    g.init = init;
    const std::size_t length = gibbs_length == 0 ? task.generation.max_new_tokens : gibbs_length;
    const auto fn = [&](std::span<const TokenId> prompt, const TaskExample&, const GenerationConfig& cfg,
                        Rng& rng) {
      auto tokens = gibbs_generate(model, prompt, length, g, rng);
      // Fixed-length output, cut after the first stop token.
      const auto stop = std::find_first_of(tokens.begin(), tokens.end(), cfg.stop_tokens.begin(),
                                           cfg.stop_tokens.end());
      if (stop != tokens.end()) tokens.erase(stop + 1, tokens.end());
      return Generated{std::move(tokens), 0.0};
    };
    rows.push_back({init == GibbsInit::mask ? "gibbs_mask_init" : "gibbs_random_init", metric,
                    run_generation_task(task, vocab, seed, fn).metric});
  }
  return rows;
}

std::vector<AblationRow> ablate_ranking(const MaskedLM& model, const Vocabulary& vocab,
                                        const TaskSpec& task, std::span<const std::string> methods,
                                        std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (const auto& name : methods) {
    TaskSpec t = task;
    const ScoringMethod parsed = scoring_method_from_string(name);
    t.scoring.kind = parsed.kind;
    t.scoring.n_extra_masks = parsed.n_extra_masks;
    rows.push_back({name, to_string(task.metric), run_ranking_task(model, vocab, t, seed).metric});
  }
  return rows;
}

std::vector<std::string> default_ranking_methods() {
  return {"pll_m0", "pll_m1", "pll_m2", "pll_m3", "pll_word_l2r", "pll_whole_word", "exact_unidirectional"};
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "setting,metric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out << csv_field(r.setting) << ',' << r.metric << ',' << buf << '\n';
  }
}

}  // namespace mlmgen
