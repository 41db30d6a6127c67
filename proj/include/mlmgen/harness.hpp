#pragma once

// Few-shot task execution. Prompts are rendered text; the tokenizer's newline
// convention is the only escaping applied.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlmgen/generation.hpp"
#include "mlmgen/lm.hpp"
#include "mlmgen/prompt.hpp"
#include "mlmgen/ranking.hpp"
#include "mlmgen/tokenizer.hpp"

namespace mlmgen {

enum class TaskKind { ranking, generation };
enum class Metric { accuracy, macro_f1, token_f1, exact_match, bleu };

Metric metric_from_string(const std::string& name);
std::string to_string(Metric m);
std::string to_string(TaskKind k);

struct TaskExample {
  PromptVars vars;
  std::string gold;
  std::vector<std::string> candidates;  // ranking only; must contain gold

  friend bool operator==(const TaskExample&, const TaskExample&) = default;
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::ranking;
  /// The candidate slot must be the template's final placeholder, followed
  /// by nothing but whitespace: the prompt is everything before it.
  PromptTemplate prompt;
  std::vector<TaskExample> examples;
  std::vector<TaskExample> train_pool;
  Metric metric = Metric::accuracy;
  std::size_t n_shots = 0;
  ScoringMethod scoring;
  /// Rendered with the eval example's variables to form the answer context
  /// when scoring.normalize_by_unconditional is set.
  std::string answer_context;
  GenerationConfig generation;
  /// Tokens (as text) that end a generation; kept in the output.
  std::vector<std::string> stop;
  /// Cut predictions at the newline separator token.
  bool stop_at_newline = false;
  bool add_cls = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Task file: {name, kind, template, candidate_slot, shot_separator, examples[],
/// train_pool[], metric, n_shots, scoring, answer_context, generation, stop,
/// stop_at_newline, add_cls}. Unknown keys are errors.
TaskSpec task_from_json(const nlohmann::json& j);
nlohmann::json task_to_json(const TaskSpec& task);
TaskSpec load_task(const std::string& path);

/// The eval example's prompt with `n_shots` demonstrations drawn without
/// replacement from the pool, never equal to the eval example itself.
/// Demonstrations have their gold answer filled; the eval example ends
/// where its answer would start.
std::string assemble_fewshot(const TaskSpec& task, const TaskExample& eval_example,
                             std::size_t n_shots, Rng& rng);

struct ExampleRecord {
  std::size_t example_id = 0;
  std::string prediction;
  std::string gold;
  bool correct = false;
  double score = 0.0;
};

struct TaskResult {
  double metric = 0.0;
  std::vector<ExampleRecord> records;
};

/// Chooses a candidate for an encoded prompt.
using RankFn = std::function<RankResult(std::span<const TokenId> context,
                                        std::span<const Candidate> candidates,
                                        std::span<const TokenId> answer_context, Rng& rng)>;

struct Generated {
  std::vector<TokenId> tokens;
  double score = 0.0;
};
using GenerateFn = std::function<Generated(std::span<const TokenId> prompt, const TaskExample& example,
                                           const GenerationConfig& cfg, Rng& rng)>;

/// Per-example rng streams derive from (seed, example index), so results do
/// not depend on evaluation order.
TaskResult run_ranking_task(const TaskSpec& task, const Vocabulary& vocab, std::uint64_t seed,
                            const RankFn& rank_fn);
TaskResult run_ranking_task(const MaskedLM& model, const Vocabulary& vocab, const TaskSpec& task,
                            std::uint64_t seed);

TaskResult run_generation_task(const TaskSpec& task, const Vocabulary& vocab, std::uint64_t seed,
                               const GenerateFn& generate_fn);
TaskResult run_generation_task(const MaskedLM& model, const Vocabulary& vocab, const TaskSpec& task,
                               std::uint64_t seed);

/// Dispatches on task.kind.
TaskResult run_task(const MaskedLM& model, const Vocabulary& vocab, const TaskSpec& task,
                    std::uint64_t seed);

/// CSV: example_id,prediction,gold,correct,score
void write_results_csv(std::ostream& out, std::span<const ExampleRecord> records);

std::string csv_field(const std::string& s);

// ---------------------------------------------------------------------------
// Needle in a haystack.

struct NeedleConfig {
  std::vector<std::size_t> haystack_lengths{32, 64, 128, 192};
  std::vector<double> depth_fractions{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t trials_per_cell = 10;
  std::uint64_t filler_seed = 7;
  std::uint32_t needle_min = 100000;
  std::uint32_t needle_max = 999999;
  std::size_t n_pad_masks = 6;
};

void to_json(nlohmann::json& j, const NeedleConfig& c);
void from_json(const nlohmann::json& j, NeedleConfig& c);

struct NeedleCell {
  std::size_t length = 0;
  double depth = 0.0;
  double accuracy = 0.0;
  std::size_t trials = 0;
};

struct NeedleGrid {
  std::vector<NeedleCell> cells;  // lengths outer, depths inner
  /// Mean accuracy over depths for one haystack length.
  double accuracy_at(std::size_t length) const;
};

/// Greedy decoding constrained to exactly six digits; a cell's accuracy is
/// the exact-match rate over its trials.
NeedleGrid needle_grid(const MaskedLM& model, const Vocabulary& vocab, const NeedleConfig& cfg,
                       std::uint64_t seed);

/// CSV: length,depth,accuracy,trials
void write_needle_csv(std::ostream& out, const NeedleGrid& grid);

/// Planted oracle: at the readout mask it puts all mass on the next digit of
/// the first run of six digit tokens in the input.
class CopyOracleLM : public MaskedLM {
 public:
  explicit CopyOracleLM(std::size_t vocab_size) : vocab_size_(vocab_size) {}
  std::size_t vocab_size() const override { return vocab_size_; }
  std::vector<double> logits_at(std::span<const TokenId> ids, std::size_t position) const override;

 private:
  std::size_t vocab_size_;
};

}  // namespace mlmgen
