#include "mlmgen/tasks.hpp"

#include <algorithm>
#include <functional>

#include "mlmgen/corpus.hpp"
#include "mlmgen/errors.hpp"

namespace mlmgen {

namespace {

void fill(TaskSpec& t, std::size_t size, std::uint64_t seed,
          const std::function<TaskExample(Rng&)>& make) {
  Rng eval_rng(derive_seed(seed, {1})), pool_rng(derive_seed(seed, {2}));
  for (std::size_t i = 0; i < size; ++i) t.examples.push_back(make(eval_rng));
  for (std::size_t i = 0; i < size; ++i) t.train_pool.push_back(make(pool_rng));
}

std::vector<std::string> words_of(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto end = std::min(s.find(' ', pos), s.size());
    if (end > pos) out.push_back(s.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

std::string joined(const std::vector<std::string>& w) {
  std::string out;
  for (const auto& x : w) out += (out.empty() ? "" : " ") + x;
  return out;
}

TaskExample transitivity_example(Rng& rng) {
  for (;;) {
    const auto s = words_of(grammar_sentence(rng));
    const auto& adjectives = grammar_lexicon().adjectives;
    const bool has_adjective = std::find(adjectives.begin(), adjectives.end(), s[1]) != adjectives.end();
    const std::size_t verb = has_adjective ? 3 : 2;
    if (verb + 1 >= s.size()) continue;
    const std::string& next = s[verb + 1];
    std::string label;
    if (next == "the" || next == "a") label = "the";
    else if (next == ".") label = ".";
    else continue;  // adverbial after an intransitive verb
    TaskExample e;
    e.vars["head"] = joined({s.begin(), s.begin() + static_cast<std::ptrdiff_t>(verb + 1)});
    e.gold = label;
    e.candidates = {"the", "."};
    return e;
  }
}

TaskExample completion_example(Rng& rng) {
  for (;;) {
    const auto s = words_of(grammar_sentence(rng));
    // Head: subject and verb (first three words); tail: the rest without ".".
    if (s.size() < 6) continue;
    const std::vector<std::string> head(s.begin(), s.begin() + 3);
    std::vector<std::string> tail(s.begin() + 3, s.end() - 1);
    TaskExample e;
    e.vars["head"] = joined(head);
    e.gold = joined(tail) + " .";
    e.candidates.push_back(e.gold);
    std::vector<std::string> perm = tail;
    for (int attempt = 0; e.candidates.size() < 4 && attempt < 100; ++attempt) {
      for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
      }
      const std::string c = joined(perm) + " .";
      if (std::find(e.candidates.begin(), e.candidates.end(), c) == e.candidates.end()) {
        e.candidates.push_back(c);
      }
    }
    if (e.candidates.size() < 4) continue;
    // Gold position varies with the draw.
    const auto gold_at = static_cast<std::size_t>(uniform01(rng) * 4.0);
    std::swap(e.candidates[0], e.candidates[gold_at]);
    return e;
  }
}

TaskExample translation_example(Rng& rng) {
  const std::string s = grammar_sentence(rng);
  TaskExample e;
  e.vars["source"] = s;
  e.gold = translate_tokens(s);
  return e;
}

TaskExample digit_qa_example(Rng& rng, std::size_t max_len) {
  // digit_facts lines are the prompt followed by " <needle>."
  CorpusSpec spec;
  spec.kind = CorpusKind::digit_facts;
  spec.size = 1;
  spec.seed = rng();
  spec.max_len = max_len;
  const std::string line = make_corpus(spec).front();
  const auto cut = line.rfind(' ');
  TaskExample e;
  e.vars["prompt"] = line.substr(0, cut);
  e.gold = line.substr(cut + 1, 6);
  return e;
}

TaskExample idiom_example(Rng& rng, const std::string& idiom) {
  const SplitSentence s = grammar_sentence_split(rng);
  const auto& adverbs = grammar_adverbs();
  TaskExample e;
  e.vars["head"] = s.head;
  e.gold = adverbs[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(adverbs.size()))] + " .";
  e.candidates = {e.gold, idiom + " ."};
  if (uniform01(rng) < 0.5) std::swap(e.candidates[0], e.candidates[1]);
  return e;
}

}  // namespace

TaskSpec transitivity_task(std::size_t size, std::uint64_t seed) {
  TaskSpec t;
  t.name = "transitivity";
  t.kind = TaskKind::ranking;
  t.prompt.body = "{$head} {$answer}";
  t.metric = Metric::macro_f1;
  t.scoring.kind = ScoringKind::pll;
  fill(t, size, seed, transitivity_example);
  return t;
}

TaskSpec completion_task(std::size_t size, std::uint64_t seed) {
  TaskSpec t;
  t.name = "completion";
  t.kind = TaskKind::ranking;
  t.prompt.body = "{$head} {$answer}";
  t.metric = Metric::accuracy;
  t.scoring.kind = ScoringKind::pll;
  fill(t, size, seed, completion_example);
  return t;
}

TaskSpec translation_task(std::size_t size, std::uint64_t seed) {
  TaskSpec t;
  t.name = "translation";
  t.kind = TaskKind::generation;
  t.prompt.body = "SRC: {$source} TGT: {$answer}";
  t.metric = Metric::bleu;
  t.generation.max_new_tokens = 16;
  t.stop = {"."};
  fill(t, size, seed, translation_example);
  return t;
}

TaskSpec digit_qa_task(std::size_t size, std::uint64_t seed, std::size_t max_len) {
  TaskSpec t;
  t.name = "digit_qa";
  t.kind = TaskKind::generation;
  t.prompt.body = "{$prompt} {$answer}";
  t.metric = Metric::exact_match;
  t.generation.max_new_tokens = 6;
  fill(t, size, seed, [max_len](Rng& rng) { return digit_qa_example(rng, max_len); });
  return t;
}

TaskSpec idiom_task(std::size_t size, std::uint64_t seed, const std::string& idiom) {
  TaskSpec t;
  t.name = "idiom";
  t.kind = TaskKind::ranking;
  t.prompt.body = "{$head} {$answer}";
  t.metric = Metric::accuracy;
  t.scoring.kind = ScoringKind::pll;
  fill(t, size, seed, [&idiom](Rng& rng) { return idiom_example(rng, idiom); });
  return t;
}

std::vector<std::string> builtin_task_names() {
  return {"transitivity", "completion", "translation", "digit_qa", "idiom"};
}

TaskSpec builtin_task(const std::string& name, std::size_t size, std::uint64_t seed) {
  if (name == "transitivity") return transitivity_task(size, seed);
  if (name == "completion") return completion_task(size, seed);
  if (name == "translation") return translation_task(size, seed);
  if (name == "digit_qa") return digit_qa_task(size, seed);
  if (name == "idiom") return idiom_task(size, seed);
  throw ConfigError("task", "unknown built-in task '" + name + "'");
}

}  // namespace mlmgen
