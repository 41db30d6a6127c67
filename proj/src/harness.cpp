#include "mlmgen/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mlmgen/errors.hpp"
#include "mlmgen/metrics.hpp"
#include "mlmgen/parallel.hpp"

namespace mlmgen {

std::vector<std::string> placeholders(const std::string& body) {
  std::vector<std::string> out;
  for (std::size_t pos = body.find("{$"); pos != std::string::npos; pos = body.find("{$", pos + 2)) {
    const auto close = body.find('}', pos);
    if (close == std::string::npos) throw ConfigError("template", "unterminated placeholder");
    out.push_back(body.substr(pos + 2, close - pos - 2));
  }
  return out;
}

std::string render_prompt(const std::string& body, const PromptVars& vars) {
  std::string out;
  std::size_t pos = 0;
  for (std::size_t open = body.find("{$"); open != std::string::npos; open = body.find("{$", pos)) {
    const auto close = body.find('}', open);
    if (close == std::string::npos) throw ConfigError("template", "unterminated placeholder");
    const std::string name = body.substr(open + 2, close - open - 2);
    const auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError(name, "unbound placeholder");
    out.append(body, pos, open - pos);
    out += it->second;
    pos = close + 1;
  }
  out.append(body, pos);
  return out;
}

Metric metric_from_string(const std::string& name) {
  if (name == "accuracy") return Metric::accuracy;
  if (name == "macro_f1") return Metric::macro_f1;
  if (name == "token_f1") return Metric::token_f1;
  if (name == "exact_match") return Metric::exact_match;
  if (name == "bleu") return Metric::bleu;
  throw ConfigError("metric", "unknown metric '" + name + "'");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::macro_f1: return "macro_f1";
    case Metric::token_f1: return "token_f1";
    case Metric::exact_match: return "exact_match";
    case Metric::bleu: return "bleu";
  }
  return "?";
}

std::string to_string(TaskKind k) { return k == TaskKind::ranking ? "ranking" : "generation"; }

namespace {

std::string rtrim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

// Template text before the candidate slot; the rest must be blank.
std::string prompt_part(const PromptTemplate& t) {
  if (t.candidate_slot.empty()) return t.body;
  const std::string marker = "{$" + t.candidate_slot + "}";
  const auto pos = t.body.rfind(marker);
  if (pos == std::string::npos) throw ConfigError("candidate_slot", "not present in template");
  if (!rtrim(t.body.substr(pos + marker.size())).empty()) {
    throw ConfigError("candidate_slot", "must be the last element of the template");
  }
  return t.body.substr(0, pos);
}

TaskExample example_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where, "expected an object");
  TaskExample e;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "vars") e.vars = value.get<PromptVars>();
      else if (key == "gold") e.gold = value.get<std::string>();
      else if (key == "candidates") e.candidates = value.get<std::vector<std::string>>();
      else throw ConfigError(where + "." + key, "unknown key");
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(where + "." + key, ex.what());
    }
  }
  return e;
}

nlohmann::json example_to_json(const TaskExample& e) {
  nlohmann::json j{{"vars", e.vars}, {"gold", e.gold}};
  if (!e.candidates.empty()) j["candidates"] = e.candidates;
  return j;
}

std::vector<TokenId> encode_candidate(const std::string& text, const Vocabulary& vocab,
                                      std::vector<std::size_t>& word_lengths) {
  const auto pieces = split_tokens_with_words(text, word_lengths);
  std::vector<TokenId> ids;
  ids.reserve(pieces.size());
  for (const auto& p : pieces) ids.push_back(vocab.id(p));
  return ids;
}

std::string canonical(const std::string& text) {
  std::string out;
  for (const auto& t : split_tokens(text)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

double aggregate(Metric metric, const std::vector<ExampleRecord>& records) {
  std::vector<std::string> pred, gold;
  for (const auto& r : records) {
    pred.push_back(canonical(r.prediction));
    gold.push_back(canonical(r.gold));
  }
  switch (metric) {
    case Metric::accuracy:
    case Metric::exact_match: return accuracy(pred, gold);
    case Metric::macro_f1: return macro_f1(pred, gold);
    case Metric::token_f1: {
      double total = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        total += token_f1(whitespace_tokens(pred[i]), whitespace_tokens(gold[i]));
      }
      return total / static_cast<double>(pred.size());
    }
    case Metric::bleu: {
      std::vector<Tokens> hyp, ref;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        hyp.push_back(whitespace_tokens(pred[i]));
        ref.push_back(whitespace_tokens(gold[i]));
      }
      return bleu(hyp, ref);
    }
  }
  return 0.0;
}

}  // namespace

void TaskSpec::validate() const {
  if (examples.empty()) throw ConfigError("examples", "task has no examples");
  if (n_shots > train_pool.size()) throw ConfigError("n_shots", "exceeds the train pool size");
  if (kind == TaskKind::ranking) {
    if (prompt.candidate_slot.empty()) throw ConfigError("candidate_slot", "ranking needs a candidate slot");
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& e = examples[i];
      const std::string where = "examples[" + std::to_string(i) + "]";
      if (e.candidates.size() < 2) throw ConfigError(where + ".candidates", "need at least two");
      if (std::find(e.candidates.begin(), e.candidates.end(), e.gold) == e.candidates.end()) {
        throw ConfigError(where + ".gold", "not among the candidates");
      }
    }
  }
  prompt_part(prompt);
  if (scoring.normalize_by_unconditional && answer_context.empty()) {
    throw ConfigError("answer_context", "required when normalizing by the unconditional score");
  }
  generation.validate();
}

TaskSpec task_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("task", "expected an object");
  TaskSpec t;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "name") t.name = value.get<std::string>();
      else if (key == "kind") {
        const auto k = value.get<std::string>();
        if (k == "ranking") t.kind = TaskKind::ranking;
        else if (k == "generation") t.kind = TaskKind::generation;
        else throw ConfigError("kind", "unknown task kind '" + k + "'");
      } else if (key == "template") t.prompt.body = value.get<std::string>();
      else if (key == "candidate_slot") t.prompt.candidate_slot = value.get<std::string>();
      else if (key == "shot_separator") t.prompt.shot_separator = value.get<std::string>();
      else if (key == "examples" || key == "train_pool") {
        auto& dst = key == "examples" ? t.examples : t.train_pool;
        if (!value.is_array()) throw ConfigError(key, "expected an array");
        for (std::size_t i = 0; i < value.size(); ++i) {
          dst.push_back(example_from_json(value[i], key + "[" + std::to_string(i) + "]"));
        }
      } else if (key == "metric") t.metric = metric_from_string(value.get<std::string>());
      else if (key == "n_shots") t.n_shots = value.get<std::size_t>();
      else if (key == "scoring") t.scoring = value.get<ScoringMethod>();
      else if (key == "answer_context") t.answer_context = value.get<std::string>();
      else if (key == "generation") t.generation = value.get<GenerationConfig>();
      else if (key == "stop") t.stop = value.get<std::vector<std::string>>();
      else if (key == "stop_at_newline") t.stop_at_newline = value.get<bool>();
      else if (key == "add_cls") t.add_cls = value.get<bool>();
      else throw ConfigError(key, "unknown task key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }
  t.validate();
  return t;
}

nlohmann::json task_to_json(const TaskSpec& t) {
  nlohmann::json examples = nlohmann::json::array(), pool = nlohmann::json::array();
  for (const auto& e : t.examples) examples.push_back(example_to_json(e));
  for (const auto& e : t.train_pool) pool.push_back(example_to_json(e));
  return nlohmann::json{{"name", t.name},
                        {"kind", to_string(t.kind)},
                        {"template", t.prompt.body},
                        {"candidate_slot", t.prompt.candidate_slot},
                        {"shot_separator", t.prompt.shot_separator},
                        {"examples", examples},
                        {"train_pool", pool},
                        {"metric", to_string(t.metric)},
                        {"n_shots", t.n_shots},
                        {"scoring", t.scoring},
                        {"answer_context", t.answer_context},
                        {"generation", t.generation},
                        {"stop", t.stop},
                        {"stop_at_newline", t.stop_at_newline},
                        {"add_cls", t.add_cls}};
}

TaskSpec load_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open task file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("task file " + path + ": " + e.what());
  }
  return task_from_json(j);
}

std::string assemble_fewshot(const TaskSpec& task, const TaskExample& eval_example,
                             std::size_t n_shots, Rng& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < task.train_pool.size(); ++i) {
    if (!(task.train_pool[i] == eval_example)) pool.push_back(i);
  }
  if (n_shots > pool.size()) {
    throw std::invalid_argument("assemble_fewshot: " + std::to_string(n_shots) + " shots requested, " +
                                std::to_string(pool.size()) + " available");
  }
  // Partial Fisher-Yates: the first n_shots entries are a uniform draw.
  for (std::size_t i = 0; i < n_shots; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }

  const auto& t = task.prompt;
  std::string out;
  for (std::size_t i = 0; i < n_shots; ++i) {
    const auto& shot = task.train_pool[pool[i]];
    PromptVars vars = shot.vars;
    if (!t.candidate_slot.empty()) vars[t.candidate_slot] = shot.gold;
    out += render_prompt(t.body, vars);
    out += t.shot_separator;
  }
  return out + rtrim(render_prompt(prompt_part(t), eval_example.vars));
}

TaskResult run_ranking_task(const TaskSpec& task, const Vocabulary& vocab, std::uint64_t seed,
                            const RankFn& rank_fn) {
  task.validate();
  TaskResult result;
  result.records.resize(task.examples.size());
  parallel_for(task.examples.size(), [&](std::size_t i) {
    const auto& ex = task.examples[i];
    Rng rng(derive_seed(seed, {i}));
    const std::string prompt = assemble_fewshot(task, ex, task.n_shots, rng);
    const auto context = encode(prompt, vocab, task.add_cls, false);
    std::vector<Candidate> candidates;
    for (const auto& c : ex.candidates) {
      Candidate cand;
      cand.tokens = encode_candidate(c, vocab, cand.word_lengths);
      candidates.push_back(std::move(cand));
    }
    std::vector<TokenId> answer_context;
    if (!task.answer_context.empty()) {
      answer_context = encode(render_prompt(task.answer_context, ex.vars), vocab, task.add_cls, false);
    }
    const RankResult r = rank_fn(context, candidates, answer_context, rng);
    auto& rec = result.records[i];
    rec.example_id = i;
    rec.prediction = ex.candidates[r.winner];
    rec.gold = ex.gold;
    rec.correct = rec.prediction == rec.gold;
    rec.score = r.decision[r.winner];
  });
  result.metric = aggregate(task.metric, result.records);
  return result;
}

TaskResult run_ranking_task(const MaskedLM& model, const Vocabulary& vocab, const TaskSpec& task,
                            std::uint64_t seed) {
  return run_ranking_task(task, vocab, seed,
                          [&](std::span<const TokenId> context, std::span<const Candidate> candidates,
                              std::span<const TokenId> answer_context, Rng&) {
                            ScoringMethod method = task.scoring;
                            if (method.normalize_by_unconditional) {
                              method.answer_context.emplace(answer_context.begin(), answer_context.end());
                            }
                            return rank(model, context, candidates, method);
                          });
}

TaskResult run_generation_task(const TaskSpec& task, const Vocabulary& vocab, std::uint64_t seed,
                               const GenerateFn& generate_fn) {
  task.validate();
  GenerationConfig cfg = task.generation;
  for (const auto& s : task.stop) {
    if (!vocab.contains(s)) throw ConfigError("stop", "'" + s + "' is not in the vocabulary");
    cfg.stop_tokens.push_back(vocab.id(s));
  }
  const TokenizerOptions options;
  const TokenId newline = vocab.id(options.separator_token());
  if (task.stop_at_newline && vocab.contains(options.separator_token())) cfg.stop_tokens.push_back(newline);

  TaskResult result;
  result.records.resize(task.examples.size());
  parallel_for(task.examples.size(), [&](std::size_t i) {
    const auto& ex = task.examples[i];
    Rng rng(derive_seed(seed, {i}));
    const std::string prompt = assemble_fewshot(task, ex, task.n_shots, rng);
    const auto ids = encode(prompt, vocab, task.add_cls, false);
    Generated g = generate_fn(ids, ex, cfg, rng);
    if (task.stop_at_newline) {
      g.tokens.erase(std::find(g.tokens.begin(), g.tokens.end(), newline), g.tokens.end());
    }
    auto& rec = result.records[i];
    rec.example_id = i;
    rec.prediction = decode(g.tokens, vocab);
    rec.gold = ex.gold;
    rec.correct = exact_match(canonical(rec.prediction), canonical(rec.gold));
    rec.score = g.score;
  });
  result.metric = aggregate(task.metric, result.records);
  return result;
}

TaskResult run_generation_task(const MaskedLM& model, const Vocabulary& vocab, const TaskSpec& task,
                               std::uint64_t seed) {
  return run_generation_task(task, vocab, seed,
                             [&](std::span<const TokenId> prompt, const TaskExample&,
                                 const GenerationConfig& cfg, Rng& rng) {
                               if (cfg.strategy == Strategy::beam) {
                                 auto r = beam_search(model, prompt, cfg);
                                 return Generated{std::move(r.best.tokens), r.best.score};
                               }
                               return Generated{generate(model, prompt, cfg, rng), 0.0};
                             });
}

TaskResult run_task(const MaskedLM& model, const Vocabulary& vocab, const TaskSpec& task,
                    std::uint64_t seed) {
  return task.kind == TaskKind::ranking ? run_ranking_task(model, vocab, task, seed)
                                        : run_generation_task(model, vocab, task, seed);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

void write_results_csv(std::ostream& out, std::span<const ExampleRecord> records) {
  out << "example_id,prediction,gold,correct,score\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    out << r.example_id << ',' << csv_field(r.prediction) << ',' << csv_field(r.gold) << ','
        << (r.correct ? 1 : 0) << ',' << buf << '\n';
  }
}

}  // namespace mlmgen
