#include "mlmgen/cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "mlmgen/ablation.hpp"
#include "mlmgen/corpus.hpp"
#include "mlmgen/errors.hpp"
#include "mlmgen/harness.hpp"
#include "mlmgen/model.hpp"
#include "mlmgen/parallel.hpp"
#include "mlmgen/ranking.hpp"
#include "mlmgen/tasks.hpp"
#include "mlmgen/trainer.hpp"

namespace fs = std::filesystem;

namespace mlmgen {

namespace {

const std::map<std::string, std::set<std::string>> kCommandKeys = {
    {"train", {"model", "train", "corpus", "vocab_size"}},
    {"generate", {"prompt", "generation", "add_cls"}},
    {"rank", {"context", "candidates", "scoring", "add_cls"}},
    {"eval", {"task", "builtin", "size", "task_seed", "generation"}},
    {"needle", {"needle", "copy_oracle"}},
    {"ablate", {"ablation", "task", "builtin", "size", "task_seed", "generation", "pad_masks", "methods", "gibbs"}},
};
const std::set<std::string> kCommonKeys = {"command", "seed", "checkpoint", "out"};

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

fs::path vocab_path(const fs::path& checkpoint) { return checkpoint.parent_path() / "vocab.txt"; }

struct Loaded {
  Transformer model;
  Vocabulary vocab;
};

Loaded load_model(const nlohmann::json& config) {
  const auto path = get_or<std::string>(config, "checkpoint", "");
  if (path.empty()) throw ConfigError("checkpoint", "a checkpoint is required");
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return {load_checkpoint(path), Vocabulary::load_file(vocab_path(path).string())};
}

// One sequence per line; blank lines are skipped.
std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus file " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

CorpusSpec corpus_spec(const nlohmann::json& j) {
  CorpusSpec spec;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "path") continue;
      if (key == "kind") spec.kind = corpus_kind_from_string(value.get<std::string>());
      else if (key == "size") spec.size = value.get<std::size_t>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "idiom") spec.idiom = value.get<std::string>();
      else if (key == "idiom_rate") spec.idiom_rate = value.get<double>();
      else if (key == "max_len") spec.max_len = value.get<std::size_t>();
      else if (key == "lines_per_document") spec.lines_per_document = value.get<std::size_t>();
      else throw ConfigError("corpus." + key, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corpus." + key, e.what());
    } catch (const std::invalid_argument& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("corpus." + key, e.what());
    }
  }
  return spec;
}

// Keys under "generation" replace the task's own decoding settings.
TaskSpec with_generation_overrides(TaskSpec task, const nlohmann::json& config) {
  if (!config.contains("generation")) return task;
  nlohmann::json merged = task.generation;
  merged.merge_patch(config.at("generation"));
  task.generation = merged.get<GenerationConfig>();
  return task;
}

TaskSpec resolve_task(const nlohmann::json& config) {
  if (config.contains("task")) {
    return with_generation_overrides(load_task(get_or<std::string>(config, "task", "")), config);
  }
  if (config.contains("builtin")) {
    TaskSpec t = builtin_task(get_or<std::string>(config, "builtin", ""), get_or<std::size_t>(config, "size", 200),
                              get_or<std::uint64_t>(config, "task_seed", 1));
    return with_generation_overrides(std::move(t), config);
  }
  throw ConfigError("task", "set either task (a task file) or builtin (a task name)");
}

void cmd_train(const nlohmann::json& c, const fs::path& out, std::ostream& log) {
  const auto corpus = get_or<nlohmann::json>(c, "corpus", nlohmann::json::object());
  const auto lines = corpus.contains("path") ? read_lines(corpus.at("path").get<std::string>())
                                             : make_corpus(corpus_spec(corpus));
  const Vocabulary vocab = build_vocab(lines, get_or<std::size_t>(c, "vocab_size", 512));
  ModelConfig mc;
  try {
    mc = get_or<nlohmann::json>(c, "model", nlohmann::json::object()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model", e.what());
  }
  mc.vocab_size = vocab.size();
  TrainConfig tc = get_or<nlohmann::json>(c, "train", nlohmann::json::object()).get<TrainConfig>();
  if (c.contains("seed")) tc.seed = c.at("seed").get<std::uint64_t>();
  const auto data = encode_corpus(lines, vocab);
  const TrainResult r = train(mc, data, tc);

  const fs::path ckpt = c.contains("checkpoint") ? fs::path(c.at("checkpoint").get<std::string>())
                                                 : out / "model.ckpt";
  if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt.string(), mc, r.weights);
  vocab.save_file(vocab_path(ckpt).string());
  std::ostringstream csv;
  write_loss_csv(csv, r.trace);
  write_file(out / "loss.csv", csv.str());
  log << "trained " << tc.steps << " steps; final loss "
      << (r.trace.empty() ? 0.0 : r.trace.back().loss) << "; checkpoint " << ckpt.string() << '\n';
}

void cmd_generate(const nlohmann::json& c, const fs::path& out, std::ostream& log) {
  auto [model, vocab] = load_model(c);
  GenerationConfig cfg = get_or<nlohmann::json>(c, "generation", nlohmann::json::object()).get<GenerationConfig>();
  const auto prompt = encode(get_or<std::string>(c, "prompt", ""), vocab, get_or<bool>(c, "add_cls", true), false);
  Rng rng(get_or<std::uint64_t>(c, "seed", 1));
  const auto tokens = generate(model, prompt, cfg, rng);
  const std::string text = decode(tokens, vocab);
  write_file(out / "generation.txt", text + "\n");
  log << text << '\n';
}

void cmd_rank(const nlohmann::json& c, const fs::path& out, std::ostream& log) {
  auto [model, vocab] = load_model(c);
  ScoringMethod method = get_or<nlohmann::json>(c, "scoring", nlohmann::json::object()).get<ScoringMethod>();
  const auto context = encode(get_or<std::string>(c, "context", ""), vocab, get_or<bool>(c, "add_cls", true), false);
  const auto texts = get_or<std::vector<std::string>>(c, "candidates", {});
  std::vector<Candidate> candidates;
  for (const auto& t : texts) {
    Candidate cand;
    for (const auto& piece : split_tokens_with_words(t, cand.word_lengths)) cand.tokens.push_back(vocab.id(piece));
    candidates.push_back(std::move(cand));
  }
  const RankResult r = rank(model, context, candidates, method);
  std::ostringstream table;
  write_score_table(table, r.scores, method.name());
  write_file(out / "scores.jsonl", table.str());
  log << "winner " << r.winner << ": " << texts.at(r.winner) << '\n';
}

void cmd_eval(const nlohmann::json& c, const fs::path& out, std::ostream& log) {
  auto [model, vocab] = load_model(c);
  const TaskSpec task = resolve_task(c);
  const TaskResult r = run_task(model, vocab, task, get_or<std::uint64_t>(c, "seed", 1));
  std::ostringstream csv;
  write_results_csv(csv, r.records);
  write_file(out / "results.csv", csv.str());
  write_file(out / "metric.json",
             nlohmann::json{{"task", task.name}, {"metric", to_string(task.metric)}, {"value", r.metric}}.dump(2) + "\n");
  log << task.name << ' ' << to_string(task.metric) << ' ' << r.metric << '\n';
}

void cmd_needle(const nlohmann::json& c, const fs::path& out, std::ostream& log) {
  const NeedleConfig cfg = get_or<nlohmann::json>(c, "needle", nlohmann::json::object()).get<NeedleConfig>();
  const std::uint64_t seed = get_or<std::uint64_t>(c, "seed", 1);
  NeedleGrid grid;
  if (get_or<bool>(c, "copy_oracle", false)) {
    const Vocabulary vocab;
    grid = needle_grid(CopyOracleLM(vocab.size()), vocab, cfg, seed);
  } else {
    auto [model, vocab] = load_model(c);
    grid = needle_grid(model, vocab, cfg, seed);
  }
  std::ostringstream csv;
  write_needle_csv(csv, grid);
  write_file(out / "needle.csv", csv.str());
  log << csv.str();
}

void cmd_ablate(const nlohmann::json& c, const fs::path& out, std::ostream& log) {
  auto [model, vocab] = load_model(c);
  const TaskSpec task = resolve_task(c);
  const std::uint64_t seed = get_or<std::uint64_t>(c, "seed", 1);
  const auto kind = get_or<std::string>(c, "ablation", task.kind == TaskKind::ranking ? "ranking" : "generation");
  std::vector<AblationRow> rows;
  if (kind == "generation") {
    const auto pads = get_or<std::vector<std::size_t>>(c, "pad_masks", {0, 1, 2, 3});
    GibbsConfig g;
    std::size_t gibbs_length = 0;
    const auto gj = get_or<nlohmann::json>(c, "gibbs", nlohmann::json::object());
    for (const auto& [key, value] : gj.items()) {
      if (key == "iters") g.iters = value.get<std::size_t>();
      else if (key == "burn_in") g.burn_in = value.get<std::size_t>();
      else if (key == "top_k") g.top_k = value.get<std::size_t>();
      else if (key == "temperature") g.temperature = value.get<double>();
      else if (key == "length") gibbs_length = value.get<std::size_t>();
      else throw ConfigError("gibbs." + key, "unknown key");
    }
    rows = ablate_generation(model, vocab, task, pads, g, seed, gibbs_length);
  } else if (kind == "ranking") {
    const auto methods = get_or<std::vector<std::string>>(c, "methods", default_ranking_methods());
    rows = ablate_ranking(model, vocab, task, methods, seed);
  } else {
    throw ConfigError("ablation", "expected generation or ranking");
  }
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  write_file(out / "ablation.csv", csv.str());
  log << csv.str();
}

}  // namespace

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "expected key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &config;
  std::size_t pos = 0;
  for (std::size_t dot; (dot = key.find('.', pos)) != std::string::npos; pos = dot + 1) {
    node = &(*node)[key.substr(pos, dot - pos)];
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError(key, "cannot descend into a non-object");
      *node = nlohmann::json::object();
    }
  }
  (*node)[key.substr(pos)] = value;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked-LM generation and ranking engine"};
  app.require_subcommand(1);
  std::string config_path, checkpoint, out_dir = "out";
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  for (const auto& [name, keys] : kCommandKeys) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--set", overrides, "Override key=value (dotted keys)");
  }

  std::vector<std::string> argv_store{"mlmgen"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  auto* sub = app.get_subcommands().front();

  try {
    init_threads_from_env();
    nlohmann::json config = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("config", "cannot open " + config_path);
      config = nlohmann::json::parse(f, nullptr, false);
      if (config.is_discarded() || !config.is_object()) throw ConfigError("config", "not a JSON object");
    }
    for (const auto& o : overrides) apply_override(config, o);
    if (sub->count("--seed")) config["seed"] = seed;
    if (sub->count("--checkpoint")) config["checkpoint"] = checkpoint;
    if (sub->count("--out") || !config.contains("out")) config["out"] = out_dir;
    config["command"] = command;
    for (const auto& [key, value] : config.items()) {
      if (!kCommonKeys.count(key) && !kCommandKeys.at(command).count(key)) {
        throw ConfigError(key, "unknown key for command " + command);
      }
    }

    const fs::path dir = config.at("out").get<std::string>();
    fs::create_directories(dir);
    write_file(dir / "config.resolved.json", config.dump(2) + "\n");

    if (command == "train") cmd_train(config, dir, out);
    else if (command == "generate") cmd_generate(config, dir, out);
    else if (command == "rank") cmd_rank(config, dir, out);
    else if (command == "eval") cmd_eval(config, dir, out);
    else if (command == "needle") cmd_needle(config, dir, out);
    else cmd_ablate(config, dir, out);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error [" << e.key() << "]: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mlmgen
