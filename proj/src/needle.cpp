#include <cstdio>
#include <ostream>

#include "mlmgen/corpus.hpp"
#include "mlmgen/errors.hpp"
#include "mlmgen/harness.hpp"
#include "mlmgen/parallel.hpp"

namespace mlmgen {

void to_json(nlohmann::json& j, const NeedleConfig& c) {
  j = nlohmann::json{{"haystack_lengths", c.haystack_lengths}, {"depth_fractions", c.depth_fractions},
                     {"trials_per_cell", c.trials_per_cell},   {"filler_seed", c.filler_seed},
                     {"needle_min", c.needle_min},             {"needle_max", c.needle_max},
                     {"n_pad_masks", c.n_pad_masks}};
}

void from_json(const nlohmann::json& j, NeedleConfig& c) {
  if (!j.is_object()) throw ConfigError("needle", "expected an object");
  NeedleConfig out;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "haystack_lengths") out.haystack_lengths = value.get<std::vector<std::size_t>>();
      else if (key == "depth_fractions") out.depth_fractions = value.get<std::vector<double>>();
      else if (key == "trials_per_cell") out.trials_per_cell = value.get<std::size_t>();
      else if (key == "filler_seed") out.filler_seed = value.get<std::uint64_t>();
      else if (key == "needle_min") out.needle_min = value.get<std::uint32_t>();
      else if (key == "needle_max") out.needle_max = value.get<std::uint32_t>();
      else if (key == "n_pad_masks") out.n_pad_masks = value.get<std::size_t>();
      else throw ConfigError("needle." + key, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("needle." + key, e.what());
    }
  }
  for (double d : out.depth_fractions) {
    if (d < 0.0 || d > 1.0) throw ConfigError("needle.depth_fractions", "must lie in [0, 1]");
  }
  if (out.needle_min > out.needle_max || out.needle_min < 100000 || out.needle_max > 999999) {
    throw ConfigError("needle.needle_min", "needles must be six-digit numbers");
  }
  if (out.trials_per_cell == 0) throw ConfigError("needle.trials_per_cell", "must be positive");
  c = std::move(out);
}

double NeedleGrid::accuracy_at(std::size_t length) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.length != length) continue;
    total += c.accuracy;
    ++n;
  }
  if (n == 0) throw std::out_of_range("no needle cells of length " + std::to_string(length));
  return total / static_cast<double>(n);
}

NeedleGrid needle_grid(const MaskedLM& model, const Vocabulary& vocab, const NeedleConfig& cfg,
                       std::uint64_t seed) {
  GenerationConfig gen;
  gen.strategy = Strategy::greedy;
  gen.n_pad_masks = cfg.n_pad_masks;
  gen.max_new_tokens = 6;
  gen.constraint = digit_constraint(6);

  const std::size_t depths = cfg.depth_fractions.size(), trials = cfg.trials_per_cell;
  const std::size_t cells = cfg.haystack_lengths.size() * depths;
  std::vector<int> hit(cells * trials, 0);
  parallel_for(cells * trials, [&](std::size_t k) {
    const std::size_t cell = k / trials, t = k % trials;
    const std::size_t li = cell / depths, di = cell % depths;
    const std::size_t length = cfg.haystack_lengths[li];
    Rng rng(derive_seed(seed, {li, di, t}));
    const std::uint32_t span = cfg.needle_max - cfg.needle_min + 1;
    const auto needle = std::to_string(cfg.needle_min + static_cast<std::uint32_t>(uniform01(rng) * span));
    const auto filler = filler_words(derive_seed(cfg.filler_seed, {li, di, t}), length / 4 + 2);
    const auto prompt = render_needle_prompt(filler, length, cfg.depth_fractions[di], needle);
    const auto ids = encode(prompt, vocab, true, false);
    const auto out = greedy(model, ids, gen);
    std::string digits;
    for (TokenId id : out) digits += vocab.token(id);
    hit[k] = digits == needle;
  });

  NeedleGrid grid;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) hits += static_cast<std::size_t>(hit[cell * trials + t]);
    grid.cells.push_back({cfg.haystack_lengths[cell / depths], cfg.depth_fractions[cell % depths],
                          static_cast<double>(hits) / static_cast<double>(trials), trials});
  }
  return grid;
}

void write_needle_csv(std::ostream& out, const NeedleGrid& grid) {
  out << "length,depth,accuracy,trials\n";
  char buf[128];
  for (const auto& c : grid.cells) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu\n", c.length, c.depth, c.accuracy, c.trials);
    out << buf;
  }
}

std::vector<double> CopyOracleLM::logits_at(std::span<const TokenId> ids, std::size_t position) const {
  if (position >= ids.size()) throw std::out_of_range("readout position beyond input");
  auto is_digit = [](TokenId t) { return t >= special::kFirstDigit && t < special::kFirstDigit + 10; };
  std::size_t copied = 0;
  while (copied < position && is_digit(ids[position - 1 - copied])) ++copied;

  std::vector<double> logits(vocab_size_, 0.0);
  std::size_t run = 0;
  for (std::size_t i = 0; i + copied < position; ++i) {
    run = is_digit(ids[i]) ? run + 1 : 0;
    if (run == 6) {
      const std::size_t start = i + 1 - 6;
      if (copied < 6) logits[static_cast<std::size_t>(ids[start + copied])] = 50.0;
      break;
    }
  }
  return logits;
}

}  // namespace mlmgen
