#include "mlmgen/generation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mlmgen/errors.hpp"

namespace mlmgen {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  const double lse = m + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

bool is_stop(const GenerationConfig& cfg, TokenId t) {
  return std::find(cfg.stop_tokens.begin(), cfg.stop_tokens.end(), t) != cfg.stop_tokens.end();
}

bool constraint_complete(const GenerationConfig& cfg, std::span<const TokenId> generated) {
  return cfg.constraint && cfg.constraint->complete && cfg.constraint->complete(generated);
}

void constrain(const GenerationConfig& cfg, std::span<const TokenId> generated,
               std::vector<double>& log_probs) {
  if (cfg.constraint && cfg.constraint->allowed) {
    apply_constraint(log_probs, cfg.constraint->allowed(generated));
  }
}

std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<TokenId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Higher score first; equal scores fall back to lexicographic token order.
bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

double ranked_score(const Hypothesis& h, double length_penalty) {
  if (length_penalty == 0.0 || h.tokens.empty()) return h.score;
  return h.score / std::pow(static_cast<double>(h.tokens.size()), length_penalty);
}

}  // namespace

Strategy strategy_from_string(const std::string& name) {
  if (name == "greedy") return Strategy::greedy;
  if (name == "beam") return Strategy::beam;
  if (name == "sample") return Strategy::sample;
  throw ConfigError("strategy", "unknown strategy '" + name + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::beam: return "beam";
    case Strategy::sample: return "sample";
  }
  return "?";
}

TokenConstraint digit_constraint(std::size_t count) {
  TokenConstraint c;
  c.allowed = [count](std::span<const TokenId> generated) {
    std::vector<TokenId> ids;
    if (generated.size() >= count) return ids;
    for (int d = 0; d < 10; ++d) ids.push_back(special::kFirstDigit + d);
    return ids;
  };
  c.complete = [count](std::span<const TokenId> generated) { return generated.size() >= count; };
  return c;
}

void GenerationConfig::validate() const {
  if (beam_width < 1) throw ConfigError("beam_width", "must be at least 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p", "must be in (0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be positive");
  if (max_input_length < 2) throw ConfigError("max_input_length", "must be at least 2");
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
  j = nlohmann::json{{"n_pad_masks", c.n_pad_masks},   {"append_sep", c.append_sep},
                     {"max_new_tokens", c.max_new_tokens}, {"strategy", to_string(c.strategy)},
                     {"beam_width", c.beam_width},     {"top_k", c.top_k},
                     {"top_p", c.top_p},               {"temperature", c.temperature},
                     {"length_penalty", c.length_penalty}, {"stop_tokens", c.stop_tokens},
                     {"max_input_length", c.max_input_length}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
  if (!j.is_object()) throw ConfigError("generation", "expected an object");
  GenerationConfig out;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "n_pad_masks") out.n_pad_masks = value.get<std::size_t>();
      else if (key == "append_sep") out.append_sep = value.get<bool>();
      else if (key == "max_new_tokens") out.max_new_tokens = value.get<std::size_t>();
      else if (key == "strategy") out.strategy = strategy_from_string(value.get<std::string>());
      else if (key == "beam_width") out.beam_width = value.get<std::size_t>();
      else if (key == "top_k") out.top_k = value.get<std::size_t>();
      else if (key == "top_p") out.top_p = value.get<double>();
      else if (key == "temperature") out.temperature = value.get<double>();
      else if (key == "length_penalty") out.length_penalty = value.get<double>();
      else if (key == "stop_tokens") out.stop_tokens = value.get<std::vector<TokenId>>();
      else if (key == "max_input_length") out.max_input_length = value.get<std::size_t>();
      else throw ConfigError("generation." + key, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("generation." + key, e.what());
    } catch (const ConfigError& e) {
      if (e.key().rfind("generation.", 0) == 0) throw;
      throw ConfigError("generation." + key, e.what());
    }
  }
  try {
    out.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("generation." + e.key(), "invalid value");
  }
  c = std::move(out);
}

std::vector<TokenId> mask_append_input(std::span<const TokenId> prefix, const GenerationConfig& cfg) {
  if (prefix.empty()) throw std::invalid_argument("next-token prediction needs a nonempty prefix");
  std::vector<TokenId> ids(prefix.begin(), prefix.end());
  ids.insert(ids.end(), 1 + cfg.n_pad_masks, special::kMask);
  if (cfg.append_sep) ids.push_back(special::kSep);
  return ids;
}

std::vector<std::vector<double>> next_token_log_dists(const MaskedLM& model,
                                                      std::span<const std::vector<TokenId>> prefixes,
                                                      const GenerationConfig& cfg) {
  const std::size_t cap = std::min(cfg.max_input_length, model.max_input_length());
  std::vector<Readout> readouts;
  readouts.reserve(prefixes.size());
  for (const auto& p : prefixes) {
    Readout r{mask_append_input(p, cfg), p.size()};
    if (r.ids.size() > cap) {
      throw LengthError("input of " + std::to_string(r.ids.size()) + " tokens exceeds the cap of " +
                        std::to_string(cap));
    }
    readouts.push_back(std::move(r));
  }
  auto logits = model.logits_batch(readouts);
  for (auto& row : logits) row = log_softmax(row);
  return logits;
}

std::vector<double> next_token_log_dist(const MaskedLM& model, std::span<const TokenId> prefix,
                                        const GenerationConfig& cfg) {
  const std::vector<std::vector<TokenId>> one{std::vector<TokenId>(prefix.begin(), prefix.end())};
  return std::move(next_token_log_dists(model, one, cfg).front());
}

std::vector<double> next_token_dist(const MaskedLM& model, std::span<const TokenId> prefix,
                                    const GenerationConfig& cfg) {
  auto p = next_token_log_dist(model, prefix, cfg);
  for (auto& x : p) x = std::exp(x);
  return p;
}

void apply_constraint(std::vector<double>& log_probs, std::span<const TokenId> allowed) {
  std::vector<double> kept(log_probs.size(), kNegInf);
  for (TokenId t : allowed) {
    if (t >= 0 && static_cast<std::size_t>(t) < log_probs.size()) kept[t] = log_probs[t];
  }
  const double m = *std::max_element(kept.begin(), kept.end());
  if (m == kNegInf) throw ConstraintError("constraint leaves no admissible token");
  double s = 0.0;
  for (double x : kept) {
    if (x != kNegInf) s += std::exp(x - m);
  }
  const double lse = m + std::log(s);
  for (auto& x : kept) {
    if (x != kNegInf) x -= lse;
  }
  log_probs = std::move(kept);
}

std::vector<TokenId> greedy(const MaskedLM& model, std::span<const TokenId> prompt,
                            const GenerationConfig& cfg) {
  cfg.validate();
  std::vector<TokenId> out;
  while (out.size() < cfg.max_new_tokens && !constraint_complete(cfg, out)) {
    auto lp = next_token_log_dist(model, concat(prompt, out), cfg);
    constrain(cfg, out, lp);
    const auto t = static_cast<TokenId>(argmax_lowest(lp));
    out.push_back(t);
    if (is_stop(cfg, t)) break;
  }
  return out;
}

BeamResult beam_search(const MaskedLM& model, std::span<const TokenId> prompt,
                       const GenerationConfig& cfg) {
  cfg.validate();
  const double alpha = cfg.length_penalty;
  BeamState state;
  state.hypotheses.push_back({});
  if (cfg.max_new_tokens == 0 || constraint_complete(cfg, {})) {
    state.finished = std::move(state.hypotheses);
    state.hypotheses.clear();
  }

  for (std::size_t step = 0; step < cfg.max_new_tokens && !state.hypotheses.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    for (const auto& h : state.hypotheses) prefixes.push_back(concat(prompt, h.tokens));
    auto dists = next_token_log_dists(model, prefixes, cfg);

    std::vector<Hypothesis> candidates;
    for (std::size_t b = 0; b < state.hypotheses.size(); ++b) {
      const auto& h = state.hypotheses[b];
      constrain(cfg, h.tokens, dists[b]);
      for (std::size_t t = 0; t < dists[b].size(); ++t) {
        if (dists[b][t] == kNegInf) continue;
        Hypothesis c{h.tokens, h.score + dists[b][t]};
        c.tokens.push_back(static_cast<TokenId>(t));
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(cfg.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    candidates.resize(keep);

    state.hypotheses.clear();
    for (auto& c : candidates) {
      const bool done = is_stop(cfg, c.tokens.back()) || constraint_complete(cfg, c.tokens) ||
                        step + 1 == cfg.max_new_tokens;
      (done ? state.finished : state.hypotheses).push_back(std::move(c));
    }
    // Scores only decrease as tokens are added, so an unnormalized finished
    // hypothesis at least as good as every active one cannot be overtaken.
    if (alpha == 0.0 && !state.finished.empty() && !state.hypotheses.empty()) {
      double best_finished = kNegInf;
      for (const auto& f : state.finished) best_finished = std::max(best_finished, f.score);
      if (best_finished >= state.hypotheses.front().score) break;
    }
  }
  if (state.finished.empty()) state.finished = state.hypotheses;

  std::stable_sort(state.finished.begin(), state.finished.end(),
                   [alpha](const Hypothesis& a, const Hypothesis& b) {
                     const double sa = ranked_score(a, alpha), sb = ranked_score(b, alpha);
                     if (sa != sb) return sa > sb;
                     return a.tokens < b.tokens;
                   });
  BeamResult result;
  result.best = state.finished.front();
  result.finished = std::move(state.finished);
  return result;
}

std::vector<double> filter_distribution(std::span<const double> logits, std::size_t top_k,
                                        double top_p, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  std::vector<double> p = log_softmax(scaled);
  for (auto& x : p) x = std::exp(x);

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  // Both filters keep a prefix of `order`; their intersection is the shorter.
  std::size_t keep = top_k == 0 ? order.size() : std::min(top_k, order.size());
  double cum = 0.0;
  std::size_t nucleus = 0;
  while (nucleus < order.size()) {
    cum += p[order[nucleus++]];
    if (cum >= top_p) break;
  }
  keep = std::max<std::size_t>(1, std::min(keep, nucleus));

  std::vector<double> out(p.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += p[order[i]];
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / total;
  return out;
}

std::size_t draw(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = i;
    if (u < cum) return i;
  }
  return last;  // rounding left u above the final cumulative sum
}

std::vector<TokenId> sample(const MaskedLM& model, std::span<const TokenId> prompt,
                            const GenerationConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<TokenId> out;
  while (out.size() < cfg.max_new_tokens && !constraint_complete(cfg, out)) {
    auto lp = next_token_log_dist(model, concat(prompt, out), cfg);
    constrain(cfg, out, lp);
    const auto probs = filter_distribution(lp, cfg.top_k, cfg.top_p, cfg.temperature);
    const auto t = static_cast<TokenId>(draw(probs, rng));
    out.push_back(t);
    if (is_stop(cfg, t)) break;
  }
  return out;
}

std::vector<TokenId> generate(const MaskedLM& model, std::span<const TokenId> prompt,
                              const GenerationConfig& cfg, Rng& rng) {
  switch (cfg.strategy) {
    case Strategy::greedy: return greedy(model, prompt, cfg);
    case Strategy::beam: return beam_search(model, prompt, cfg).best.tokens;
    case Strategy::sample: return sample(model, prompt, cfg, rng);
  }
  return {};
}

std::vector<TokenId> gibbs_generate(const MaskedLM& model, std::span<const TokenId> prompt,
                                    std::size_t length, const GibbsConfig& cfg, Rng& rng) {
  if (length == 0) throw std::invalid_argument("gibbs_generate: length must be positive");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("gibbs_generate: temperature must be positive");
  const std::size_t vocab = model.vocab_size();
  const auto first = static_cast<std::size_t>(special::kCount);
  if (vocab <= first) throw std::invalid_argument("gibbs_generate: vocabulary has only special tokens");

  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  const std::size_t start = ids.size();
  for (std::size_t i = 0; i < length; ++i) {
    ids.push_back(cfg.init == GibbsInit::mask
                      ? special::kMask
                      : static_cast<TokenId>(first + static_cast<std::size_t>(
                                                         uniform01(rng) * static_cast<double>(vocab - first))));
  }
  if (cfg.append_sep) ids.push_back(special::kSep);
  if (ids.size() > model.max_input_length()) throw LengthError("gibbs_generate: input exceeds the model cap");

  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const std::size_t pos = start + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(length));
    ids[pos] = special::kMask;
    auto logits = model.logits_at(ids, pos);
    for (std::size_t t = 0; t < first; ++t) logits[t] = kNegInf;
    const std::size_t k = it < cfg.burn_in ? 0 : cfg.top_k;
    const auto probs = filter_distribution(logits, k, 1.0, cfg.temperature);
    ids[pos] = static_cast<TokenId>(draw(probs, rng));
  }
  return {ids.begin() + static_cast<std::ptrdiff_t>(start),
          ids.begin() + static_cast<std::ptrdiff_t>(start + length)};
}

}  // namespace mlmgen
