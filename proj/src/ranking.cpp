#include "mlmgen/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "mlmgen/errors.hpp"

namespace mlmgen {

namespace {

double log_prob_of(std::span<const double> logits, TokenId target) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  return logits[static_cast<std::size_t>(target)] - (m + std::log(s));
}

void require_completion(std::span<const TokenId> completion) {
  if (completion.empty()) throw std::invalid_argument("scoring needs a nonempty completion");
}

ScoredCandidate finish(std::span<const TokenId> completion, std::vector<double> per_token) {
  ScoredCandidate out;
  out.tokens.assign(completion.begin(), completion.end());
  for (double lp : per_token) out.score += lp;
  out.per_token = std::move(per_token);
  return out;
}

// Generic masked scoring: readout i sees completion positions
// [mask_begin[i], mask_end[i]) replaced by MASK.
ScoredCandidate score_masked(const MaskedLM& model, std::span<const TokenId> context,
                             std::span<const TokenId> completion,
                             std::span<const std::size_t> mask_begin,
                             std::span<const std::size_t> mask_end, std::size_t pad_masks,
                             bool append_sep) {
  std::vector<TokenId> base(context.begin(), context.end());
  base.insert(base.end(), completion.begin(), completion.end());
  base.insert(base.end(), pad_masks, special::kMask);
  if (append_sep) base.push_back(special::kSep);
  if (base.size() > model.max_input_length()) throw LengthError("scored input exceeds the model cap");

  const std::size_t c = context.size();
  std::vector<Readout> readouts(completion.size());
  for (std::size_t i = 0; i < completion.size(); ++i) {
    readouts[i].ids = base;
    for (std::size_t j = mask_begin[i]; j < mask_end[i]; ++j) readouts[i].ids[c + j] = special::kMask;
    readouts[i].position = c + i;
  }
  const auto logits = model.logits_batch(readouts);
  std::vector<double> per_token(completion.size());
  for (std::size_t i = 0; i < completion.size(); ++i) per_token[i] = log_prob_of(logits[i], completion[i]);
  return finish(completion, std::move(per_token));
}

std::vector<std::size_t> word_starts(std::span<const std::size_t> word_lengths, std::size_t k) {
  std::vector<std::size_t> start_of(k);
  std::size_t pos = 0;
  for (auto len : word_lengths) {
    if (len == 0) throw std::invalid_argument("word partition has an empty word");
    if (pos + len > k) throw std::invalid_argument("word partition overruns the completion");
    for (std::size_t j = 0; j < len; ++j) start_of[pos + j] = pos;
    pos += len;
  }
  if (pos != k) throw std::invalid_argument("word partition does not cover the completion");
  return start_of;
}

std::vector<std::size_t> word_ends(std::span<const std::size_t> word_lengths, std::size_t k) {
  std::vector<std::size_t> end_of(k);
  std::size_t pos = 0;
  for (auto len : word_lengths) {
    for (std::size_t j = 0; j < len; ++j) end_of[pos + j] = pos + len;
    pos += len;
  }
  return end_of;
}

}  // namespace

void ScoringMethod::validate() const {
  if (normalize_by_unconditional && !answer_context) {
    throw ConfigError("scoring.answer_context", "required when normalizing by the unconditional score");
  }
  generation.validate();
}

std::string ScoringMethod::name() const {
  switch (kind) {
    case ScoringKind::exact_unidirectional: return "exact_unidirectional";
    case ScoringKind::pll: return "pll_m" + std::to_string(n_extra_masks);
    case ScoringKind::pll_word_l2r: return "pll_word_l2r";
    case ScoringKind::pll_whole_word: return "pll_whole_word";
  }
  return "?";
}

ScoringMethod scoring_method_from_string(const std::string& name) {
  ScoringMethod m;
  if (name == "exact_unidirectional") {
    m.kind = ScoringKind::exact_unidirectional;
  } else if (name == "pll_word_l2r") {
    m.kind = ScoringKind::pll_word_l2r;
  } else if (name == "pll_whole_word") {
    m.kind = ScoringKind::pll_whole_word;
  } else if (name == "pll") {
    m.kind = ScoringKind::pll;
  } else if (name.rfind("pll_m", 0) == 0 && name.size() > 5 &&
             name.find_first_not_of("0123456789", 5) == std::string::npos) {
    m.kind = ScoringKind::pll;
    m.n_extra_masks = std::stoul(name.substr(5));
  } else {
    throw ConfigError("scoring.method", "unknown scoring method '" + name + "'");
  }
  return m;
}

void to_json(nlohmann::json& j, const ScoringMethod& m) {
  j = nlohmann::json{{"method", m.name()},
                     {"normalize_by_unconditional", m.normalize_by_unconditional},
                     {"pad_masks", m.pad_masks},
                     {"append_sep", m.append_sep},
                     {"generation", m.generation}};
  if (m.answer_context) j["answer_context"] = *m.answer_context;
}

void from_json(const nlohmann::json& j, ScoringMethod& m) {
  if (!j.is_object()) throw ConfigError("scoring", "expected an object");
  ScoringMethod out;
  if (j.contains("method")) out = scoring_method_from_string(j.at("method").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "method") continue;
      if (key == "normalize_by_unconditional") out.normalize_by_unconditional = value.get<bool>();
      else if (key == "pad_masks") out.pad_masks = value.get<std::size_t>();
      else if (key == "append_sep") out.append_sep = value.get<bool>();
      else if (key == "generation") out.generation = value.get<GenerationConfig>();
      else if (key == "answer_context") out.answer_context = value.get<std::vector<TokenId>>();
      else throw ConfigError("scoring." + key, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("scoring." + key, e.what());
    }
  }
  m = std::move(out);
}

ScoredCandidate score_exact_unidirectional(const MaskedLM& model, std::span<const TokenId> context,
                                           std::span<const TokenId> completion,
                                           const GenerationConfig& cfg) {
  require_completion(completion);
  std::vector<std::vector<TokenId>> prefixes(completion.size());
  for (std::size_t i = 0; i < completion.size(); ++i) {
    prefixes[i].assign(context.begin(), context.end());
    prefixes[i].insert(prefixes[i].end(), completion.begin(),
                       completion.begin() + static_cast<std::ptrdiff_t>(i));
  }
  const auto dists = next_token_log_dists(model, prefixes, cfg);
  std::vector<double> per_token(completion.size());
  for (std::size_t i = 0; i < completion.size(); ++i) {
    per_token[i] = dists[i][static_cast<std::size_t>(completion[i])];
  }
  return finish(completion, std::move(per_token));
}

ScoredCandidate score_pll(const MaskedLM& model, std::span<const TokenId> context,
                          std::span<const TokenId> completion, std::size_t n_extra_masks,
                          std::size_t pad_masks, bool append_sep) {
  require_completion(completion);
  const std::size_t k = completion.size();
  std::vector<std::size_t> begin(k), end(k);
  for (std::size_t i = 0; i < k; ++i) {
    begin[i] = i;
    end[i] = std::min(i + n_extra_masks + 1, k);
  }
  return score_masked(model, context, completion, begin, end, pad_masks, append_sep);
}

ScoredCandidate score_pll_word_l2r(const MaskedLM& model, std::span<const TokenId> context,
                                   std::span<const TokenId> completion,
                                   std::span<const std::size_t> word_lengths, std::size_t pad_masks,
                                   bool append_sep) {
  require_completion(completion);
  const std::size_t k = completion.size();
  word_starts(word_lengths, k);  // validates
  const auto end = word_ends(word_lengths, k);
  std::vector<std::size_t> begin(k);
  for (std::size_t i = 0; i < k; ++i) begin[i] = i;
  return score_masked(model, context, completion, begin, end, pad_masks, append_sep);
}

ScoredCandidate score_pll_whole_word(const MaskedLM& model, std::span<const TokenId> context,
                                     std::span<const TokenId> completion,
                                     std::span<const std::size_t> word_lengths,
                                     std::size_t pad_masks, bool append_sep) {
  require_completion(completion);
  const std::size_t k = completion.size();
  const auto begin = word_starts(word_lengths, k);
  const auto end = word_ends(word_lengths, k);
  return score_masked(model, context, completion, begin, end, pad_masks, append_sep);
}

ScoredCandidate score_candidate(const MaskedLM& model, std::span<const TokenId> context,
                                const Candidate& candidate, const ScoringMethod& method) {
  std::vector<std::size_t> words = candidate.word_lengths;
  if (words.empty()) words.assign(candidate.tokens.size(), 1);
  switch (method.kind) {
    case ScoringKind::exact_unidirectional:
      return score_exact_unidirectional(model, context, candidate.tokens, method.generation);
    case ScoringKind::pll:
      return score_pll(model, context, candidate.tokens, method.n_extra_masks, method.pad_masks,
                       method.append_sep);
    case ScoringKind::pll_word_l2r:
      return score_pll_word_l2r(model, context, candidate.tokens, words, method.pad_masks,
                                method.append_sep);
    case ScoringKind::pll_whole_word:
      return score_pll_whole_word(model, context, candidate.tokens, words, method.pad_masks,
                                  method.append_sep);
  }
  throw std::logic_error("unhandled scoring kind");
}

RankResult rank(const MaskedLM& model, std::span<const TokenId> context,
                std::span<const Candidate> candidates, const ScoringMethod& method) {
  method.validate();
  if (candidates.size() < 2) throw std::invalid_argument("rank needs at least two candidates");
  RankResult r;
  for (const auto& c : candidates) {
    r.scores.push_back(score_candidate(model, context, c, method));
    double d = r.scores.back().score;
    if (method.normalize_by_unconditional) {
      r.unconditional.push_back(score_candidate(model, *method.answer_context, c, method));
      d -= r.unconditional.back().score;
    }
    r.decision.push_back(d);
  }
  for (std::size_t i = 1; i < r.decision.size(); ++i) {
    if (r.decision[i] > r.decision[r.winner]) r.winner = i;
  }
  return r;
}

void write_score_table(std::ostream& out, std::span<const ScoredCandidate> scores,
                       const std::string& method) {
  for (std::size_t i = 0; i < scores.size(); ++i) {
    nlohmann::json j{{"index", i},
                     {"tokens", scores[i].tokens},
                     {"method", method},
                     {"score", scores[i].score},
                     {"per_token", scores[i].per_token}};
    out << j.dump() << '\n';
  }
}

}  // namespace mlmgen
