#include "mlmgen/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mlmgen/prompt.hpp"
#include "mlmgen/tokenizer.hpp"

namespace mlmgen {

namespace {

const std::vector<std::string> kDeterminers = {"the", "a"};
const std::vector<std::string> kAdjectives = {"big", "small", "red", "old", "happy"};
const std::vector<std::string> kNouns = {"cat", "dog", "bird", "man", "girl", "boy", "horse", "fox"};
const std::vector<std::string> kTransitive = {"sees", "likes", "chases", "finds", "helps"};
const std::vector<std::string> kIntransitive = {"sleeps", "runs", "sings", "waits"};
const std::vector<std::string> kAdverbs = {"today", "again"};
const std::vector<std::string> kPrepositions = {"in", "at", "near"};
const std::vector<std::string> kPlaces = {"park", "house", "river", "garden"};

const std::string& pick(const std::vector<std::string>& words, Rng& rng) {
  return words[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(words.size()))];
}

std::string noun_phrase(Rng& rng) {
  std::string np = pick(kDeterminers, rng);
  if (uniform01(rng) < 0.3) np += " " + pick(kAdjectives, rng);
  return np + " " + pick(kNouns, rng);
}

std::string verb_phrase(Rng& rng) {
  if (uniform01(rng) < 0.6) return pick(kTransitive, rng) + " " + noun_phrase(rng);
  return pick(kIntransitive, rng);
}

// none 0.3, single adverb 0.4, three-token place phrase 0.3
std::string adverbial(Rng& rng) {
  const double u = uniform01(rng);
  if (u < 0.3) return {};
  if (u < 0.7) return pick(kAdverbs, rng);
  return pick(kPrepositions, rng) + " the " + pick(kPlaces, rng);
}

std::string join(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::size_t count_tokens(const std::string& text) { return split_tokens(text).size(); }

const std::string kNeedleTemplate =
    "{$prefix_lines}\nThe magic number is {$needle}.\n{$suffix_lines}\n"
    "Question: What is the magic number?\nAnswer: The magic number is";

std::string digit_facts_line(Rng& rng, std::size_t max_len) {
  // CLS + haystack + question + 6 digits + "." + SEP
  const std::size_t overhead = needle_question_tokens() + 9;
  const std::size_t min_hay = needle_block_tokens();
  if (max_len < overhead + min_hay) throw std::invalid_argument("digit_facts: max_len too small");
  const std::size_t max_hay = max_len - overhead;
  const std::size_t hay = min_hay + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(max_hay - min_hay + 1));
  const double depth = uniform01(rng);
  const auto needle = std::to_string(100000 + static_cast<long>(uniform01(rng) * 900000.0));
  const auto filler = filler_words(rng(), hay / 4 + 2);
  return render_needle_prompt(filler, hay, depth, needle) + " " + needle + ".";
}

}  // namespace

CorpusKind corpus_kind_from_string(const std::string& name) {
  if (name == "grammar_sentences") return CorpusKind::grammar_sentences;
  if (name == "parallel_pairs") return CorpusKind::parallel_pairs;
  if (name == "digit_facts") return CorpusKind::digit_facts;
  if (name == "idiom_injected") return CorpusKind::idiom_injected;
  throw std::invalid_argument("unknown corpus kind '" + name + "'");
}

std::string to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::grammar_sentences: return "grammar_sentences";
    case CorpusKind::parallel_pairs: return "parallel_pairs";
    case CorpusKind::digit_facts: return "digit_facts";
    case CorpusKind::idiom_injected: return "idiom_injected";
  }
  return "?";
}

std::string grammar_sentence(Rng& rng, const std::string& idiom, double idiom_rate) {
  std::string s = noun_phrase(rng) + " " + verb_phrase(rng);
  std::string adv = adverbial(rng);
  if (!idiom.empty() && uniform01(rng) < idiom_rate) adv = idiom;
  if (!adv.empty()) s += " " + adv;
  return s + " .";
}

SplitSentence grammar_sentence_split(Rng& rng) {
  SplitSentence out;
  out.head = noun_phrase(rng) + " " + verb_phrase(rng);
  const std::string adv = adverbial(rng);
  out.tail = adv.empty() ? "." : adv + " .";
  return out;
}

const std::vector<std::string>& grammar_adverbs() { return kAdverbs; }

const GrammarLexicon& grammar_lexicon() {
  static const GrammarLexicon lexicon{kDeterminers, kAdjectives,  kNouns,        kTransitive,
                                      kIntransitive, kAdverbs,    kPrepositions, kPlaces};
  return lexicon;
}

std::string translate_tokens(const std::string& source) {
  std::string out;
  for (const auto& tok : split_tokens(source)) {
    std::string t = tok;
    for (auto& c : t) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string parallel_pair_prompt(const std::string& source) { return "SRC: " + source + " TGT:"; }

std::string parallel_pair_line(const std::string& source) {
  return parallel_pair_prompt(source) + " " + translate_tokens(source);
}

std::vector<std::string> make_corpus(const CorpusSpec& spec) {
  Rng rng(spec.seed);
  std::vector<std::string> lines;
  lines.reserve(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    switch (spec.kind) {
      case CorpusKind::grammar_sentences:
        lines.push_back(grammar_sentence(rng));
        break;
      case CorpusKind::idiom_injected:
        lines.push_back(grammar_sentence(rng, spec.idiom, spec.idiom_rate));
        break;
      case CorpusKind::parallel_pairs:
        lines.push_back(parallel_pair_line(grammar_sentence(rng)));
        break;
      case CorpusKind::digit_facts:
        lines.push_back(digit_facts_line(rng, spec.max_len));
        break;
    }
  }
  if (spec.lines_per_document <= 1) return lines;
  std::vector<std::string> docs;
  for (std::size_t i = 0; i < lines.size(); i += spec.lines_per_document) {
    std::string doc = lines[i];
    for (std::size_t j = i + 1; j < std::min(lines.size(), i + spec.lines_per_document); ++j) doc += "\n" + lines[j];
    docs.push_back(std::move(doc));
  }
  return docs;
}

const std::string& needle_template() { return kNeedleTemplate; }

std::size_t needle_block_tokens() {
  // "\n" + "The magic number is" + 6 digits + "." + "\n"
  return 13;
}

std::size_t needle_question_tokens() {
  static const std::size_t n = count_tokens("\nQuestion: What is the magic number?\nAnswer: The magic number is");
  return n;
}

std::vector<std::string> filler_words(std::uint64_t seed, std::size_t sentences) {
  Rng rng(seed);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < sentences; ++i) {
    for (auto& w : split_tokens(grammar_sentence(rng))) words.push_back(std::move(w));
  }
  return words;
}

std::string render_needle_prompt(std::span<const std::string> filler, std::size_t haystack_tokens,
                                 double depth, const std::string& needle) {
  if (haystack_tokens < needle_block_tokens()) {
    throw std::invalid_argument("haystack of " + std::to_string(haystack_tokens) +
                                " tokens cannot hold the needle sentence");
  }
  const std::size_t fill = haystack_tokens - needle_block_tokens();
  if (filler.size() < fill) throw std::length_error("filler exhausted");
  const double clamped = std::clamp(depth, 0.0, 1.0);
  const auto before = static_cast<std::size_t>(std::floor(clamped * static_cast<double>(fill)));
  return render_prompt(needle_template(),
                       {{"prefix_lines", join(filler.subspan(0, before))},
                        {"needle", needle},
                        {"suffix_lines", join(filler.subspan(before, fill - before))}});
}

}  // namespace mlmgen
