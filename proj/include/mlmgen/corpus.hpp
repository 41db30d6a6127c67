#pragma once

// Synthetic corpora for desk-scale training, all expanded deterministically
// from a seed. Lines are plain text; tokenization happens downstream.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlmgen/rng.hpp"

namespace mlmgen {

enum class CorpusKind { grammar_sentences, parallel_pairs, digit_facts, idiom_injected };

CorpusKind corpus_kind_from_string(const std::string& name);
std::string to_string(CorpusKind kind);

struct CorpusSpec {
  CorpusKind kind = CorpusKind::grammar_sentences;
  std::size_t size = 1000;  // lines
  std::uint64_t seed = 1;
  /// Fixed phrase for idiom_injected; it takes the adverbial slot of a
  /// sentence with probability idiom_rate.
  std::string idiom = "every blue moon";
  double idiom_rate = 0.1;
  /// Token budget per line for digit_facts, counting CLS and SEP.
  std::size_t max_len = 64;
  /// Consecutive lines joined by '\n' into one document; the last document
  /// may be shorter. `size` still counts lines.
  std::size_t lines_per_document = 1;
};

std::vector<std::string> make_corpus(const CorpusSpec& spec);

/// One sentence of the toy grammar, ending in " .".
/// `idiom` (may be empty) replaces the adverbial with probability `idiom_rate`.
std::string grammar_sentence(Rng& rng, const std::string& idiom = {}, double idiom_rate = 0.0);

/// Grammar sentence split at the adverbial slot: `head` ends with the verb
/// phrase, `tail` is the adverbial (possibly empty) plus " .".
struct SplitSentence {
  std::string head;
  std::string tail;
};
SplitSentence grammar_sentence_split(Rng& rng);

/// Token-wise "translation" used by parallel_pairs: each token upper-cased.
std::string translate_tokens(const std::string& source);

/// "SRC: <s> TGT: <t>" and its prompt form without the target.
std::string parallel_pair_line(const std::string& source);
std::string parallel_pair_prompt(const std::string& source);

struct GrammarLexicon {
  std::vector<std::string> determiners, adjectives, nouns, transitive, intransitive, adverbs,
      prepositions, places;
};
const GrammarLexicon& grammar_lexicon();

/// Single-token adverbs of the grammar (each more frequent than the idiom at
/// the default rate).
const std::vector<std::string>& grammar_adverbs();

// ---------------------------------------------------------------------------
// Needle-in-a-haystack text shared by the digit_facts corpus and the harness.

/// Template with {$prefix_lines}, {$needle} and {$suffix_lines}.
const std::string& needle_template();

/// Tokens contributed by the template around the haystack filler:
/// the needle sentence block counts toward the haystack, the question does not.
std::size_t needle_block_tokens();
std::size_t needle_question_tokens();

/// Filler word stream made of grammar sentences (`sentences` of them).
std::vector<std::string> filler_words(std::uint64_t seed, std::size_t sentences);

/// Renders the needle prompt with exactly `haystack_tokens` haystack tokens:
/// `prefix` filler tokens, the needle block, then the rest as suffix.
/// Throws std::invalid_argument if haystack_tokens < needle_block_tokens().
std::string render_needle_prompt(std::span<const std::string> filler, std::size_t haystack_tokens,
                                 double depth, const std::string& needle);

}  // namespace mlmgen
