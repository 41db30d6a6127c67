#pragma once

// Built-in synthetic tasks over the toy grammar. Each draws `size` eval
// examples and a train pool of the same size from independent streams.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mlmgen/harness.hpp"

namespace mlmgen {

/// Classification (macro-F1): after "<subject> <verb>", does the sentence
/// continue with "the" (transitive verb) or end with "."?  Intransitive
/// verbs only.
TaskSpec transitivity_task(std::size_t size, std::uint64_t seed);

/// Completion ranking: a sentence head and four continuations, the gold one
/// plus three scrambled orders of the same words.
TaskSpec completion_task(std::size_t size, std::uint64_t seed);

/// Generation (BLEU): "SRC: s TGT:" completed with the upper-cased sentence.
TaskSpec translation_task(std::size_t size, std::uint64_t seed);

/// Generation (exact match): the needle question over a short haystack.
TaskSpec digit_qa_task(std::size_t size, std::uint64_t seed, std::size_t max_len = 64);

/// Ranking between a single adverb and the idiom in the adverbial slot; the
/// adverb is gold since each adverb is more frequent than the idiom.
TaskSpec idiom_task(std::size_t size, std::uint64_t seed, const std::string& idiom = "every blue moon");

std::vector<std::string> builtin_task_names();
TaskSpec builtin_task(const std::string& name, std::size_t size, std::uint64_t seed);

}  // namespace mlmgen
