#pragma once

#include <span>
#include <string>
#include <vector>

namespace mlmgen {

using Tokens = std::vector<std::string>;

/// Whitespace split.
Tokens whitespace_tokens(const std::string& text);

double accuracy(std::span<const std::string> predictions, std::span<const std::string> gold);

/// Unweighted mean of per-class F1 over every label seen in gold or predictions.
double macro_f1(std::span<const std::string> predictions, std::span<const std::string> gold);

/// Multiset overlap F1; two empty sequences score 1.
double token_f1(std::span<const std::string> prediction, std::span<const std::string> gold);

/// Equality after collapsing whitespace runs and trimming.
bool exact_match(const std::string& prediction, const std::string& gold);

/// Corpus BLEU in [0, 100]: 4-gram precisions with exponential smoothing
/// (the k-th zero-match order uses 1 / (2^k * total)), brevity penalty
/// exp(1 - ref/sys) when sys < ref. Zero for an empty system output.
double bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references);

}  // namespace mlmgen
