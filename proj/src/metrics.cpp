#include "mlmgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mlmgen {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": prediction and gold counts differ");
  if (a == 0) throw std::invalid_argument(std::string(what) + ": no examples");
}

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

}  // namespace

Tokens whitespace_tokens(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double accuracy(std::span<const std::string> predictions, std::span<const std::string> gold) {
  require_same_size(predictions.size(), gold.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double macro_f1(std::span<const std::string> predictions, std::span<const std::string> gold) {
  require_same_size(predictions.size(), gold.size(), "macro_f1");
  std::set<std::string> labels(gold.begin(), gold.end());
  labels.insert(predictions.begin(), predictions.end());
  double total = 0.0;
  for (const auto& label : labels) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool p = predictions[i] == label, g = gold[i] == label;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    if (tp > 0) total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  return total / static_cast<double>(labels.size());
}

double token_f1(std::span<const std::string> prediction, std::span<const std::string> gold) {
  if (prediction.empty() && gold.empty()) return 1.0;
  if (prediction.empty() || gold.empty()) return 0.0;
  std::map<std::string, std::size_t> g;
  for (const auto& t : gold) ++g[t];
  std::size_t common = 0;
  for (const auto& t : prediction) {
    auto it = g.find(t);
    if (it != g.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(prediction.size());
  const double r = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

bool exact_match(const std::string& prediction, const std::string& gold) {
  return whitespace_tokens(prediction) == whitespace_tokens(gold);
}

double bleu(std::span<const Tokens> hypotheses, std::span<const Tokens> references) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: hypothesis and reference counts differ");
  }
  constexpr std::size_t kOrder = 4;
  std::size_t matches[kOrder] = {}, totals[kOrder] = {};
  std::size_t sys_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    sys_len += hypotheses[s].size();
    ref_len += references[s].size();
    for (std::size_t n = 1; n <= kOrder; ++n) {
      const auto hyp = ngram_counts(hypotheses[s], n);
      const auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, count] : hyp) {
        totals[n - 1] += count;
        auto it = ref.find(gram);
        if (it != ref.end()) matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (sys_len == 0) return 0.0;
  double log_sum = 0.0;
  double smooth = 1.0;
  for (std::size_t n = 0; n < kOrder; ++n) {
    if (totals[n] == 0) return 0.0;
    double p;
    if (matches[n] == 0) {
      smooth *= 2.0;
      p = 1.0 / (smooth * static_cast<double>(totals[n]));
    } else {
      p = static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    }
    log_sum += std::log(p);
  }
  const double bp = sys_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(sys_len))
                        : 1.0;
  return 100.0 * bp * std::exp(log_sum / kOrder);
}

}  // namespace mlmgen
