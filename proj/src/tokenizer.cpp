#include "mlmgen/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mlmgen/errors.hpp"

namespace mlmgen {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string replace_newlines(std::string_view text, const std::string& separator) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '\n') {
      out += separator;
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::string TokenizerOptions::separator_token() const {
  auto begin = newline_separator.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  auto end = newline_separator.find_last_not_of(" \t\r\n");
  return newline_separator.substr(begin, end - begin + 1);
}

Vocabulary::Vocabulary() {
  for (auto s : kSpecialTokens) add(std::string(s));
  for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
}

TokenId Vocabulary::add(const std::string& token) {
  if (auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  const auto id = static_cast<TokenId>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_.emplace(token, id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& t : id_to_token_) out << t << '\n';
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  save(os);
  return os.str();
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < special::kFirstRegular) throw FormatError("vocabulary file too short");
  for (std::size_t i = 0; i < std::size(kSpecialTokens); ++i) {
    if (lines[i] != kSpecialTokens[i]) {
      throw FormatError("vocabulary line " + std::to_string(i + 1) + " must be " +
                        std::string(kSpecialTokens[i]));
    }
  }
  Vocabulary v;
  for (std::size_t i = special::kCount; i < lines.size(); ++i) {
    if (lines[i].empty()) throw FormatError("empty token on vocabulary line " + std::to_string(i + 1));
    if (static_cast<std::size_t>(v.add(lines[i])) != i) {
      throw FormatError("duplicate token '" + lines[i] + "' in vocabulary");
    }
  }
  return v;
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary file " + path);
  return load(in);
}

void Vocabulary::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write vocabulary file " + path);
  save(out);
}

std::vector<std::string> split_tokens_with_words(std::string_view text,
                                                 std::vector<std::size_t>& word_lengths,
                                                 const TokenizerOptions& options) {
  const std::string replaced = replace_newlines(text, options.newline_separator);
  const std::string sep = options.separator_token();
  std::vector<std::string> tokens;
  word_lengths.clear();

  std::size_t i = 0;
  const std::size_t n = replaced.size();
  while (i < n) {
    while (i < n && is_space(replaced[i])) ++i;
    if (i >= n) break;
    std::size_t end = i;
    while (end < n && !is_space(replaced[end])) ++end;
    const std::string_view word(replaced.data() + i, end - i);
    const std::size_t before = tokens.size();

    std::string current;
    auto flush = [&] {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    };
    std::size_t p = 0;
    while (p < word.size()) {
      if (!sep.empty() && word.substr(p, sep.size()) == sep) {
        flush();
        tokens.push_back(sep);
        p += sep.size();
      } else if (is_digit(word[p]) || is_punct(word[p])) {
        flush();
        tokens.emplace_back(1, word[p]);
        ++p;
      } else {
        current += word[p];
        ++p;
      }
    }
    flush();
    word_lengths.push_back(tokens.size() - before);
    i = end;
  }
  return tokens;
}

std::vector<std::string> split_tokens(std::string_view text, const TokenizerOptions& options) {
  std::vector<std::size_t> words;
  return split_tokens_with_words(text, words, options);
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size,
                       const TokenizerOptions& options) {
  if (max_size < 16) throw std::invalid_argument("build_vocab: max_size must be at least 16");
  Vocabulary vocab;
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& line : corpus) {
    for (auto& tok : split_tokens(line, options)) {
      ++total;
      if (vocab.contains(tok)) continue;
      ++counts[tok];
    }
  }
  if (total == 0) throw std::invalid_argument("build_vocab: empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, count] : ranked) {
    if (vocab.size() >= max_size) break;
    vocab.add(tok);
  }
  return vocab;
}

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab, bool add_cls,
                            bool add_sep, const TokenizerOptions& options) {
  std::vector<TokenId> ids;
  if (add_cls) ids.push_back(special::kCls);
  // Special names contain brackets, which split off as punctuation, so
  // text can never produce MASK or PAD.
  for (const auto& tok : split_tokens(text, options)) ids.push_back(vocab.id(tok));
  if (add_sep) ids.push_back(special::kSep);
  return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);
    if (Vocabulary::is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

std::string normalize_whitespace(std::string_view text, const TokenizerOptions& options) {
  std::string out;
  for (const auto& tok : split_tokens(text, options)) {
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

}  // namespace mlmgen
