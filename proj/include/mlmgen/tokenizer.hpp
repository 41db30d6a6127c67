#pragma once

// Whitespace/character hybrid tokenizer. Text is split on whitespace; each
// digit and each ASCII punctuation character becomes its own token; the
// newline separator (see TokenizerOptions) is kept as one atomic token.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mlmgen {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
inline constexpr TokenId kFirstDigit = 5;  // "0".."9" occupy 5..14
inline constexpr TokenId kFirstRegular = 15;
}  // namespace special

inline constexpr std::string_view kSpecialTokens[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                      "[MASK]"};

struct TokenizerOptions {
  /// Replacement for '\n' before splitting: a double-escaped "\\n" plus a space.
  std::string newline_separator = "\\\\n ";

  /// The separator with surrounding whitespace trimmed; this is the token text.
  std::string separator_token() const;
};

class Vocabulary {
 public:
  Vocabulary();  // specials + digits only

  std::size_t size() const { return id_to_token_.size(); }
  /// UNK for unknown strings.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  /// Throws std::out_of_range for invalid ids.
  const std::string& token(TokenId id) const;
  TokenId digit_id(int digit) const { return special::kFirstDigit + digit; }
  bool is_digit(TokenId id) const {
    return id >= special::kFirstDigit && id < special::kFirstDigit + 10;
  }
  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }
  std::span<const std::string> tokens() const { return id_to_token_; }

  /// Appends a token if absent; returns its id.
  TokenId add(const std::string& token);

  /// One token per line, line number == id.
  void save(std::ostream& out) const;
  std::string serialize() const;
  static Vocabulary load(std::istream& in);
  static Vocabulary load_file(const std::string& path);
  void save_file(const std::string& path) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Splits text into token strings (newline replacement included).
std::vector<std::string> split_tokens(std::string_view text, const TokenizerOptions& options = {});

/// Same split, but also returns how many tokens each whitespace-delimited
/// word produced (e.g. "42." is one word of three tokens).
std::vector<std::string> split_tokens_with_words(std::string_view text,
                                                 std::vector<std::size_t>& word_lengths,
                                                 const TokenizerOptions& options = {});

/// Frequency-ranked vocabulary: specials, then digits, then tokens by
/// descending count with lexicographic tie-break. Requires max_size >= 16.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t max_size,
                       const TokenizerOptions& options = {});

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab, bool add_cls = false,
                            bool add_sep = false, const TokenizerOptions& options = {});

/// Drops specials and joins the remaining tokens with single spaces.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

/// Canonical spacing: decode(encode(text)) for in-vocabulary text.
std::string normalize_whitespace(std::string_view text, const TokenizerOptions& options = {});

}  // namespace mlmgen
