#pragma once

// Rule-based tweet normalization: tokenization, dictionary replacement,
// lemma lookup, emoji clustering and regex clean-up.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sentitree/error.hpp"
#include "sentitree/io.hpp"

namespace sentitree::preprocess {

struct Token {
  std::string surface;
  std::optional<std::string> lemma;
  std::optional<std::string> replaced_from;

  friend bool operator==(const Token&, const Token&) = default;
};

using TokenStream = std::vector<Token>;

inline std::vector<std::string> surfaces(const TokenStream& stream, bool prefer_lemma = false) {
  std::vector<std::string> out;
  out.reserve(stream.size());
  for (const auto& t : stream) out.push_back(prefer_lemma && t.lemma ? *t.lemma : t.surface);
  return out;
}

inline TokenStream make_stream(const std::vector<std::string>& words) {
  TokenStream s;
  for (const auto& w : words) s.push_back({w, std::nullopt, std::nullopt});
  return s;
}

inline std::string join(const TokenStream& stream, bool prefer_lemma = false) {
  std::string out;
  for (const auto& w : surfaces(stream, prefer_lemma)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// UTF-8 and character classes

namespace unicode {

struct Decoded {
  char32_t cp;
  std::size_t len;
};

/// Decodes one codepoint; malformed bytes decode as U+FFFD of length 1.
inline Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto byte = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    char32_t cp = (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
    if (cp >= 0x80) return {cp, 2};
  } else if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    char32_t cp = (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
    if (cp >= 0x800) return {cp, 3};
  } else if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    char32_t cp = (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) | (byte(2) << 6) | byte(3);
    if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
  }
  return {0xFFFD, 1};
}

inline bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == 0x85 || c == 0xA0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

inline bool is_emoji_base(char32_t c) {
  return (c >= 0x1F000 && c <= 0x1FAFF) || (c >= 0x2600 && c <= 0x27BF) || (c >= 0x2300 && c <= 0x23FF) ||
         (c >= 0x2B00 && c <= 0x2BFF) || c == 0x3030 || c == 0x303D || c == 0x3297 || c == 0x3299;
}

inline bool is_emoji_modifier(char32_t c) {
  return c == 0xFE0F || c == 0xFE0E || (c >= 0x1F3FB && c <= 0x1F3FF) || c == 0x20E3 ||
         (c >= 0xE0020 && c <= 0xE007F);
}

inline bool is_regional_indicator(char32_t c) { return c >= 0x1F1E6 && c <= 0x1F1FF; }

inline bool is_ascii_alpha(char32_t c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool is_ascii_digit(char32_t c) { return c >= '0' && c <= '9'; }

inline bool is_punct(char32_t c) {
  if (c < 0x80) return c > 0x20 && c < 0x7F && !is_ascii_alpha(c) && !is_ascii_digit(c) && c != '_';
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x00A1 && c <= 0x00BF) ||
         (c >= 0x3001 && c <= 0x3003) || c == 0xFFFD;
}

/// Letters, digits, underscore and any other non-space, non-punctuation,
/// non-emoji codepoint.
inline bool is_word(char32_t c) {
  return !is_space(c) && !is_punct(c) && !is_emoji_base(c) && !is_emoji_modifier(c) && !is_regional_indicator(c) &&
         c != 0x200D;
}

inline bool is_emoji_token(std::string_view s) {
  if (s.empty()) return false;
  char32_t c = decode(s, 0).cp;
  return is_emoji_base(c) || is_regional_indicator(c);
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline bool starts_with_icase(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  return ascii_lower(s.substr(0, prefix.size())) == prefix;
}

}  // namespace unicode

inline bool is_url(std::string_view s) {
  return unicode::starts_with_icase(s, "http://") || unicode::starts_with_icase(s, "https://") ||
         unicode::starts_with_icase(s, "www.");
}

inline constexpr std::string_view kUrlToken = "<url>";

inline bool is_punct_token(std::string_view s) {
  if (s.empty()) return false;
  for (std::size_t i = 0; i < s.size();) {
    auto d = unicode::decode(s, i);
    if (!unicode::is_punct(d.cp)) return false;
    i += d.len;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

/// Splits an ASCII camel-case word at lower->upper transitions.
inline std::vector<std::string> split_camel(std::string_view word) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 1; i < word.size(); ++i) {
    char prev = word[i - 1];
    char cur = word[i];
    if (prev >= 'a' && prev <= 'z' && cur >= 'A' && cur <= 'Z') {
      parts.emplace_back(word.substr(start, i - start));
      start = i;
    }
  }
  parts.emplace_back(word.substr(start));
  return parts;
}

/// `<keyword>` placeholders produced by earlier passes are kept whole.
inline std::size_t placeholder_length(std::string_view s, std::size_t i) {
  if (s[i] != '<') return 0;
  std::size_t j = i + 1;
  while (j < s.size() && ((s[j] >= 'a' && s[j] <= 'z') || (s[j] >= '0' && s[j] <= '9') || s[j] == '_' || s[j] == '-'))
    ++j;
  if (j == i + 1 || j >= s.size() || s[j] != '>') return 0;
  return j - i + 1;
}

}  // namespace detail

/// Whitespace/punctuation tokenizer. URLs become `<url>`; @mentions,
/// #hashtags and emoji sequences stay single tokens; camel case is split and
/// the result lowercased.
inline TokenStream tokenize(std::string_view text) {
  using namespace unicode;
  TokenStream out;
  auto emit = [&](std::string surface, std::optional<std::string> from = std::nullopt) {
    if (!surface.empty()) out.push_back({std::move(surface), std::nullopt, std::move(from)});
  };
  std::size_t i = 0;
  bool at_boundary = true;
  while (i < text.size()) {
    auto d = decode(text, i);
    if (is_space(d.cp)) {
      i += d.len;
      at_boundary = true;
      continue;
    }
    if (at_boundary && is_url(text.substr(i))) {
      std::size_t j = i;
      while (j < text.size()) {
        auto e = decode(text, j);
        if (is_space(e.cp)) break;
        j += e.len;
      }
      emit(std::string(kUrlToken), std::string(text.substr(i, j - i)));
      i = j;
      continue;
    }
    at_boundary = false;
    if (std::size_t n = detail::placeholder_length(text, i)) {
      emit(std::string(text.substr(i, n)));
      i += n;
      continue;
    }
    if ((d.cp == '@' || d.cp == '#') && i + 1 < text.size()) {
      std::size_t j = i + 1;
      while (j < text.size()) {
        auto e = decode(text, j);
        if (!is_word(e.cp)) break;
        j += e.len;
      }
      if (j > i + 1) {
        emit(ascii_lower(text.substr(i, j - i)));
        i = j;
        continue;
      }
    }
    if (is_emoji_base(d.cp) || is_regional_indicator(d.cp)) {
      std::size_t j = i + d.len;
      if (is_regional_indicator(d.cp) && j < text.size() && is_regional_indicator(decode(text, j).cp))
        j += decode(text, j).len;
      while (j < text.size()) {
        auto e = decode(text, j);
        if (is_emoji_modifier(e.cp)) {
          j += e.len;
        } else if (e.cp == 0x200D && j + e.len < text.size() && is_emoji_base(decode(text, j + e.len).cp)) {
          j += e.len;
          j += decode(text, j).len;
        } else {
          break;
        }
      }
      emit(std::string(text.substr(i, j - i)));
      i = j;
      continue;
    }
    if (is_word(d.cp)) {
      // Word run; single ' or - between letters and . or , between digits stay inside.
      std::size_t j = i;
      char32_t prev = 0;
      while (j < text.size()) {
        auto e = decode(text, j);
        if (is_word(e.cp)) {
          prev = e.cp;
          j += e.len;
          continue;
        }
        if (j + e.len < text.size()) {
          char32_t next = decode(text, j + e.len).cp;
          bool joins = false;
          if ((e.cp == '\'' || e.cp == '-') && is_word(prev) && !is_ascii_digit(prev) && is_word(next) &&
              !is_ascii_digit(next))
            joins = true;
          if ((e.cp == '.' || e.cp == ',') && is_ascii_digit(prev) && is_ascii_digit(next)) joins = true;
          if (joins) {
            prev = e.cp;
            j += e.len;
            continue;
          }
        }
        break;
      }
      for (auto& part : detail::split_camel(text.substr(i, j - i))) emit(ascii_lower(part));
      i = j;
      continue;
    }
    if (d.cp == 0x200D || is_emoji_modifier(d.cp)) {
      i += d.len;  // stray joiner or modifier
      continue;
    }
    emit(std::string(text.substr(i, d.len)));
    i += d.len;
  }
  return out;
}

/// Naive sentence splitter on . ! ? followed by whitespace.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\t' || text[i + 1] == '\n')) {
      auto s = io::trim(text.substr(start, i + 1 - start));
      if (!s.empty()) out.emplace_back(s);
      start = i + 1;
    }
  }
  auto tail = io::trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

// ---------------------------------------------------------------------------
// Regex clean-up

/// Collapses runs of more than two identical letters to two.
inline std::string collapse_letter_runs(std::string_view s) {
  std::string out;
  char32_t prev = 0;
  int run = 0;
  for (std::size_t i = 0; i < s.size();) {
    auto d = unicode::decode(s, i);
    bool letter = unicode::is_word(d.cp) && !unicode::is_ascii_digit(d.cp) && d.cp != '_';
    if (letter && d.cp == prev) {
      ++run;
    } else {
      prev = letter ? d.cp : 0;
      run = 1;
    }
    if (!(letter && run > 2)) out.append(s.substr(i, d.len));
    i += d.len;
  }
  return out;
}

/// URL tokens become `<url>`, runs of identical punctuation tokens collapse
/// to one, and runs of >2 identical letters inside a token collapse to 2.
inline TokenStream normalize_regex(const TokenStream& stream) {
  TokenStream out;
  for (const auto& tok : stream) {
    Token t = tok;
    if (is_url(t.surface)) {
      if (!t.replaced_from) t.replaced_from = t.surface;
      t.surface = std::string(kUrlToken);
    } else if (!is_punct_token(t.surface) && !unicode::is_emoji_token(t.surface)) {
      t.surface = collapse_letter_runs(t.surface);
    }
    if (!out.empty() && is_punct_token(t.surface) && out.back().surface == t.surface) continue;
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Emoji clustering

class EmojiClusterTable {
 public:
  EmojiClusterTable() = default;

  /// `keywords` is the closed set of allowed cluster names; when empty the set
  /// is taken from the mapping itself.
  explicit EmojiClusterTable(std::map<std::string, std::string> clusters, std::set<std::string> keywords = {})
      : clusters_(std::move(clusters)), keywords_(std::move(keywords)) {
    if (keywords_.empty())
      for (const auto& [emoji, kw] : clusters_) keywords_.insert(kw);
    for (const auto& [emoji, kw] : clusters_) {
      if (emoji.empty()) fail(Errc::FormatError, "empty emoji key");
      if (!keywords_.count(kw)) fail(Errc::FormatError, "cluster keyword '" + kw + "' not in configured set");
      for (char c : kw)
        if (c == ' ' || c == '\t') fail(Errc::FormatError, "cluster keyword contains whitespace");
    }
  }

  std::optional<std::string> lookup(std::string_view emoji) const {
    if (auto it = clusters_.find(std::string(emoji)); it != clusters_.end()) return it->second;
    // Retry without variation selectors.
    std::string bare;
    for (std::size_t i = 0; i < emoji.size();) {
      auto d = unicode::decode(emoji, i);
      if (d.cp != 0xFE0F && d.cp != 0xFE0E) bare.append(emoji.substr(i, d.len));
      i += d.len;
    }
    if (auto it = clusters_.find(bare); it != clusters_.end()) return it->second;
    return std::nullopt;
  }

  const std::set<std::string>& keywords() const noexcept { return keywords_; }
  std::size_t size() const noexcept { return clusters_.size(); }

 private:
  std::map<std::string, std::string> clusters_;
  std::set<std::string> keywords_;
};

/// Deduplicates consecutive identical emojis, maps each to its cluster
/// keyword and drops unmapped emojis.
inline TokenStream cluster_emojis(const TokenStream& stream, const EmojiClusterTable& table) {
  TokenStream out;
  const std::string* prev_emoji = nullptr;
  for (const auto& tok : stream) {
    if (!unicode::is_emoji_token(tok.surface)) {
      out.push_back(tok);
      prev_emoji = nullptr;
      continue;
    }
    if (prev_emoji && *prev_emoji == tok.surface) continue;
    prev_emoji = &tok.surface;
    if (auto kw = table.lookup(tok.surface)) out.push_back({*kw, std::nullopt, tok.surface});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dictionary replacement

enum class PatternType { Literal, Regex };

class RuleDictionary {
 public:
  struct Entry {
    std::string pattern;
    std::string replacement;
    PatternType type = PatternType::Literal;
  };

  explicit RuleDictionary(bool case_sensitive = false) : case_sensitive_(case_sensitive) {}

  void add(std::string pattern, std::string replacement, PatternType type = PatternType::Literal) {
    if (io::trim(pattern).empty()) fail(Errc::FormatError, "empty dictionary pattern");
    if (replacement.empty()) fail(Errc::FormatError, "empty replacement for '" + pattern + "'");
    for (char c : replacement)
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
        fail(Errc::FormatError, "replacement '" + replacement + "' contains whitespace");
    Compiled c;
    c.index = entries_.size();
    if (type == PatternType::Literal) {
      for (auto w : io::split_ws(pattern)) c.words.push_back(fold(w));
    } else {
      try {
        auto flags = std::regex::ECMAScript | std::regex::optimize;
        if (!case_sensitive_) flags |= std::regex::icase;
        c.re = std::regex(pattern, flags);
      } catch (const std::regex_error& e) {
        fail(Errc::FormatError, "bad regex '" + pattern + "': " + e.what());
      }
    }
    entries_.push_back({std::move(pattern), std::move(replacement), type});
    compiled_.push_back(std::move(c));
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  bool case_sensitive() const noexcept { return case_sensitive_; }

  /// Length (in tokens) of entry `e` matching at `pos`, or 0.
  std::size_t match_length(std::size_t e, const TokenStream& s, std::size_t pos) const {
    const Compiled& c = compiled_[e];
    if (entries_[e].type == PatternType::Regex) return std::regex_match(s[pos].surface, *c.re) ? 1 : 0;
    if (pos + c.words.size() > s.size()) return 0;
    for (std::size_t k = 0; k < c.words.size(); ++k)
      if (fold(s[pos + k].surface) != c.words[k]) return 0;
    return c.words.size();
  }

 private:
  struct Compiled {
    std::size_t index = 0;
    std::vector<std::string> words;
    std::optional<std::regex> re;
  };

  std::string fold(std::string_view w) const { return case_sensitive_ ? std::string(w) : unicode::ascii_lower(w); }

  bool case_sensitive_;
  std::vector<Entry> entries_;
  std::vector<Compiled> compiled_;
};

/// Single left-to-right pass; at each position the longest matching entry
/// wins (ties: first entry). Replacement output is not re-matched.
inline TokenStream replace_dict(const TokenStream& stream, const RuleDictionary& dict) {
  TokenStream out;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    std::size_t best_len = 0;
    std::size_t best = 0;
    for (std::size_t e = 0; e < dict.entries().size(); ++e) {
      std::size_t len = dict.match_length(e, stream, pos);
      if (len > best_len) {
        best_len = len;
        best = e;
      }
    }
    if (best_len == 0) {
      out.push_back(stream[pos]);
      ++pos;
      continue;
    }
    std::string from;
    for (std::size_t k = 0; k < best_len; ++k) {
      if (k) from += ' ';
      from += stream[pos + k].surface;
    }
    out.push_back({dict.entries()[best].replacement, std::nullopt, std::move(from)});
    pos += best_len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lemma lookup

class LemmaTable {
 public:
  LemmaTable() = default;
  explicit LemmaTable(std::unordered_map<std::string, std::string> table) : table_(std::move(table)) {}

  std::optional<std::string> lookup(std::string_view w) const {
    if (auto it = table_.find(std::string(w)); it != table_.end()) return it->second;
    return std::nullopt;
  }
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::unordered_map<std::string, std::string> table_;
};

inline TokenStream lemmatize(const TokenStream& stream, const LemmaTable& table) {
  TokenStream out = stream;
  for (auto& t : out)
    if (auto l = table.lookup(t.surface)) t.lemma = *l;
  return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {
inline std::vector<std::string_view> tsv_fields(std::string_view line) { return io::split(io::strip_cr(line), '\t'); }
}  // namespace detail

/// `pattern<TAB>replacement<TAB>type` with type in {literal, regex}; the
/// type column may be omitted (literal).
inline RuleDictionary load_dictionary(const std::filesystem::path& path, bool case_sensitive = false) {
  RuleDictionary dict(case_sensitive);
  std::size_t line_no = 0;
  for (const auto& line : io::read_lines(path)) {
    ++line_no;
    if (io::trim(line).empty() || line.front() == '#') continue;
    auto f = detail::tsv_fields(line);
    if (f.size() < 2 || f.size() > 3)
      fail(Errc::FormatError, path.string() + ":" + std::to_string(line_no) + ": expected 2 or 3 columns");
    PatternType type = PatternType::Literal;
    if (f.size() == 3) {
      auto t = io::trim(f[2]);
      if (t == "regex") {
        type = PatternType::Regex;
      } else if (t != "literal") {
        fail(Errc::FormatError, path.string() + ":" + std::to_string(line_no) + ": unknown type '" + std::string(t) + "'");
      }
    }
    dict.add(std::string(f[0]), std::string(io::trim(f[1])), type);
  }
  return dict;
}

/// `emoji<TAB>cluster`.
inline EmojiClusterTable load_emoji_table(const std::filesystem::path& path) {
  std::map<std::string, std::string> clusters;
  std::size_t line_no = 0;
  for (const auto& line : io::read_lines(path)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    auto f = detail::tsv_fields(line);
    if (f.size() != 2) fail(Errc::FormatError, path.string() + ":" + std::to_string(line_no) + ": expected 2 columns");
    clusters[std::string(io::trim(f[0]))] = std::string(io::trim(f[1]));
  }
  return EmojiClusterTable(std::move(clusters));
}

/// `word<TAB>lemma`.
inline LemmaTable load_lemma_table(const std::filesystem::path& path) {
  std::unordered_map<std::string, std::string> table;
  std::size_t line_no = 0;
  for (const auto& line : io::read_lines(path)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    auto f = detail::tsv_fields(line);
    if (f.size() != 2) fail(Errc::FormatError, path.string() + ":" + std::to_string(line_no) + ": expected 2 columns");
    table[std::string(io::trim(f[0]))] = std::string(io::trim(f[1]));
  }
  return LemmaTable(std::move(table));
}

// ---------------------------------------------------------------------------
// Full pipeline

struct Pipeline {
  std::optional<RuleDictionary> dictionary;
  std::optional<EmojiClusterTable> emojis;
  std::optional<LemmaTable> lemmas;

  /// tokenize -> dictionary -> lemma -> emoji -> regex -> dictionary
  TokenStream operator()(std::string_view text) const {
    TokenStream s = tokenize(text);
    if (dictionary) s = replace_dict(s, *dictionary);
    if (lemmas) s = lemmatize(s, *lemmas);
    if (emojis) s = cluster_emojis(s, *emojis);
    s = normalize_regex(s);
    if (dictionary) s = replace_dict(s, *dictionary);
    return s;
  }
};

}  // namespace sentitree::preprocess
