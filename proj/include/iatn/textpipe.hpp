// SPDX-License-Identifier: Apache-2.0
//
// Tokenization with multi-word entity recognition, stopword filtering and
// token/id vocabularies.
#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "iatn/error.hpp"

namespace iatn {

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// ASCII punctuation, except '_' which joins relation names such as
/// "starred_actors".
inline bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  if (u >= 0x80 || c == '_') return false;
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
         (c >= '{' && c <= '~');
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

struct Token {
  std::string text;
  bool entity = false;
  friend bool operator==(const Token&, const Token&) = default;
};

using TokenSequence = std::vector<Token>;

inline std::vector<std::string> texts(const TokenSequence& seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (const Token& t : seq) out.push_back(t.text);
  return out;
}

/// Entity surface forms, matched case-insensitively.
class EntityLexicon {
 public:
  EntityLexicon() = default;

  explicit EntityLexicon(const std::vector<std::string>& entries) {
    for (const auto& e : entries) add(e);
  }

  static EntityLexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open entity file '" + path + "'");
    EntityLexicon lex;
    std::string line;
    while (std::getline(in, line)) {
      std::string e = trim(line);
      if (!e.empty()) lex.add(e);
    }
    return lex;
  }

  /// Adds an entry; the first spelling seen becomes the canonical form.
  void add(std::string_view surface) {
    std::string e = trim(surface);
    if (e.empty()) throw Error("entity lexicon entries must be non-empty");
    auto [it, inserted] = canonical_.try_emplace(to_lower(e), e);
    if (inserted) {
      lengths_.insert(e.size());
      entries_.push_back(e);
    }
  }

  bool contains(std::string_view s) const { return canonical_.contains(to_lower(s)); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& entries() const { return entries_; }

  /// Canonical form of the longest entry that starts at `pos` and ends on a
  /// token boundary, or nullptr.
  const std::string* longest_match(std::string_view text, std::size_t pos) const {
    for (std::size_t len : lengths_) {
      if (pos + len > text.size()) continue;
      const std::size_t end = pos + len;
      if (end < text.size() && !is_space(text[end]) && !is_punct(text[end]) &&
          !is_punct(text[end - 1])) {
        continue;
      }
      auto it = canonical_.find(to_lower(text.substr(pos, len)));
      if (it != canonical_.end()) return &it->second;
    }
    return nullptr;
  }

 private:
  std::unordered_map<std::string, std::string> canonical_;
  std::set<std::size_t, std::greater<>> lengths_;
  std::vector<std::string> entries_;
};

/// Scans left to right. At every token start the longest lexicon entry wins
/// and is emitted in canonical form; the rest is split on whitespace with each
/// punctuation character kept as its own token, and lowercased.
inline TokenSequence tokenize(std::string_view text, const EntityLexicon& lexicon) {
  TokenSequence out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back({to_lower(word), false});
      word.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (word.empty() && !is_space(c)) {
      if (const std::string* entity = lexicon.longest_match(text, i)) {
        out.push_back({*entity, true});
        i += entity->size();
        continue;
      }
    }
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.push_back({std::string(1, c), false});
    } else {
      word.push_back(c);
    }
    ++i;
  }
  flush();
  return out;
}

/// The pinned English stopword list (127 words), shipped verbatim as
/// data/stopwords.txt.
inline constexpr std::array<std::string_view, 127> kStopwords = {
    "i",          "me",       "my",      "myself",  "we",      "our",     "ours",
    "ourselves",  "you",      "your",    "yours",   "yourself", "yourselves", "he",
    "him",        "his",      "himself", "she",     "her",     "hers",    "herself",
    "it",         "its",      "itself",  "they",    "them",    "their",   "theirs",
    "themselves", "what",     "which",   "who",     "whom",    "this",    "that",
    "these",      "those",    "am",      "is",      "are",     "was",     "were",
    "be",         "been",     "being",   "have",    "has",     "had",     "having",
    "do",         "does",     "did",     "doing",   "a",       "an",      "the",
    "and",        "but",      "if",      "or",      "because", "as",      "until",
    "while",      "of",       "at",      "by",      "for",     "with",    "about",
    "against",    "between",  "into",    "through", "during",  "before",  "after",
    "above",      "below",    "to",      "from",    "up",      "down",    "in",
    "out",        "on",       "off",     "over",    "under",   "again",   "further",
    "then",       "once",     "here",    "there",   "when",    "where",   "why",
    "how",        "all",      "any",     "both",    "each",    "few",     "more",
    "most",       "other",    "some",    "such",    "no",      "nor",     "not",
    "only",       "own",      "same",    "so",      "than",    "too",     "very",
    "s",          "t",        "can",     "will",    "just",    "don",     "should",
    "now"};

class StopwordList {
 public:
  StopwordList() {
    for (std::string_view w : kStopwords) words_.emplace(w);
  }

  explicit StopwordList(std::vector<std::string> words)
      : words_(words.begin(), words.end()) {}

  static StopwordList load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open stopword file '" + path + "'");
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      std::string w = trim(line);
      if (!w.empty()) words.push_back(to_lower(w));
    }
    return StopwordList(std::move(words));
  }

  bool contains(const std::string& w) const { return words_.contains(w); }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

/// Drops stoplisted non-entity tokens.
inline TokenSequence remove_stopwords(const TokenSequence& tokens,
                                      const StopwordList& stopwords = {}) {
  TokenSequence out;
  for (const Token& t : tokens) {
    if (t.entity || !stopwords.contains(t.text)) out.push_back(t);
  }
  return out;
}

/// Token <-> id map. Ids 0 and 1 are reserved for padding and unknown tokens.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : ids_{{"<pad>", kPad}, {"<unk>", kUnk}}, tokens_{"<pad>", "<unk>"} {}

  int add(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return ids_.contains(token); }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw Error("vocabulary id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }

  /// Corpus tokens in id order (ids 2, 3, ...).
  std::vector<std::string> corpus_tokens() const {
    return {tokens_.begin() + 2, tokens_.end()};
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
};

/// Assigns ids in first-occurrence order.
template <typename Corpus>
Vocabulary build_vocabulary(const Corpus& corpus) {
  Vocabulary vocab;
  for (const auto& seq : corpus)
    for (const auto& tok : seq) {
      if constexpr (std::is_same_v<std::decay_t<decltype(tok)>, Token>) {
        vocab.add(tok.text);
      } else {
        vocab.add(tok);
      }
    }
  return vocab;
}

inline std::vector<int> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

inline std::vector<int> encode(const TokenSequence& tokens, const Vocabulary& vocab) {
  return encode(texts(tokens), vocab);
}

inline std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace iatn
