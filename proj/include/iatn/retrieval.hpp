// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "iatn/error.hpp"
#include "iatn/textpipe.hpp"

namespace iatn {

/// One knowledge-base fact treated as a text document.
struct FactDocument {
  int id = 0;
  TokenSequence tokens;
  std::string raw;
  friend bool operator==(const FactDocument&, const FactDocument&) = default;
};

struct Posting {
  int doc = 0;  // position in InvertedIndex::documents()
  int tf = 0;
  friend bool operator==(const Posting&, const Posting&) = default;
};

struct ScoredDocument {
  const FactDocument* doc = nullptr;
  double score = 0.0;
};

/// Term -> postings index over fact documents, scored with
/// score(q, d) = sum over distinct query terms t of tf(t, d) * ln(1 + N / df(t)).
class InvertedIndex {
 public:
  InvertedIndex() = default;

  explicit InvertedIndex(std::vector<FactDocument> docs) : docs_(std::move(docs)) {
    std::vector<int> order(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return docs_[a].id < docs_[b].id; });
    for (std::size_t k = 1; k < order.size(); ++k) {
      if (docs_[order[k]].id == docs_[order[k - 1]].id) {
        throw Error("index_documents: duplicate document id " +
                    std::to_string(docs_[order[k]].id));
      }
    }
    for (int pos : order) {
      std::map<std::string, int> counts;
      for (const Token& t : docs_[pos].tokens) ++counts[t.text];
      for (const auto& [term, tf] : counts) postings_[term].push_back({pos, tf});
    }
    for (auto& [term, list] : postings_) {
      df_[term] = static_cast<int>(list.size());
    }
  }

  std::size_t doc_count() const { return docs_.size(); }
  const std::vector<FactDocument>& documents() const { return docs_; }

  int doc_freq(const std::string& term) const {
    auto it = df_.find(term);
    return it == df_.end() ? 0 : it->second;
  }

  const std::vector<Posting>& postings(const std::string& term) const {
    static const std::vector<Posting> kEmpty;
    auto it = postings_.find(term);
    return it == postings_.end() ? kEmpty : it->second;
  }

  double idf(const std::string& term) const {
    const int df = doc_freq(term);
    if (df == 0) return 0.0;
    return std::log(1.0 + static_cast<double>(docs_.size()) / df);
  }

  /// Top `n` documents with positive score, best first; ties go to the lower
  /// document id. Query terms are visited in sorted order so per-document
  /// sums are accumulated in a fixed order.
  std::vector<ScoredDocument> search(const std::vector<std::string>& query,
                                     std::size_t n = 30) const {
    if (n == 0) throw Error("retrieve: n must be at least 1");
    const std::set<std::string> terms(query.begin(), query.end());
    std::unordered_map<int, double> scores;
    for (const std::string& term : terms) {
      const double w = idf(term);
      for (const Posting& p : postings(term)) scores[p.doc] += p.tf * w;
    }
    std::vector<ScoredDocument> ranked;
    ranked.reserve(scores.size());
    for (const auto& [pos, score] : scores) {
      if (score > 0.0) ranked.push_back({&docs_[static_cast<std::size_t>(pos)], score});
    }
    auto better = [](const ScoredDocument& a, const ScoredDocument& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc->id < b.doc->id;
    };
    if (ranked.size() > n) {
      std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n),
                        ranked.end(), better);
      ranked.resize(n);
    } else {
      std::sort(ranked.begin(), ranked.end(), better);
    }
    return ranked;
  }

 private:
  std::vector<FactDocument> docs_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, int> df_;
};

inline InvertedIndex index_documents(std::vector<FactDocument> docs) {
  return InvertedIndex(std::move(docs));
}

/// The retrieval operator: ranked fact documents for an already
/// stopword-filtered query.
inline std::vector<FactDocument> retrieve(const TokenSequence& query, const InvertedIndex& index,
                                          std::size_t n = 30) {
  std::vector<FactDocument> out;
  for (const ScoredDocument& s : index.search(texts(query), n)) out.push_back(*s.doc);
  return out;
}

}  // namespace iatn
