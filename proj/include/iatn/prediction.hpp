// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iatn/encoder.hpp"
#include "iatn/error.hpp"
#include "iatn/log.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/optim.hpp"

namespace iatn {

struct PredictionParams {
  Var w_ih;  // (u x |V|)
  Var b_ih;  // (u)
  Var w_ho;  // (|A| x u)
  Var b_ho;  // (|A|)

  static PredictionParams create(nd::ParamStore& store, std::size_t vocab_size,
                                 std::size_t hidden, std::size_t answers, nd::Rng& rng,
                                 double init_std) {
    PredictionParams p;
    p.w_ih = store.add("pred.W_ih", nd::init_normal({hidden, vocab_size}, rng, 0.0, init_std));
    p.b_ih = store.add("pred.b_ih", nd::Tensor({hidden}));
    p.w_ho = store.add("pred.W_ho", nd::init_normal({answers, hidden}, rng, 0.0, init_std));
    p.b_ho = store.add("pred.b_ho", nd::Tensor({answers}));
    return p;
  }

  static PredictionParams bind(const nd::ParamStore& store) {
    return {store.get("pred.W_ih"), store.get("pred.b_ih"), store.get("pred.W_ho"),
            store.get("pred.b_ho")};
  }
};

/// z_w = (1 / pi(w)) * sum of d_hat over the positions holding w; zero for
/// words absent from the stacked documents.
inline Var relevance_scores(const Var& doc_weights, const StackedDocuments& docs,
                            std::size_t vocab_size) {
  if (doc_weights->value().size() != docs.length()) {
    throw ShapeError("relevance_scores: " + std::to_string(doc_weights->value().size()) +
                     " weights for " + std::to_string(docs.length()) + " positions");
  }
  std::vector<double> weight(docs.length());
  for (std::size_t i = 0; i < docs.length(); ++i) {
    weight[i] = 1.0 / static_cast<double>(docs.pi.at(docs.sigma[i]));
  }
  return nd::scatter_add(doc_weights, docs.sigma, std::move(weight), vocab_size);
}

struct PredictionOutput {
  Var logits;
  Var probabilities;  // sigmoid(logits), one independent score per answer
};

/// y = sigmoid(W_ho relu(W_ih z + b_ih) + b_ho), with dropout on the hidden
/// layer in train mode.
inline PredictionOutput predict_answers(const Var& z, const PredictionParams& p, nd::Mode mode,
                                        nd::Rng* rng, double hidden_dropout = 0.5) {
  Var hidden = nd::relu(nd::affine(p.w_ih, z, p.b_ih));
  hidden = nd::dropout(hidden, hidden_dropout, mode, rng);
  Var logits = nd::affine(p.w_ho, hidden, p.b_ho);
  return {logits, nd::sigmoid(logits)};
}

struct RankedAnswer {
  int answer = 0;
  double score = 0.0;
  friend bool operator==(const RankedAnswer&, const RankedAnswer&) = default;
};

/// The k best answers by score, ties to the lower answer id.
inline std::vector<RankedAnswer> rank_answers(std::span<const double> scores, int k) {
  if (k < 1) throw Error("rank_answers: k must be >= 1");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = std::min(order.size(), static_cast<std::size_t>(k));
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep),
                    order.end(), [&](int a, int b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::vector<RankedAnswer> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back({order[i], scores[order[i]]});
  return out;
}

/// Enumerated candidate answers; the output layer has one unit per entry.
class AnswerCatalog {
 public:
  AnswerCatalog() = default;
  explicit AnswerCatalog(const std::vector<std::string>& answers) {
    for (const auto& a : answers) add(a);
  }

  int add(const std::string& answer) {
    auto [it, inserted] = ids_.try_emplace(answer, static_cast<int>(answers_.size()));
    if (inserted) answers_.push_back(answer);
    return it->second;
  }

  /// -1 when absent.
  int id(const std::string& answer) const {
    auto it = ids_.find(answer);
    return it == ids_.end() ? -1 : it->second;
  }

  const std::string& surface(int id) const { return answers_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return answers_.size(); }
  const std::vector<std::string>& answers() const { return answers_; }

  friend bool operator==(const AnswerCatalog& a, const AnswerCatalog& b) {
    return a.answers_ == b.answers_;
  }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> answers_;
};

/// Multi-hot target over the catalog. Gold answers missing from the catalog
/// are logged and dropped.
inline nd::Tensor training_targets(const std::vector<std::string>& gold,
                                   const AnswerCatalog& catalog) {
  if (catalog.size() == 0) throw Error("training_targets: empty answer catalog");
  nd::Tensor target({catalog.size()});
  for (const auto& g : gold) {
    const int id = catalog.id(g);
    if (id < 0) {
      log::debug("gold answer '" + g + "' not in catalog; dropped");
      continue;
    }
    target[static_cast<std::size_t>(id)] = 1.0;
  }
  if (std::all_of(target.data().begin(), target.data().end(), [](double v) { return v == 0.0; })) {
    log::debug("example has no catalog answer; target is all zero");
  }
  return target;
}

}  // namespace iatn
