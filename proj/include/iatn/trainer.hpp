// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "iatn/config.hpp"
#include "iatn/data.hpp"
#include "iatn/error.hpp"
#include "iatn/log.hpp"
#include "iatn/model.hpp"
#include "iatn/ndgrad/optim.hpp"
#include "iatn/prediction.hpp"
#include "iatn/retrieval.hpp"
#include "iatn/textpipe.hpp"

namespace iatn {

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 5;
  bool literal_patience = false;  // stop after `patience` strictly decreasing evaluations
  double clip_norm = 5.0;
  double l2_embedding = 0.0001;
  double dropout_gates = 0.2;
  double dropout_hidden = 0.5;
  int steps = 3;
  std::size_t embed = 50;
  std::size_t hidden = 128;
  std::size_t state = 128;
  std::size_t pred_hidden = 4096;
  std::size_t gate_hidden = 128;
  bool shared_encoder = true;
  std::size_t retrieval_n = 30;
  int eval_k = 1;
  std::uint64_t seed = 1;
  double init_std = 0.05;
  std::string answer_catalog = "train";  // "train" or "vocabulary"
  int threads = 1;

  KeyValues to_key_values() const {
    return {
        {"lr", to_config_string(lr)},
        {"batch_size", to_config_string(batch_size)},
        {"max_epochs", to_config_string(max_epochs)},
        {"patience", to_config_string(patience)},
        {"literal_patience", to_config_string(literal_patience)},
        {"clip_norm", to_config_string(clip_norm)},
        {"l2_embedding", to_config_string(l2_embedding)},
        {"dropout_gates", to_config_string(dropout_gates)},
        {"dropout_hidden", to_config_string(dropout_hidden)},
        {"T", to_config_string(steps)},
        {"d", to_config_string(embed)},
        {"h", to_config_string(hidden)},
        {"s", to_config_string(state)},
        {"u", to_config_string(pred_hidden)},
        {"g_hidden", to_config_string(gate_hidden)},
        {"shared_encoder", to_config_string(shared_encoder)},
        {"retrieval_n", to_config_string(retrieval_n)},
        {"eval_k", to_config_string(eval_k)},
        {"seed", to_config_string(seed)},
        {"init_std", to_config_string(init_std)},
        {"answer_catalog", answer_catalog},
        {"threads", to_config_string(threads)},
    };
  }

  /// Starts from `base` and overrides the keys present; unknown keys throw.
  static TrainConfig from_key_values(const KeyValues& kv) { return from_key_values(kv, TrainConfig{}); }

  static TrainConfig from_key_values(const KeyValues& kv, TrainConfig c) {
    KeyValueReader r(kv);
    r.read("lr", c.lr);
    r.read("batch_size", c.batch_size);
    r.read("max_epochs", c.max_epochs);
    r.read("patience", c.patience);
    r.read("literal_patience", c.literal_patience);
    r.read("clip_norm", c.clip_norm);
    r.read("l2_embedding", c.l2_embedding);
    r.read("dropout_gates", c.dropout_gates);
    r.read("dropout_hidden", c.dropout_hidden);
    r.read("T", c.steps);
    r.read("d", c.embed);
    r.read("h", c.hidden);
    r.read("s", c.state);
    r.read("u", c.pred_hidden);
    r.read("g_hidden", c.gate_hidden);
    r.read("shared_encoder", c.shared_encoder);
    r.read("retrieval_n", c.retrieval_n);
    r.read("eval_k", c.eval_k);
    r.read("seed", c.seed);
    r.read("init_std", c.init_std);
    r.read("answer_catalog", c.answer_catalog);
    r.read("threads", c.threads);
    r.finish("train config");
    c.validate();
    return c;
  }

  void validate() const {
    if (!(lr >= 0.0) || batch_size < 1 || max_epochs < 1 || patience < 1 || !(clip_norm > 0.0) ||
        !(l2_embedding >= 0.0) || steps < 1 || embed < 1 || hidden < 1 || state < 1 ||
        pred_hidden < 1 || gate_hidden < 1 || retrieval_n < 1 || eval_k < 1 ||
        !(init_std > 0.0) || threads < 1) {
      throw ConfigError("train config: values out of range");
    }
    if (!(dropout_gates >= 0.0 && dropout_gates < 1.0) ||
        !(dropout_hidden >= 0.0 && dropout_hidden < 1.0)) {
      throw ConfigError("train config: dropout rates must be in [0, 1)");
    }
    if (answer_catalog != "train" && answer_catalog != "vocabulary") {
      throw ConfigError("train config: answer_catalog must be 'train' or 'vocabulary'");
    }
  }

  ModelDims dims(std::size_t vocab_size, std::size_t num_answers) const {
    ModelDims d;
    d.vocab_size = vocab_size;
    d.num_answers = num_answers;
    d.embed = embed;
    d.hidden = hidden;
    d.state = state;
    d.pred_hidden = pred_hidden;
    d.gate_hidden = gate_hidden;
    d.steps = steps;
    d.shared_encoder = shared_encoder;
    return d;
  }

  DropoutRates dropout() const { return {dropout_gates, dropout_hidden}; }
};

/// A question made ready for the model: retrieved facts, ids and targets.
struct PreparedExample {
  TokenSequence query_tokens;
  std::vector<FactDocument> docs;
  ExampleInput input;
  nd::Tensor target;
  std::vector<int> gold;  // catalog ids
};

/// Text processing, retrieval and id mapping shared by training and serving.
class QAPipeline {
 public:
  QAPipeline(EntityLexicon lexicon, std::vector<FactDocument> kb, Vocabulary vocab,
             AnswerCatalog catalog, std::size_t retrieval_n)
      : lexicon_(std::move(lexicon)),
        index_(std::move(kb)),
        vocab_(std::move(vocab)),
        catalog_(std::move(catalog)),
        retrieval_n_(retrieval_n) {}

  /// Vocabulary over training questions and KB facts (first-occurrence
  /// order); catalog from training answers or the whole vocabulary.
  static QAPipeline build(const Dataset& ds, const TrainConfig& cfg) {
    std::vector<TokenSequence> corpus;
    for (const QAExample& ex : ds.train) corpus.push_back(ex.tokens);
    for (const FactDocument& f : ds.kb) corpus.push_back(f.tokens);
    Vocabulary vocab = build_vocabulary(corpus);
    AnswerCatalog catalog;
    if (cfg.answer_catalog == "vocabulary") {
      for (const auto& t : vocab.corpus_tokens()) catalog.add(t);
    } else {
      for (const QAExample& ex : ds.train)
        for (const auto& a : ex.answers) catalog.add(a);
    }
    return QAPipeline(ds.lexicon, ds.kb, std::move(vocab), std::move(catalog), cfg.retrieval_n);
  }

  const EntityLexicon& lexicon() const { return lexicon_; }
  const InvertedIndex& index() const { return index_; }
  const Vocabulary& vocab() const { return vocab_; }
  const AnswerCatalog& catalog() const { return catalog_; }
  std::size_t retrieval_n() const { return retrieval_n_; }
  void set_retrieval_n(std::size_t n) { retrieval_n_ = n; }

  PreparedExample prepare_question(const std::string& question,
                                   const std::vector<std::string>& gold = {}) const {
    return prepare_tokens(tokenize(question, lexicon_), gold);
  }

  PreparedExample prepare(const QAExample& ex) const {
    return prepare_tokens(ex.tokens, ex.answers);
  }

 private:
  PreparedExample prepare_tokens(TokenSequence tokens, const std::vector<std::string>& gold) const {
    PreparedExample p;
    p.query_tokens = std::move(tokens);
    p.docs = retrieve(remove_stopwords(p.query_tokens, stopwords_), index_, retrieval_n_);
    p.input.query = encode(p.query_tokens, vocab_);
    for (const FactDocument& d : p.docs) p.input.docs.push_back({d.id, encode(d.tokens, vocab_)});
    p.target = training_targets(gold, catalog_);
    for (const auto& g : gold) {
      if (int id = catalog_.id(g); id >= 0) p.gold.push_back(id);
    }
    return p;
  }

  EntityLexicon lexicon_;
  StopwordList stopwords_;
  InvertedIndex index_;
  Vocabulary vocab_;
  AnswerCatalog catalog_;
  std::size_t retrieval_n_;
};

// ---------------------------------------------------------------------------

/// Patience on a higher-is-better metric. Standard mode stops after
/// `patience` consecutive evaluations without a new best; literal mode after
/// `patience` consecutive strict decreases from the previous evaluation.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience, bool literal = false)
      : patience_(patience), literal_(literal) {}

  /// Records one evaluation; true when training should stop.
  bool observe(double metric) {
    ++count_;
    improved_ = count_ == 1 || metric > best_;
    if (improved_) {
      best_ = metric;
      best_index_ = count_;
    }
    if (literal_) {
      bad_ = (count_ > 1 && metric < previous_) ? bad_ + 1 : 0;
    } else {
      bad_ = improved_ ? 0 : bad_ + 1;
    }
    previous_ = metric;
    return bad_ >= patience_;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }
  int best_index() const { return best_index_; }  // 1-based
  int evaluations() const { return count_; }

 private:
  int patience_;
  bool literal_;
  int count_ = 0;
  int bad_ = 0;
  int best_index_ = 0;
  double best_ = 0.0;
  double previous_ = 0.0;
  bool improved_ = false;
};

struct HitsResult {
  double hits = 0.0;        // fraction of examples with a gold answer in the top k
  double count_hits = 0.0;  // mean fraction of each example's gold answers in the top k
  std::size_t examples = 0;
  int k = 1;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Answer probabilities for one prepared example in eval mode.
inline std::vector<double> predict_scores(const Model& model, const PreparedExample& ex) {
  const ForwardPass pass = model.forward(ex.input, nd::Mode::eval, nullptr);
  return values_of(pass.prediction.probabilities);
}

inline HitsResult hits_from_scores(const std::vector<std::vector<double>>& scores,
                                   const std::vector<std::vector<int>>& gold, int k) {
  if (scores.empty()) throw Error("evaluate_hits: no examples");
  if (k < 1) throw Error("evaluate_hits: k must be >= 1");
  HitsResult r;
  r.k = k;
  r.examples = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto top = rank_answers(scores[i], k);
    std::size_t found = 0;
    for (const RankedAnswer& a : top) {
      if (std::find(gold[i].begin(), gold[i].end(), a.answer) != gold[i].end()) ++found;
    }
    if (found > 0) r.hits += 1.0;
    if (!gold[i].empty()) r.count_hits += static_cast<double>(found) / gold[i].size();
  }
  r.hits /= static_cast<double>(scores.size());
  r.count_hits /= static_cast<double>(scores.size());
  return r;
}

inline HitsResult evaluate_hits(const Model& model, const std::vector<PreparedExample>& examples,
                                int k, int threads = 1) {
  if (examples.empty()) throw Error("evaluate_hits: no examples");
  std::vector<std::vector<double>> scores(examples.size());
  std::vector<std::vector<int>> gold(examples.size());
  detail::parallel_for(examples.size(), threads, [&](std::size_t i) {
    scores[i] = predict_scores(model, examples[i]);
    gold[i] = examples[i].gold;
  });
  return hits_from_scores(scores, gold, k);
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_hits = 0.0;
  double valid_count_hits = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based, 0 when no epoch ran
  bool stopped_early = false;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  TrainHistory history;
};

/// Loss and summed parameter gradients of one minibatch (mean BCE over
/// examples plus the L2 term on the embedding matrix).
struct BatchGradients {
  nd::Gradients grads;
  double loss = 0.0;
};

inline BatchGradients batch_gradients(const Model& model, const std::vector<PreparedExample>& data,
                                      const std::vector<std::size_t>& batch,
                                      const TrainConfig& cfg, std::uint64_t stream) {
  std::vector<nd::Gradients> per_example(batch.size());
  std::vector<double> losses(batch.size());
  detail::parallel_for(batch.size(), cfg.threads, [&](std::size_t b) {
    const std::size_t idx = batch[b];
    nd::Rng rng(nd::Rng::derive(cfg.seed, stream, idx));
    const ForwardPass pass = model.forward(data[idx].input, nd::Mode::train, &rng, cfg.dropout());
    nd::Var loss = nd::bce_loss(pass.prediction.probabilities, data[idx].target);
    losses[b] = loss->value().item();
    per_example[b] = nd::backward(loss);
  });
  BatchGradients out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    nd::accumulate(out.grads, per_example[b]);
    out.loss += losses[b];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& [_, g] : out.grads)
    for (double& v : g.data()) v *= inv;
  out.loss *= inv;
  if (cfg.l2_embedding > 0.0) {
    const nd::Var& x = model.embedding();
    nd::Var l2 = nd::scale(nd::sum(nd::mul(x, x)), cfg.l2_embedding);
    out.loss += l2->value().item();
    nd::accumulate(out.grads, nd::backward(l2));
  }
  return out;
}

/// Minibatch ADAM on mean BCE + L2(embedding) with global-norm clipping,
/// validation HITS@k after every epoch and patience-based early stopping.
/// Returns the parameters of the best validation epoch. Training examples
/// whose retrieval comes back empty are skipped.
inline TrainResult train(const QAPipeline& pipeline, const std::vector<QAExample>& train_split,
                         const std::vector<QAExample>& valid_split, const TrainConfig& cfg,
                         std::optional<Model> initial = std::nullopt,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_split.empty()) throw Error("train: empty training split");
  if (valid_split.empty()) throw Error("train: empty validation split");

  std::vector<PreparedExample> train_data;
  std::size_t skipped = 0;
  for (const QAExample& ex : train_split) {
    PreparedExample p = pipeline.prepare(ex);
    if (p.docs.empty()) {
      ++skipped;
      continue;
    }
    train_data.push_back(std::move(p));
  }
  if (skipped) log::info("skipped " + std::to_string(skipped) + " training examples with no retrieved facts");
  if (train_data.empty()) throw Error("train: no training example retrieved any fact");
  std::vector<PreparedExample> valid_data;
  for (const QAExample& ex : valid_split) valid_data.push_back(pipeline.prepare(ex));

  const ModelDims dims = cfg.dims(pipeline.vocab().size(), pipeline.catalog().size());
  Model model = initial ? std::move(*initial) : Model(dims, cfg.seed, cfg.init_std);
  if (model.dims() != dims) throw ConfigError("train: initial model dimensions do not match config");

  nd::AdamState adam;
  EarlyStopper stopper(cfg.patience, cfg.literal_patience);
  TrainHistory history;
  auto best = model.params().snapshot();

  std::vector<std::size_t> order(train_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch_size = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    nd::Rng shuffle_rng(nd::Rng::derive(cfg.seed, 0x5EED, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::vector<std::size_t> batch(
          order.begin() + static_cast<std::ptrdiff_t>(begin),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + batch_size)));
      const std::uint64_t stream = (static_cast<std::uint64_t>(epoch) << 32) | batches;
      BatchGradients bg = batch_gradients(model, train_data, batch, cfg, stream);
      nd::clip_by_global_norm(bg.grads, cfg.clip_norm);
      nd::adam_step(model.params(), bg.grads, adam, cfg.lr);
      loss_sum += bg.loss;
      ++batches;
    }
    const HitsResult valid = evaluate_hits(model, valid_data, cfg.eval_k, cfg.threads);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.valid_hits = valid.hits;
    rec.valid_count_hits = valid.count_hits;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.observe(valid.hits);
    if (stopper.improved()) {
      best = model.params().snapshot();
      history.best_epoch = epoch;
    }
    if (stop) {
      history.stopped_early = true;
      break;
    }
  }
  model.params().restore(best);
  return {std::move(model), std::move(history)};
}

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                         std::optional<Model> initial = std::nullopt,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  return train(QAPipeline::build(ds, cfg), ds.train, ds.valid, cfg, std::move(initial), on_epoch);
}

}  // namespace iatn
