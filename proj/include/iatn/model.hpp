// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iatn/encoder.hpp"
#include "iatn/error.hpp"
#include "iatn/inference.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/optim.hpp"
#include "iatn/prediction.hpp"

namespace iatn {

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t num_answers = 0;
  std::size_t embed = 50;         // d
  std::size_t hidden = 128;       // h, per GRU direction
  std::size_t state = 128;        // s
  std::size_t pred_hidden = 4096;  // u
  std::size_t gate_hidden = 128;
  int steps = 3;  // T
  bool shared_encoder = true;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct DropoutRates {
  double gates = 0.2;
  double hidden = 0.5;
};

struct DocInput {
  int doc_id = 0;
  std::vector<int> ids;
};

/// Query ids plus the id sequences of its retrieved documents.
struct ExampleInput {
  std::vector<int> query;
  std::vector<DocInput> docs;
};

struct ForwardPass {
  PredictionOutput prediction;
  Var relevance;  // z
  std::optional<InferenceResult> inference;
  std::optional<StackedDocuments> stacked;
};

class Model {
 public:
  /// Fresh model: weight matrices ~ N(0, init_std), biases zero.
  Model(const ModelDims& dims, std::uint64_t seed, double init_std = 0.05) : dims_(dims) {
    validate(dims);
    nd::Rng rng(seed);
    embedding_ = store_.add("embedding",
                            nd::init_normal({dims.vocab_size, dims.embed}, rng, 0.0, init_std));
    if (dims.shared_encoder) {
      GruParams::create(store_, "enc.fwd", dims.embed, dims.hidden, rng, init_std);
      GruParams::create(store_, "enc.bwd", dims.embed, dims.hidden, rng, init_std);
    } else {
      for (const char* side : {"qenc", "denc"}) {
        GruParams::create(store_, std::string(side) + ".fwd", dims.embed, dims.hidden, rng,
                          init_std);
        GruParams::create(store_, std::string(side) + ".bwd", dims.embed, dims.hidden, rng,
                          init_std);
      }
    }
    InferenceParams::create(store_, dims.hidden, dims.state, dims.gate_hidden, rng, init_std);
    PredictionParams::create(store_, dims.vocab_size, dims.pred_hidden, dims.num_answers, rng,
                             init_std);
    bind();
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelDims& dims() const { return dims_; }
  nd::ParamStore& params() { return store_; }
  const nd::ParamStore& params() const { return store_; }
  const Var& embedding() const { return embedding_; }
  const InferenceParams& inference_params() const { return inference_; }
  const PredictionParams& prediction_params() const { return prediction_; }

  ContextualSequence encode_query(const std::vector<int>& ids) const {
    return bigru_encode(embed(ids, embedding_), query_fwd_, query_bwd_, ids);
  }

  ContextualSequence encode_document(const std::vector<int>& ids) const {
    return bigru_encode(embed(ids, embedding_), doc_fwd_, doc_bwd_, ids);
  }

  /// Encoding, inference and prediction for one example. With no documents
  /// the relevance vector is uniform (1/|V|) and inference is skipped.
  ForwardPass forward(const ExampleInput& ex, nd::Mode mode, nd::Rng* rng,
                      const DropoutRates& dropout = {}) const {
    if (ex.query.empty()) throw Error("forward: empty query");
    ForwardPass out;
    if (ex.docs.empty()) {
      out.relevance = nd::constant(
          nd::Tensor({dims_.vocab_size}, 1.0 / static_cast<double>(dims_.vocab_size)));
    } else {
      ContextualSequence query = encode_query(ex.query);
      std::vector<EncodedDocument> docs;
      docs.reserve(ex.docs.size());
      for (const DocInput& d : ex.docs) {
        if (d.ids.empty()) throw Error("forward: empty document " + std::to_string(d.doc_id));
        docs.push_back({d.doc_id, encode_document(d.ids)});
      }
      out.stacked = stack_documents(docs);
      out.inference = run_inference(query.reps, out.stacked->matrix, inference_, dims_.steps,
                                    mode, rng, dropout.gates);
      out.relevance =
          relevance_scores(out.inference->final_doc_weights, *out.stacked, dims_.vocab_size);
    }
    out.prediction = predict_answers(out.relevance, prediction_, mode, rng, dropout.hidden);
    return out;
  }

  static void validate(const ModelDims& d) {
    if (d.vocab_size < 1 || d.num_answers < 1 || d.embed < 1 || d.hidden < 1 || d.state < 1 ||
        d.pred_hidden < 1 || d.gate_hidden < 1 || d.steps < 1) {
      throw ConfigError("model dimensions must all be positive");
    }
  }

 private:
  void bind() {
    const std::string q = dims_.shared_encoder ? "enc" : "qenc";
    const std::string d = dims_.shared_encoder ? "enc" : "denc";
    query_fwd_ = GruParams::bind(store_, q + ".fwd");
    query_bwd_ = GruParams::bind(store_, q + ".bwd");
    doc_fwd_ = GruParams::bind(store_, d + ".fwd");
    doc_bwd_ = GruParams::bind(store_, d + ".bwd");
    inference_ = InferenceParams::bind(store_);
    prediction_ = PredictionParams::bind(store_);
  }

  ModelDims dims_;
  nd::ParamStore store_;
  Var embedding_;
  GruParams query_fwd_, query_bwd_, doc_fwd_, doc_bwd_;
  InferenceParams inference_;
  PredictionParams prediction_;
};

}  // namespace iatn
