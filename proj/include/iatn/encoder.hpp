// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "iatn/error.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/optim.hpp"

namespace iatn {

using nd::Var;

/// Copy of a node's values.
inline std::vector<double> values_of(const Var& v) {
  const auto& d = v->value().data();
  return {d.begin(), d.end()};
}

/// Weights of one GRU. Input matrices are (hidden x in), recurrent matrices
/// (hidden x hidden), so every gate is W x + U h + b.
struct GruParams {
  Var w_update, u_update, b_update;
  Var w_reset, u_reset, b_reset;
  Var w_cand, u_cand, b_cand;

  std::size_t input_dim() const { return w_update->value().cols(); }
  std::size_t hidden_dim() const { return w_update->value().rows(); }

  /// Registers the nine tensors under `prefix` (e.g. "enc.fwd").
  static GruParams create(nd::ParamStore& store, const std::string& prefix,
                          std::size_t in, std::size_t hidden, nd::Rng& rng,
                          double init_std) {
    auto w = [&](const char* n, std::size_t cols) {
      return store.add(prefix + "." + n, nd::init_normal({hidden, cols}, rng, 0.0, init_std));
    };
    auto b = [&](const char* n) { return store.add(prefix + "." + n, nd::Tensor({hidden})); };
    GruParams p;
    p.w_update = w("W_z", in);
    p.u_update = w("U_z", hidden);
    p.b_update = b("b_z");
    p.w_reset = w("W_r", in);
    p.u_reset = w("U_r", hidden);
    p.b_reset = b("b_r");
    p.w_cand = w("W_h", in);
    p.u_cand = w("U_h", hidden);
    p.b_cand = b("b_h");
    return p;
  }

  static GruParams bind(const nd::ParamStore& store, const std::string& prefix) {
    auto g = [&](const char* n) { return store.get(prefix + "." + n); };
    return {g("W_z"), g("U_z"), g("b_z"), g("W_r"), g("U_r"),
            g("b_r"), g("W_h"), g("U_h"), g("b_h")};
  }
};

/// Rows of the embedding table for `ids`, as an (n x d) matrix.
inline Var embed(const std::vector<int>& ids, const Var& table) {
  return nd::embedding_lookup(table, ids);
}

/// z = sigmoid(W_z x + U_z h + b_z)
/// r = sigmoid(W_r x + U_r h + b_r)
/// c = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * c
inline Var gru_cell(const Var& x, const Var& h_prev, const GruParams& p) {
  if (x->value().rank() != 1 || x->value().size() != p.input_dim() ||
      h_prev->value().rank() != 1 || h_prev->value().size() != p.hidden_dim()) {
    throw ShapeError("gru_cell: input " + nd::shape_str(x->shape()) + " / state " +
                     nd::shape_str(h_prev->shape()) + " do not fit params (in=" +
                     std::to_string(p.input_dim()) + ", hidden=" +
                     std::to_string(p.hidden_dim()) + ")");
  }
  Var z = nd::sigmoid(nd::add(nd::affine(p.w_update, x, p.b_update),
                              nd::matmul(p.u_update, h_prev)));
  Var r = nd::sigmoid(nd::add(nd::affine(p.w_reset, x, p.b_reset),
                              nd::matmul(p.u_reset, h_prev)));
  Var cand = nd::tanh(nd::add(nd::affine(p.w_cand, x, p.b_cand),
                              nd::matmul(p.u_cand, nd::mul(r, h_prev))));
  return nd::add(h_prev, nd::mul(z, nd::sub(cand, h_prev)));
}

/// Per-token contextual representations: row i is [forward_i ; backward_i].
struct ContextualSequence {
  Var reps;  // (n x 2h)
  std::vector<int> ids;

  std::size_t length() const { return reps->value().rows(); }
};

/// Runs `fwd` left to right and `bwd` right to left from zero states over the
/// rows of `embedded` and concatenates the two states per position.
inline ContextualSequence bigru_encode(const Var& embedded, const GruParams& fwd,
                                       const GruParams& bwd, std::vector<int> ids = {}) {
  if (embedded->value().rank() != 2) {
    throw ShapeError("bigru_encode: expected an (n x d) matrix, got " +
                     nd::shape_str(embedded->shape()));
  }
  const std::size_t n = embedded->value().rows();
  if (n == 0) throw ShapeError("bigru_encode: empty sequence");
  std::vector<Var> inputs;
  inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) inputs.push_back(nd::row(embedded, i));

  std::vector<Var> forward(n), backward(n);
  Var h = nd::constant(nd::Tensor({fwd.hidden_dim()}));
  for (std::size_t i = 0; i < n; ++i) forward[i] = h = gru_cell(inputs[i], h, fwd);
  h = nd::constant(nd::Tensor({bwd.hidden_dim()}));
  for (std::size_t i = n; i-- > 0;) backward[i] = h = gru_cell(inputs[i], h, bwd);

  std::vector<Var> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(nd::concat({forward[i], backward[i]}));
  return {nd::concat_rows(rows), std::move(ids)};
}

struct EncodedDocument {
  int doc_id = 0;
  ContextualSequence seq;
};

struct DocumentSpan {
  int doc_id = 0;
  std::size_t start = 0;  // first row
  std::size_t end = 0;    // one past the last row
};

/// All retrieved documents of one query stacked row-wise, plus the
/// position -> word map (sigma) and the per-word counts (pi).
struct StackedDocuments {
  Var matrix;  // (l x 2h)
  std::vector<int> sigma;
  std::map<int, int> pi;
  std::vector<DocumentSpan> spans;

  std::size_t length() const { return sigma.size(); }
};

inline StackedDocuments stack_documents(const std::vector<EncodedDocument>& docs) {
  if (docs.empty()) throw Error("stack_documents: no documents");
  StackedDocuments out;
  std::vector<Var> parts;
  std::size_t offset = 0;
  for (const EncodedDocument& d : docs) {
    const std::size_t len = d.seq.length();
    if (d.seq.ids.size() != len) {
      throw ShapeError("stack_documents: document " + std::to_string(d.doc_id) + " has " +
                       std::to_string(len) + " rows but " + std::to_string(d.seq.ids.size()) +
                       " word ids");
    }
    parts.push_back(d.seq.reps);
    for (int w : d.seq.ids) {
      out.sigma.push_back(w);
      ++out.pi[w];
    }
    out.spans.push_back({d.doc_id, offset, offset + len});
    offset += len;
  }
  out.matrix = parts.size() == 1 ? parts[0] : nd::concat_rows(parts);
  return out;
}

}  // namespace iatn
