// SPDX-License-Identifier: Apache-2.0
//
// Iterative alternating attention. Each step reads the query conditioned on
// the inference state, reads the stacked documents conditioned on the state
// and the query glimpse, gates both glimpses and feeds them to a GRU that
// carries the state to the next step.
#pragma once

#include <string>
#include <vector>

#include "iatn/encoder.hpp"
#include "iatn/error.hpp"
#include "iatn/ndgrad/graph.hpp"
#include "iatn/ndgrad/optim.hpp"

namespace iatn {

/// Two-layer feed-forward gate: sigmoid(W2 relu(W1 x + b1) + b2).
struct GateParams {
  Var w_hidden, b_hidden, w_out, b_out;

  static GateParams create(nd::ParamStore& store, const std::string& prefix, std::size_t in,
                           std::size_t hidden, std::size_t out, nd::Rng& rng, double init_std) {
    GateParams g;
    g.w_hidden = store.add(prefix + ".W1", nd::init_normal({hidden, in}, rng, 0.0, init_std));
    g.b_hidden = store.add(prefix + ".b1", nd::Tensor({hidden}));
    g.w_out = store.add(prefix + ".W2", nd::init_normal({out, hidden}, rng, 0.0, init_std));
    g.b_out = store.add(prefix + ".b2", nd::Tensor({out}));
    return g;
  }

  static GateParams bind(const nd::ParamStore& store, const std::string& prefix) {
    return {store.get(prefix + ".W1"), store.get(prefix + ".b1"), store.get(prefix + ".W2"),
            store.get(prefix + ".b2")};
  }
};

struct InferenceParams {
  Var query_proj;  // A_q: (2h x s)
  Var query_bias;  // a_q: (2h)
  Var doc_proj;    // A_d: (2h x (s + 2h))
  Var doc_bias;    // a_d: (2h)
  GateParams gate_query;
  GateParams gate_doc;
  GruParams state;  // input 4h, hidden s

  std::size_t state_dim() const { return state.hidden_dim(); }
  std::size_t rep_dim() const { return query_bias->value().size(); }

  static InferenceParams create(nd::ParamStore& store, std::size_t h, std::size_t s,
                                std::size_t gate_hidden, nd::Rng& rng, double init_std) {
    const std::size_t rep = 2 * h;
    InferenceParams p;
    p.query_proj = store.add("inf.A_q", nd::init_normal({rep, s}, rng, 0.0, init_std));
    p.query_bias = store.add("inf.a_q", nd::Tensor({rep}));
    p.doc_proj = store.add("inf.A_d", nd::init_normal({rep, s + rep}, rng, 0.0, init_std));
    p.doc_bias = store.add("inf.a_d", nd::Tensor({rep}));
    p.gate_query = GateParams::create(store, "gate_q", s + 3 * rep, gate_hidden, rep, rng, init_std);
    p.gate_doc = GateParams::create(store, "gate_d", s + 3 * rep, gate_hidden, rep, rng, init_std);
    p.state = GruParams::create(store, "state", 2 * rep, s, rng, init_std);
    return p;
  }

  static InferenceParams bind(const nd::ParamStore& store) {
    return {store.get("inf.A_q"), store.get("inf.a_q"), store.get("inf.A_d"),
            store.get("inf.a_d"), GateParams::bind(store, "gate_q"),
            GateParams::bind(store, "gate_d"), GruParams::bind(store, "state")};
  }
};

/// An attention-weighted summary and the weights that produced it.
struct Glimpse {
  Var vector;   // (2h)
  Var weights;  // one probability per attended row
};

/// q_hat = softmax_i(q_i . (A_q s + a_q)),  q_t = sum_i q_hat_i q_i
inline Glimpse query_attentive_read(const Var& query_reps, const Var& state,
                                    const InferenceParams& p) {
  if (query_reps->value().rank() != 2 || query_reps->value().rows() == 0) {
    throw ShapeError("query_attentive_read: empty or malformed query " +
                     nd::shape_str(query_reps->shape()));
  }
  Var key = nd::affine(p.query_proj, state, p.query_bias);
  Var weights = nd::softmax(nd::matmul(query_reps, key));
  return {nd::matmul(weights, query_reps), weights};
}

/// d_hat = softmax_i(D_i . (A_d [s ; q_t] + a_d)) over every stacked row,
/// d_t = sum_i d_hat_i D_i
inline Glimpse document_attentive_read(const Var& stacked, const Var& query_glimpse,
                                       const Var& state, const InferenceParams& p) {
  Var key = nd::affine(p.doc_proj, nd::concat({state, query_glimpse}), p.doc_bias);
  Var weights = nd::softmax(nd::matmul(stacked, key));
  return {nd::matmul(weights, stacked), weights};
}

/// Gate input [s ; q_t ; d_t ; q_t * d_t].
inline Var gate_input(const Var& state, const Var& query_glimpse, const Var& doc_glimpse) {
  return nd::concat({state, query_glimpse, doc_glimpse, nd::mul(query_glimpse, doc_glimpse)});
}

inline Var gate(const Var& input, const GateParams& g) {
  const std::size_t expected = g.w_hidden->value().cols();
  if (input->value().size() != expected) {
    throw ShapeError("gate: input " + nd::shape_str(input->shape()) + " but gate expects " +
                     std::to_string(expected));
  }
  Var hidden = nd::relu(nd::affine(g.w_hidden, input, g.b_hidden));
  return nd::sigmoid(nd::affine(g.w_out, hidden, g.b_out));
}

inline Var gate(const Var& state, const Var& query_glimpse, const Var& doc_glimpse,
                const GateParams& g) {
  return gate(gate_input(state, query_glimpse, doc_glimpse), g);
}

struct AttentionStep {
  std::vector<double> q_hat;
  std::vector<double> d_hat;
  friend bool operator==(const AttentionStep&, const AttentionStep&) = default;
};

struct AttentionTrace {
  std::vector<AttentionStep> steps;
  friend bool operator==(const AttentionTrace&, const AttentionTrace&) = default;
};

struct InferenceResult {
  AttentionTrace trace;
  Var final_doc_weights;  // d_hat at step T
  Var final_state;
};

/// Runs `steps` rounds of query read, document read, gating and state update
/// from a zero state. Gate outputs pass through dropout in train mode.
inline InferenceResult run_inference(const Var& query_reps, const Var& stacked,
                                     const InferenceParams& p, int steps, nd::Mode mode,
                                     nd::Rng* rng, double gate_dropout = 0.2) {
  if (steps < 1) throw Error("run_inference: number of steps must be >= 1, got " +
                             std::to_string(steps));
  if (stacked->value().rank() != 2 || stacked->value().cols() != p.rep_dim()) {
    throw ShapeError("run_inference: stacked documents " + nd::shape_str(stacked->shape()) +
                     " do not have width " + std::to_string(p.rep_dim()));
  }
  InferenceResult out;
  Var state = nd::constant(nd::Tensor({p.state_dim()}));
  for (int t = 0; t < steps; ++t) {
    Glimpse q = query_attentive_read(query_reps, state, p);
    Glimpse d = document_attentive_read(stacked, q.vector, state, p);
    Var input = gate_input(state, q.vector, d.vector);
    Var r_query = nd::dropout(gate(input, p.gate_query), gate_dropout, mode, rng);
    Var r_doc = nd::dropout(gate(input, p.gate_doc), gate_dropout, mode, rng);
    Var gru_in = nd::concat({nd::mul(r_query, q.vector), nd::mul(r_doc, d.vector)});
    state = gru_cell(gru_in, state, p.state);
    out.trace.steps.push_back({values_of(q.weights), values_of(d.weights)});
    out.final_doc_weights = d.weights;
  }
  out.final_state = state;
  return out;
}

}  // namespace iatn
