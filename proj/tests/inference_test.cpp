// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "iatn/inference.hpp"
#include "support.hpp"

namespace iatn {
namespace {

using nd::Tensor;
using testing::check_gradients;
using testing::random_projection;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;
constexpr std::size_t kH = 3, kS = 5, kGate = 4;

struct Fixture {
  nd::ParamStore store;
  InferenceParams params;

  explicit Fixture(std::uint64_t seed, double std = 0.4) {
    nd::Rng rng(seed);
    params = InferenceParams::create(store, kH, kS, kGate, rng, std);
    for (const Var& p : store.all()) {
      if (p->value().rank() == 1) p->mutable_value() = random_tensor(p->shape(), rng, 0.2);
    }
  }

  void zero(const std::string& name) {
    for (double& v : store.get(name)->mutable_value().data()) v = 0.0;
  }
};

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

TEST(QueryRead, SingletonQuery) {
  Fixture f(1);
  nd::Rng rng(2);
  const Tensor q = random_tensor({1, 2 * kH}, rng);
  const auto g = query_attentive_read(nd::constant(q), nd::constant(random_tensor({kS}, rng)), f.params);
  EXPECT_EQ(values_of(g.weights), (std::vector<double>{1.0}));
  for (std::size_t c = 0; c < 2 * kH; ++c) EXPECT_DOUBLE_EQ(g.vector->value()[c], q.at(0, c));
}

TEST(QueryRead, ZeroProjectionIsUniform) {
  Fixture f(3);
  f.zero("inf.A_q");
  f.zero("inf.a_q");
  nd::Rng rng(4);
  const auto g = query_attentive_read(nd::constant(random_tensor({4, 2 * kH}, rng)),
                                      nd::constant(random_tensor({kS}, rng)), f.params);
  for (double w : values_of(g.weights)) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(QueryRead, GlimpseIsWeightedSumOfRows) {
  Fixture f(5);
  nd::Rng rng(6);
  const Tensor q = random_tensor({5, 2 * kH}, rng);
  const auto g = query_attentive_read(nd::constant(q), nd::constant(random_tensor({kS}, rng)), f.params);
  const auto w = values_of(g.weights);
  EXPECT_NEAR(total(w), 1.0, 1e-12);
  for (std::size_t c = 0; c < 2 * kH; ++c) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 5; ++i) expect += w[i] * q.at(i, c);
    EXPECT_NEAR(g.vector->value()[c], expect, 1e-12);
  }
}

TEST(QueryRead, EmptyQueryIsError) {
  Fixture f(7);
  EXPECT_THROW(query_attentive_read(nd::constant(Tensor({2 * kH})), nd::constant(Tensor({kS})), f.params),
               ShapeError);
}

TEST(DocRead, SingleRow) {
  Fixture f(8);
  nd::Rng rng(9);
  const Tensor d = random_tensor({1, 2 * kH}, rng);
  const auto g = document_attentive_read(nd::constant(d), nd::constant(random_tensor({2 * kH}, rng)),
                                         nd::constant(random_tensor({kS}, rng)), f.params);
  EXPECT_EQ(values_of(g.weights), (std::vector<double>{1.0}));
  for (std::size_t c = 0; c < 2 * kH; ++c) EXPECT_DOUBLE_EQ(g.vector->value()[c], d.at(0, c));
}

TEST(DocRead, ZeroProjectionIsUniform) {
  Fixture f(10);
  f.zero("inf.A_d");
  f.zero("inf.a_d");
  nd::Rng rng(11);
  const auto g = document_attentive_read(nd::constant(random_tensor({8, 2 * kH}, rng)),
                                         nd::constant(random_tensor({2 * kH}, rng)),
                                         nd::constant(random_tensor({kS}, rng)), f.params);
  for (double w : values_of(g.weights)) EXPECT_DOUBLE_EQ(w, 1.0 / 8);
}

TEST(DocRead, DocumentBoundariesDoNotMatter) {
  Fixture f(12);
  nd::Rng rng(13);
  const Tensor a = random_tensor({3, 2 * kH}, rng), b = random_tensor({4, 2 * kH}, rng);
  const Var q = nd::constant(random_tensor({2 * kH}, rng));
  const Var s = nd::constant(random_tensor({kS}, rng));
  const EncodedDocument da{0, {nd::constant(a), {1, 2, 3}}}, db{1, {nd::constant(b), {4, 5, 6, 7}}};
  const auto two = stack_documents({da, db});
  std::vector<double> rows(a.data().begin(), a.data().end());
  rows.insert(rows.end(), b.data().begin(), b.data().end());
  const auto one = stack_documents({{0, {nd::constant(Tensor({7, 2 * kH}, rows)), {1, 2, 3, 4, 5, 6, 7}}}});
  EXPECT_EQ(values_of(document_attentive_read(two.matrix, q, s, f.params).weights),
            values_of(document_attentive_read(one.matrix, q, s, f.params).weights));
}

TEST(Gate, ZeroParamsGiveHalf) {
  Fixture f(14);
  for (const char* n : {"gate_q.W1", "gate_q.b1", "gate_q.W2", "gate_q.b2"}) f.zero(n);
  nd::Rng rng(15);
  const Var r = gate(nd::constant(random_tensor({kS}, rng)), nd::constant(random_tensor({2 * kH}, rng)),
                     nd::constant(random_tensor({2 * kH}, rng)), f.params.gate_query);
  ASSERT_EQ(r->value().size(), 2 * kH);
  for (double v : r->value().data()) EXPECT_EQ(v, 0.5);
}

TEST(Gate, WrongInputWidthIsError) {
  Fixture f(16);
  EXPECT_THROW(gate(nd::constant(Tensor({3})), f.params.gate_doc), ShapeError);
}

TEST(Gradients, QueryRead) {
  Fixture f(17);
  nd::Rng rng(18);
  Var q = f.store.add("q", random_tensor({4, 2 * kH}, rng));
  Var s = f.store.add("s0", random_tensor({kS}, rng));
  const auto check = check_gradients(f.store, [&] {
    const auto g = query_attentive_read(q, s, f.params);
    return nd::add(random_projection(g.vector, 1), random_projection(g.weights, 2));
  });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

TEST(Gradients, DocRead) {
  Fixture f(19);
  nd::Rng rng(20);
  Var d = f.store.add("d", random_tensor({6, 2 * kH}, rng));
  Var q = f.store.add("q", random_tensor({2 * kH}, rng));
  Var s = f.store.add("s0", random_tensor({kS}, rng));
  const auto check = check_gradients(f.store, [&] {
    const auto g = document_attentive_read(d, q, s, f.params);
    return nd::add(random_projection(g.vector, 3), random_projection(g.weights, 4));
  });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

TEST(Gradients, BothGates) {
  Fixture f(21);
  nd::Rng rng(22);
  Var s = f.store.add("s0", random_tensor({kS}, rng));
  Var q = f.store.add("q", random_tensor({2 * kH}, rng));
  Var d = f.store.add("d", random_tensor({2 * kH}, rng));
  const auto check = check_gradients(f.store, [&] {
    return nd::add(random_projection(gate(s, q, d, f.params.gate_query), 5),
                   random_projection(gate(s, q, d, f.params.gate_doc), 6));
  });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

TEST(Gradients, TwoStepInference) {
  Fixture f(23);
  nd::Rng rng(24);
  Var q = f.store.add("q", random_tensor({3, 2 * kH}, rng));
  Var d = f.store.add("d", random_tensor({7, 2 * kH}, rng));
  const auto check = check_gradients(f.store, [&] {
    const auto r = run_inference(q, d, f.params, 2, nd::Mode::eval, nullptr);
    return nd::add(random_projection(r.final_doc_weights, 7), random_projection(r.final_state, 8));
  });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

TEST(RunInference, StepsBelowOneIsError) {
  Fixture f(25);
  nd::Rng rng(26);
  EXPECT_THROW(run_inference(nd::constant(random_tensor({2, 2 * kH}, rng)),
                             nd::constant(random_tensor({3, 2 * kH}, rng)), f.params, 0,
                             nd::Mode::eval, nullptr),
               Error);
}

TEST(RunInference, ZeroParamsOneStep) {
  Fixture f(27);
  for (const Var& p : f.store.all())
    for (double& v : p->mutable_value().data()) v = 0.0;
  nd::Rng rng(28);
  const auto r = run_inference(nd::constant(random_tensor({4, 2 * kH}, rng)),
                               nd::constant(random_tensor({5, 2 * kH}, rng)), f.params, 1,
                               nd::Mode::eval, nullptr);
  ASSERT_EQ(r.trace.steps.size(), 1u);
  for (double w : r.trace.steps[0].q_hat) EXPECT_DOUBLE_EQ(w, 0.25);
  for (double w : r.trace.steps[0].d_hat) EXPECT_DOUBLE_EQ(w, 0.2);
  for (double v : r.final_state->value().data()) EXPECT_EQ(v, 0.0);
}

TEST(RunInference, DistributionsSumToOneEveryStep) {
  Fixture f(29, 0.8);
  nd::Rng rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = run_inference(nd::constant(random_tensor({1 + rng.below(6), 2 * kH}, rng)),
                                 nd::constant(random_tensor({1 + rng.below(12), 2 * kH}, rng)),
                                 f.params, 3, nd::Mode::train, &rng);
    for (const auto& step : r.trace.steps) {
      EXPECT_NEAR(total(step.q_hat), 1.0, 1e-8);
      EXPECT_NEAR(total(step.d_hat), 1.0, 1e-8);
      for (double w : step.q_hat) EXPECT_GE(w, 0.0);
      for (double w : step.d_hat) EXPECT_GE(w, 0.0);
    }
  }
}

TEST(RunInference, TraceMatchesFinalWeights) {
  Fixture f(31);
  nd::Rng rng(32);
  const auto r = run_inference(nd::constant(random_tensor({3, 2 * kH}, rng)),
                               nd::constant(random_tensor({6, 2 * kH}, rng)), f.params, 3,
                               nd::Mode::eval, nullptr);
  ASSERT_EQ(r.trace.steps.size(), 3u);
  EXPECT_EQ(r.trace.steps.back().d_hat, values_of(r.final_doc_weights));
}

// Straight-line recomputation on plain vectors.
namespace oracle {

using Vec = std::vector<double>;

Vec matvec(const Tensor& m, const Vec& x) {
  Vec y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) y[r] += m.at(r, c) * x[c];
  return y;
}

Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Vec bias(const Var& b) { return {b->value().data().begin(), b->value().data().end()}; }

Vec join(std::initializer_list<Vec> parts) {
  Vec out;
  for (const Vec& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

Vec apply(Vec v, double (*f)(double)) {
  for (double& x : v) x = f(x);
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double relu(double x) { return x > 0 ? x : 0.0; }
double tanh_(double x) { return std::tanh(x); }

Vec softmax(const Vec& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += out[i] = std::exp(logits[i] - m);
  for (double& v : out) v /= z;
  return out;
}

Vec attend(const Tensor& rows, const Vec& key, Vec& weights) {
  Vec logits(rows.rows(), 0.0);
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t c = 0; c < rows.cols(); ++c) logits[i] += rows.at(i, c) * key[c];
  weights = softmax(logits);
  Vec out(rows.cols(), 0.0);
  for (std::size_t i = 0; i < rows.rows(); ++i)
    for (std::size_t c = 0; c < rows.cols(); ++c) out[c] += weights[i] * rows.at(i, c);
  return out;
}

Vec gate(const Vec& in, const GateParams& g) {
  const Vec hidden = apply(plus(matvec(g.w_hidden->value(), in), bias(g.b_hidden)), relu);
  return apply(plus(matvec(g.w_out->value(), hidden), bias(g.b_out)), sigmoid);
}

Vec gru(const Vec& x, const Vec& h, const GruParams& p) {
  const Vec z = apply(plus(plus(matvec(p.w_update->value(), x), matvec(p.u_update->value(), h)), bias(p.b_update)), sigmoid);
  const Vec r = apply(plus(plus(matvec(p.w_reset->value(), x), matvec(p.u_reset->value(), h)), bias(p.b_reset)), sigmoid);
  Vec rh(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) rh[i] = r[i] * h[i];
  const Vec c = apply(plus(plus(matvec(p.w_cand->value(), x), matvec(p.u_cand->value(), rh)), bias(p.b_cand)), tanh_);
  Vec out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = (1 - z[i]) * h[i] + z[i] * c[i];
  return out;
}

}  // namespace oracle

TEST(RunInference, MatchesStraightLineRecomputation) {
  Fixture f(33);
  nd::Rng rng(34);
  const Tensor q = random_tensor({4, 2 * kH}, rng);
  const Tensor d = random_tensor({9, 2 * kH}, rng);
  const auto r = run_inference(nd::constant(q), nd::constant(d), f.params, 3, nd::Mode::eval, nullptr);

  const InferenceParams& p = f.params;
  oracle::Vec s(kS, 0.0);
  for (int t = 0; t < 3; ++t) {
    oracle::Vec q_hat, d_hat;
    const oracle::Vec qt = oracle::attend(q, oracle::plus(oracle::matvec(p.query_proj->value(), s), oracle::bias(p.query_bias)), q_hat);
    const oracle::Vec dt = oracle::attend(
        d, oracle::plus(oracle::matvec(p.doc_proj->value(), oracle::join({s, qt})), oracle::bias(p.doc_bias)), d_hat);
    oracle::Vec qd(qt.size());
    for (std::size_t i = 0; i < qt.size(); ++i) qd[i] = qt[i] * dt[i];
    const oracle::Vec in = oracle::join({s, qt, dt, qd});
    const oracle::Vec rq = oracle::gate(in, p.gate_query), rd = oracle::gate(in, p.gate_doc);
    oracle::Vec x;
    for (std::size_t i = 0; i < qt.size(); ++i) x.push_back(rq[i] * qt[i]);
    for (std::size_t i = 0; i < dt.size(); ++i) x.push_back(rd[i] * dt[i]);
    s = oracle::gru(x, s, p.state);

    const auto& step = r.trace.steps[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < q_hat.size(); ++i) EXPECT_NEAR(step.q_hat[i], q_hat[i], 1e-12);
    for (std::size_t i = 0; i < d_hat.size(); ++i) EXPECT_NEAR(step.d_hat[i], d_hat[i], 1e-12);
  }
  for (std::size_t i = 0; i < kS; ++i) EXPECT_NEAR(r.final_state->value()[i], s[i], 1e-12);
}

TEST(RunInference, EvalModeIsDeterministicTrainModeFollowsSeed) {
  Fixture f(35);
  nd::Rng rng(36);
  const Var q = nd::constant(random_tensor({3, 2 * kH}, rng));
  const Var d = nd::constant(random_tensor({5, 2 * kH}, rng));
  EXPECT_EQ(run_inference(q, d, f.params, 2, nd::Mode::eval, nullptr).trace,
            run_inference(q, d, f.params, 2, nd::Mode::eval, nullptr).trace);
  nd::Rng a(99), b(99);
  EXPECT_EQ(run_inference(q, d, f.params, 2, nd::Mode::train, &a).trace,
            run_inference(q, d, f.params, 2, nd::Mode::train, &b).trace);
}

}  // namespace
}  // namespace iatn
