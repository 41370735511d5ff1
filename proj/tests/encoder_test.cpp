// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "iatn/encoder.hpp"
#include "support.hpp"

namespace iatn {
namespace {

using nd::Tensor;
using testing::check_gradients;
using testing::random_projection;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

void zero_all(nd::ParamStore& store) {
  for (const Var& p : store.all())
    for (double& v : p->mutable_value().data()) v = 0.0;
}

TEST(Embed, SingleIdIsTableRow) {
  nd::Rng rng(1);
  nd::ParamStore store;
  Var table = store.add("X", random_tensor({6, 3}, rng));
  const Var rows = embed({4}, table);
  ASSERT_EQ(rows->shape(), (nd::Shape{1, 3}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(rows->value().at(0, c), table->value().at(4, c));
}

TEST(Embed, OutOfRangeIdIsError) {
  nd::ParamStore store;
  Var table = store.add("X", Tensor({6, 3}));
  EXPECT_THROW(embed({6}, table), Error);
  EXPECT_THROW(embed({-1}, table), Error);
}

TEST(Embed, RepeatedIdAccumulatesGradient) {
  nd::Rng rng(2);
  nd::ParamStore store;
  Var table = store.add("X", random_tensor({5, 3}, rng));
  const auto grads = nd::backward(nd::sum(embed({2, 2}, table)));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_EQ(grads.at("X").at(r, c), r == 2 ? 2.0 : 0.0);
  const auto check = check_gradients(store, [&] { return random_projection(embed({2, 0, 2}, table), 5); });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

TEST(GruCell, ZeroParamsZeroState) {
  nd::Rng rng(3);
  nd::ParamStore store;
  const auto p = GruParams::create(store, "g", 4, 3, rng, 0.1);
  zero_all(store);
  const Var h = gru_cell(nd::constant(random_tensor({4}, rng)), nd::constant(Tensor({3})), p);
  for (double v : h->value().data()) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, ZeroParamsHalvesState) {
  nd::Rng rng(4);
  nd::ParamStore store;
  const auto p = GruParams::create(store, "g", 4, 3, rng, 0.1);
  zero_all(store);
  const Tensor v = random_tensor({3}, rng);
  const Var h = gru_cell(nd::constant(random_tensor({4}, rng)), nd::constant(v), p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(h->value()[i], 0.5 * v[i]);
}

TEST(GruCell, ShapeMismatchIsError) {
  nd::Rng rng(5);
  nd::ParamStore store;
  const auto p = GruParams::create(store, "g", 4, 3, rng, 0.1);
  EXPECT_THROW(gru_cell(nd::constant(Tensor({5})), nd::constant(Tensor({3})), p), ShapeError);
  EXPECT_THROW(gru_cell(nd::constant(Tensor({4})), nd::constant(Tensor({2})), p), ShapeError);
}

TEST(GruCell, GradientMatchesFiniteDifferences) {
  nd::Rng rng(6);
  nd::ParamStore store;
  const auto p = GruParams::create(store, "g", 4, 3, rng, 0.5);
  for (const char* b : {"g.b_z", "g.b_r", "g.b_h"}) store.get(b)->mutable_value() = random_tensor({3}, rng, 0.5);
  Var x = store.add("x", random_tensor({4}, rng));
  Var h = store.add("h", random_tensor({3}, rng));
  const auto check = check_gradients(store, [&] { return random_projection(gru_cell(x, h, p), 7); });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

TEST(BiGru, LengthOneIsTwoCellsFromZero) {
  nd::Rng rng(8);
  nd::ParamStore store;
  const auto fwd = GruParams::create(store, "f", 4, 3, rng, 0.5);
  const auto bwd = GruParams::create(store, "b", 4, 3, rng, 0.5);
  const Tensor x = random_tensor({1, 4}, rng);
  const auto seq = bigru_encode(nd::constant(x), fwd, bwd, {7});
  const Var xv = nd::constant(Tensor::vector({x.at(0, 0), x.at(0, 1), x.at(0, 2), x.at(0, 3)}));
  const Var f = gru_cell(xv, nd::constant(Tensor({3})), fwd);
  const Var b = gru_cell(xv, nd::constant(Tensor({3})), bwd);
  ASSERT_EQ(seq.reps->shape(), (nd::Shape{1, 6}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(seq.reps->value().at(0, i), f->value()[i]);
    EXPECT_EQ(seq.reps->value().at(0, 3 + i), b->value()[i]);
  }
}

TEST(BiGru, PalindromeWithTiedDirectionsIsMirrorImage) {
  nd::Rng rng(9);
  nd::ParamStore store;
  const auto p = GruParams::create(store, "g", 4, 3, rng, 0.5);
  nd::ParamStore emb;
  Var table = emb.add("X", random_tensor({10, 4}, rng));
  const std::vector<int> ids{3, 1, 7, 1, 3};
  const auto seq = bigru_encode(embed(ids, table), p, p, ids);
  const std::size_t n = ids.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(seq.reps->value().at(i, c), seq.reps->value().at(n - 1 - i, 3 + c));
    }
}

TEST(BiGru, RowCountEqualsTokenCount) {
  nd::Rng rng(10);
  nd::ParamStore store;
  const auto f = GruParams::create(store, "f", 2, 3, rng, 0.5);
  const auto b = GruParams::create(store, "b", 2, 3, rng, 0.5);
  for (std::size_t n = 1; n < 6; ++n) {
    const auto seq = bigru_encode(nd::constant(random_tensor({n, 2}, rng)), f, b);
    EXPECT_EQ(seq.length(), n);
  }
  EXPECT_THROW(bigru_encode(nd::constant(Tensor({3})), f, b), ShapeError);
}

TEST(BiGru, GradientMatchesFiniteDifferences) {
  nd::Rng rng(11);
  nd::ParamStore store;
  const auto f = GruParams::create(store, "f", 4, 3, rng, 0.5);
  const auto b = GruParams::create(store, "b", 4, 3, rng, 0.5);
  Var table = store.add("X", random_tensor({8, 4}, rng));
  const std::vector<int> ids{1, 5, 5, 2};
  const auto check = check_gradients(
      store, [&] { return random_projection(bigru_encode(embed(ids, table), f, b, ids).reps, 12); });
  EXPECT_LE(check.max_rel_error, kGradTol) << check.worst;
}

EncodedDocument encoded(int id, const std::vector<int>& ids, nd::Rng& rng) {
  return {id, {nd::constant(random_tensor({ids.size(), 6}, rng)), ids}};
}

TEST(Stack, LengthIsSumOfDocumentLengths) {
  nd::Rng rng(13);
  const auto stacked = stack_documents({encoded(0, {1, 2, 3}, rng), encoded(1, {4, 5, 6, 7}, rng)});
  EXPECT_EQ(stacked.length(), 7u);
  EXPECT_EQ(stacked.matrix->shape(), (nd::Shape{7, 6}));
  ASSERT_EQ(stacked.spans.size(), 2u);
  EXPECT_EQ(stacked.spans[1].start, 3u);
  EXPECT_EQ(stacked.spans[1].end, 7u);
}

TEST(Stack, SingleDocumentIsItsRows) {
  nd::Rng rng(14);
  const auto doc = encoded(4, {1, 2}, rng);
  const auto stacked = stack_documents({doc});
  EXPECT_EQ(stacked.matrix->value(), doc.seq.reps->value());
}

TEST(Stack, SigmaAndPi) {
  nd::Rng rng(15);
  const auto stacked = stack_documents({encoded(0, {5, 6, 5}, rng), encoded(1, {6}, rng)});
  EXPECT_EQ(stacked.sigma, (std::vector<int>{5, 6, 5, 6}));
  EXPECT_EQ(stacked.pi.at(5), 2);
  EXPECT_EQ(stacked.pi.at(6), 2);
  EXPECT_EQ(stacked.pi.size(), 2u);
}

TEST(Stack, EmptyListIsError) { EXPECT_THROW(stack_documents({}), Error); }

}  // namespace
}  // namespace iatn
