// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "iatn/data.hpp"
#include "support.hpp"

namespace iatn {
namespace {

using Strings = std::vector<std::string>;

void write(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TEST(QaFile, QuestionAndAnswers) {
  testing::TempDir dir;
  write(dir.file("qa.txt"), "1 what does Larenz Tate act in?\tThe Postman, A Man Apart\n");
  const auto ex = parse_qa_file(dir.file("qa.txt"), EntityLexicon({"Larenz Tate"}));
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].question, "what does Larenz Tate act in?");
  EXPECT_EQ(ex[0].answers, (Strings{"The Postman", "A Man Apart"}));
  EXPECT_EQ(texts(ex[0].tokens), (Strings{"what", "does", "Larenz Tate", "act", "in", "?"}));
}

TEST(QaFile, EmptyFileAndSingleAnswer) {
  testing::TempDir dir;
  write(dir.file("empty.txt"), "");
  EXPECT_TRUE(parse_qa_file(dir.file("empty.txt"), EntityLexicon{}).empty());
  write(dir.file("one.txt"), "1 who?\tSomebody\n");
  EXPECT_EQ(parse_qa_file(dir.file("one.txt"), EntityLexicon{})[0].answers, (Strings{"Somebody"}));
}

TEST(QaFile, MissingTabNamesTheLine) {
  testing::TempDir dir;
  write(dir.file("bad.txt"), "1 fine\tA\n2 no tab here\n");
  try {
    parse_qa_file(dir.file("bad.txt"), EntityLexicon{});
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bad.txt:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("no tab here"), std::string::npos) << msg;
  }
}

TEST(QaFile, UnreadableFileIsError) {
  EXPECT_THROW(parse_qa_file("/nonexistent/qa.txt", EntityLexicon{}), ParseError);
}

TEST(KbFile, FactTokensUseLexicon) {
  testing::TempDir dir;
  write(dir.file("kb.txt"), "1 The Inkwell starred_actors Larenz Tate\n");
  const auto kb = parse_kb_file(dir.file("kb.txt"), EntityLexicon({"The Inkwell", "Larenz Tate"}));
  ASSERT_EQ(kb.size(), 1u);
  EXPECT_EQ(texts(kb[0].tokens), (Strings{"The Inkwell", "starred_actors", "Larenz Tate"}));
}

TEST(KbFile, EmptyAndDuplicateLines) {
  testing::TempDir dir;
  write(dir.file("empty.txt"), "");
  EXPECT_TRUE(parse_kb_file(dir.file("empty.txt"), EntityLexicon{}).empty());
  write(dir.file("dup.txt"), "1 a b c\n2 a b c\n");
  const auto kb = parse_kb_file(dir.file("dup.txt"), EntityLexicon{});
  ASSERT_EQ(kb.size(), 2u);
  EXPECT_NE(kb[0].id, kb[1].id);
  EXPECT_EQ(texts(kb[0].tokens), texts(kb[1].tokens));
}

TEST(Synthetic, FixedSeedIsByteIdentical) {
  testing::TempDir a, b;
  generate_synthetic(SyntheticConfig{}).write(a.path());
  generate_synthetic(SyntheticConfig{}).write(b.path());
  for (const char* f : {"entities.txt", "kb.txt", "train.txt", "valid.txt", "test.txt"}) {
    EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
  }
}

TEST(Synthetic, ZeroQuestionsIsError) {
  SyntheticConfig c;
  c.num_questions = 0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(Synthetic, ShapeOfDefaultDataset) {
  const auto ds = generate_synthetic(SyntheticConfig{});
  EXPECT_EQ(ds.entities.size(), 50u);
  EXPECT_EQ(ds.train.size() + ds.valid.size() + ds.test.size(), 200u);
  EXPECT_EQ(ds.train.size(), 160u);
  for (const auto& e : ds.entities) EXPECT_NE(e.find(' '), std::string::npos) << e;
}

TEST(Synthetic, EveryAnswerAppearsInItsFact) {
  const auto ds = generate_synthetic(SyntheticConfig{});
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const QAExample& ex : *split) {
      ASSERT_FALSE(ex.answers.empty());
      bool found = false;
      for (const std::string& fact : ds.kb) {
        bool all = true;
        for (const auto& a : ex.answers) all = all && fact.find(a) != std::string::npos;
        found = found || all;
      }
      EXPECT_TRUE(found) << ex.question;
    }
}

TEST(Synthetic, HeldOutAnswersNeverInKbText) {
  SyntheticConfig c;
  c.mode = SyntheticMode::held_out;
  const auto ds = generate_synthetic(c);
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const QAExample& ex : *split)
      for (const auto& a : ex.answers)
        for (const std::string& fact : ds.kb) EXPECT_EQ(fact.find(a), std::string::npos) << a;
}

TEST(Synthetic, RoundTripsThroughFiles) {
  testing::TempDir dir;
  const auto syn = generate_synthetic(SyntheticConfig{});
  syn.write(dir.path());
  const Dataset ds = load_dataset(dir.path());
  EXPECT_EQ(ds.kb.size(), syn.kb.size());
  ASSERT_EQ(ds.train.size(), syn.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(ds.train[i].question, syn.train[i].question);
    EXPECT_EQ(ds.train[i].answers, syn.train[i].answers);
    EXPECT_EQ(ds.train[i].tokens, syn.train[i].tokens);
  }
}

TEST(Synthetic, RecsModeListsLikedEntities) {
  SyntheticConfig c;
  c.mode = SyntheticMode::recs;
  const auto ds = generate_synthetic(c);
  ASSERT_FALSE(ds.train.empty());
  EXPECT_EQ(ds.train[0].question.rfind("i like ", 0), 0u);
  EXPECT_FALSE(ds.train[0].answers.empty());
}

TEST(Synthetic, ConfigFromKeyValues) {
  const auto c = SyntheticConfig::from_key_values(parse_key_values("num_entities=10\nmode=held_out\n"));
  EXPECT_EQ(c.num_entities, 10);
  EXPECT_EQ(c.mode, SyntheticMode::held_out);
  EXPECT_THROW(SyntheticConfig::from_key_values(parse_key_values("bogus=1")), ConfigError);
  EXPECT_THROW(SyntheticConfig::from_key_values(parse_key_values("mode=xyz")), ConfigError);
}

}  // namespace
}  // namespace iatn
