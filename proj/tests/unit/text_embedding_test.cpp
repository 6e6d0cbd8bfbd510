#include <gtest/gtest.h>

#include <fstream>

#include "reveal/errors.hpp"
#include "reveal/text_embedding.hpp"
#include "test_support.hpp"

namespace reveal {
namespace {

TEST(HashedBagOfWordsTest, DeterministicUnitNormAndOrderInsensitive) {
  HashedBagOfWords toy(64);
  const Matrix e = toy.embed({"a man holding a cup", "cup holding man a a", "a man holding a cup"});
  for (Index i = 0; i < e.rows(); ++i) EXPECT_NEAR(e.row(i).norm(), 1.0, 1e-12);
  EXPECT_TRUE(e.row(0) == e.row(1));
  EXPECT_TRUE(e.row(0) == e.row(2));
  EXPECT_TRUE(HashedBagOfWords(64).embed({"a man holding a cup"}).row(0) == e.row(0));
}

TEST(HashedBagOfWordsTest, TokenizerLowercasesAndStripsEdgePunctuation) {
  EXPECT_EQ(HashedBagOfWords::tokenize("Subject: Man, Predicate: holding!"),
            (std::vector<std::string>{"subject", "man", "predicate", "holding"}));
  EXPECT_EQ(HashedBagOfWords::tokenize("  ...  "), std::vector<std::string>{});
  EXPECT_EQ(HashedBagOfWords::tokenize("mount cook (aoraki)"),
            (std::vector<std::string>{"mount", "cook", "aoraki"}));
}

TEST(HashedBagOfWordsTest, EmbeddingIsNormalizedSignedCountSketch) {
  HashedBagOfWords toy(32);
  const std::vector<std::string> words = {"red", "ball", "red"};
  RowVector expected = RowVector::Zero(32);
  for (const auto& w : words) {
    const auto [slot, sign] = toy.slot(w);
    ASSERT_GE(slot, 0);
    ASSERT_LT(slot, 32);
    ASSERT_TRUE(sign == 1.0 || sign == -1.0);
    expected(slot) += sign;
  }
  expected.normalize();
  EXPECT_TRUE(toy.embed({"red ball red"}).row(0).isApprox(expected, 1e-12));
}

TEST(HashedBagOfWordsTest, DegenerateInputsRaiseBackendError) {
  HashedBagOfWords toy(8);
  EXPECT_THROW(toy.embed({"!!!"}), BackendError);
  EXPECT_THROW(HashedBagOfWords(0), ConfigError);
}

TEST(EmbeddingTableTest, LoadsJsonLinesAndFallsBack) {
  testing::TempDir dir;
  {
    std::ofstream out(dir / "table.jsonl");
    out << R"({"text": "hello", "embedding": [3, 4]})" << "\n";
    out << R"({"text": "world", "embedding": [1, 0]})" << "\n";
  }
  const auto path = (dir / "table.jsonl").string();
  const auto table = EmbeddingTable::load(path);
  EXPECT_EQ(table.dim(), 2);
  const Matrix e = table.embed({"world", "hello"});
  EXPECT_DOUBLE_EQ(e(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(e(1, 1), 4.0);
  EXPECT_THROW(table.embed({"unknown"}), BackendError);

  const auto with_fallback = EmbeddingTable::load(path, std::make_shared<HashedBagOfWords>(2));
  EXPECT_EQ(with_fallback.embed({"unknown"}).rows(), 1);
  EXPECT_THROW(EmbeddingTable::load(path, std::make_shared<HashedBagOfWords>(3)), ConfigError);
  EXPECT_THROW(EmbeddingTable::load((dir / "missing").string()), BackendError);
}

}  // namespace
}  // namespace reveal
