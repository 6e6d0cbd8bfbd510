#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "reveal/errors.hpp"
#include "reveal/extraction.hpp"
#include "test_support.hpp"

namespace reveal {
namespace {

TEST(PromptTemplateTest, RendersCaptionAfterExamples) {
  const auto& prompt = PromptTemplate::relationship_extraction();
  const std::string rendered = prompt.render("Iguana on a tree hd");
  EXPECT_TRUE(rendered.starts_with("[INST] You are a software to extract relationships"));
  EXPECT_TRUE(rendered.ends_with("[/INST]\nSentence: Iguana on a tree hd"));
  EXPECT_NE(prompt.examples_block().find("subject: couple, predicate: holding, object: hands"),
            std::string_view::npos);
  EXPECT_EQ(rendered.find("{sentence}"), std::string::npos);
}

TEST(PromptTemplateTest, RejectsEmptyCaptionAndBadTemplates) {
  EXPECT_THROW(PromptTemplate::relationship_extraction().render("   "), PreconditionError);
  EXPECT_THROW(PromptTemplate("no slot"), ConfigError);
  EXPECT_THROW(PromptTemplate("{sentence} {sentence}"), ConfigError);
}

TEST(ParseResponseTest, CountsMalformedLongAndDuplicateLines) {
  const std::string response =
      "Sentence: echoed caption\n"
      "subject: man, predicate: holding, object: cup\n"
      "\n"
      "this line is chatter\n"
      "subject: Man, predicate: holding, object: Cup\n"
      "subject: one two three four five six seven eight nine, predicate: is\n"
      "subject: dog, predicate: running\n";
  ExtractionStats stats;
  const auto triplets = parse_response(response, {}, &stats);
  ASSERT_EQ(triplets.size(), 2u);
  EXPECT_EQ(triplets[0], RelationTriplet("man", "holding", std::string("cup")));
  EXPECT_EQ(triplets[1], RelationTriplet("dog", "running"));
  EXPECT_EQ(stats.lines, 5u);
  EXPECT_EQ(stats.parsed, 4u);
  EXPECT_EQ(stats.malformed, 1u);
  EXPECT_EQ(stats.too_long, 1u);
  EXPECT_EQ(stats.duplicates, 1u);
}

TEST(ParseResponseTest, FilterWidthIsConfigurable) {
  TripletFilter loose{20};
  const auto t = parse_response("subject: one two three four five six seven eight nine, predicate: is",
                                loose);
  EXPECT_EQ(t.size(), 1u);
}

TEST(MockClientTest, KeysOnCaptionAfterLastMarker) {
  MockLlmClient client(std::map<std::string, std::string>{{"a cat", "subject: cat, predicate: sitting"}});
  const auto t = extract_triplets("a cat", client);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], RelationTriplet("cat", "sitting"));
  EXPECT_THROW(extract_triplets("a dog", client), ClientError);
}

TEST(MockClientTest, LoadsResponsesFromJson) {
  testing::TempDir dir;
  {
    std::ofstream out(dir / "responses.json");
    out << R"({"a cat": "subject: cat, predicate: sitting"})";
  }
  const auto client = MockLlmClient::from_json_file((dir / "responses.json").string());
  EXPECT_EQ(extract_triplets("a cat", client).size(), 1u);
  {
    std::ofstream out(dir / "bad.json");
    out << "[1, 2]";
  }
  EXPECT_THROW(MockLlmClient::from_json_file((dir / "bad.json").string()), ConfigError);
  EXPECT_THROW(MockLlmClient::from_json_file((dir / "missing.json").string()), IoError);
}

TEST(ExtractAllTest, KeepsOrderAndRecordsFailuresPerCaption) {
  MockLlmClient client;
  std::vector<std::string> captions;
  for (int i = 0; i < 20; ++i) {
    const std::string c = "caption " + std::to_string(i);
    captions.push_back(c);
    if (i != 7) client.set_response(c, "subject: thing " + std::to_string(i) + ", predicate: is");
  }
  ExtractionStats stats;
  const auto results = extract_all(captions, client, 4, {}, &stats);
  ASSERT_EQ(results.size(), captions.size());
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(results[static_cast<std::size_t>(i)].caption, captions[static_cast<std::size_t>(i)]);
    if (i == 7) {
      EXPECT_TRUE(results[7].error.has_value());
      EXPECT_TRUE(results[7].triplets.empty());
    } else {
      ASSERT_EQ(results[static_cast<std::size_t>(i)].triplets.size(), 1u);
      EXPECT_EQ(results[static_cast<std::size_t>(i)].triplets[0].subject(),
                "thing " + std::to_string(i));
    }
  }
  EXPECT_EQ(stats.parsed, 19u);
}

TEST(HttpClientTest, RequiresEndpointInEnvironment) {
  ::unsetenv(HttpLlmClient::kEndpointEnv);
  EXPECT_THROW(HttpLlmClient::from_environment(), ConfigError);
}

TEST(HttpClientTest, UnreachableServerIsClientError) {
  HttpLlmClient client("http://127.0.0.1:9/generate", 0.5);
  EXPECT_THROW(client.complete("hello"), ClientError);
}

}  // namespace
}  // namespace reveal
