#pragma once

// Caption -> relation triplet extraction through a text-completion client.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reveal/relation_model.hpp"

namespace reveal {

/// Few-shot instruction prompt with a single "{sentence}" slot.
class PromptTemplate {
 public:
  static constexpr std::string_view kSentenceSlot = "{sentence}";

  /// The relationship-extraction prompt used for caption decomposition.
  static const PromptTemplate& relationship_extraction();

  explicit PromptTemplate(std::string text);

  /// Substitutes the sentence slot. Throws PreconditionError on an empty
  /// sentence.
  std::string render(std::string_view sentence) const;

  const std::string& text() const { return text_; }
  /// Everything before the sentence slot.
  std::string_view examples_block() const;

 private:
  std::string text_;
  std::size_t slot_pos_;
};

/// Text in, text out. Implementations throw ClientError on transport
/// failures and timeouts.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) const = 0;
};

/// Canned responses keyed by caption. The caption is recovered from the
/// rendered prompt (text after the last "Sentence: " marker). Thread-safe.
class MockLlmClient final : public LlmClient {
 public:
  MockLlmClient() = default;
  explicit MockLlmClient(std::map<std::string, std::string> responses);

  void set_response(std::string caption, std::string response);
  std::string complete(const std::string& prompt) const override;

  /// Loads a JSON object {"caption": "response", ...}.
  static MockLlmClient from_json_file(const std::string& path);

 private:
  std::map<std::string, std::string> responses_;
};

/// POSTs {"prompt": ...} as JSON and reads {"text": ...} back.
class HttpLlmClient final : public LlmClient {
 public:
  static constexpr const char* kEndpointEnv = "REVEAL_LLM_ENDPOINT";

  /// endpoint like "http://127.0.0.1:8080/generate".
  explicit HttpLlmClient(std::string endpoint, double timeout_seconds = 60.0);

  /// Reads the endpoint from REVEAL_LLM_ENDPOINT. Throws ConfigError if unset.
  static HttpLlmClient from_environment(double timeout_seconds = 60.0);

  std::string complete(const std::string& prompt) const override;
  const std::string& endpoint() const { return endpoint_; }

 private:
  std::string endpoint_;
  std::string host_;
  std::string path_;
  double timeout_seconds_;
};

struct TripletFilter {
  /// Triplets with any field longer than this many words are dropped.
  std::size_t max_words_per_field = 8;
};

struct ExtractionStats {
  std::size_t lines = 0;
  std::size_t parsed = 0;
  std::size_t malformed = 0;
  std::size_t too_long = 0;
  std::size_t duplicates = 0;
};

/// Parses an LLM response line by line. Blank lines and echoed
/// "Sentence:" lines are ignored; malformed lines are dropped and counted.
std::vector<RelationTriplet> parse_response(std::string_view response,
                                            const TripletFilter& filter = {},
                                            ExtractionStats* stats = nullptr);

/// Renders the prompt for `caption`, queries `llm` and parses the answer.
/// Throws PreconditionError on an empty caption; ClientError propagates.
std::vector<RelationTriplet> extract_triplets(std::string_view caption, const LlmClient& llm,
                                              const TripletFilter& filter = {},
                                              ExtractionStats* stats = nullptr);

struct CaptionResult {
  std::string caption;
  std::vector<RelationTriplet> triplets;
  std::optional<std::string> error;  // set when the client failed; sample skipped
};

/// Extracts every caption with at most `max_in_flight` concurrent requests.
/// Results keep input order. Client errors are logged and recorded per
/// caption, never thrown.
std::vector<CaptionResult> extract_all(const std::vector<std::string>& captions,
                                       const LlmClient& llm, std::size_t max_in_flight = 4,
                                       const TripletFilter& filter = {},
                                       ExtractionStats* stats = nullptr);

}  // namespace reveal
