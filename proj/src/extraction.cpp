#include "reveal/extraction.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "reveal/errors.hpp"

namespace reveal {
namespace {

constexpr std::string_view kSentenceMarker = "Sentence: ";

const char* const kRelationshipPrompt = R"PROMPT([INST] You are a software to extract relationships from sentences. 
Extract explicit and factual relationships between objects in the last sentence. 
Use the same formatting as below. No other text. 
One instance per subject, object, and predicate. Be exhaustive.

Sentence: 'A video of a person on the  side of a table holding food.'
subject: person, predicate: on the side of, object: table
subject: person, predicate: holding, object: food

Sentence: 'A kid touching the table  while sitting on a chair.'
subject: kid, predicate: touching, object: table 
subject: kid, predicate: sitting on, object: chair

Sentence: 'A man putting on shoes and clothes. 
Behind him two trees next to each other.'
subject: man, predicate: holding, object: shoe
subject: man, predicate: holding, object: clothes
subject: two trees, predicate: behind, object: him
subject: tree, predicate: next to, object: tree

Sentence: 'Woman sets table with plates, silverware, glasses, 
before placing oatmeal pot and juice pitcher in center. Calls family.'
subject: woman, predicate: set, object: table
subject: woman, predicate: set, object: plates
subject: woman, predicate: set, object: silverware
subject: woman, predicate: set, object: glasses
subject: woman, predicate: placing, object: oatmeal pot
subject: woman, predicate: placing, object: juice pitcher
subject: oatmeal pot, predicate: in center of, object: table
subject: juice pitcher, predicate: in center of, object: table
subject: woman, predicate: call, object: family

Sentence: 'Children playing on swings and slide. Couple sits on bench, 
holding hands.'
subject: children, predicate: playing on, object: swings
subject: couple, predicate: sit on, object: bench
subject: couple, predicate: holding, object: hands [/INST]
Sentence: {sentence})PROMPT";

std::size_t count_words(std::string_view s) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

bool too_long(const RelationTriplet& t, const TripletFilter& filter) {
  if (count_words(t.subject()) > filter.max_words_per_field) return true;
  if (count_words(t.predicate()) > filter.max_words_per_field) return true;
  return t.object() && count_words(*t.object()) > filter.max_words_per_field;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

const PromptTemplate& PromptTemplate::relationship_extraction() {
  static const PromptTemplate prompt{std::string(kRelationshipPrompt)};
  return prompt;
}

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  slot_pos_ = text_.find(kSentenceSlot);
  if (slot_pos_ == std::string::npos || text_.find(kSentenceSlot, slot_pos_ + 1) != std::string::npos) {
    throw ConfigError("prompt template must contain exactly one {sentence} slot");
  }
}

std::string PromptTemplate::render(std::string_view sentence) const {
  if (trim(sentence).empty()) throw PreconditionError("caption is empty");
  std::string out;
  out.reserve(text_.size() + sentence.size());
  out.append(text_, 0, slot_pos_);
  out.append(sentence);
  out.append(text_, slot_pos_ + kSentenceSlot.size(), std::string::npos);
  return out;
}

std::string_view PromptTemplate::examples_block() const {
  return std::string_view(text_).substr(0, slot_pos_);
}

MockLlmClient::MockLlmClient(std::map<std::string, std::string> responses)
    : responses_(std::move(responses)) {}

void MockLlmClient::set_response(std::string caption, std::string response) {
  responses_[std::move(caption)] = std::move(response);
}

std::string MockLlmClient::complete(const std::string& prompt) const {
  const std::size_t marker = prompt.rfind(kSentenceMarker);
  const std::string caption = marker == std::string::npos
                                  ? prompt
                                  : std::string(trim(std::string_view(prompt).substr(
                                        marker + kSentenceMarker.size())));
  auto it = responses_.find(caption);
  if (it == responses_.end()) throw ClientError("mock client has no response for '" + caption + "'");
  return it->second;
}

MockLlmClient MockLlmClient::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("'" + path + "' must hold a JSON object");
  MockLlmClient client;
  for (const auto& [caption, response] : doc.items()) {
    client.set_response(caption, response.get<std::string>());
  }
  return client;
}

HttpLlmClient::HttpLlmClient(std::string endpoint, double timeout_seconds)
    : endpoint_(std::move(endpoint)), timeout_seconds_(timeout_seconds) {
  const std::size_t scheme = endpoint_.find("://");
  if (scheme == std::string::npos || endpoint_.compare(0, scheme, "http") != 0) {
    throw ConfigError("LLM endpoint must look like http://host:port/path, got '" + endpoint_ + "'");
  }
  const std::size_t path_start = endpoint_.find('/', scheme + 3);
  host_ = endpoint_.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);
}

HttpLlmClient HttpLlmClient::from_environment(double timeout_seconds) {
  const char* endpoint = std::getenv(kEndpointEnv);
  if (endpoint == nullptr || *endpoint == '\0') {
    throw ConfigError(std::string(kEndpointEnv) + " is not set");
  }
  return HttpLlmClient(endpoint, timeout_seconds);
}

std::string HttpLlmClient::complete(const std::string& prompt) const {
  httplib::Client client(host_);
  const auto secs = static_cast<time_t>(timeout_seconds_);
  const auto usecs = static_cast<time_t>((timeout_seconds_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  const std::string body = nlohmann::json{{"prompt", prompt}}.dump();
  auto res = client.Post(path_, body, "application/json");
  if (!res) {
    throw ClientError("request to " + endpoint_ + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ClientError("request to " + endpoint_ + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ClientError("bad response from " + endpoint_ + ": " + e.what());
  }
}

std::vector<RelationTriplet> parse_response(std::string_view response, const TripletFilter& filter,
                                            ExtractionStats* stats) {
  ExtractionStats local;
  RelationSet kept;
  std::size_t pos = 0;
  while (pos < response.size()) {
    std::size_t end = response.find('\n', pos);
    if (end == std::string_view::npos) end = response.size();
    const std::string_view line = trim(response.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.starts_with("Sentence:")) continue;
    ++local.lines;
    try {
      RelationTriplet t = parse_triplet_line(line);
      ++local.parsed;
      if (too_long(t, filter)) {
        ++local.too_long;
      } else if (!kept.add(t)) {
        ++local.duplicates;
      }
    } catch (const ValidationError& e) {
      ++local.malformed;
      spdlog::debug("dropping line: {}", e.what());
    }
  }
  if (stats != nullptr) {
    stats->lines += local.lines;
    stats->parsed += local.parsed;
    stats->malformed += local.malformed;
    stats->too_long += local.too_long;
    stats->duplicates += local.duplicates;
  }
  return kept.triplets();
}

std::vector<RelationTriplet> extract_triplets(std::string_view caption, const LlmClient& llm,
                                              const TripletFilter& filter, ExtractionStats* stats) {
  const std::string prompt = PromptTemplate::relationship_extraction().render(caption);
  return parse_response(llm.complete(prompt), filter, stats);
}

std::vector<CaptionResult> extract_all(const std::vector<std::string>& captions,
                                       const LlmClient& llm, std::size_t max_in_flight,
                                       const TripletFilter& filter, ExtractionStats* stats) {
  std::vector<CaptionResult> results(captions.size());
  std::vector<ExtractionStats> per_caption(captions.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < captions.size(); i = next++) {
      results[i].caption = captions[i];
      try {
        results[i].triplets = extract_triplets(captions[i], llm, filter, &per_caption[i]);
      } catch (const ClientError& e) {
        results[i].error = e.what();
        spdlog::warn("skipping caption {}: {}", i, e.what());
      } catch (const PreconditionError& e) {
        results[i].error = e.what();
        spdlog::warn("skipping caption {}: {}", i, e.what());
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, std::max<std::size_t>(captions.size(), 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (stats != nullptr) {
    for (const auto& s : per_caption) {
      stats->lines += s.lines;
      stats->parsed += s.parsed;
      stats->malformed += s.malformed;
      stats->too_long += s.too_long;
      stats->duplicates += s.duplicates;
    }
  }
  return results;
}

}  // namespace reveal
