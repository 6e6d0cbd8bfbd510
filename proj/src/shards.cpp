#include "reveal/shards.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "reveal/errors.hpp"
#include "reveal/tensor_io.hpp"

namespace reveal {
namespace {

std::string sample_key(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%09zu", index);
  return buf;
}

std::string key_of(const std::string& member) { return member.substr(0, member.find('.')); }

VideoSample decode_sample(const std::string& key, const std::vector<TarEntry>& members) {
  const TarEntry* fast = nullptr;
  const TarEntry* slow = nullptr;
  const TarEntry* meta = nullptr;
  for (const auto& m : members) {
    const std::string suffix = m.name.substr(key.size());
    if (suffix == ".fast.f32") fast = &m;
    else if (suffix == ".slow.f32") slow = &m;
    else if (suffix == ".json") meta = &m;
  }
  if (fast == nullptr || slow == nullptr || meta == nullptr) {
    throw CorruptSample("sample " + key + " is missing a member");
  }
  VideoSample sample;
  sample.fast_tokens = decode_tensor(fast->data, Precision::kFloat32);
  sample.slow_tokens = decode_tensor(slow->data, Precision::kFloat32);
  try {
    const auto doc = nlohmann::json::parse(meta->data);
    sample.video_id = doc.at("video_id").get<std::string>();
    std::vector<RelationTriplet> triplets;
    for (const auto& t : doc.at("triplets")) {
      std::optional<std::string> object;
      if (t.contains("object") && !t.at("object").is_null()) object = t.at("object").get<std::string>();
      triplets.emplace_back(t.at("subject").get<std::string>(), t.at("predicate").get<std::string>(),
                            std::move(object));
    }
    sample.relations = RelationSet(sample.video_id, triplets);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptSample("sample " + key + ": " + e.what());
  } catch (const ValidationError& e) {
    throw CorruptSample("sample " + key + ": " + e.what());
  }
  try {
    sample.validate();
  } catch (const ValidationError& e) {
    throw CorruptSample("sample " + key + ": " + e.what());
  }
  return sample;
}

}  // namespace

std::string sample_sidecar(const VideoSample& sample) {
  nlohmann::json triplets = nlohmann::json::array();
  for (const auto& t : sample.relations.triplets()) {
    nlohmann::json obj = {{"subject", t.subject()}, {"predicate", t.predicate()}};
    obj["object"] = t.object() ? nlohmann::json(*t.object()) : nlohmann::json(nullptr);
    triplets.push_back(std::move(obj));
  }
  return nlohmann::json{{"video_id", sample.video_id}, {"triplets", std::move(triplets)}}.dump();
}

std::vector<std::filesystem::path> write_shards(std::span<const VideoSample> samples,
                                                std::size_t shard_size,
                                                const std::filesystem::path& directory,
                                                const std::string& prefix) {
  if (shard_size < 1) throw PreconditionError("shard_size must be at least 1");
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create '" + directory.string() + "': " + ec.message());

  std::vector<std::filesystem::path> paths;
  for (std::size_t begin = 0; begin < samples.size(); begin += shard_size) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s-%06zu.tar", prefix.c_str(), paths.size());
    const auto path = directory / name;
    TarWriter writer(path);
    const std::size_t end = std::min(samples.size(), begin + shard_size);
    for (std::size_t i = begin; i < end; ++i) {
      const VideoSample& s = samples[i];
      s.validate();
      const std::string key = sample_key(i);
      writer.add(key + ".fast.f32", encode_tensor(s.fast_tokens, Precision::kFloat32));
      writer.add(key + ".slow.f32", encode_tensor(s.slow_tokens, Precision::kFloat32));
      writer.add(key + ".json", sample_sidecar(s));
    }
    writer.finish();
    paths.push_back(path);
  }
  return paths;
}

std::vector<std::filesystem::path> list_shards(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_regular_file(path)) {
    out.push_back(path);
    return out;
  }
  if (!std::filesystem::is_directory(path)) {
    throw IoError("no shard file or directory at '" + path.string() + "'");
  }
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tar") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no .tar shards in '" + path.string() + "'");
  return out;
}

ShardReader::ShardReader(std::vector<std::filesystem::path> shards, ShuffleOptions options,
                         std::uint64_t seed)
    : shards_(std::move(shards)), options_(options), rng_(seed) {
  if (options_.buffer_size < 1) throw PreconditionError("shuffle buffer must hold at least one sample");
  options_.initial = std::clamp<std::size_t>(options_.initial, 1, options_.buffer_size);
}

std::optional<VideoSample> ShardReader::pull() {
  for (;;) {
    if (!reader_) {
      if (shard_index_ >= shards_.size()) return std::nullopt;
      reader_ = std::make_unique<TarReader>(shards_[shard_index_++]);
      pending_.reset();
    }
    std::vector<TarEntry> members;
    if (pending_) {
      members.push_back(std::move(*pending_));
      pending_.reset();
    } else if (auto first = reader_->next()) {
      members.push_back(std::move(*first));
    } else {
      reader_.reset();
      continue;
    }
    const std::string key = key_of(members.front().name);
    while (auto entry = reader_->next()) {
      if (key_of(entry->name) != key) {
        pending_ = std::move(entry);
        break;
      }
      members.push_back(std::move(*entry));
    }
    try {
      VideoSample sample = decode_sample(key, members);
      ++stats_.samples;
      return sample;
    } catch (const CorruptSample& e) {
      ++stats_.corrupt;
      spdlog::warn("skipping corrupt sample: {}", e.what());
    }
  }
}

std::optional<VideoSample> ShardReader::next() {
  if (!exhausted_ && buffer_.size() < options_.buffer_size) {
    if (auto s = pull()) buffer_.push_back(std::move(*s));
    else exhausted_ = true;
  }
  while (!exhausted_ && buffer_.size() < options_.initial) {
    if (auto s = pull()) buffer_.push_back(std::move(*s));
    else exhausted_ = true;
  }
  if (buffer_.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
  const std::size_t k = pick(rng_);
  std::swap(buffer_[k], buffer_.back());
  VideoSample out = std::move(buffer_.back());
  buffer_.pop_back();
  return out;
}

std::vector<VideoSample> read_all_samples(const std::filesystem::path& path, ReadStats* stats) {
  ShardReader reader(list_shards(path), ShuffleOptions{1, 1}, 0);
  std::vector<VideoSample> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  if (stats != nullptr) *stats = reader.stats();
  return out;
}

}  // namespace reveal
