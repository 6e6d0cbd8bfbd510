#pragma once

// Sharded sample storage. Each shard is a ustar archive; sample k is stored
// as three consecutive members sharing the key "%09d" of its global index:
//
//   <key>.fast.f32   fast tokens   (tensor blob, see tensor_io.hpp)
//   <key>.slow.f32   slow tokens
//   <key>.json       {"video_id": ..., "triplets": [{"subject", "predicate", "object"}]}
//
// "object" is null when absent.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "reveal/relation_model.hpp"
#include "reveal/tar.hpp"

namespace reveal {

/// Writes samples into shards of `shard_size` ("<prefix>-000000.tar", ...);
/// the last shard may be short. Each shard is written to a temporary file
/// and renamed into place. Returns the shard paths in order.
std::vector<std::filesystem::path> write_shards(std::span<const VideoSample> samples,
                                                std::size_t shard_size,
                                                const std::filesystem::path& directory,
                                                const std::string& prefix = "shard");

/// A directory yields its "*.tar" files in name order; a file yields itself.
std::vector<std::filesystem::path> list_shards(const std::filesystem::path& path);

struct ShuffleOptions {
  std::size_t buffer_size = 5000;
  std::size_t initial = 1000;
};

struct ReadStats {
  std::size_t samples = 0;
  std::size_t corrupt = 0;
};

/// Streams samples from shards through a shuffle buffer: the buffer first
/// fills to min(initial, buffer_size); then each call tops it up by one
/// sample (while below buffer_size) and emits a uniformly chosen element.
/// A buffer of 1 preserves storage order. Corrupt samples are skipped and
/// counted. Deterministic for a given seed.
class ShardReader {
 public:
  ShardReader(std::vector<std::filesystem::path> shards, ShuffleOptions options,
              std::uint64_t seed);

  std::optional<VideoSample> next();
  const ReadStats& stats() const { return stats_; }

 private:
  std::optional<VideoSample> pull();

  std::vector<std::filesystem::path> shards_;
  std::size_t shard_index_ = 0;
  std::unique_ptr<TarReader> reader_;
  std::optional<TarEntry> pending_;
  ShuffleOptions options_;
  std::mt19937_64 rng_;
  std::vector<VideoSample> buffer_;
  bool exhausted_ = false;
  ReadStats stats_;
};

/// Reads every sample in storage order.
std::vector<VideoSample> read_all_samples(const std::filesystem::path& path,
                                          ReadStats* stats = nullptr);

/// Serializes the JSON sidecar for one sample.
std::string sample_sidecar(const VideoSample& sample);

}  // namespace reveal
