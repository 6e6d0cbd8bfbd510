#include "reveal/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "reveal/errors.hpp"
#include "reveal/nn.hpp"
#include "reveal/text_embedding.hpp"

namespace reveal {
namespace {

std::string random_word(std::mt19937_64& rng) {
  static constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
  std::uniform_int_distribution<std::size_t> letter(0, kLetters.size() - 1);
  std::string w;
  for (int i = 0; i < 6; ++i) w.push_back(kLetters[letter(rng)]);
  return w;
}

std::string random_phrase(std::mt19937_64& rng, int words) {
  std::string out;
  for (int i = 0; i < words; ++i) {
    if (i > 0) out.push_back(' ');
    out += random_word(rng);
  }
  return out;
}

}  // namespace

RelationSet sample_relations(const RelationSet& relations, std::size_t cap, std::mt19937_64& rng) {
  if (cap < 1) throw PreconditionError("relation cap must be at least 1");
  const std::size_t n = relations.size();
  if (n <= cap) return relations;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  RelationSet out(relations.video_id(), {});
  for (std::size_t i : idx) out.add(relations.triplets()[i]);
  return out;
}

void SyntheticConfig::validate() const {
  if (concepts < 1 || samples < 1 || rel_dim < 1 || vis_dim < 1 || fast_frames < 1 ||
      slow_frames < 1 || patches_per_frame < 1) {
    throw ConfigError("synthetic sizes must all be positive");
  }
  if (min_relations < 1 || min_relations > max_relations) {
    throw ConfigError("synthetic relation range must satisfy 1 <= min_relations <= max_relations");
  }
  if (max_relations > concepts) {
    throw ConfigError("max_relations exceeds the number of concepts");
  }
  if (fast_frames < slow_frames) {
    throw ConfigError("fast_frames must be at least slow_frames");
  }
  if (!(noise >= 0.0) || !(mixing >= 0.0)) {
    throw ConfigError("noise and mixing must be non-negative");
  }
  if (vis_dim < rel_dim) {
    throw ConfigError("vis_dim (" + std::to_string(vis_dim) + ") < rel_dim (" +
                      std::to_string(rel_dim) + "): the concept embedding cannot be injective");
  }
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  SyntheticDataset ds;

  std::vector<std::string> texts;
  for (int c = 0; c < config.concepts; ++c) {
    ds.concept_triplets.emplace_back(random_phrase(rng, 3), random_phrase(rng, 2),
                                     random_phrase(rng, 3));
    texts.push_back(format_triplet(ds.concept_triplets.back()));
  }
  ds.concept_vectors = HashedBagOfWords(config.rel_dim).embed(texts);
  ds.embedding = nn::orthogonal_matrix(config.vis_dim, config.rel_dim, rng);

  std::uniform_int_distribution<int> count(config.min_relations, config.max_relations);
  std::uniform_real_distribution<double> weight(0.0, config.mixing);
  std::normal_distribution<double> noise(0.0, config.noise / std::sqrt(config.vis_dim));

  auto make_tokens = [&](int rows, const std::vector<int>& concepts, Matrix& mixtures) {
    const int j_count = static_cast<int>(concepts.size());
    mixtures = Matrix::Zero(rows, config.rel_dim);
    for (int n = 0; n < rows; ++n) {
      const int primary = n % j_count;
      for (int j = 0; j < j_count; ++j) {
        const double w = j == primary ? 1.0 : weight(rng);
        mixtures.row(n) += w * ds.concept_vectors.row(concepts[static_cast<std::size_t>(j)]);
      }
    }
    Matrix tokens = mixtures * ds.embedding.transpose();
    if (config.noise > 0.0) {
      for (Index i = 0; i < tokens.size(); ++i) tokens.data()[i] += noise(rng);
    }
    return tokens;
  };

  std::vector<int> all(static_cast<std::size_t>(config.concepts));
  std::iota(all.begin(), all.end(), 0);
  for (int k = 0; k < config.samples; ++k) {
    const int j_count = count(rng);
    std::vector<int> pool = all;
    for (int i = 0; i < j_count; ++i) {
      std::uniform_int_distribution<int> pick(i, config.concepts - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    pool.resize(static_cast<std::size_t>(j_count));

    VideoSample sample;
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06d", k);
    sample.video_id = id;
    Matrix fast_mix, slow_mix;
    sample.fast_tokens = make_tokens(config.fast_frames, pool, fast_mix);
    sample.slow_tokens = make_tokens(config.slow_frames * config.patches_per_frame, pool, slow_mix);
    std::vector<RelationTriplet> triplets;
    for (int c : pool) triplets.push_back(ds.concept_triplets[static_cast<std::size_t>(c)]);
    sample.relations = RelationSet(sample.video_id, triplets);

    ds.samples.push_back(std::move(sample));
    ds.concept_ids.push_back(std::move(pool));
    ds.fast_mixtures.push_back(std::move(fast_mix));
    ds.slow_mixtures.push_back(std::move(slow_mix));
  }
  return ds;
}

}  // namespace reveal
