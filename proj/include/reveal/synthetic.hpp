#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "reveal/relation_model.hpp"

namespace reveal {

/// Uniform sample of `cap` triplets without replacement when the set is
/// larger than `cap`; otherwise the set is returned unchanged. Sampled
/// triplets keep their original relative order.
RelationSet sample_relations(const RelationSet& relations, std::size_t cap, std::mt19937_64& rng);

struct SyntheticConfig {
  int concepts = 16;
  int samples = 512;
  int rel_dim = 32;
  int vis_dim = 48;
  int min_relations = 2;
  int max_relations = 6;
  int fast_frames = 16;
  int slow_frames = 4;
  int patches_per_frame = 4;
  double noise = 0.05;
  // Weight range [0, mixing] for the non-primary concepts of a token.
  double mixing = 0.2;
  std::uint64_t seed = 0;

  /// Throws ConfigError on non-positive sizes, an empty relation range,
  /// more relations than concepts, noise < 0, or vis_dim < rel_dim.
  void validate() const;
};

/// Samples plus the ground truth they were generated from.
struct SyntheticDataset {
  std::vector<VideoSample> samples;
  /// concept_ids[k][j] is the concept behind samples[k].relations.triplets()[j].
  std::vector<std::vector<int>> concept_ids;
  /// Concept unit vectors [concepts x rel_dim]; row c is the toy text
  /// embedding of format_triplet(concept_triplets[c]).
  Matrix concept_vectors;
  std::vector<RelationTriplet> concept_triplets;
  /// Orthonormal-column map rel_dim -> vis_dim, [vis_dim x rel_dim].
  Matrix embedding;
  /// Noiseless concept mixture behind every token, aligned with
  /// fast_tokens / slow_tokens rows, [tokens x rel_dim].
  std::vector<Matrix> fast_mixtures;
  std::vector<Matrix> slow_mixtures;
};

/// Each token is E * (sum_j w_j c_j) + noise, where c_j are the sample's
/// concept vectors, the token's primary concept has weight 1 and the others
/// weights drawn from U[0, mixing]. Noise is Gaussian with per-entry
/// standard deviation noise / sqrt(vis_dim), so its expected norm is about
/// `noise`. Concept texts are random words, fixed per concept.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

}  // namespace reveal
