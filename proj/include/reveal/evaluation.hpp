#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "reveal/encoders.hpp"
#include "reveal/training.hpp"

namespace reveal {

struct RetrievalReport {
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  double mean_matched_similarity = 0.0;
  double mean_best_negative_similarity = 0.0;
  std::size_t pairs = 0;
  std::size_t batches = 0;
  std::size_t samples = 0;
  /// Mean number of distinct candidate relations a query was ranked against.
  double mean_candidates = 0.0;
  /// Recall@1 when every relation instance is its own candidate, so copies
  /// of the true text in other samples count as (tied) negatives.
  double instance_recall_at_1 = 0.0;

  nlohmann::json to_json() const;
};

/// Query and relation embeddings of one sample, as seen by one retrieval
/// group (a pathway, or both pathways pooled).
struct EmbeddedSample {
  Matrix queries;    // [M x D]
  Matrix relations;  // [J x D]
  /// Identity of each relation row (normalized text). Rows with equal keys
  /// are one candidate. Empty means every row is distinct.
  std::vector<std::string> keys;
};

/// Each inner vector is one retrieval group. Within a group every sample's
/// relations are matched to its queries by optimal_assignment; each matched
/// query then ranks all distinct relations of the group by cosine
/// similarity; other rows carrying the true relation's key are not
/// negatives. Ties rank the true relation last among equals.
RetrievalReport score_groups(const std::vector<std::vector<EmbeddedSample>>& groups);

struct EvalOptions {
  int batch_size = 16;
  PathwayMode pathway_mode = PathwayMode::kPerPathway;
  int relation_cap = 8;
  std::uint64_t seed = 0;
};

/// The retrieval groups retrieval_eval scores, exposed for analysis.
std::vector<std::vector<EmbeddedSample>> retrieval_groups(const DualPathwayModel& model,
                                                          std::span<const VideoSample> samples,
                                                          const EvalOptions& options,
                                                          std::size_t* batch_count = nullptr);

/// Shuffles the samples with `seed`, cuts batches of batch_size (a trailing
/// single sample joins the previous batch) and scores in-batch retrieval.
/// In per-pathway mode each batch yields one group per pathway.
/// Throws PreconditionError with fewer than two samples.
RetrievalReport retrieval_eval(const DualPathwayModel& model, std::span<const VideoSample> samples,
                               const EvalOptions& options = {});

struct AlignmentTrace {
  std::vector<std::string> relations;  // format_triplet of each row
  Matrix values;                       // [relations x segments]
};

/// values(r, s) = max over the fast and slow queries of segment s of
/// cos(encoded relation r, query).
AlignmentTrace alignment_trace(const DualPathwayModel& model,
                               std::span<const VideoSample> segments,
                               const std::vector<RelationTriplet>& relations);

/// Header "relation,segment_0,...", then one row per relation with the text
/// quoted.
void write_trace_csv(std::ostream& out, const AlignmentTrace& trace);

}  // namespace reveal
