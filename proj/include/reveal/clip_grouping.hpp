#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "reveal/relation_model.hpp"

namespace reveal {

/// A relation annotated with its frame extent [start_frame, end_frame).
struct TemporalRelation {
  RelationTriplet triplet;
  std::int64_t start_frame;
  std::int64_t end_frame;

  TemporalRelation(RelationTriplet t, std::int64_t start, std::int64_t end);
};

struct Clip {
  std::int64_t start_frame;
  std::int64_t end_frame;
  std::vector<TemporalRelation> relations;
};

/// Percentile of `values` with linear interpolation between order
/// statistics (rank = q * (n - 1)). `values` need not be sorted.
double percentile_linear(std::vector<double> values, double q);

/// Splits an annotated relation stream into clips.
///
/// Relations are sorted by start frame. The gap after relation i is
/// max(0, start[i+1] - end[i]); the split threshold is the 75th percentile
/// of those gaps, and the stream is cut wherever a gap exceeds it. Each
/// clip spans [min start, max end] of its run, and every input relation
/// whose extent overlaps that span is attached to the clip, so a long
/// relation can appear in more than one clip.
std::vector<Clip> group_clips(std::span<const TemporalRelation> relations);

}  // namespace reveal
