#include "reveal/clip_grouping.hpp"

#include <algorithm>
#include <cmath>

#include "reveal/errors.hpp"

namespace reveal {

TemporalRelation::TemporalRelation(RelationTriplet t, std::int64_t start, std::int64_t end)
    : triplet(std::move(t)), start_frame(start), end_frame(end) {
  if (start < 0) throw PreconditionError("relation start frame is negative");
  if (end <= start) throw PreconditionError("relation end frame must exceed its start frame");
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty list");
  if (q < 0.0 || q > 1.0) throw PreconditionError("percentile outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<Clip> group_clips(std::span<const TemporalRelation> relations) {
  if (relations.empty()) throw PreconditionError("group_clips needs at least one relation");

  std::vector<std::size_t> order(relations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return relations[a].start_frame < relations[b].start_frame;
  });

  std::vector<double> gaps;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const auto gap = relations[order[i + 1]].start_frame - relations[order[i]].end_frame;
    gaps.push_back(static_cast<double>(std::max<std::int64_t>(0, gap)));
  }
  const double threshold = gaps.empty() ? 0.0 : percentile_linear(gaps, 0.75);

  std::vector<Clip> clips;
  std::size_t run_begin = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool last = i + 1 == order.size();
    if (!last && gaps[i] <= threshold) continue;
    Clip clip{relations[order[run_begin]].start_frame, relations[order[run_begin]].end_frame, {}};
    for (std::size_t k = run_begin; k <= i; ++k) {
      clip.start_frame = std::min(clip.start_frame, relations[order[k]].start_frame);
      clip.end_frame = std::max(clip.end_frame, relations[order[k]].end_frame);
    }
    clips.push_back(std::move(clip));
    run_begin = i + 1;
  }

  for (auto& clip : clips) {
    for (std::size_t idx : order) {
      const auto& r = relations[idx];
      if (r.start_frame < clip.end_frame && clip.start_frame < r.end_frame) {
        clip.relations.push_back(r);
      }
    }
  }
  return clips;
}

}  // namespace reveal
