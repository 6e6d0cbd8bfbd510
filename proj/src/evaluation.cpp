#include "reveal/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "reveal/alignment.hpp"
#include "reveal/errors.hpp"

namespace reveal {

nlohmann::json RetrievalReport::to_json() const {
  return {{"recall_at_1", recall_at_1},
          {"recall_at_5", recall_at_5},
          {"mean_matched_similarity", mean_matched_similarity},
          {"mean_best_negative_similarity", mean_best_negative_similarity},
          {"pairs", pairs},
          {"batches", batches},
          {"samples", samples},
          {"mean_candidates", mean_candidates},
          {"instance_recall_at_1", instance_recall_at_1}};
}

RetrievalReport score_groups(const std::vector<std::vector<EmbeddedSample>>& groups) {
  RetrievalReport report;
  std::size_t hits1 = 0, hits5 = 0, instance_hits1 = 0, with_negative = 0;
  double matched = 0.0, best_negative = 0.0, candidates = 0.0;
  for (const auto& group : groups) {
    std::vector<Matrix> rels;
    for (const auto& s : group) rels.push_back(s.relations);
    Index total = 0;
    for (const auto& r : rels) total += r.rows();
    if (total == 0) continue;
    Matrix all(total, group.front().relations.cols());
    std::vector<std::string> keys;
    Index off = 0;
    for (const auto& s : group) {
      all.middleRows(off, s.relations.rows()) = s.relations;
      for (Index j = 0; j < s.relations.rows(); ++j) {
        keys.push_back(s.keys.empty() ? "#" + std::to_string(off + j)
                                      : s.keys.at(static_cast<std::size_t>(j)));
      }
      off += s.relations.rows();
    }
    // First row of each distinct key is its representative candidate.
    std::vector<char> representative(static_cast<std::size_t>(total), 0);
    {
      std::vector<std::string> seen;
      for (Index i = 0; i < total; ++i) {
        const auto& k = keys[static_cast<std::size_t>(i)];
        if (std::find(seen.begin(), seen.end(), k) == seen.end()) {
          seen.push_back(k);
          representative[static_cast<std::size_t>(i)] = 1;
        }
      }
    }

    off = 0;
    for (const auto& s : group) {
      const Assignment a = optimal_assignment(cosine_matrix(s.relations, s.queries));
      const Matrix sims = cosine_matrix(all, s.queries);  // [total x M]
      for (const auto& [j, m] : a.pairs) {
        const Index truth = off + j;
        const double st = sims(truth, m);
        const auto& true_key = keys[static_cast<std::size_t>(truth)];
        Index better = 0, instance_better = 0, distinct = 1;
        double best = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < total; ++i) {
          if (i == truth) continue;
          if (sims(i, m) >= st) ++instance_better;
          if (keys[static_cast<std::size_t>(i)] == true_key ||
              !representative[static_cast<std::size_t>(i)]) {
            continue;
          }
          ++distinct;
          if (sims(i, m) >= st) ++better;
          best = std::max(best, sims(i, m));
        }
        const Index rank = 1 + better;
        hits1 += rank <= 1;
        hits5 += rank <= 5;
        instance_hits1 += instance_better == 0;
        matched += st;
        if (distinct > 1) {
          best_negative += best;
          ++with_negative;
        }
        candidates += static_cast<double>(distinct);
        ++report.pairs;
      }
      off += s.relations.rows();
    }
  }
  if (report.pairs > 0) {
    const double n = static_cast<double>(report.pairs);
    report.recall_at_1 = static_cast<double>(hits1) / n;
    report.recall_at_5 = static_cast<double>(hits5) / n;
    report.instance_recall_at_1 = static_cast<double>(instance_hits1) / n;
    report.mean_matched_similarity = matched / n;
    report.mean_candidates = candidates / n;
  }
  if (with_negative > 0) {
    report.mean_best_negative_similarity = best_negative / static_cast<double>(with_negative);
  }
  return report;
}

std::vector<std::vector<EmbeddedSample>> retrieval_groups(const DualPathwayModel& model,
                                                          std::span<const VideoSample> samples,
                                                          const EvalOptions& options,
                                                          std::size_t* batch_count) {
  if (samples.size() < 2) throw PreconditionError("retrieval_eval needs at least two samples");
  if (options.batch_size < 2) throw ConfigError("evaluation batch_size must be at least 2");

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(options.batch_size);
  for (std::size_t i = 0; i < order.size(); i += bs) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(i + bs, order.size())));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }

  ag::NoGradGuard no_grad;
  std::vector<std::vector<EmbeddedSample>> groups;
  for (const auto& batch : batches) {
    std::vector<EmbeddedSample> fast, slow, pooled;
    for (std::size_t idx : batch) {
      const ForwardOutput out =
          model.forward(samples[idx], rng, static_cast<std::size_t>(options.relation_cap));
      const Matrix& r = out.relations.value();
      std::vector<std::string> keys;
      for (const auto& t : out.used_relations.triplets()) keys.push_back(t.normalized_key());
      if (options.pathway_mode == PathwayMode::kPooled) {
        Matrix q(out.fast.queries.rows() + out.slow.queries.rows(), out.fast.queries.cols());
        q << out.fast.queries.value(), out.slow.queries.value();
        pooled.push_back({std::move(q), r, keys});
      } else {
        fast.push_back({out.fast.queries.value(), r, keys});
        slow.push_back({out.slow.queries.value(), r, std::move(keys)});
      }
    }
    if (options.pathway_mode == PathwayMode::kPooled) {
      groups.push_back(std::move(pooled));
    } else {
      groups.push_back(std::move(fast));
      groups.push_back(std::move(slow));
    }
  }
  if (batch_count != nullptr) *batch_count = batches.size();
  return groups;
}

RetrievalReport retrieval_eval(const DualPathwayModel& model, std::span<const VideoSample> samples,
                               const EvalOptions& options) {
  std::size_t batches = 0;
  RetrievalReport report = score_groups(retrieval_groups(model, samples, options, &batches));
  report.batches = batches;
  report.samples = samples.size();
  return report;
}

AlignmentTrace alignment_trace(const DualPathwayModel& model,
                               std::span<const VideoSample> segments,
                               const std::vector<RelationTriplet>& relations) {
  if (segments.empty()) throw PreconditionError("alignment_trace needs at least one segment");
  ag::NoGradGuard no_grad;
  AlignmentTrace trace;
  for (const auto& t : relations) trace.relations.push_back(format_triplet(t));
  const Matrix r = model.relation_encoder().encode(relations).value();
  trace.values.resize(r.rows(), static_cast<Index>(segments.size()));
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    const Matrix fast = model.fast().encode(seg.fast_tokens).queries.value();
    const Matrix slow = model.slow().encode(seg.slow_tokens).queries.value();
    const Matrix best = cosine_matrix(r, fast).rowwise().maxCoeff().cwiseMax(
        cosine_matrix(r, slow).rowwise().maxCoeff());
    trace.values.col(static_cast<Index>(s)) = best;
  }
  return trace;
}

void write_trace_csv(std::ostream& out, const AlignmentTrace& trace) {
  const auto old_precision = out.precision(17);
  out << "relation";
  for (Index s = 0; s < trace.values.cols(); ++s) out << ",segment_" << s;
  out << '\n';
  for (Index r = 0; r < trace.values.rows(); ++r) {
    std::string quoted = "\"";
    for (char c : trace.relations[static_cast<std::size_t>(r)]) {
      if (c == '"') quoted += '"';
      quoted += c;
    }
    quoted += '"';
    out << quoted;
    for (Index s = 0; s < trace.values.cols(); ++s) out << ',' << trace.values(r, s);
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace reveal
