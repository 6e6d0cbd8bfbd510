#pragma once

// Many-to-many contrastive objective over a batch of (query set, relation
// set) pairs linked by an optimal assignment per sample.
//
// With s(r, v) the cosine similarity and tau the temperature, for every
// matched pair (r_j^k, v_sigma(j)^k):
//
//   q->r: -log softmax over all batch relations r_i^k' of s(r_i^k', v_sigma(j)^k) / tau
//   r->q: -log softmax over all batch queries   v_i^k' of s(r_j^k,  v_i^k')   / tau
//
// The learnable parameter is log(1/tau), the logit scale.

#include <vector>

#include "reveal/autograd.hpp"
#include "reveal/relation_model.hpp"

namespace reveal {

enum class Reduction { kMean, kSum };

struct LossOptions {
  Reduction reduction = Reduction::kMean;
  /// Unmatched queries act as negatives in the relation-to-query term.
  bool include_unmatched_queries = true;
};

struct SampleAlignment {
  ag::Variable queries;    // [M x D]
  ag::Variable relations;  // [J x D]
  Assignment assignment;
};

struct BatchAlignment {
  std::vector<SampleAlignment> samples;
  ag::Variable log_logit_scale;  // [1 x 1], tau = exp(-value)

  /// Throws PreconditionError / ShapeError when a sample has no relations,
  /// widths disagree or an assignment does not fit its sample.
  void validate() const;
  std::size_t matched_pairs() const;
};

/// Solves the assignment of every sample on detached cosine similarities.
BatchAlignment align_batch(const std::vector<ag::Variable>& queries,
                           const std::vector<ag::Variable>& relations,
                           const ag::Variable& log_logit_scale);

struct LossTerms {
  ag::Variable total;
  ag::Variable q_to_r;
  ag::Variable r_to_q;
};

ag::Variable loss_q_to_r(const BatchAlignment& batch, const LossOptions& options = {});
ag::Variable loss_r_to_q(const BatchAlignment& batch, const LossOptions& options = {});
/// Both terms from one similarity computation; total = q_to_r + r_to_q.
LossTerms mm_nce_terms(const BatchAlignment& batch, const LossOptions& options = {});
ag::Variable mm_nce_loss(const BatchAlignment& batch, const LossOptions& options = {});

/// Mean over matched pairs and embedding dimensions of (r - v)^2 on the raw
/// (unnormalized) vectors.
ag::Variable matched_mse_loss(const BatchAlignment& batch);

}  // namespace reveal
