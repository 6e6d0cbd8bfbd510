#include "reveal/mm_nce.hpp"

#include <cmath>
#include <string>

#include "reveal/alignment.hpp"
#include "reveal/errors.hpp"

namespace reveal {

namespace {

struct Pair {
  Index query;     // row into the stacked queries
  Index relation;  // row into the stacked relations
};

struct Stacked {
  ag::Variable queries;
  ag::Variable relations;
  std::vector<Pair> pairs;
  std::vector<char> query_matched;
};

Stacked stack(const BatchAlignment& batch) {
  Stacked out;
  std::vector<ag::Variable> qs, rs;
  Index q_off = 0, r_off = 0;
  for (const auto& s : batch.samples) {
    qs.push_back(s.queries);
    rs.push_back(s.relations);
    std::vector<char> matched(static_cast<std::size_t>(s.queries.rows()), 0);
    for (const auto& [j, m] : s.assignment.pairs) {
      out.pairs.push_back({q_off + m, r_off + j});
      matched[static_cast<std::size_t>(m)] = 1;
    }
    out.query_matched.insert(out.query_matched.end(), matched.begin(), matched.end());
    q_off += s.queries.rows();
    r_off += s.relations.rows();
  }
  out.queries = ag::concat_rows(qs);
  out.relations = ag::concat_rows(rs);
  return out;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

// Fused contrastive op over the cosine matrix S [queries x relations].
// Produces [1 x 2] = (q->r, r->q) and backpropagates into S and the scale.
ag::Variable contrastive_terms(const ag::Variable& sim, const ag::Variable& log_scale,
                               const std::vector<Pair>& pairs,
                               const std::vector<char>& query_matched,
                               const LossOptions& options) {
  const Matrix& S = sim.value();
  const double scale = std::exp(log_scale.scalar());
  const Matrix logits = scale * S;
  const double weight = options.reduction == Reduction::kMean
                            ? 1.0 / static_cast<double>(pairs.size())
                            : 1.0;

  std::vector<Index> negative_queries;
  for (Index q = 0; q < S.rows(); ++q) {
    if (options.include_unmatched_queries || query_matched[static_cast<std::size_t>(q)]) {
      negative_queries.push_back(q);
    }
  }

  // dlogits for each term, so the two outputs can be seeded independently.
  Matrix d_qr = Matrix::Zero(S.rows(), S.cols());
  Matrix d_rq = Matrix::Zero(S.rows(), S.cols());
  double qr = 0.0, rq = 0.0;
  Eigen::VectorXd column(static_cast<Index>(negative_queries.size()));
  for (const auto& p : pairs) {
    const Eigen::VectorXd row = logits.row(p.query).transpose();
    const double lse_row = log_sum_exp(row);
    qr += weight * (lse_row - logits(p.query, p.relation));
    d_qr.row(p.query) += weight * (row.array() - lse_row).exp().matrix().transpose();
    d_qr(p.query, p.relation) -= weight;

    for (std::size_t i = 0; i < negative_queries.size(); ++i) {
      column(static_cast<Index>(i)) = logits(negative_queries[i], p.relation);
    }
    const double lse_col = log_sum_exp(column);
    rq += weight * (lse_col - logits(p.query, p.relation));
    for (std::size_t i = 0; i < negative_queries.size(); ++i) {
      d_rq(negative_queries[i], p.relation) +=
          weight * std::exp(column(static_cast<Index>(i)) - lse_col);
    }
    d_rq(p.query, p.relation) -= weight;
  }

  Matrix out(1, 2);
  out << qr, rq;
  return ag::Variable::make_op(
      std::move(out), {sim, log_scale},
      [sim, log_scale, S, scale, d_qr = std::move(d_qr), d_rq = std::move(d_rq)](const Matrix& g) {
        const Matrix dlogits = g(0, 0) * d_qr + g(0, 1) * d_rq;
        if (sim.requires_grad()) sim.accumulate_grad(scale * dlogits);
        if (log_scale.requires_grad()) {
          // d logits / d log_scale = logits = scale * S.
          log_scale.accumulate_grad(Matrix::Constant(1, 1, scale * dlogits.cwiseProduct(S).sum()));
        }
      });
}

ag::Variable pick(const ag::Variable& terms, Index col) {
  Matrix v(1, 1);
  v(0, 0) = terms.value()(0, col);
  return ag::Variable::make_op(std::move(v), {terms}, [terms, col](const Matrix& g) {
    Matrix d = Matrix::Zero(1, 2);
    d(0, col) = g(0, 0);
    terms.accumulate_grad(d);
  });
}

ag::Variable both_terms(const BatchAlignment& batch, const LossOptions& options) {
  batch.validate();
  Stacked st = stack(batch);
  const ag::Variable sim = ag::matmul_nt(ag::normalize_rows(st.queries, kMinRowNorm),
                                         ag::normalize_rows(st.relations, kMinRowNorm));
  return contrastive_terms(sim, batch.log_logit_scale, st.pairs, st.query_matched, options);
}

}  // namespace

void BatchAlignment::validate() const {
  if (samples.empty()) throw PreconditionError("batch has no samples");
  if (!log_logit_scale.defined() || log_logit_scale.rows() != 1 || log_logit_scale.cols() != 1) {
    throw ShapeError("log_logit_scale must be [1 x 1]");
  }
  const Index width = samples.front().queries.cols();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    const auto J = static_cast<int>(s.relations.rows());
    const auto M = static_cast<int>(s.queries.rows());
    if (J < 1) throw PreconditionError("sample " + std::to_string(k) + " has no relations");
    if (s.queries.cols() != width || s.relations.cols() != width) {
      throw ShapeError("sample " + std::to_string(k) + " has mismatched embedding widths");
    }
    if (s.assignment.num_queries != M || s.assignment.pairs.size() != static_cast<std::size_t>(J) ||
        !s.assignment.valid(J)) {
      throw PreconditionError("sample " + std::to_string(k) + " has an invalid assignment");
    }
  }
}

std::size_t BatchAlignment::matched_pairs() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.assignment.pairs.size();
  return n;
}

BatchAlignment align_batch(const std::vector<ag::Variable>& queries,
                           const std::vector<ag::Variable>& relations,
                           const ag::Variable& log_logit_scale) {
  if (queries.size() != relations.size()) {
    throw PreconditionError("align_batch: query and relation counts differ");
  }
  BatchAlignment batch;
  batch.log_logit_scale = log_logit_scale;
  for (std::size_t k = 0; k < queries.size(); ++k) {
    const Matrix S = cosine_matrix(relations[k].value(), queries[k].value());
    batch.samples.push_back({queries[k], relations[k], optimal_assignment(S)});
  }
  return batch;
}

ag::Variable loss_q_to_r(const BatchAlignment& batch, const LossOptions& options) {
  return pick(both_terms(batch, options), 0);
}

ag::Variable loss_r_to_q(const BatchAlignment& batch, const LossOptions& options) {
  return pick(both_terms(batch, options), 1);
}

LossTerms mm_nce_terms(const BatchAlignment& batch, const LossOptions& options) {
  const ag::Variable terms = both_terms(batch, options);
  LossTerms out;
  out.total = ag::sum(terms);
  out.q_to_r = pick(terms, 0);
  out.r_to_q = pick(terms, 1);
  return out;
}

ag::Variable mm_nce_loss(const BatchAlignment& batch, const LossOptions& options) {
  return ag::sum(both_terms(batch, options));
}

ag::Variable matched_mse_loss(const BatchAlignment& batch) {
  batch.validate();
  Stacked st = stack(batch);
  const Matrix& Q = st.queries.value();
  const Matrix& R = st.relations.value();
  const double denom = static_cast<double>(st.pairs.size()) * static_cast<double>(Q.cols());
  Matrix dq = Matrix::Zero(Q.rows(), Q.cols());
  Matrix dr = Matrix::Zero(R.rows(), R.cols());
  double total = 0.0;
  for (const auto& p : st.pairs) {
    const RowVector diff = R.row(p.relation) - Q.row(p.query);
    total += diff.squaredNorm();
    dr.row(p.relation) += 2.0 * diff / denom;
    dq.row(p.query) -= 2.0 * diff / denom;
  }
  Matrix out = Matrix::Constant(1, 1, total / denom);
  const ag::Variable q = st.queries, r = st.relations;
  return ag::Variable::make_op(std::move(out), {q, r},
                               [q, r, dq = std::move(dq), dr = std::move(dr)](const Matrix& g) {
                                 if (q.requires_grad()) q.accumulate_grad(g(0, 0) * dq);
                                 if (r.requires_grad()) r.accumulate_grad(g(0, 0) * dr);
                               });
}

}  // namespace reveal
