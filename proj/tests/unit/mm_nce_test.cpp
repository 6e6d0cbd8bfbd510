#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "../oracles/finite_difference.hpp"
#include "../oracles/naive_mm_nce.hpp"
#include "reveal/alignment.hpp"
#include "reveal/errors.hpp"
#include "reveal/mm_nce.hpp"
#include "test_support.hpp"

namespace reveal {
namespace {

struct Fixture {
  std::vector<Matrix> queries;
  std::vector<Matrix> relations;
  std::vector<Assignment> assignments;
  double log_scale = 0.0;

  BatchAlignment batch(bool track = false, std::vector<ag::Variable>* q = nullptr,
                       std::vector<ag::Variable>* r = nullptr,
                       ag::Variable* scale = nullptr) const {
    BatchAlignment b;
    b.log_logit_scale = ag::Variable(Matrix::Constant(1, 1, log_scale), track);
    for (std::size_t k = 0; k < queries.size(); ++k) {
      SampleAlignment s{ag::Variable(queries[k], track), ag::Variable(relations[k], track),
                        assignments[k]};
      if (q) q->push_back(s.queries);
      if (r) r->push_back(s.relations);
      b.samples.push_back(s);
    }
    if (scale) *scale = b.log_logit_scale;
    return b;
  }

  std::vector<oracle::NaiveSample> naive() const {
    std::vector<oracle::NaiveSample> out;
    for (std::size_t k = 0; k < queries.size(); ++k) {
      std::vector<int> sigma;
      for (const auto& [j, m] : assignments[k].pairs) sigma.push_back(m);
      out.push_back({queries[k], relations[k], sigma});
    }
    return out;
  }
};

Fixture random_fixture(std::uint64_t seed, int max_batch = 4, int max_m = 4, Index dim = 8) {
  std::mt19937_64 rng(seed);
  Fixture f;
  const int B = std::uniform_int_distribution<int>(1, max_batch)(rng);
  for (int k = 0; k < B; ++k) {
    const int M = std::uniform_int_distribution<int>(1, max_m)(rng);
    const int J = std::uniform_int_distribution<int>(1, M)(rng);
    f.queries.push_back(testing::gaussian(M, dim, rng()));
    f.relations.push_back(testing::gaussian(J, dim, rng()));
    f.assignments.push_back(optimal_assignment(cosine_matrix(f.relations.back(), f.queries.back())));
  }
  f.log_scale = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
  return f;
}

TEST(MmNceTest, MatchesNaiveReferenceOnSeededBatches) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Fixture f = random_fixture(seed);
    const double tau = std::exp(-f.log_scale);
    for (bool include : {true, false}) {
      for (Reduction red : {Reduction::kMean, Reduction::kSum}) {
        const LossOptions opts{red, include};
        const auto terms = mm_nce_terms(f.batch(), opts);
        const auto ref = oracle::naive_mm_nce(f.naive(), tau, red == Reduction::kMean, include);
        EXPECT_NEAR(terms.q_to_r.scalar(), ref.q_to_r, 1e-6) << seed;
        EXPECT_NEAR(terms.r_to_q.scalar(), ref.r_to_q, 1e-6) << seed;
        EXPECT_NEAR(mm_nce_loss(f.batch(), opts).scalar(), ref.total(), 1e-6) << seed;
        EXPECT_NEAR(loss_q_to_r(f.batch(), opts).scalar(), ref.q_to_r, 1e-6);
        EXPECT_NEAR(loss_r_to_q(f.batch(), opts).scalar(), ref.r_to_q, 1e-6);
      }
    }
  }
}

TEST(MmNceTest, TrivialBatchIsExactlyZero) {
  Fixture f;
  f.queries = {testing::gaussian(1, 8, 1)};
  f.relations = {testing::gaussian(1, 8, 2)};
  f.assignments = {optimal_assignment(cosine_matrix(f.relations[0], f.queries[0]))};
  for (double ls : {0.0, 2.6592600369327779, 4.6}) {
    f.log_scale = ls;
    const auto t = mm_nce_terms(f.batch());
    EXPECT_EQ(t.q_to_r.scalar(), 0.0);
    EXPECT_EQ(t.r_to_q.scalar(), 0.0);
    EXPECT_EQ(t.total.scalar(), 0.0);
  }
}

TEST(MmNceTest, OrthogonalPairAtUnitTemperature) {
  Fixture f;
  f.queries = {Matrix::Identity(1, 2), Matrix(Eigen::RowVector2d(0, 1))};
  f.relations = f.queries;
  for (int k = 0; k < 2; ++k) f.assignments.push_back(optimal_assignment(Matrix::Ones(1, 1)));
  const auto t = mm_nce_terms(f.batch());
  const double expected = std::log1p(std::exp(-1.0));
  EXPECT_NEAR(expected, 0.3132616875182228, 1e-15);
  EXPECT_NEAR(t.q_to_r.scalar(), expected, 1e-14);
  EXPECT_NEAR(t.r_to_q.scalar(), expected, 1e-14);
  EXPECT_NEAR(mm_nce_terms(f.batch(), {Reduction::kSum, true}).total.scalar(), 4 * expected, 1e-13);
}

TEST(MmNceTest, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f = random_fixture(seed + 500);
    std::vector<ag::Variable> q, r;
    ag::Variable scale;
    const auto batch = f.batch(true, &q, &r, &scale);
    mm_nce_loss(batch).backward();
    auto probe = [&]() { return mm_nce_loss(f.batch()).scalar(); };
    for (std::size_t k = 0; k < f.queries.size(); ++k) {
      EXPECT_LE(oracle::relative_error(q[k].grad(), oracle::central_difference(f.queries[k], probe, 1e-6)),
                1e-5);
      EXPECT_LE(oracle::relative_error(r[k].grad(), oracle::central_difference(f.relations[k], probe, 1e-6)),
                1e-5);
    }
    Matrix ls = Matrix::Constant(1, 1, f.log_scale);
    auto scale_probe = [&]() {
      f.log_scale = ls(0, 0);
      return mm_nce_loss(f.batch()).scalar();
    };
    const Matrix numeric = oracle::central_difference(ls, scale_probe, 1e-6);
    f.log_scale = ls(0, 0);
    EXPECT_LE(oracle::relative_error(scale.grad(), numeric), 1e-5);
  }
}

TEST(MmNceTest, ScaleGradientMatchesSymmetricDifference) {
  Fixture f = random_fixture(42);
  ag::Variable scale;
  const auto batch = f.batch(true, nullptr, nullptr, &scale);
  mm_nce_loss(batch).backward();
  auto at = [&](double s) {
    Fixture g = f;
    g.log_scale = s;
    return mm_nce_loss(g.batch()).scalar();
  };
  const double h = 1e-5;
  EXPECT_NEAR(scale.grad()(0, 0), (at(f.log_scale + h) - at(f.log_scale - h)) / (2 * h), 1e-7);
}

TEST(MmNceTest, InvariantToPermutationsWithinSamples) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Fixture f = random_fixture(seed + 1000);
    const double base = mm_nce_loss(f.batch()).scalar();
    Fixture p = f;
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < p.queries.size(); ++k) {
      std::vector<Index> qp(static_cast<std::size_t>(p.queries[k].rows()));
      std::vector<Index> rp(static_cast<std::size_t>(p.relations[k].rows()));
      std::iota(qp.begin(), qp.end(), 0);
      std::iota(rp.begin(), rp.end(), 0);
      std::shuffle(qp.begin(), qp.end(), rng);
      std::shuffle(rp.begin(), rp.end(), rng);
      p.queries[k] = f.queries[k](qp, Eigen::all);
      p.relations[k] = f.relations[k](rp, Eigen::all);
    }
    std::vector<ag::Variable> qs, rs;
    for (std::size_t k = 0; k < p.queries.size(); ++k) {
      qs.push_back(ag::constant(p.queries[k]));
      rs.push_back(ag::constant(p.relations[k]));
    }
    const auto aligned = align_batch(qs, rs, ag::constant(Matrix::Constant(1, 1, p.log_scale)));
    EXPECT_NEAR(mm_nce_loss(aligned).scalar(), base, 1e-9) << seed;
  }
}

TEST(MmNceTest, LossFallsAsMatchedPairsAlign) {
  Fixture f = random_fixture(3);
  double previous = mm_nce_loss(f.batch()).scalar();
  for (int step = 1; step <= 5; ++step) {
    Fixture g = f;
    const double t = 0.2 * step;
    for (std::size_t k = 0; k < g.queries.size(); ++k) {
      for (const auto& [j, m] : g.assignments[k].pairs) {
        const RowVector target = f.relations[k].row(j).normalized() * f.queries[k].row(m).norm();
        g.queries[k].row(m) = (1 - t) * f.queries[k].row(m) + t * target;
      }
    }
    const double loss = mm_nce_loss(g.batch()).scalar();
    EXPECT_LT(loss, previous + 1e-12);
    previous = loss;
  }
}

TEST(MmNceTest, AlignBatchUsesOptimalAssignments) {
  const Fixture f = random_fixture(9);
  std::vector<ag::Variable> qs, rs;
  for (std::size_t k = 0; k < f.queries.size(); ++k) {
    qs.push_back(ag::constant(f.queries[k]));
    rs.push_back(ag::constant(f.relations[k]));
  }
  const auto b = align_batch(qs, rs, ag::constant(Matrix::Zero(1, 1)));
  std::size_t pairs = 0;
  for (std::size_t k = 0; k < f.queries.size(); ++k) {
    EXPECT_EQ(b.samples[k].assignment.pairs, f.assignments[k].pairs);
    pairs += f.assignments[k].pairs.size();
  }
  EXPECT_EQ(b.matched_pairs(), pairs);
}

TEST(MmNceTest, ValidateRejectsBrokenBatches) {
  Fixture f = random_fixture(1, 1);
  BatchAlignment b = f.batch();
  b.samples[0].assignment.pairs.clear();
  EXPECT_THROW(mm_nce_loss(b), PreconditionError);
  b = f.batch();
  b.samples[0].relations = ag::constant(testing::gaussian(b.samples[0].relations.rows(), 5, 1));
  EXPECT_THROW(mm_nce_loss(b), ShapeError);
  EXPECT_THROW(mm_nce_loss(BatchAlignment{{}, ag::constant(Matrix::Zero(1, 1))}), PreconditionError);
}

TEST(MatchedMseTest, MatchesNaiveAndUnitOverD) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Fixture f = random_fixture(seed + 77);
    EXPECT_NEAR(matched_mse_loss(f.batch()).scalar(), oracle::naive_matched_mse(f.naive()), 1e-12);
  }
  Fixture f;
  f.queries = {Matrix::Zero(1, 8)};
  f.relations = {Matrix::Zero(1, 8)};
  f.relations[0](0, 3) = 1.0;
  f.assignments = {optimal_assignment(Matrix::Zero(1, 1))};
  EXPECT_DOUBLE_EQ(matched_mse_loss(f.batch()).scalar(), 1.0 / 8.0);
}

TEST(MatchedMseTest, GradientMatchesFiniteDifferences) {
  Fixture f = random_fixture(5);
  std::vector<ag::Variable> q, r;
  matched_mse_loss(f.batch(true, &q, &r)).backward();
  auto probe = [&]() { return matched_mse_loss(f.batch()).scalar(); };
  for (std::size_t k = 0; k < f.queries.size(); ++k) {
    EXPECT_LE(oracle::relative_error(q[k].grad(), oracle::central_difference(f.queries[k], probe, 1e-6)),
              1e-6);
  }
}

}  // namespace
}  // namespace reveal
