#include "reveal/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "reveal/errors.hpp"

namespace reveal {

namespace {

void check_rows(const Matrix& m, const char* what) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n >= kMinRowNorm)) {
      throw DegenerateVector(std::string(what) + " row " + std::to_string(i) + " has norm " +
                             std::to_string(n));
    }
  }
}

// Optimal total cost of the rows in `rows` assigned injectively to the
// columns in `cols` (rows.size() <= cols.size()).
double reduced_optimum(const Matrix& cost, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
  if (rows.empty()) return 0.0;
  const int n = static_cast<int>(cols.size());
  Matrix square(n, n);
  const double pad = cost.maxCoeff() + 1.0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      square(r, c) = r < static_cast<int>(rows.size()) ? cost(rows[r], cols[c]) : pad;
    }
  }
  const auto sol = solve_square_assignment(square);
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) total += square(static_cast<Index>(r), sol[r]);
  return total;
}

}  // namespace

Matrix cosine_matrix(const Matrix& relations, const Matrix& queries) {
  if (relations.cols() != queries.cols()) {
    throw ShapeError("cosine_matrix: embedding widths differ");
  }
  check_rows(relations, "relation");
  check_rows(queries, "query");
  Matrix r = relations.rowwise().normalized();
  Matrix q = queries.rowwise().normalized();
  return r * q.transpose();
}

ag::Variable cosine_matrix(const ag::Variable& relations, const ag::Variable& queries) {
  if (relations.cols() != queries.cols()) {
    throw ShapeError("cosine_matrix: embedding widths differ");
  }
  return ag::matmul_nt(ag::normalize_rows(relations, kMinRowNorm),
                       ag::normalize_rows(queries, kMinRowNorm));
}

namespace {

struct SquareSolution {
  std::vector<int> row_to_col;
  std::vector<double> u;  // row potentials, 1-based
  std::vector<double> v;  // column potentials, 1-based
};

// Shortest augmenting path with row/column potentials, O(n^3).
SquareSolution solve_square(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw ShapeError("assignment cost matrix must be square");
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  SquareSolution out{std::vector<int>(n, -1), std::move(u), std::move(v)};
  for (int j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
  return out;
}

// When every real row has exactly one tight edge under the optimal duals,
// the real rows' assignment is the same in every optimum.
bool unique_real_assignment(const Matrix& square, const SquareSolution& sol, int real_rows) {
  const int n = static_cast<int>(square.rows());
  const double tol = 1e-9 * (1.0 + square.cwiseAbs().maxCoeff());
  for (int i = 0; i < real_rows; ++i) {
    int tight = 0;
    for (int j = 0; j < n; ++j) {
      if (square(i, j) - sol.u[i + 1] - sol.v[j + 1] <= tol) ++tight;
    }
    if (tight != 1) return false;
  }
  return true;
}

}  // namespace

std::vector<int> solve_square_assignment(const Matrix& cost) {
  return solve_square(cost).row_to_col;
}

Assignment optimal_assignment(const Matrix& similarity) {
  const int J = static_cast<int>(similarity.rows());
  const int M = static_cast<int>(similarity.cols());
  if (J > M) {
    throw TooManyRelations(std::to_string(J) + " relations exceed " + std::to_string(M) +
                           " queries; subsample first");
  }
  if (!similarity.allFinite()) throw PreconditionError("similarity matrix is not finite");

  Assignment out;
  out.num_queries = M;
  const Matrix cost = -similarity;
  std::vector<int> rows(J), cols(M);
  for (int j = 0; j < J; ++j) rows[j] = j;
  for (int m = 0; m < M; ++m) cols[m] = m;

  if (J > 0) {
    Matrix square = Matrix::Constant(M, M, cost.maxCoeff() + 1.0);
    square.topRows(J) = cost;
    const auto sol = solve_square(square);
    if (unique_real_assignment(square, sol, J)) {
      std::vector<char> taken(M, 0);
      for (int j = 0; j < J; ++j) {
        out.pairs.emplace_back(j, sol.row_to_col[j]);
        taken[sol.row_to_col[j]] = 1;
      }
      for (int m = 0; m < M; ++m) {
        if (!taken[m]) out.unmatched_queries.push_back(m);
      }
      return out;
    }
    const double best = reduced_optimum(cost, rows, cols);
    const double tol = 1e-12 * std::max(1.0, std::abs(best));
    // Fix relations in order, each to the lowest query that still admits an
    // optimal completion.
    double fixed = 0.0;
    std::vector<int> free_cols = cols;
    for (int j = 0; j < J; ++j) {
      std::vector<int> rest(rows.begin() + j + 1, rows.end());
      bool placed = false;
      for (std::size_t c = 0; c < free_cols.size() && !placed; ++c) {
        const int m = free_cols[c];
        std::vector<int> remaining = free_cols;
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(c));
        const double total = fixed + cost(j, m) + reduced_optimum(cost, rest, remaining);
        if (total <= best + tol) {
          out.pairs.emplace_back(j, m);
          fixed += cost(j, m);
          free_cols = std::move(remaining);
          placed = true;
        }
      }
      if (!placed) throw Error("assignment tie-break failed to reach the optimum");
    }
    out.unmatched_queries = free_cols;
  } else {
    out.unmatched_queries = cols;
  }
  return out;
}

double assignment_score(const Matrix& similarity, const Assignment& assignment) {
  double total = 0.0;
  for (const auto& [j, m] : assignment.pairs) total += similarity(j, m);
  return total;
}

Matrix random_similarity(int relations, int queries, std::uint64_t seed) {
  if (relations < 0 || queries < 0) throw PreconditionError("random_similarity: negative size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix s(relations, queries);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = unif(rng);
  return s;
}

void write_match_csv(std::ostream& out, const Matrix& similarity, const Assignment& assignment) {
  const auto old_precision = out.precision(17);
  out << "relation,query,similarity,matched\n";
  for (Index j = 0; j < similarity.rows(); ++j) {
    const int m_star = assignment.query_for(static_cast<int>(j));
    for (Index m = 0; m < similarity.cols(); ++m) {
      out << j << ',' << m << ',' << similarity(j, m) << ',' << (m == m_star ? 1 : 0) << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace reveal
