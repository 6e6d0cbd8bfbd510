#pragma once

// Cosine similarities between relation and query sets, and the optimal
// injective relation -> query assignment.

#include <cstdint>
#include <ostream>

#include "reveal/autograd.hpp"
#include "reveal/relation_model.hpp"

namespace reveal {

/// Rows below this norm raise DegenerateVector.
inline constexpr double kMinRowNorm = 1e-12;

/// S(j, m) = cos(relations_j, queries_m), [J x M].
Matrix cosine_matrix(const Matrix& relations, const Matrix& queries);
/// Differentiable variant of the same computation.
ag::Variable cosine_matrix(const ag::Variable& relations, const ag::Variable& queries);

/// Minimum-cost perfect matching of a square cost matrix. Returns the
/// column assigned to each row.
std::vector<int> solve_square_assignment(const Matrix& cost);

/// Maximizes sum_j S(j, sigma(j)) over injective sigma. Among optimal
/// assignments, the one whose (sigma(0), sigma(1), ...) is lexicographically
/// smallest is returned, so ties go to the lowest query index. Totals within
/// 1e-12 (relative) of the optimum count as ties.
/// Throws TooManyRelations when J > M and PreconditionError on non-finite S.
Assignment optimal_assignment(const Matrix& similarity);

/// Sum of S over the assignment's pairs.
double assignment_score(const Matrix& similarity, const Assignment& assignment);

/// Seeded matrix with entries uniform in [-1, 1]; used for fixtures.
Matrix random_similarity(int relations, int queries, std::uint64_t seed);

/// Long-format CSV "relation,query,similarity,matched", one row per entry
/// of S in row-major order. Similarities use 17 significant digits.
void write_match_csv(std::ostream& out, const Matrix& similarity, const Assignment& assignment);

}  // namespace reveal
