#pragma once

// Least-squares linear map from tokens to their planted concept mixtures,
// scored by mean row cosine between prediction and target.

#include <Eigen/QR>

#include "reveal/matrix.hpp"

namespace oracle {

inline double linear_probe_cosine(const reveal::Matrix& tokens, const reveal::Matrix& targets) {
  const reveal::Matrix w = tokens.colPivHouseholderQr().solve(targets);
  const reveal::Matrix pred = tokens * w;
  double total = 0.0;
  for (reveal::Index i = 0; i < pred.rows(); ++i) {
    total += pred.row(i).dot(targets.row(i)) / (pred.row(i).norm() * targets.row(i).norm());
  }
  return total / static_cast<double>(pred.rows());
}

}  // namespace oracle
