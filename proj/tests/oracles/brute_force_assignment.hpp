#pragma once

// Exhaustive search over injective relation -> query maps.

#include <algorithm>
#include <limits>
#include <vector>

#include "reveal/matrix.hpp"

namespace oracle {

struct BruteForceResult {
  double best_value = -std::numeric_limits<double>::infinity();
  // Every optimal map (sigma[j] = query), in lexicographic order.
  std::vector<std::vector<int>> optimal;
  long mappings = 0;
};

inline void enumerate(const reveal::Matrix& s, std::vector<int>& sigma, std::vector<char>& used,
                      double partial, BruteForceResult& out, double tol) {
  const int j = static_cast<int>(sigma.size());
  if (j == s.rows()) {
    ++out.mappings;
    if (partial > out.best_value + tol) {
      out.best_value = partial;
      out.optimal.clear();
      out.optimal.push_back(sigma);
    } else if (partial >= out.best_value - tol) {
      out.best_value = std::max(out.best_value, partial);
      out.optimal.push_back(sigma);
    }
    return;
  }
  for (int m = 0; m < s.cols(); ++m) {
    if (used[m]) continue;
    used[m] = 1;
    sigma.push_back(m);
    enumerate(s, sigma, used, partial + s(j, m), out, tol);
    sigma.pop_back();
    used[m] = 0;
  }
}

inline BruteForceResult brute_force_assignment(const reveal::Matrix& s, double tol = 1e-12) {
  BruteForceResult out;
  std::vector<int> sigma;
  std::vector<char> used(static_cast<std::size_t>(s.cols()), 0);
  enumerate(s, sigma, used, 0.0, out, tol);
  // Entries admitted early may have fallen out of tolerance later.
  std::erase_if(out.optimal, [&](const std::vector<int>& sg) {
    double v = 0.0;
    for (std::size_t j = 0; j < sg.size(); ++j) v += s(static_cast<reveal::Index>(j), sg[j]);
    return v < out.best_value - tol;
  });
  std::sort(out.optimal.begin(), out.optimal.end());
  return out;
}

}  // namespace oracle
