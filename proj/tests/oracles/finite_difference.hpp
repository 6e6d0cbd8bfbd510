#pragma once

// Central differences of a scalar function of a matrix.

#include <algorithm>
#include <cmath>
#include <functional>

#include "reveal/matrix.hpp"

namespace oracle {

// Perturbs entries of `x` in place (restoring them) and returns
// (f(x + h e_i) - f(x - h e_i)) / 2h for each entry.
inline reveal::Matrix central_difference(reveal::Matrix& x, const std::function<double()>& f,
                                         double h) {
  reveal::Matrix g(x.rows(), x.cols());
  for (reveal::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f();
    x.data()[i] = saved - h;
    const double down = f();
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor): one relative error per tensor.
inline double relative_error(const reveal::Matrix& a, const reveal::Matrix& b,
                             double floor = 1e-8) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

}  // namespace oracle
