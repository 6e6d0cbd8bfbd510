#pragma once

#include <Eigen/Core>

namespace reveal {

// Row-major so that one row is one token / query / relation embedding.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

}  // namespace reveal
