#pragma once

#include <Eigen/Dense>

namespace adrbc {

// Batches are stored one sample per column.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace adrbc
