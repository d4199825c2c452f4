#pragma once

#include <Eigen/Core>

#include "simcvd/grid.hpp"

namespace simcvd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Per-network prediction pair: probability map (sigmoid) and SDM map (tanh).
struct DualOutput {
    RealGrid prob;
    RealGrid sdm;
};

/// Encoder bottleneck flattened to (cells x channels); row j is one spatial position.
using HiddenPattern = Matrix;

/// Projection-head output, one row per depth slice (slices x d_h).
using SliceEmbeddingMatrix = Matrix;

}  // namespace simcvd
