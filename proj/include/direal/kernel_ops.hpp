#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "direal/tensor.hpp"

namespace direal {

// Shape descriptor of a weight-bearing layer for kernel-matrix purposes.
// Convolutional filters unroll to columns of length m = k^2 * in_channels;
// dense weight matrices are already in unrolled form.
struct LayerShape {
    enum class Kind { dense, conv };

    Kind kind = Kind::dense;
    std::size_t in_channels = 0;   // conv: n_l
    std::size_t out_channels = 0;  // conv: n_{l+1}
    std::size_t kernel = 0;        // conv: k (square)
    std::size_t fan_in = 0;        // dense
    std::size_t fan_out = 0;       // dense

    static LayerShape Dense(std::size_t fan_in, std::size_t fan_out);
    static LayerShape Conv(std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel);

    std::size_t rows() const;  // m
    std::size_t cols() const;  // n = number of output filters
};

// A layer's weights unrolled into an m x n column matrix: column j is the
// flattened filter producing output channel j, flattening order
// (input-channel, kernel-row, kernel-col). column_norms holds the Euclidean
// norms of the raw columns and is preserved by normalize_columns.
struct KernelMatrix {
    Eigen::MatrixXd values;        // m x n
    Eigen::VectorXd column_norms;  // length n

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

// Columns with raw norm at or below this are treated as degenerate: left as
// zero columns by normalization and orthogonal to everything.
inline constexpr double kDegenerateNorm = 1e-12;

KernelMatrix unroll(const Tensor& weights, const LayerShape& shape);

// Inverse of unroll; maps a matrix in kernel layout (typically a gradient)
// back to the layer's weight tensor layout. fold(unroll(W).values) == W.
Tensor fold(const Eigen::MatrixXd& grad, const LayerShape& shape);

// Scales every column with raw norm > kDegenerateNorm to unit length;
// degenerate columns pass through as zeros with their norm recorded.
KernelMatrix normalize_columns(const KernelMatrix& km);

}  // namespace direal
