#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "direal/kernel_ops.hpp"

namespace direal {

// Exact 1-D Wasserstein-1 distance between the empirical distributions of a
// and b. Equal lengths reduce to the sorted matching mean |a_(i) - b_(i)|;
// unequal lengths integrate |F_a^{-1} - F_b^{-1}| piecewise over [0,1].
double wasserstein1d(std::vector<double> a, std::vector<double> b);

// Ground-truth mixture description for coverage scoring.
struct ModeSpec {
    std::vector<std::array<double, 2>> centers;
    double sigma = 0.0;
};

struct Coverage {
    std::size_t covered = 0;   // centers owning enough high-quality samples
    double hq_fraction = 0.0;  // share of samples within 3 sigma of a center
};

// A sample is high-quality when its nearest center lies within 3 sigma
// (Euclidean); a center is covered when it owns at least max(1, 1% of N)
// high-quality samples.
Coverage mode_coverage(const std::vector<std::array<double, 2>>& samples,
                       const ModeSpec& modes);

struct CosineStats {
    double max_offdiag = 0.0;  // max_{i != j} |cos(theta_i, theta_j)|
    double mean_abs = 0.0;     // mean over ordered off-diagonal pairs
    std::array<std::size_t, 20> histogram{};  // signed cosines, bins over [-1,1]
};

// Pairwise cosine structure of a layer's unrolled columns. Layers with a
// single column carry no pairs and yield nullopt. Histogram counts sum to
// n(n-1): both orders of each pair are counted, exactly as the Gram matrix
// holds them.
std::optional<CosineStats> cosine_stats(const KernelMatrix& km);

}  // namespace direal
