#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "direal/tensor.hpp"

namespace direal {

// An in-memory dataset: flat sample storage plus the metadata diagnostics
// need (mixture centers and spread for the synthetic tasks). Read-only after
// construction.
struct Dataset {
    enum class Kind { ring, grid, idx_images };

    Kind kind = Kind::ring;
    std::vector<std::size_t> item_shape;  // {2} for points, {C,H,W} for images
    std::vector<double> values;           // size() * item_size() doubles
    std::vector<std::uint8_t> labels;     // optional (idx only); empty otherwise

    // Mixture ground truth for coverage metrics; empty for image data.
    std::vector<std::array<double, 2>> centers;
    double sigma = 0.0;

    std::size_t item_size() const;
    std::size_t size() const;

    // Gathers the given items into a [B, ...item_shape] batch tensor.
    Tensor batch(const std::vector<std::size_t>& indices) const;

    // All samples as 2-D points; only valid when item_shape == {2}.
    std::vector<std::array<double, 2>> points() const;
};

// n points from a mixture of n_modes isotropic Gaussians with centers evenly
// spaced on the circle of the given radius. Mode choice uniform.
Dataset gaussian_ring(std::size_t n_modes, double radius, double sigma, std::size_t n,
                      std::uint64_t seed);

// Same sampling scheme over a 5x5 lattice: centers spacing*{-2..2}^2.
Dataset grid25(double spacing, double sigma, std::size_t n, std::uint64_t seed);

// Big-endian IDX parser (magic 0x00000803 for image files, 0x00000801 for
// label files). Pixels map linearly from [0,255] to [-1,1]. Malformed input
// raises FormatError carrying the offending byte offset.
Dataset load_idx(const std::string& images_path,
                 const std::optional<std::string>& labels_path = std::nullopt);

}  // namespace direal
