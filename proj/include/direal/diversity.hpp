#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "direal/kernel_ops.hpp"

namespace direal {

class Network;

// Which column matrix the Gram penalty is built on: the raw unrolled
// columns, or unit-normalized columns (pairwise cosine similarities).
enum class GramVariant { raw, cosine };

struct DiversityConfig {
    double tau = 0.5;
    double lambda_g = 0.01;
    double lambda_d = 1.0;
    GramVariant variant = GramVariant::cosine;
    // Indices (into the network's layer list) of layers to regularize.
    // Empty means the default: every weight-bearing layer except the last.
    std::vector<std::size_t> layer_selector;
};

// Omega = Theta^T Theta, symmetrized as (A + A^T)/2 to kill round-off.
struct GramMatrix {
    Eigen::MatrixXd values;  // n x n
};

// 0/1 indicator of penalized pairs: M_ij = 1 iff i != j and tau <= |Omega_ij|.
struct BinaryMask {
    Eigen::MatrixXd values;  // n x n
};

GramMatrix gram(const KernelMatrix& km, GramVariant variant);
BinaryMask mask(const GramMatrix& omega, double tau);

// Per-layer masked penalty: 1/2 * sum_ij Omega_ij^2 M_ij. Pairs are counted
// in both orders, exactly as the double sum dictates.
double diversity_loss(const KernelMatrix& km, const DiversityConfig& cfg);

// Direct product form Theta (Omega o M), with the mask treated as a
// constant. Kept as an independently coded cross-check; for the raw variant
// it equals half of the exact gradient. Computed by entrywise summation,
// not matrix products.
Eigen::MatrixXd diversity_grad_direct(const KernelMatrix& km, const DiversityConfig& cfg);

// Exact gradient of diversity_loss with respect to the RAW columns, mask
// frozen. Raw variant: 2 Theta (Omega o M). Cosine variant chains through
// column normalization: g_i = (I - t_i t_i^T)/||theta_i|| * [2 That (Omega o M)]_i
// with t_i the unit column; zero for degenerate columns.
Eigen::MatrixXd diversity_grad_exact(const KernelMatrix& km, const DiversityConfig& cfg);

// Unrolls every selected layer of the network, adds lambda-scaled exact
// gradients into the layers' gradient buffers, and returns the unweighted
// total penalty sum_l J^(l). lambda == 0 leaves the buffers untouched.
double apply_diversity(Network& net, const DiversityConfig& cfg, double lambda);

// Loss-only evaluation over the selected layers (diagnostics path).
double diversity_total(const Network& net, const DiversityConfig& cfg);

// The selector actually in effect: cfg.layer_selector if non-empty, else
// every weight-bearing layer of the network except the last one. Validates
// that explicit indices point at weight-bearing layers.
std::vector<std::size_t> effective_selector(const Network& net, const DiversityConfig& cfg);

}  // namespace direal
