// Shared oracles and helpers for the test suites. The oracles here are
// deliberately independent implementations (finite differences, min-cost
// flow, permutation search) used to validate the library's closed-form
// routines.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "direal/diversity.hpp"
#include "direal/kernel_ops.hpp"

namespace testsupport {

// Random kernel matrix whose Gram entries (under the given variant) all sit
// more than `margin` away from tau, so small perturbations cannot flip the
// penalty mask. Entries ~ Normal(0, 1/sqrt(m)) keep Gram entries O(1).
inline direal::KernelMatrix margin_instance(std::size_t m, std::size_t n, double tau,
                                            direal::GramVariant variant, std::mt19937_64& rng,
                                            double margin = 2e-3) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
    for (int attempt = 0; attempt < 20000; ++attempt) {
        direal::KernelMatrix km;
        km.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        for (Eigen::Index j = 0; j < km.values.cols(); ++j)
            for (Eigen::Index i = 0; i < km.values.rows(); ++i) km.values(i, j) = dist(rng);
        km.column_norms = km.values.colwise().norm();
        const direal::GramMatrix omega = direal::gram(km, variant);
        bool ok = true;
        for (Eigen::Index i = 0; i < omega.values.rows() && ok; ++i)
            for (Eigen::Index j = 0; j < omega.values.cols() && ok; ++j) {
                if (i == j) continue;
                if (std::abs(std::abs(omega.values(i, j)) - tau) <= margin) ok = false;
            }
        if (ok) return km;
    }
    throw std::runtime_error("could not draw a mask-stable instance");
}

// Max relative error between diversity_grad_exact and central finite
// differences of diversity_loss over every matrix entry. Relative to the
// largest analytic-gradient magnitude (1e-12 floor for all-zero gradients).
inline double fd_diversity_max_rel_err(const direal::KernelMatrix& km,
                                       const direal::DiversityConfig& cfg, double h = 1e-6) {
    const Eigen::MatrixXd g = direal::diversity_grad_exact(km, cfg);
    double gmax = 0.0, dmax = 0.0;
    direal::KernelMatrix probe = km;
    for (Eigen::Index j = 0; j < km.values.cols(); ++j)
        for (Eigen::Index i = 0; i < km.values.rows(); ++i) {
            const double orig = probe.values(i, j);
            probe.values(i, j) = orig + h;
            const double up = direal::diversity_loss(probe, cfg);
            probe.values(i, j) = orig - h;
            const double down = direal::diversity_loss(probe, cfg);
            probe.values(i, j) = orig;
            const double fd = (up - down) / (2.0 * h);
            dmax = std::max(dmax, std::abs(fd - g(i, j)));
            gmax = std::max(gmax, std::abs(g(i, j)));
        }
    return dmax / std::max(gmax, 1e-12);
}

// ---------------------------------------------------------------------------
// Optimal-transport oracle: exact min-cost flow by successive shortest paths
// (Bellman-Ford over the residual graph). Masses are made integral by
// scaling to L = lcm(|a|, |b|) units; unit cost between atoms is |a_i - b_j|.
// Exact for the tiny instances the tests use; shares no logic with the
// quantile-integral implementation under test.
// ---------------------------------------------------------------------------

inline long long lcm_ll(long long x, long long y) { return x / std::gcd(x, y) * y; }

inline double ot_mincost_flow(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t p = a.size(), q = b.size();
    const long long L = lcm_ll(static_cast<long long>(p), static_cast<long long>(q));
    std::vector<long long> supply(p, L / static_cast<long long>(p));
    std::vector<long long> demand(q, L / static_cast<long long>(q));
    // flow[i][j] = units shipped from a_i to b_j
    std::vector<std::vector<long long>> flow(p, std::vector<long long>(q, 0));

    const std::size_t nodes = p + q;  // 0..p-1 sources, p..p+q-1 sinks
    long long shipped = 0;
    while (shipped < L) {
        // Bellman-Ford shortest path from any source with remaining supply
        // to any sink with remaining demand, over residual edges.
        const double inf = std::numeric_limits<double>::infinity();
        std::vector<double> dist(nodes, inf);
        std::vector<int> prev(nodes, -1);
        for (std::size_t i = 0; i < p; ++i)
            if (supply[i] > 0) dist[i] = 0.0;
        for (std::size_t pass = 0; pass < nodes; ++pass) {
            bool changed = false;
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < q; ++j) {
                    const double c = std::abs(a[i] - b[j]);
                    // forward residual: i -> sink j (infinite capacity)
                    if (dist[i] + c < dist[p + j] - 1e-15) {
                        dist[p + j] = dist[i] + c;
                        prev[p + j] = static_cast<int>(i);
                        changed = true;
                    }
                    // backward residual: sink j -> i if flow present
                    if (flow[i][j] > 0 && dist[p + j] - c < dist[i] - 1e-15) {
                        dist[i] = dist[p + j] - c;
                        prev[i] = static_cast<int>(p + j);
                        changed = true;
                    }
                }
            if (!changed) break;
        }
        // Cheapest reachable sink with remaining demand.
        int best_sink = -1;
        for (std::size_t j = 0; j < q; ++j)
            if (demand[j] > 0 && dist[p + j] < inf &&
                (best_sink < 0 || dist[p + j] < dist[static_cast<std::size_t>(best_sink)]))
                best_sink = static_cast<int>(p + j);
        if (best_sink < 0) throw std::runtime_error("transport oracle: no augmenting path");

        // Walk the path back to a source, finding the bottleneck.
        long long bottleneck = demand[static_cast<std::size_t>(best_sink) - p];
        for (int at = best_sink; prev[at] != -1; at = prev[at]) {
            const int from = prev[at];
            if (from < static_cast<int>(p) && at >= static_cast<int>(p)) {
                // forward arc: capacity unbounded
            } else {
                bottleneck = std::min(
                    bottleneck, flow[static_cast<std::size_t>(at)]
                                    [static_cast<std::size_t>(from) - p]);
            }
        }
        int source = best_sink;
        while (prev[source] != -1) source = prev[source];
        bottleneck = std::min(bottleneck, supply[static_cast<std::size_t>(source)]);

        for (int at = best_sink; prev[at] != -1; at = prev[at]) {
            const int from = prev[at];
            if (from < static_cast<int>(p) && at >= static_cast<int>(p))
                flow[static_cast<std::size_t>(from)][static_cast<std::size_t>(at) - p] +=
                    bottleneck;
            else
                flow[static_cast<std::size_t>(at)][static_cast<std::size_t>(from) - p] -=
                    bottleneck;
        }
        supply[static_cast<std::size_t>(source)] -= bottleneck;
        demand[static_cast<std::size_t>(best_sink) - p] -= bottleneck;
        shipped += bottleneck;
    }

    double cost = 0.0;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j)
            cost += static_cast<double>(flow[i][j]) * std::abs(a[i] - b[j]);
    return cost / static_cast<double>(L);
}

// Equal-size brute force: minimum over all assignments of mean |a_i - b_pi(i)|.
// Only sane for sizes <= 4; used to validate the flow oracle itself.
inline double ot_permutation(const std::vector<double>& a, std::vector<double> b) {
    if (a.size() != b.size()) throw std::runtime_error("ot_permutation needs equal sizes");
    std::sort(b.begin(), b.end());
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) cost += std::abs(a[i] - b[i]);
        best = std::min(best, cost);
    } while (std::next_permutation(b.begin(), b.end()));
    return best / static_cast<double>(a.size());
}

}  // namespace testsupport
