#include "direal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "direal/diversity.hpp"
#include "direal/errors.hpp"

namespace direal {

double wasserstein1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw UsageError("wasserstein1d needs nonempty inputs");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());

    const std::size_t n = a.size(), m = b.size();
    if (n == m) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += std::abs(a[i] - b[i]);
        return total / static_cast<double>(n);
    }

    // Piecewise-constant quantile functions: walk the merged breakpoints
    // {k/n} and {k/m}; on each slab the integrand |a_i - b_j| is constant.
    double total = 0.0;
    double q = 0.0;
    std::size_t i = 0, j = 0;
    while (i < n && j < m) {
        const double qa = static_cast<double>(i + 1) / static_cast<double>(n);
        const double qb = static_cast<double>(j + 1) / static_cast<double>(m);
        // Exact comparison of (i+1)/n vs (j+1)/m via cross-multiplication.
        const unsigned long long lhs = static_cast<unsigned long long>(i + 1) * m;
        const unsigned long long rhs = static_cast<unsigned long long>(j + 1) * n;
        const double next = lhs < rhs ? qa : qb;
        total += (next - q) * std::abs(a[i] - b[j]);
        q = next;
        if (lhs <= rhs) ++i;
        if (rhs <= lhs) ++j;
    }
    return total;
}

Coverage mode_coverage(const std::vector<std::array<double, 2>>& samples,
                       const ModeSpec& modes) {
    if (samples.empty()) throw UsageError("mode_coverage needs samples");
    if (modes.centers.empty() || !(modes.sigma > 0.0))
        throw UsageError("mode_coverage needs centers and a positive sigma");

    const double radius = 3.0 * modes.sigma;
    std::vector<std::size_t> owned(modes.centers.size(), 0);
    std::size_t hq = 0;
    for (const auto& s : samples) {
        std::size_t best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < modes.centers.size(); ++c) {
            const double dx = s[0] - modes.centers[c][0];
            const double dy = s[1] - modes.centers[c][1];
            const double d2 = dx * dx + dy * dy;
            if (d2 < best_d2) {
                best_d2 = d2;
                best = c;
            }
        }
        if (best_d2 <= radius * radius) {
            ++owned[best];
            ++hq;
        }
    }

    const double need = std::max(1.0, 0.01 * static_cast<double>(samples.size()));
    Coverage out;
    for (std::size_t c : owned)
        if (static_cast<double>(c) >= need) ++out.covered;
    out.hq_fraction = static_cast<double>(hq) / static_cast<double>(samples.size());
    return out;
}

std::optional<CosineStats> cosine_stats(const KernelMatrix& km) {
    const Eigen::Index n = km.values.cols();
    if (n < 2) return std::nullopt;

    const GramMatrix omega = gram(km, GramVariant::cosine);
    CosineStats out;
    double abs_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double v = omega.values(i, j);
            const double av = std::abs(v);
            if (av > out.max_offdiag) out.max_offdiag = av;
            abs_sum += av;
            int bin = static_cast<int>(std::floor((v + 1.0) * 10.0));
            if (bin < 0) bin = 0;
            if (bin > 19) bin = 19;
            ++out.histogram[static_cast<std::size_t>(bin)];
        }
    out.mean_abs = abs_sum / static_cast<double>(n * (n - 1));
    return out;
}

}  // namespace direal
