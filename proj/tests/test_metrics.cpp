#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "direal/errors.hpp"
#include "direal/metrics.hpp"
#include "test_support.hpp"

using namespace direal;
using testsupport::ot_mincost_flow;
using testsupport::ot_permutation;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

KernelMatrix km_from(std::initializer_list<std::initializer_list<double>> cols) {
    KernelMatrix km;
    const auto n = static_cast<Eigen::Index>(cols.size());
    const auto m = static_cast<Eigen::Index>(cols.begin()->size());
    km.values.resize(m, n);
    Eigen::Index j = 0;
    for (const auto& col : cols) {
        Eigen::Index i = 0;
        for (double v : col) km.values(i++, j) = v;
        ++j;
    }
    km.column_norms = km.values.colwise().norm();
    return km;
}

}  // namespace

TEST_CASE("transport distance on hand instances") {
    CHECK(wasserstein1d({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    CHECK(wasserstein1d({0.0}, {1.0}) == 1.0);
    CHECK(wasserstein1d({0.0, 1.0}, {0.5, 0.5}) == doctest::Approx(0.5).epsilon(1e-15));
    // Sorting is the metric's job: order of inputs must not matter.
    CHECK(wasserstein1d({3.0, 1.0, 2.0}, {2.0, 3.0, 1.0}) == 0.0);
    // Unequal sizes: one atom vs a half/half split.
    CHECK(wasserstein1d({0.0}, {0.0, 1.0}) == doctest::Approx(0.5).epsilon(1e-15));
    // Pure translation moves mass by exactly the shift.
    CHECK(wasserstein1d({0.0, 1.0, 2.0}, {10.0, 11.0, 12.0}) ==
          doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("transport distance rejects empty inputs") {
    CHECK_THROWS_AS(wasserstein1d({}, {1.0}), UsageError);
    CHECK_THROWS_AS(wasserstein1d({1.0}, {}), UsageError);
}

TEST_CASE("the flow oracle agrees with brute-force assignment on equal sizes") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 2 + rep % 3;  // 2..4
        const auto a = random_values(n, rng);
        const auto b = random_values(n, rng);
        CHECK(ot_mincost_flow(a, b) == doctest::Approx(ot_permutation(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("transport distance matches the min-cost-flow oracle") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t p = 1 + static_cast<std::size_t>(rng() % 6);
        const std::size_t q = 1 + static_cast<std::size_t>(rng() % 6);
        const auto a = random_values(p, rng);
        const auto b = random_values(q, rng);
        const double fast = wasserstein1d(a, b);
        const double oracle = ot_mincost_flow(a, b);
        INFO("p=", p, " q=", q, " fast=", fast, " oracle=", oracle);
        CHECK(std::abs(fast - oracle) <= 1e-9);
    }
}

TEST_CASE("transport distance is symmetric and satisfies the triangle inequality") {
    std::mt19937_64 rng(29);
    for (int rep = 0; rep < 25; ++rep) {
        const auto a = random_values(1 + rng() % 8, rng);
        const auto b = random_values(1 + rng() % 8, rng);
        const auto c = random_values(1 + rng() % 8, rng);
        CHECK(wasserstein1d(a, b) == doctest::Approx(wasserstein1d(b, a)).epsilon(1e-12));
        CHECK(wasserstein1d(a, c) <= wasserstein1d(a, b) + wasserstein1d(b, c) + 1e-9);
        CHECK(wasserstein1d(a, b) >= 0.0);
    }
}

TEST_CASE("transport distance is translation invariant") {
    std::mt19937_64 rng(31);
    const auto a = random_values(7, rng);
    const auto b = random_values(4, rng);
    auto a2 = a;
    auto b2 = b;
    for (double& x : a2) x += 5.0;
    for (double& x : b2) x += 5.0;
    CHECK(wasserstein1d(a2, b2) == doctest::Approx(wasserstein1d(a, b)).epsilon(1e-12));
}

TEST_CASE("mode coverage on hand instances") {
    ModeSpec modes;
    modes.centers = {{0.0, 0.0}, {10.0, 0.0}};
    modes.sigma = 1.0;

    SUBCASE("both centers owned, one stray sample") {
        std::vector<std::array<double, 2>> samples = {
            {0.1, 0.0}, {-0.2, 0.1}, {0.0, 0.3}, {0.2, -0.1}, {0.0, 0.0},
            {10.1, 0.2},            // owns the second center
            {5.0, 5.0},             // nearest center ~7.07 away: beyond 3 sigma
        };
        const Coverage cov = mode_coverage(samples, modes);
        CHECK(cov.covered == 2);
        CHECK(cov.hq_fraction == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
    }

    SUBCASE("single populated center") {
        std::vector<std::array<double, 2>> samples(20, {0.0, 0.0});
        const Coverage cov = mode_coverage(samples, modes);
        CHECK(cov.covered == 1);
        CHECK(cov.hq_fraction == 1.0);
    }

    SUBCASE("all samples far from every center") {
        std::vector<std::array<double, 2>> samples(10, {100.0, 100.0});
        const Coverage cov = mode_coverage(samples, modes);
        CHECK(cov.covered == 0);
        CHECK(cov.hq_fraction == 0.0);
    }

    SUBCASE("ownership requires one percent of the batch") {
        // 298 + 2 = 300 samples: the threshold is max(1, 3) = 3, so two
        // samples on the second center do not cover it.
        std::vector<std::array<double, 2>> samples(298, {0.0, 0.0});
        samples.push_back({10.0, 0.1});
        samples.push_back({10.1, 0.0});
        const Coverage cov = mode_coverage(samples, modes);
        CHECK(cov.covered == 1);
        CHECK(cov.hq_fraction == 1.0);
    }
}

TEST_CASE("mode coverage is invariant to sample order") {
    ModeSpec modes;
    modes.centers = {{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}};
    modes.sigma = 0.3;
    std::mt19937_64 rng(37);
    std::vector<std::array<double, 2>> samples;
    for (int i = 0; i < 90; ++i) {
        const auto& c = modes.centers[static_cast<std::size_t>(rng() % 3)];
        std::normal_distribution<double> jitter(0.0, 0.3);
        samples.push_back({c[0] + jitter(rng), c[1] + jitter(rng)});
    }
    const Coverage before = mode_coverage(samples, modes);
    std::shuffle(samples.begin(), samples.end(), rng);
    const Coverage after = mode_coverage(samples, modes);
    CHECK(before.covered == after.covered);
    CHECK(before.hq_fraction == after.hq_fraction);
}

TEST_CASE("cosine statistics on hand instances") {
    SUBCASE("orthogonal columns") {
        const auto stats = cosine_stats(km_from({{1, 0}, {0, 1}}));
        REQUIRE(stats.has_value());
        CHECK(stats->max_offdiag == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(stats->mean_abs == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("duplicated column peaks at one") {
        const auto stats = cosine_stats(km_from({{1, 2}, {2, 4}}));
        REQUIRE(stats.has_value());
        CHECK(stats->max_offdiag == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("mixed instance with hand-computed mean and histogram") {
        // Columns (1,0), (0,1), (1,1)/norm: cosines 0, r, r with r = 1/sqrt(2).
        const auto stats = cosine_stats(km_from({{1, 0}, {0, 1}, {1, 1}}));
        REQUIRE(stats.has_value());
        const double r = 1.0 / std::sqrt(2.0);
        CHECK(stats->max_offdiag == doctest::Approx(r).epsilon(1e-14));
        CHECK(stats->mean_abs == doctest::Approx(4.0 * r / 6.0).epsilon(1e-14));
        // Signed 20-bin histogram over [-1, 1]: cosine 0 -> bin 10,
        // cosine 0.7071 -> bin 17; both orders of each pair are counted.
        CHECK(stats->histogram[10] == 2);
        CHECK(stats->histogram[17] == 4);
        std::size_t total = 0;
        for (std::size_t c : stats->histogram) total += c;
        CHECK(total == 6);
    }
    SUBCASE("a single column has no pairs") {
        CHECK_FALSE(cosine_stats(km_from({{1, 2, 3}})).has_value());
    }
}

TEST_CASE("cosine statistics match an independent pairwise computation") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> dist(0.0, 1.0);
    KernelMatrix km;
    km.values.resize(12, 7);
    for (Eigen::Index j = 0; j < 7; ++j)
        for (Eigen::Index i = 0; i < 12; ++i) km.values(i, j) = dist(rng);
    km.column_norms = km.values.colwise().norm();

    double max_abs = 0.0, sum_abs = 0.0;
    for (Eigen::Index i = 0; i < 7; ++i)
        for (Eigen::Index j = 0; j < 7; ++j) {
            if (i == j) continue;
            const double c = km.values.col(i).dot(km.values.col(j)) /
                             (km.values.col(i).norm() * km.values.col(j).norm());
            max_abs = std::max(max_abs, std::abs(c));
            sum_abs += std::abs(c);
        }
    const auto stats = cosine_stats(km);
    REQUIRE(stats.has_value());
    CHECK(stats->max_offdiag == doctest::Approx(max_abs).epsilon(1e-12));
    CHECK(stats->mean_abs == doctest::Approx(sum_abs / 42.0).epsilon(1e-12));
}

TEST_CASE("random high-dimensional columns are nearly orthogonal on average") {
    // For isotropic directions in R^64 the expected |cosine| is close to
    // sqrt(2 / (64 pi)) ~ 0.0997; the per-instance mean over 32 columns
    // concentrates tightly around it.
    std::mt19937_64 rng(43);
    std::normal_distribution<double> dist(0.0, 1.0);
    double grand = 0.0;
    const int reps = 50;
    for (int rep = 0; rep < reps; ++rep) {
        KernelMatrix km;
        km.values.resize(64, 32);
        for (Eigen::Index j = 0; j < 32; ++j)
            for (Eigen::Index i = 0; i < 64; ++i) km.values(i, j) = dist(rng);
        km.column_norms = km.values.colwise().norm();
        const auto stats = cosine_stats(km);
        REQUIRE(stats.has_value());
        grand += stats->mean_abs;
    }
    grand /= reps;
    const double expected = std::sqrt(2.0 / (64.0 * M_PI));
    CHECK(std::abs(grand - expected) <= 0.01);
}
