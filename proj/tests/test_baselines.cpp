#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "pcmf/baselines.hpp"
#include "pcmf/model.hpp"

using namespace pcmf;

namespace {

CountMatrix random_counts(std::size_t n, std::size_t m, double mean, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::poisson_distribution<int> pois(mean);
    Mat x(n, m);
    for (std::size_t t = 0; t < x.size(); ++t) x.data()[t] = pois(rng);
    return CountMatrix::from_dense(std::move(x));
}

}  // namespace

TEST_CASE("truncated svd: orthonormal loadings and Eckart-Young error") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    Mat x(9, 6);
    for (std::size_t t = 0; t < x.size(); ++t) x.data()[t] = g(rng);

    const std::size_t k = 3;
    auto svd = truncated_svd(x, k);
    REQUIRE(svd.singular_values.size() == 6);

    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
            double d = 0.0;
            for (std::size_t j = 0; j < 6; ++j) d += svd.loadings(j, a) * svd.loadings(j, b);
            CHECK(d == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10).scale(1.0));
        }

    double err2 = 0.0;
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            double recon = 0.0;
            for (std::size_t t = 0; t < k; ++t) recon += svd.scores(i, t) * svd.loadings(j, t);
            err2 += (x(i, j) - recon) * (x(i, j) - recon);
        }
    double tail2 = 0.0;
    for (std::size_t t = k; t < svd.singular_values.size(); ++t)
        tail2 += svd.singular_values[t] * svd.singular_values[t];
    CHECK(err2 == doctest::Approx(tail2).epsilon(1e-9));
}

TEST_CASE("nmf: objective trace is monotone non-increasing") {
    for (unsigned seed : {1u, 7u, 19u}) {
        auto x = random_counts(25, 30, 2.5, seed);
        auto fit = poisson_nmf(x, 3, seed, 120, 0.0);  // tol 0: run all iterations
        REQUIRE(fit.objective_trace.size() >= 2);
        for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
            CHECK(fit.objective_trace[t] <= fit.objective_trace[t - 1] +
                                                1e-10 * std::fabs(fit.objective_trace[t - 1]));
        for (std::size_t t = 0; t < fit.u.size(); ++t) CHECK(fit.u.data()[t] >= 0.0);
        for (std::size_t t = 0; t < fit.v.size(); ++t) CHECK(fit.v.data()[t] >= 0.0);
    }
}

TEST_CASE("nmf objective equals the shared bregman divergence") {
    auto x = random_counts(12, 15, 3.0, 11);
    auto fit = poisson_nmf(x, 2, 11, 40, 0.0);
    const double direct = bregman_divergence(x, reconstruct(fit.u, fit.v));
    CHECK(fit.objective_trace.back() == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("nmf: warm start at exact rank-1 factors stays at the optimum") {
    Mat u(6, 1), v(8, 1);
    for (std::size_t i = 0; i < 6; ++i) u(i, 0) = 1.0 + static_cast<double>(i);
    for (std::size_t j = 0; j < 8; ++j) v(j, 0) = (j % 3 == 0) ? 2.0 : 1.0;
    auto x = CountMatrix::from_dense(reconstruct(u, v));  // integral by construction
    FactorPair warm{u, v};
    auto fit = poisson_nmf(x, 1, 0, 50, 1e-12, &warm);
    CHECK(fit.objective_trace.back() < 1e-6);
}

TEST_CASE("nmf: one further update barely moves a converged solution") {
    // dense counts from a positive rank-2 model so the optimum is interior
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> unif(0.5, 2.0);
    Mat tu(20, 2), tv(16, 2);
    for (std::size_t t = 0; t < tu.size(); ++t) tu.data()[t] = 3.0 * unif(rng);
    for (std::size_t t = 0; t < tv.size(); ++t) tv.data()[t] = 3.0 * unif(rng);
    Mat lam = reconstruct(tu, tv);
    Mat xraw(20, 16);
    for (std::size_t t = 0; t < lam.size(); ++t) {
        std::poisson_distribution<int> pois(lam.data()[t]);
        xraw.data()[t] = pois(rng);
    }
    auto x = CountMatrix::from_dense(std::move(xraw));
    auto fit = poisson_nmf(x, 2, 23, 30000, 1e-12);
    CHECK(fit.converged);
    FactorPair warm{fit.u, fit.v};
    auto step = poisson_nmf(x, 2, 23, 1, 0.0, &warm);
    for (std::size_t t = 0; t < fit.u.size(); ++t) {
        const double ref = std::max(std::fabs(fit.u.data()[t]), 1e-8);
        CHECK(std::fabs(step.u.data()[t] - fit.u.data()[t]) / ref < 1e-4);
    }
    for (std::size_t t = 0; t < fit.v.size(); ++t) {
        const double ref = std::max(std::fabs(fit.v.data()[t]), 1e-8);
        CHECK(std::fabs(step.v.data()[t] - fit.v.data()[t]) / ref < 1e-4);
    }
}

TEST_CASE("nmf rejects an all-zero matrix and bad ranks") {
    auto zero = CountMatrix::from_dense(Mat(3, 4, 0.0));
    CHECK_THROWS_AS(poisson_nmf(zero, 2, 0), input_error);
    auto x = random_counts(3, 4, 1.0, 1);
    CHECK_THROWS_AS(poisson_nmf(x, 0, 0), input_error);
}

TEST_CASE("nmf is deterministic given the seed") {
    auto x = random_counts(15, 12, 2.0, 31);
    auto a = poisson_nmf(x, 3, 77, 30, 0.0);
    auto b = poisson_nmf(x, 3, 77, 30, 0.0);
    CHECK(a.u == b.u);
    CHECK(a.v == b.v);
    auto c = poisson_nmf(x, 3, 78, 30, 0.0);
    CHECK(a.u.data()[0] != c.u.data()[0]);
}

TEST_CASE("pca on log counts: centered scores, orthonormal loadings") {
    auto x = random_counts(14, 10, 5.0, 3);
    auto fit = pca_logcounts(x, 3);
    for (std::size_t t = 0; t < 3; ++t) {
        double mu = 0.0;
        for (std::size_t i = 0; i < 14; ++i) mu += fit.u(i, t);
        CHECK(std::fabs(mu / 14.0) < 1e-10);
    }
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
            double d = 0.0;
            for (std::size_t j = 0; j < 10; ++j) d += fit.v(j, a) * fit.v(j, b);
            CHECK(d == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10).scale(1.0));
        }
    CHECK(fit.explained_var > 0.0);
    CHECK(fit.explained_var <= 1.0 + 1e-12);
}

TEST_CASE("pca: two-row-pattern data is fully explained by one component") {
    Mat x(6, 5);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = (i % 2 == 0) ? (j + 1.0) : (2.0 * j);
    auto fit = pca_logcounts(CountMatrix::from_dense(std::move(x)), 1);
    CHECK(fit.explained_var == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("pca scores follow a row permutation up to component sign") {
    auto x = random_counts(9, 7, 4.0, 13);
    std::vector<std::size_t> perm = {4, 0, 8, 2, 6, 1, 7, 3, 5};
    Mat xp(9, 7);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 7; ++j) xp(i, j) = x(perm[i], j);
    auto a = pca_logcounts(x, 2);
    auto b = pca_logcounts(CountMatrix::from_dense(std::move(xp)), 2);
    for (std::size_t t = 0; t < 2; ++t) {
        const double sign = (std::fabs(a.u(perm[0], t)) > 1e-12 &&
                             a.u(perm[0], t) * b.u(0, t) < 0.0)
                                ? -1.0
                                : 1.0;
        for (std::size_t i = 0; i < 9; ++i)
            CHECK(b.u(i, t) == doctest::Approx(sign * a.u(perm[i], t)).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("pca rejects out-of-range component counts") {
    auto x = random_counts(5, 4, 2.0, 2);
    CHECK_THROWS_AS(pca_logcounts(x, 0), input_error);
    CHECK_THROWS_AS(pca_logcounts(x, 5), input_error);
}
