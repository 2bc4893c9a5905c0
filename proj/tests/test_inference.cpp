#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "pcmf/inference.hpp"
#include "pcmf/model.hpp"
#include "pcmf/special.hpp"

using namespace pcmf;

namespace {

Mat mat_from(std::initializer_list<std::initializer_list<double>> rows) {
    Mat m(rows.size(), rows.begin()->size());
    std::size_t i = 0;
    for (const auto& r : rows) {
        std::size_t j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

CountMatrix counts_from(std::initializer_list<std::initializer_list<double>> rows) {
    return CountMatrix::from_dense(mat_from(rows));
}

CountMatrix random_counts(std::size_t n, std::size_t m, double mean, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::poisson_distribution<int> pois(mean);
    Mat x(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) x(i, j) = pois(rng);
    return CountMatrix::from_dense(std::move(x));
}

// hand-built state with every probability switched fully on
VariationalState blank_state(ModelFamily fam, const CellData& cd, std::size_t k,
                             double tau = 0.5) {
    VariationalState st;
    st.family = fam;
    st.tau = tau;
    st.n = cd.n;
    st.m = cd.m;
    st.k = k;
    st.a_shape = Mat(cd.n, k, 1.0);
    st.a_rate = Mat(cd.n, k, 1.0);
    st.u_hat = Mat(cd.n, k);
    st.log_u = Mat(cd.n, k);
    st.b_shape = Mat(cd.m, k, 1.0);
    st.b_rate = Mat(cd.m, k, 1.0);
    st.vp_hat = Mat(cd.m, k);
    st.log_vp = Mat(cd.m, k);
    if (zero_inflated(fam)) st.p_d = Mat(cd.n, cd.m, 1.0);
    if (sparse_loadings(fam)) {
        st.p_s = Mat(cd.m, k, 1.0);
        st.s_til.assign(cd.m * k, 1);
    }
    st.resp = Mat(cd.nnz, k, 0.0);
    st.cell_entropy.assign(cd.nnz, 0.0);
    st.gene_flags.assign(cd.m, 0);
    st.refresh_u_moments();
    st.refresh_v_moments();
    return st;
}

HyperParams flat_hyper(std::size_t k, std::size_t m) {
    HyperParams h;
    h.u_shape.assign(k, 1.0);
    h.u_rate.assign(k, 1.0);
    h.v_shape.assign(k, 1.0);
    h.v_rate.assign(k, 1.0);
    h.keep_prior.assign(m, 0.5);
    h.select_prior.assign(m, 0.5);
    return h;
}

void one_sweep(VariationalState& st, const CellData& cd, HyperParams& hyper) {
    update_r(st, cd);
    update_a(st, cd, hyper);
    update_b(st, cd, hyper);
    if (zero_inflated(st.family)) update_pd(st, cd, hyper);
    if (sparse_loadings(st.family)) update_ps(st, cd, hyper);
    m_step(st, cd, false, hyper, nullptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// allocation update
// ---------------------------------------------------------------------------

TEST_CASE("allocation update: single factor puts all mass on it") {
    auto x = counts_from({{2}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 1);
    update_r(st, cd);
    CHECK(st.resp(0, 0) == 1.0);
    CHECK(st.cell_entropy[0] == 0.0);
}

TEST_CASE("allocation update: identical factors split evenly") {
    auto x = counts_from({{3}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 2);
    st.log_u(0, 0) = 0.4;
    st.log_u(0, 1) = 0.4;
    st.log_vp(0, 0) = -1.1;
    st.log_vp(0, 1) = -1.1;
    update_r(st, cd);
    CHECK(st.resp(0, 0) == 0.5);
    CHECK(st.resp(0, 1) == 0.5);
}

TEST_CASE("allocation update: one-to-three log intensities give (0.25, 0.75)") {
    auto x = counts_from({{1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 2);
    st.log_u(0, 0) = 0.0;
    st.log_u(0, 1) = 0.0;
    st.log_vp(0, 0) = 0.0;
    st.log_vp(0, 1) = std::log(3.0);
    update_r(st, cd);
    CHECK(st.resp(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(st.resp(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("allocation update: unselected factors get zero mass") {
    auto x = counts_from({{4}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 2);
    st.s_til[0] = 0;  // factor 0 off for gene 0
    update_r(st, cd);
    CHECK(st.resp(0, 0) == 0.0);
    CHECK(st.resp(0, 1) == 1.0);
    CHECK(st.gene_flags[0] == 0);
}

TEST_CASE("allocation update: fully unselected gene falls back to uniform and is flagged") {
    auto x = counts_from({{4, 1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 4);
    for (std::size_t t = 0; t < 4; ++t) st.s_til[0 * 4 + t] = 0;
    update_r(st, cd);
    for (std::size_t t = 0; t < 4; ++t) CHECK(st.resp(0, t) == 0.25);
    CHECK(st.cell_entropy[0] == std::log(4.0));
    CHECK((st.gene_flags[0] & gene_flag_fallback) != 0);
    CHECK(st.gene_flags[1] == 0);
}

TEST_CASE("allocation probabilities sum to one for every stored cell") {
    auto x = random_counts(12, 9, 1.5, 71);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 3, .family = ModelFamily::sparse_zi_gap};
    Rng rng(derive_seed(5, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    update_r(st, cd);
    for (std::size_t c = 0; c < cd.nnz; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < 3; ++t) s += st.resp(c, t);
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
}

// ---------------------------------------------------------------------------
// gamma block updates
// ---------------------------------------------------------------------------

TEST_CASE("score update matches the plug-in example") {
    // x=2, r=1, V'=3, prior (1,1) -> posterior (3, 4)
    auto x = counts_from({{2}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 1);
    st.b_shape(0, 0) = 3.0;  // V' mean 3 with unit rate
    st.refresh_v_moments();
    update_r(st, cd);
    auto hyper = flat_hyper(1, 1);
    update_a(st, cd, hyper);
    CHECK(st.a_shape(0, 0) == 3.0);
    CHECK(st.a_rate(0, 0) == 4.0);
    CHECK(st.u_hat(0, 0) == 0.75);
    CHECK(st.log_u(0, 0) == doctest::Approx(digamma(3.0) - std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("score update: zero row and zeroed keep probabilities collapse to the prior") {
    auto x = counts_from({{0, 0}, {3, 1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::zi_gap, cd, 2);
    st.p_d(0, 0) = 0.0;  // legal: both cells in row 0 are zero
    st.p_d(0, 1) = 0.0;
    update_r(st, cd);
    auto hyper = flat_hyper(2, 2);
    hyper.u_shape = {1.5, 2.5};
    hyper.u_rate = {0.5, 4.0};
    update_a(st, cd, hyper);
    CHECK(st.a_shape(0, 0) == 1.5);
    CHECK(st.a_shape(0, 1) == 2.5);
    CHECK(st.a_rate(0, 0) == 0.5);
    CHECK(st.a_rate(0, 1) == 4.0);
    // row 1 has counts, so it moves away from the prior
    CHECK(st.a_shape(1, 0) > 1.5);
}

TEST_CASE("loading update matches the mirrored example") {
    // x=2, r=1, U=3, prior (2,1) -> posterior (4, 4)
    auto x = counts_from({{2}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 1);
    st.a_shape(0, 0) = 3.0;
    st.refresh_u_moments();
    update_r(st, cd);
    auto hyper = flat_hyper(1, 1);
    hyper.v_shape = {2.0};
    update_b(st, cd, hyper);
    CHECK(st.b_shape(0, 0) == 4.0);
    CHECK(st.b_rate(0, 0) == 4.0);
}

TEST_CASE("loading update: unselected gene keeps its prior") {
    auto x = counts_from({{2}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 1);
    st.p_s(0, 0) = 0.0;
    st.s_til[0] = 0;
    update_r(st, cd);  // uniform fallback, but selection weight zeroes the sums
    auto hyper = flat_hyper(1, 1);
    hyper.v_shape = {2.5};
    hyper.v_rate = {0.75};
    update_b(st, cd, hyper);
    CHECK(st.b_shape(0, 0) == 2.5);
    CHECK(st.b_rate(0, 0) == 0.75);
}

TEST_CASE("loading update: fully dropped column keeps its prior") {
    auto x = counts_from({{0, 2}, {0, 1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::zi_gap, cd, 1);
    st.p_d(0, 0) = 0.0;
    st.p_d(1, 0) = 0.0;
    update_r(st, cd);
    auto hyper = flat_hyper(1, 2);
    hyper.v_shape = {1.25};
    hyper.v_rate = {2.0};
    update_b(st, cd, hyper);
    CHECK(st.b_shape(0, 0) == 1.25);
    CHECK(st.b_rate(0, 0) == 2.0);
    CHECK(st.b_shape(1, 0) > 1.25);  // observed column moves
}

// ---------------------------------------------------------------------------
// bernoulli block updates
// ---------------------------------------------------------------------------

TEST_CASE("dropout update: no correction leaves the prior probability") {
    auto x = counts_from({{0}, {2}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::zi_gap, cd, 1);
    st.u_hat(0, 0) = 0.0;  // kills the rate correction for the zero cell
    auto hyper = flat_hyper(1, 1);
    update_pd(st, cd, hyper);
    CHECK(st.p_d(0, 0) == 0.5);
    CHECK(st.p_d(1, 0) == 1.0);
}

TEST_CASE("dropout update: log-3 correction gives 1/4") {
    auto x = counts_from({{0}, {2}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::zi_gap, cd, 1);
    st.u_hat(0, 0) = 1.0;
    st.vp_hat(0, 0) = std::log(3.0);
    auto hyper = flat_hyper(1, 1);
    update_pd(st, cd, hyper);
    CHECK(st.p_d(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(st.p_d(1, 0) == 1.0);
}

TEST_CASE("observed counts keep probability one through whole sweeps") {
    auto x = random_counts(10, 8, 1.0, 33);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::zi_gap};
    Rng rng(derive_seed(9, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    for (int sweep = 0; sweep < 3; ++sweep) {
        one_sweep(st, cd, hyper);
        for (std::size_t i = 0; i < cd.n; ++i)
            for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c)
                CHECK(st.p_d(i, cd.col[c]) == 1.0);
    }
}

TEST_CASE("selection update: neutral corrections leave the prior probability") {
    auto x = counts_from({{0}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 1);
    st.u_hat(0, 0) = 0.0;
    auto hyper = flat_hyper(1, 1);
    update_ps(st, cd, hyper);
    CHECK(st.p_s(0, 0) == 0.5);
    CHECK(st.s_til[0] == 0);  // 0.5 is not strictly above tau = 0.5
}

TEST_CASE("selection update: cancelling corrections leave the prior probability") {
    auto x = counts_from({{1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 1);
    update_r(st, cd);  // r = 1
    st.u_hat(0, 0) = 1.0;
    st.vp_hat(0, 0) = 1.0;  // -U V' = -1
    st.log_u(0, 0) = 0.5;
    st.log_vp(0, 0) = 0.5;  // + x r (logU + logV') = +1
    auto hyper = flat_hyper(1, 1);
    update_ps(st, cd, hyper);
    CHECK(st.p_s(0, 0) == 0.5);
}

TEST_CASE("selection update: net log-9 penalty gives 1/10") {
    auto x = counts_from({{0}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 1);
    st.u_hat(0, 0) = 1.0;
    st.vp_hat(0, 0) = std::log(9.0);
    auto hyper = flat_hyper(1, 1);
    update_ps(st, cd, hyper);
    CHECK(st.p_s(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(st.s_til[0] == 0);
}

TEST_CASE("selection update refreshes indicators against the threshold") {
    auto x = counts_from({{5, 0}, {4, 0}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 2, 0.3);
    update_r(st, cd);
    auto hyper = flat_hyper(2, 2);
    hyper.select_prior = {0.9, 0.01};
    st.u_hat.fill(0.1);
    st.vp_hat.fill(0.1);
    update_ps(st, cd, hyper);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t t = 0; t < 2; ++t)
            CHECK(st.s_til[j * 2 + t] == (st.p_s(j, t) > 0.3 ? 1 : 0));
}

// ---------------------------------------------------------------------------
// hyperparameter step
// ---------------------------------------------------------------------------

TEST_CASE("hyperparameter step recovers analytic gamma moments") {
    auto x = counts_from({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        st.u_hat(i, 0) = 2.0;
        st.log_u(i, 0) = digamma(2.0);  // exact Gamma(2, 1) moments
    }
    for (std::size_t j = 0; j < 3; ++j) {
        st.vp_hat(j, 0) = 1.5;
        st.log_vp(j, 0) = digamma(3.0) - std::log(2.0);  // exact Gamma(3, 2) moments
    }
    auto hyper = flat_hyper(1, 3);
    m_step(st, cd, false, hyper, nullptr);
    CHECK(hyper.u_shape[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(hyper.u_rate[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(hyper.v_shape[0] == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(hyper.v_rate[0] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("hyperparameter step caps degenerate zero-variance moments and warns") {
    auto x = counts_from({{1}, {1}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::gap, cd, 1);
    for (std::size_t i = 0; i < 2; ++i) {
        st.u_hat(i, 0) = 2.0;
        st.log_u(i, 0) = std::log(2.0);  // zero-variance posture: log of the mean
    }
    st.vp_hat(0, 0) = 1.0;
    st.log_vp(0, 0) = std::log(1.0);
    auto hyper = flat_hyper(1, 1);
    std::vector<std::string> warnings;
    m_step(st, cd, false, hyper, &warnings);
    CHECK(hyper.u_shape[0] == 1e6);
    CHECK(hyper.u_rate[0] == 5e5);
    REQUIRE(!warnings.empty());
    CHECK(warnings.front().find("capped") != std::string::npos);
}

TEST_CASE("hyperparameter step: keep and select priors are arithmetic means") {
    auto x = counts_from({{1, 0}, {0, 0}, {2, 0}, {3, 0}});
    auto cd = CellData::build(x);
    auto st = blank_state(ModelFamily::sparse_zi_gap, cd, 4);
    st.p_d(0, 0) = 1.0;
    st.p_d(1, 0) = 0.0;
    st.p_d(2, 0) = 1.0;
    st.p_d(3, 0) = 1.0;
    st.p_s(1, 0) = 1.0;
    st.p_s(1, 1) = 0.0;
    st.p_s(1, 2) = 0.0;
    st.p_s(1, 3) = 1.0;
    auto hyper = flat_hyper(4, 2);
    m_step(st, cd, false, hyper, nullptr);
    CHECK(hyper.keep_prior[0] == 0.75);
    CHECK(hyper.select_prior[1] == 0.5);
}

TEST_CASE("hyperparameter step holds rates when the scale is fixed") {
    auto x = random_counts(6, 4, 2.0, 17);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::gap};
    Rng rng(derive_seed(3, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    hyper.u_rate = {7.0, 0.25};
    hyper.v_rate = {1.5, 3.0};
    m_step(st, cd, true, hyper, nullptr);
    CHECK(hyper.u_rate[0] == 7.0);
    CHECK(hyper.u_rate[1] == 0.25);
    CHECK(hyper.v_rate[0] == 1.5);
    CHECK(hyper.v_rate[1] == 3.0);
    // shape solves the stationarity condition given the held rate
    for (std::size_t t = 0; t < 2; ++t) {
        double mean_log = 0.0;
        for (std::size_t i = 0; i < 6; ++i) mean_log += st.log_u(i, t);
        mean_log /= 6.0;
        CHECK(std::fabs(digamma(hyper.u_shape[t]) - (std::log(hyper.u_rate[t]) + mean_log)) <=
              1e-9);
    }
}

TEST_CASE("hyperparameter step lands on a stationary point of the prior term") {
    auto x = random_counts(7, 11, 2.5, 41);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::zi_gap};
    Rng rng(derive_seed(11, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    for (int sweep = 0; sweep < 3; ++sweep) one_sweep(st, cd, hyper);

    // expected log prior of the score block as a function of the shape alone
    auto prior_term = [&](double shape, double rate, std::size_t t) {
        double f = 0.0;
        for (std::size_t i = 0; i < cd.n; ++i)
            f += shape * std::log(rate) - log_gamma(shape) + (shape - 1.0) * st.log_u(i, t) -
                 rate * st.u_hat(i, t);
        return f;
    };
    for (std::size_t t = 0; t < 2; ++t) {
        const double s = hyper.u_shape[t], r = hyper.u_rate[t];
        REQUIRE(s < 0.99e6);
        const double at = prior_term(s, r, t);
        CHECK(at > prior_term(1.01 * s, r, t));
        CHECK(at > prior_term(0.99 * s, r, t));
    }
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

TEST_CASE("initialization: informativeness scores follow the variance heuristic") {
    // columns: constant nonzero, spread-out, all-zero, single spike
    auto x = counts_from({{3, 0, 0, 0},
                          {3, 1, 0, 0},
                          {3, 1, 0, 0},
                          {3, 16, 0, 7}});
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::sparse_zi_gap};
    Rng rng(derive_seed(1, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);

    // independent recomputation of 1 - exp(-sd/mean_nonzero)
    for (std::size_t j = 0; j < 4; ++j) {
        double sum = 0.0, sumsq = 0.0, nnz = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            sum += x(i, j);
            sumsq += x(i, j) * x(i, j);
            nnz += x(i, j) > 0 ? 1.0 : 0.0;
        }
        double expected = 0.0;
        if (nnz > 0.0) {
            const double mean_all = sum / 4.0;
            const double sd = std::sqrt(std::max(sumsq / 4.0 - mean_all * mean_all, 0.0));
            expected = 1.0 - std::exp(-sd / (sum / nnz));
        }
        for (std::size_t t = 0; t < 2; ++t) {
            CHECK(st.p_s(j, t) == doctest::Approx(expected).epsilon(1e-12));
            CHECK(st.s_til[j * 2 + t] == (st.p_s(j, t) > 0.5 ? 1 : 0));
        }
    }
    CHECK(st.p_s(0, 0) == 0.0);  // constant gene: zero standard deviation
    CHECK(st.p_s(2, 0) == 0.0);  // all-zero gene

    CHECK((st.gene_flags[2] & gene_flag_all_zero) != 0);
    CHECK(st.gene_flags[0] == 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(st.p_d(i, 2) == 0.0);
}

TEST_CASE("initialization: keep probabilities start at expressed fractions, forced on counts") {
    auto x = counts_from({{0, 1}, {2, 1}, {0, 1}, {5, 1}});
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::zi_gap};
    Rng rng(derive_seed(2, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    CHECK(st.p_d(0, 0) == 0.5);
    CHECK(st.p_d(1, 0) == 1.0);
    CHECK(st.p_d(2, 0) == 0.5);
    CHECK(st.p_d(3, 0) == 1.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(st.p_d(i, 1) == 1.0);
    CHECK(hyper.keep_prior[0] == 0.75);  // mean of the column above
    CHECK(hyper.keep_prior[1] == 1.0);
}

TEST_CASE("initialization: unit variational rates and mean-matched seeds") {
    auto x = random_counts(30, 30, 6.0, 99);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::gap};
    Rng rng(derive_seed(8, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    for (std::size_t t = 0; t < st.a_rate.size(); ++t) CHECK(st.a_rate.data()[t] == 1.0);
    for (std::size_t t = 0; t < st.b_rate.size(); ++t) CHECK(st.b_rate.data()[t] == 1.0);
    for (std::size_t t = 0; t < st.a_shape.size(); ++t) CHECK(st.a_shape.data()[t] > 0.0);

    // average reconstruction lands within an order of magnitude of mean(X)
    double recon = 0.0;
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = 0; j < 30; ++j)
            for (std::size_t t = 0; t < 2; ++t) recon += st.u_hat(i, t) * st.vp_hat(j, t);
    recon /= 900.0;
    const double mean_x = cd.total / 900.0;
    CHECK(recon > mean_x / 10.0);
    CHECK(recon < mean_x * 10.0);
}

TEST_CASE("initialization is deterministic given the generator state") {
    auto x = random_counts(8, 6, 1.2, 5);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 3, .family = ModelFamily::sparse_zi_gap};
    HyperParams h1, h2;
    Rng r1(derive_seed(42, SeedStream::restart, 1));
    Rng r2(derive_seed(42, SeedStream::restart, 1));
    auto s1 = init_state(x, cd, cfg, r1, h1);
    auto s2 = init_state(x, cd, cfg, r2, h2);
    CHECK(s1.a_shape == s2.a_shape);
    CHECK(s1.b_shape == s2.b_shape);
    CHECK(h1.u_shape == h2.u_shape);
    CHECK(h1.v_rate == h2.v_rate);
}

// ---------------------------------------------------------------------------
// evidence bound
// ---------------------------------------------------------------------------

TEST_CASE("evidence bound is invariant under factor relabeling") {
    auto x = random_counts(9, 7, 1.5, 13);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 3, .family = ModelFamily::sparse_zi_gap};
    Rng rng(derive_seed(6, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    for (int sweep = 0; sweep < 2; ++sweep) one_sweep(st, cd, hyper);
    const double before = elbo(st, hyper, cd);

    auto swap_cols = [](Mat& m, std::size_t p, std::size_t q) {
        for (std::size_t i = 0; i < m.rows(); ++i) std::swap(m(i, p), m(i, q));
    };
    for (Mat* m : {&st.a_shape, &st.a_rate, &st.u_hat, &st.log_u, &st.b_shape, &st.b_rate,
                   &st.vp_hat, &st.log_vp, &st.p_s, &st.resp})
        swap_cols(*m, 0, 2);
    for (std::size_t j = 0; j < cd.m; ++j) std::swap(st.s_til[j * 3 + 0], st.s_til[j * 3 + 2]);
    std::swap(hyper.u_shape[0], hyper.u_shape[2]);
    std::swap(hyper.u_rate[0], hyper.u_rate[2]);
    std::swap(hyper.v_shape[0], hyper.v_shape[2]);
    std::swap(hyper.v_rate[0], hyper.v_rate[2]);

    const double after = elbo(st, hyper, cd);
    CHECK(after == doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("evidence bound strictly increases after one exact gamma update") {
    auto x = random_counts(8, 10, 2.0, 29);
    auto cd = CellData::build(x);
    FitConfig cfg{.k = 2, .family = ModelFamily::gap};
    Rng rng(derive_seed(7, SeedStream::restart, 0));
    HyperParams hyper;
    auto st = init_state(x, cd, cfg, rng, hyper);
    update_r(st, cd);
    const double before = elbo(st, hyper, cd);
    update_a(st, cd, hyper);
    const double after = elbo(st, hyper, cd);
    CHECK(after > before);
}

TEST_CASE("every coordinate update raises or preserves the evidence bound") {
    for (unsigned seed : {101u, 202u, 303u}) {
        auto x = random_counts(9, 8, 1.2, seed);
        auto cd = CellData::build(x);
        for (ModelFamily fam : {ModelFamily::gap, ModelFamily::zi_gap,
                                ModelFamily::sparse_zi_gap}) {
            FitConfig cfg{.k = 2, .family = fam};
            Rng rng(derive_seed(seed, SeedStream::restart, 0));
            HyperParams hyper;
            auto st = init_state(x, cd, cfg, rng, hyper);
            update_r(st, cd);  // establish a valid allocation first
            double prev = elbo(st, hyper, cd);
            auto step = [&](auto&& fn) {
                fn();
                const double cur = elbo(st, hyper, cd);
                CHECK(cur >= prev - 1e-9 * std::fabs(prev));
                prev = cur;
            };
            step([&] { update_a(st, cd, hyper); });
            step([&] { update_b(st, cd, hyper); });
            if (zero_inflated(fam)) step([&] { update_pd(st, cd, hyper); });
            if (sparse_loadings(fam)) step([&] { update_ps(st, cd, hyper); });
            step([&] { m_step(st, cd, false, hyper, nullptr); });
            if (fam != ModelFamily::sparse_zi_gap)
                step([&] { update_r(st, cd); });  // exact for non-sparse families
        }
    }
}

TEST_CASE("updated gamma blocks beat their five-percent perturbations") {
    for (unsigned seed : {11u, 12u, 13u, 14u, 15u}) {
        auto x = random_counts(7, 9, 1.8, seed);
        auto cd = CellData::build(x);
        for (ModelFamily fam : {ModelFamily::gap, ModelFamily::zi_gap}) {
            FitConfig cfg{.k = 2, .family = fam};
            Rng rng(derive_seed(seed, SeedStream::restart, 0));
            HyperParams hyper;
            auto st = init_state(x, cd, cfg, rng, hyper);
            for (int sweep = 0; sweep < 2; ++sweep) one_sweep(st, cd, hyper);

            auto perturb_and_check = [&](Mat& block, bool is_u, double at) {
                for (double f : {1.05, 0.95}) {
                    Mat saved = block;
                    for (std::size_t t = 0; t < block.size(); ++t) block.data()[t] *= f;
                    if (is_u)
                        st.refresh_u_moments();
                    else
                        st.refresh_v_moments();
                    CHECK(elbo(st, hyper, cd) <= at + 1e-10 * std::fabs(at));
                    block = saved;
                    if (is_u)
                        st.refresh_u_moments();
                    else
                        st.refresh_v_moments();
                }
            };

            update_r(st, cd);
            update_a(st, cd, hyper);
            const double at_a = elbo(st, hyper, cd);
            perturb_and_check(st.a_shape, true, at_a);
            perturb_and_check(st.a_rate, true, at_a);

            update_b(st, cd, hyper);
            const double at_b = elbo(st, hyper, cd);
            perturb_and_check(st.b_shape, false, at_b);
            perturb_and_check(st.b_rate, false, at_b);
        }
    }
}

// ---------------------------------------------------------------------------
// family reduction
// ---------------------------------------------------------------------------

TEST_CASE("general updates with all probabilities on are bit-identical to the plain path") {
    auto x = random_counts(10, 12, 1.5, 55);
    auto cd = CellData::build(x);
    FitConfig cfg_gap{.k = 3, .family = ModelFamily::gap};
    FitConfig cfg_all{.k = 3, .family = ModelFamily::sparse_zi_gap};

    HyperParams ha, hb;
    Rng ra(derive_seed(77, SeedStream::restart, 0));
    Rng rb(derive_seed(77, SeedStream::restart, 0));
    auto plain = init_state(x, cd, cfg_gap, ra, ha);
    auto general = init_state(x, cd, cfg_all, rb, hb);
    // identical gamma draws by construction; force every gate fully open
    general.p_d.fill(1.0);
    general.p_s.fill(1.0);
    std::fill(general.s_til.begin(), general.s_til.end(), 1);
    hb = ha;
    hb.keep_prior.assign(cd.m, 1.0);
    hb.select_prior.assign(cd.m, 1.0);

    for (int round = 0; round < 2; ++round) {
        update_r(plain, cd);
        update_r(general, cd);
        CHECK(plain.resp == general.resp);
        update_a(plain, cd, ha);
        update_a(general, cd, hb);
        CHECK(plain.a_shape == general.a_shape);
        CHECK(plain.a_rate == general.a_rate);
        CHECK(plain.u_hat == general.u_hat);
        update_b(plain, cd, ha);
        update_b(general, cd, hb);
        CHECK(plain.b_shape == general.b_shape);
        CHECK(plain.b_rate == general.b_rate);
        CHECK(plain.vp_hat == general.vp_hat);
    }
}

// ---------------------------------------------------------------------------
// fit driver
// ---------------------------------------------------------------------------

TEST_CASE("fitting rejects an all-zero matrix") {
    auto x = counts_from({{0, 0}, {0, 0}});
    FitConfig cfg{.k = 1, .family = ModelFamily::gap};
    CHECK_THROWS_WITH_AS(fit(x, cfg), "degenerate all-zero input", input_error);
}

TEST_CASE("fit configuration validation rejects bad controls") {
    auto x = counts_from({{1}});
    CHECK_THROWS_AS(fit(x, FitConfig{.k = 0}), input_error);
    CHECK_THROWS_AS(fit(x, FitConfig{.k = 1, .family = ModelFamily::gap, .max_sweeps = 0}),
                    input_error);
    CHECK_THROWS_AS(
        fit(x, FitConfig{.k = 1, .family = ModelFamily::gap, .max_sweeps = 10, .rel_tol = 0.0}),
        input_error);
    CHECK_THROWS_AS(fit(x, FitConfig{.k = 1,
                                     .family = ModelFamily::gap,
                                     .max_sweeps = 10,
                                     .rel_tol = 1e-4,
                                     .n_restarts = 1,
                                     .tau = 1.0}),
                    input_error);
}

TEST_CASE("evidence bound trace is monotone for the plain family") {
    std::mt19937_64 meta(2024);
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t n = 5 + meta() % 6, m = 6 + meta() % 9;
        const std::size_t k = 1 + meta() % 3;
        auto x = random_counts(n, m, 2.0, static_cast<unsigned>(1000 + inst));
        if (x.all_zero()) continue;
        FitConfig cfg{.k = k,
                      .family = ModelFamily::gap,
                      .max_sweeps = 25,
                      .rel_tol = 1e-7,
                      .n_restarts = 1,
                      .tau = 0.5,
                      .seed = static_cast<std::uint64_t>(inst)};
        auto res = fit(x, cfg);
        for (std::size_t s = 1; s < res.report.elbo_trace.size(); ++s) {
            const double prev = res.report.elbo_trace[s - 1];
            CHECK(res.report.elbo_trace[s] >= prev - 1e-8 * std::fabs(prev));
        }
        CHECK(res.report.max_elbo_drop <= 1e-8 * std::fabs(res.report.final_elbo));
    }
}

TEST_CASE("evidence bound trace is monotone for the zero-inflated family") {
    for (int inst = 0; inst < 25; ++inst) {
        auto x = random_counts(8, 10, 0.8, static_cast<unsigned>(3000 + inst));
        if (x.all_zero()) continue;
        FitConfig cfg{.k = 2,
                      .family = ModelFamily::zi_gap,
                      .max_sweeps = 20,
                      .rel_tol = 1e-7,
                      .n_restarts = 1,
                      .tau = 0.5,
                      .seed = static_cast<std::uint64_t>(inst)};
        auto res = fit(x, cfg);
        for (std::size_t s = 1; s < res.report.elbo_trace.size(); ++s) {
            const double prev = res.report.elbo_trace[s - 1];
            CHECK(res.report.elbo_trace[s] >= prev - 1e-8 * std::fabs(prev));
        }
    }
}

TEST_CASE("fit explains rank-one data almost fully") {
    std::vector<double> devs;
    for (unsigned seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(900 + seed);
        std::uniform_real_distribution<double> unif(0.3, 3.0);
        std::vector<double> u(20), v(20);
        for (auto& e : u) e = unif(rng);
        for (auto& e : v) e = unif(rng);
        Mat xm(20, 20);
        for (std::size_t i = 0; i < 20; ++i)
            for (std::size_t j = 0; j < 20; ++j) {
                std::poisson_distribution<int> pois(30.0 * u[i] * v[j]);
                xm(i, j) = pois(rng);
            }
        auto x = CountMatrix::from_dense(std::move(xm));
        FitConfig cfg{.k = 1,
                      .family = ModelFamily::gap,
                      .max_sweeps = 300,
                      .rel_tol = 1e-6,
                      .n_restarts = 2,
                      .tau = 0.5,
                      .seed = seed};
        auto res = fit(x, cfg);
        REQUIRE(res.report.pct_dev_defined);
        CHECK(res.report.pct_dev_in_range);
        devs.push_back(res.report.pct_dev);
    }
    std::sort(devs.begin(), devs.end());
    const double median = 0.5 * (devs[4] + devs[5]);
    CHECK(median >= 0.9);
}

TEST_CASE("fit is deterministic given the seed") {
    auto x = random_counts(15, 12, 1.0, 321);
    FitConfig cfg{.k = 3,
                  .family = ModelFamily::sparse_zi_gap,
                  .max_sweeps = 30,
                  .rel_tol = 1e-6,
                  .n_restarts = 2,
                  .tau = 0.5,
                  .seed = 12345};
    auto r1 = fit(x, cfg);
    auto r2 = fit(x, cfg);
    CHECK(r1.model.u_mean == r2.model.u_mean);
    CHECK(r1.model.v_mean == r2.model.v_mean);
    CHECK(r1.model.u_log == r2.model.u_log);
    CHECK(r1.report.final_elbo == r2.report.final_elbo);
    CHECK(r1.report.elbo_trace == r2.report.elbo_trace);
    CHECK(r1.report.selected == r2.report.selected);
    CHECK(r1.report.restart_index == r2.report.restart_index);
}

TEST_CASE("fit bookkeeping is internally consistent") {
    // structured counts so the explained deviance is comfortably inside [0, 1]
    std::mt19937_64 rng(77);
    Mat xm(12, 10);
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
            std::poisson_distribution<int> pois(0.5 * (i + 1) + 0.3 * (i + 1) * (j % 3));
            xm(i, j) = pois(rng);
        }
    auto x = CountMatrix::from_dense(std::move(xm));
    FitConfig cfg{.k = 2,
                  .family = ModelFamily::gap,
                  .max_sweeps = 4000,  // the redundant second factor takes ~2k sweeps to settle
                  .rel_tol = 1e-5,
                  .n_restarts = 3,
                  .tau = 0.5,
                  .seed = 5,
                  .fix_scale = 1};  // pins the scale ridge so the gap criterion can settle
    auto res = fit(x, cfg);
    CHECK(res.report.sweeps == res.report.elbo_trace.size());
    CHECK(res.report.final_elbo == res.report.elbo_trace.back());
    CHECK(res.report.converged);
    CHECK(res.report.restart_index < 3);
    CHECK(res.report.restarts_failed == 0);
    CHECK(res.report.pct_dev_defined);
    CHECK(res.report.pct_dev_in_range);
    for (double e : res.report.elbo_trace) CHECK(std::isfinite(e));
    CHECK(res.model.selected == std::vector<std::uint8_t>(10, 1));
}

TEST_CASE("diverging restarts abort the fit with a diagnostic") {
    auto x = counts_from({{1e16, 1}, {1, 1e16}});
    FitConfig cfg{.k = 1,
                  .family = ModelFamily::gap,
                  .max_sweeps = 5,
                  .rel_tol = 1e-6,
                  .n_restarts = 2,
                  .tau = 0.5,
                  .seed = 0};
    CHECK_THROWS_AS(fit(x, cfg), numeric_error);
}

// ---------------------------------------------------------------------------
// sparse two-stage pipeline
// ---------------------------------------------------------------------------

namespace {

// two cell groups x two gene blocks with a noisy remainder, optional dropout
CountMatrix grouped_counts(std::size_t n, std::size_t m, double informative_frac,
                           double keep_prob, unsigned seed, double u_strong_mean = 8.0,
                           double v_floor = 0.0) {
    std::mt19937_64 rng(seed);
    const std::size_t m0 = static_cast<std::size_t>(informative_frac * m);
    std::exponential_distribution<double> strong(1.0 / u_strong_mean),
        weak(10.0 / u_strong_mean);
    std::exponential_distribution<double> vs(1.0), vw(1.0 / 0.1);
    Mat u(n, 2), v(m, 2);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t g = i < n / 2 ? 0 : 1;
        for (std::size_t t = 0; t < 2; ++t) u(i, t) = t == g ? strong(rng) : weak(rng);
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (j < m0) {
            const std::size_t g = j < m0 / 2 ? 0 : 1;
            for (std::size_t t = 0; t < 2; ++t) v(j, t) = t == g ? v_floor + vs(rng) : vw(rng);
        } else {
            for (std::size_t t = 0; t < 2; ++t) v(j, t) = vw(rng);
        }
    }
    std::bernoulli_distribution keep(keep_prob);
    Mat x(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double lam = 0.0;
            for (std::size_t t = 0; t < 2; ++t) lam += u(i, t) * v(j, t);
            std::poisson_distribution<int> pois(lam);
            const int draw = pois(rng);
            x(i, j) = (keep_prob >= 1.0 || keep(rng)) ? draw : 0;
        }
    return CountMatrix::from_dense(std::move(x));
}

}  // namespace

TEST_CASE("sparse refit with full selection reduces to a plain zero-inflated fit") {
    // floor on the loadings so every gene is unambiguously informative
    auto x = grouped_counts(24, 10, 1.0, 1.0, 424, 8.0, 0.7);
    FitConfig cfg{.k = 2,
                  .family = ModelFamily::sparse_zi_gap,
                  .max_sweeps = 60,
                  .rel_tol = 1e-5,
                  .n_restarts = 2,
                  .tau = 0.5,
                  .seed = 31};
    auto two_stage = fit_sparse_reestimate(x, cfg);
    REQUIRE(two_stage.reestimated);
    REQUIRE(two_stage.model.selected == std::vector<std::uint8_t>(10, 1));

    FitConfig cfg2 = cfg;
    cfg2.family = ModelFamily::zi_gap;
    cfg2.seed = derive_seed(cfg.seed, SeedStream::reestimate);
    auto direct = fit(x, cfg2);
    CHECK(two_stage.model.u_mean == direct.model.u_mean);
    CHECK(two_stage.model.v_mean == direct.model.v_mean);
    CHECK(two_stage.report.final_elbo == direct.report.final_elbo);
    CHECK(two_stage.report.elbo_trace == direct.report.elbo_trace);
}

TEST_CASE("sparse refit with empty selection returns the first stage with a warning") {
    // constant genes carry no variance signal, so nothing gets selected
    auto x = counts_from({{3, 2, 4}, {3, 2, 4}, {3, 2, 4}, {3, 2, 4}});
    FitConfig cfg{.k = 2,
                  .family = ModelFamily::sparse_zi_gap,
                  .max_sweeps = 15,
                  .rel_tol = 1e-5,
                  .n_restarts = 1,
                  .tau = 0.5,
                  .seed = 7};
    auto res = fit_sparse_reestimate(x, cfg);
    CHECK(!res.reestimated);
    CHECK(res.model.selected == std::vector<std::uint8_t>(3, 0));
    bool warned = false;
    for (const auto& w : res.report.warnings)
        warned = warned || w.find("no genes selected") != std::string::npos;
    CHECK(warned);
    // the uniform-allocation fallback marks every gene
    for (std::size_t j = 0; j < 3; ++j)
        CHECK((res.report.gene_flags[j] & gene_flag_fallback) != 0);
}

TEST_CASE("sparse refit requires the sparse family") {
    auto x = counts_from({{1, 2}, {3, 4}});
    FitConfig cfg{.k = 1, .family = ModelFamily::zi_gap};
    CHECK_THROWS_AS(fit_sparse_reestimate(x, cfg), input_error);
}

TEST_CASE("sparse refit zero-fills unselected loadings rows") {
    auto x = grouped_counts(30, 20, 0.4, 1.0, 808);  // 60% noisy genes
    FitConfig cfg{.k = 2,
                  .family = ModelFamily::sparse_zi_gap,
                  .max_sweeps = 60,
                  .rel_tol = 1e-5,
                  .n_restarts = 2,
                  .tau = 0.5,
                  .seed = 17};
    auto res = fit_sparse_reestimate(x, cfg);
    if (!res.reestimated) return;  // nothing selected on this draw; covered elsewhere
    for (std::size_t j = 0; j < 20; ++j) {
        if (res.model.selected[j]) continue;
        for (std::size_t t = 0; t < 2; ++t) {
            CHECK(res.model.v_mean(j, t) == 0.0);
            CHECK(res.model.v_log(j, t) == 0.0);
        }
    }
}

TEST_CASE("sparse refit raises the explained deviance on the selected genes") {
    int wins = 0, tried = 0;
    for (unsigned seed = 0; seed < 10; ++seed) {
        // 60% noisy genes plus dropout, with intensities strong enough that the
        // selection-weighted first-stage loadings are measurably biased low
        auto x = grouped_counts(40, 30, 0.4, 0.7, 5000 + seed, 50.0, 0.5);
        FitConfig cfg{.k = 2,
                      .family = ModelFamily::sparse_zi_gap,
                      .max_sweeps = 100,
                      .rel_tol = 1e-5,
                      .n_restarts = 2,
                      .tau = 0.5,
                      .seed = seed};
        auto stage1 = fit(x, cfg);
        auto two_stage = fit_sparse_reestimate(x, cfg);
        if (!two_stage.reestimated) continue;
        ++tried;

        auto x_sub = x.select_columns(stage1.model.selected);
        Mat v_sub(x_sub.n_cols(), 2);
        std::size_t sj = 0;
        for (std::size_t j = 0; j < 30; ++j) {
            if (!stage1.model.selected[j]) continue;
            for (std::size_t t = 0; t < 2; ++t) v_sub(sj, t) = stage1.model.v_mean(j, t);
            ++sj;
        }
        const double dev1 = explained_deviance(x_sub, reconstruct(stage1.model.u_mean, v_sub));
        REQUIRE(two_stage.report.pct_dev_defined);
        if (two_stage.report.pct_dev >= dev1) ++wins;
    }
    REQUIRE(tried >= 8);
    CHECK(wins * 10 >= tried * 8);  // at least 8 of 10
}
