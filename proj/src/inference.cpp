#include "pcmf/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <thread>

#include "pcmf/kernels.hpp"
#include "pcmf/special.hpp"

namespace pcmf {

namespace {

constexpr double prob_clamp = 1e-12;
constexpr double shape_cap = 1e6;
constexpr double rate_lo = 1e-8, rate_hi = 1e8;

double clamped_prob(double p) { return std::clamp(p, prob_clamp, 1.0 - prob_clamp); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

void refresh_moments(const Mat& shape, const Mat& rate, Mat& mean, Mat& mean_log,
                     double& ent_sum) {
    const double* s = shape.data();
    const double* r = rate.data();
    double* m = mean.data();
    double* ml = mean_log.data();
    double ent = 0.0;
    for (std::size_t t = 0; t < shape.size(); ++t) {
        const double lr = std::log(r[t]);
        const double psi = digamma(s[t]);
        m[t] = s[t] / r[t];
        ml[t] = psi - lr;
        ent += s[t] - lr + log_gamma(s[t]) + (1.0 - s[t]) * psi;
    }
    ent_sum = ent;
}

// selection-weighted loadings W = p_s .* vp_hat (sparse family), else vp_hat
const Mat& weighted_loadings(const VariationalState& st, Mat& scratch) {
    if (!sparse_loadings(st.family)) return st.vp_hat;
    scratch = Mat(st.m, st.k);
    const double* ps = st.p_s.data();
    const double* vp = st.vp_hat.data();
    double* w = scratch.data();
    for (std::size_t t = 0; t < scratch.size(); ++t) w[t] = ps[t] * vp[t];
    return scratch;
}

}  // namespace

void FitConfig::validate() const {
    require_input(k >= 1, "k must be >= 1");
    require_input(max_sweeps >= 1, "max_sweeps must be >= 1");
    require_input(rel_tol > 0.0, "rel_tol must be > 0");
    require_input(n_restarts >= 1, "n_restarts must be >= 1");
    require_input(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
    require_input(fix_scale >= -1 && fix_scale <= 1, "fix_scale must be -1 (auto), 0, or 1");
}

bool FitConfig::scale_fixed(std::size_t n, std::size_t m) const {
    return fix_scale == 1 || (fix_scale == -1 && n == m);
}

void VariationalState::refresh_u_moments() {
    refresh_moments(a_shape, a_rate, u_hat, log_u, gamma_ent_u);
}
void VariationalState::refresh_v_moments() {
    refresh_moments(b_shape, b_rate, vp_hat, log_vp, gamma_ent_v);
}

std::vector<double> gene_dropout_scores(const CountMatrix& x) {
    const std::size_t n = x.n_rows(), m = x.n_cols();
    std::vector<double> sum(m, 0.0), sumsq(m, 0.0), count(m, 0.0), score(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            sum[j] += row[j];
            sumsq[j] += row[j] * row[j];
            if (row[j] != 0.0) count[j] += 1.0;
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (count[j] == 0.0) continue;
        const double mean_all = sum[j] / static_cast<double>(n);
        const double var =
            std::max(sumsq[j] / static_cast<double>(n) - mean_all * mean_all, 0.0);
        const double mean_nz = sum[j] / count[j];
        score[j] = 1.0 - std::exp(-std::sqrt(var) / mean_nz);
    }
    return score;
}

VariationalState init_state(const CountMatrix& x, const CellData& cd, const FitConfig& cfg,
                            Rng& rng, HyperParams& hyper) {
    const std::size_t n = cd.n, m = cd.m, k = cfg.k;
    VariationalState st;
    st.family = cfg.family;
    st.tau = cfg.tau;
    st.n = n;
    st.m = m;
    st.k = k;
    st.a_shape = Mat(n, k);
    st.a_rate = Mat(n, k, 1.0);
    st.u_hat = Mat(n, k);
    st.log_u = Mat(n, k);
    st.b_shape = Mat(m, k);
    st.b_rate = Mat(m, k, 1.0);
    st.vp_hat = Mat(m, k);
    st.log_vp = Mat(m, k);
    st.resp = Mat(cd.nnz, k);
    st.cell_entropy.assign(cd.nnz, 0.0);
    st.gene_flags.assign(m, 0);

    // Gamma seeds with unit variational rates, scaled so the initial
    // reconstruction matches the grand mean of the counts on average.
    const double mean_x = cd.total / (static_cast<double>(n) * static_cast<double>(m));
    const double scale = std::sqrt(std::max(mean_x, 1e-12) / static_cast<double>(k));
    std::gamma_distribution<double> seed_draw(1.0, scale);
    for (std::size_t t = 0; t < st.a_shape.size(); ++t)
        st.a_shape.data()[t] = std::max(seed_draw(rng), 1e-12);
    for (std::size_t t = 0; t < st.b_shape.size(); ++t)
        st.b_shape.data()[t] = std::max(seed_draw(rng), 1e-12);
    st.refresh_u_moments();
    st.refresh_v_moments();

    for (std::size_t j = 0; j < m; ++j)
        if (cd.nnz_per_col[j] == 0.0) st.gene_flags[j] |= gene_flag_all_zero;

    if (zero_inflated(cfg.family)) {
        // keep probability = observed expressed fraction of the gene,
        // overridden to 1 wherever a count was observed
        st.p_d = Mat(n, m);
        std::vector<double> frac(m);
        for (std::size_t j = 0; j < m; ++j) frac[j] = cd.nnz_per_col[j] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double* row = st.p_d.row(i);
            for (std::size_t j = 0; j < m; ++j) row[j] = frac[j];
            for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c) row[cd.col[c]] = 1.0;
        }
    }

    if (sparse_loadings(cfg.family)) {
        st.p_s = Mat(m, k);
        st.s_til.assign(m * k, 0);
        const std::vector<double> p0 = gene_dropout_scores(x);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t t = 0; t < k; ++t) {
                st.p_s(j, t) = p0[j];
                st.s_til[j * k + t] = p0[j] > cfg.tau ? 1 : 0;
            }
    }

    // starting hyperparameters come from the maximization rules applied to
    // this state, with the scale free so fixed-scale runs pin these values
    hyper = HyperParams{};
    hyper.u_shape.assign(k, 1.0);
    hyper.u_rate.assign(k, 1.0);
    hyper.v_shape.assign(k, 1.0);
    hyper.v_rate.assign(k, 1.0);
    hyper.keep_prior.assign(m, 1.0);
    hyper.select_prior.assign(m, 1.0);
    m_step(st, cd, /*scale_fixed=*/false, hyper, nullptr);
    (void)x;
    return st;
}

void update_r(VariationalState& st, const CellData& cd) {
    const std::size_t k = st.k;
    const bool sparse = sparse_loadings(st.family);
    const double ninf = -std::numeric_limits<double>::infinity();

    // Factorize the shifted softmax: with eu = exp(logU - rowmax) and
    // ev = exp(logV' - genemax over selected factors), each cell needs only k
    // multiplies instead of k exponentials. Cells where the joint shift
    // underflows (the row and gene argmaxes disagree badly) are redone with
    // the exact per-cell shift below.
    Mat eu(cd.n, k);
    std::vector<double> mu(cd.n);
    for (std::size_t i = 0; i < cd.n; ++i) {
        const double* lu = st.log_u.row(i);
        double mx = lu[0];
        for (std::size_t t = 1; t < k; ++t) mx = std::max(mx, lu[t]);
        mu[i] = mx;
        double* e = eu.row(i);
        for (std::size_t t = 0; t < k; ++t) e[t] = lu[t] - mx;
        kernels::exp_apply(e, e, k);
    }

    Mat ev(cd.m, k);
    std::vector<double> mv(cd.m);
    std::vector<std::uint8_t> any_active(cd.m, 1);
    for (std::size_t j = 0; j < cd.m; ++j) {
        const double* lv = st.log_vp.row(j);
        double* e = ev.row(j);
        double mx = ninf;
        if (sparse) {
            const std::uint8_t* sel = st.s_til.data() + j * k;
            for (std::size_t t = 0; t < k; ++t)
                if (sel[t]) mx = std::max(mx, lv[t]);
            if (mx == ninf) {
                any_active[j] = 0;
                mv[j] = 0.0;
                continue;
            }
            // masked lanes pushed far enough below the max that the kernel
            // flushes them to exactly zero
            for (std::size_t t = 0; t < k; ++t) e[t] = sel[t] ? lv[t] - mx : -751.0;
        } else {
            for (std::size_t t = 0; t < k; ++t) mx = std::max(mx, lv[t]);
            for (std::size_t t = 0; t < k; ++t) e[t] = lv[t] - mx;
        }
        mv[j] = mx;
        kernels::exp_apply(e, e, k);
    }

    // entropies are assembled as base + log(normalizer), with the logs taken
    // in one vectorized pass at the end
    std::vector<double> zbuf(cd.nnz), ebase(cd.nnz);
    std::vector<double> tv(k), exact(k);
    for (std::size_t i = 0; i < cd.n; ++i) {
        const double* lu = st.log_u.row(i);
        const double* eui = eu.row(i);
        for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c) {
            const std::size_t j = cd.col[c];
            double* r = st.resp.row(c);

            if (!any_active[j]) {
                // no factor selected for this gene: uniform fallback
                const double u = 1.0 / static_cast<double>(k);
                for (std::size_t t = 0; t < k; ++t) r[t] = u;
                zbuf[c] = 1.0;
                ebase[c] = std::log(static_cast<double>(k));
                st.gene_flags[j] |= gene_flag_fallback;
                continue;
            }

            const double* lv = st.log_vp.row(j);
            const double* evj = ev.row(j);
            double z = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                r[t] = eui[t] * evj[t];
                z += r[t];
            }

            if (z >= 1e-280) {
                const double inv = 1.0 / z;
                double rt = 0.0;
                for (std::size_t t = 0; t < k; ++t) {
                    const double rv = r[t] * inv;
                    r[t] = rv;
                    rt += rv * (lu[t] + lv[t]);  // masked lanes hold an exact zero
                }
                zbuf[c] = z;
                ebase[c] = mu[i] + mv[j] - rt;
                continue;
            }

            // exact per-cell shift for the rare underflowing cell
            double mx = ninf;
            if (sparse) {
                const std::uint8_t* sel = st.s_til.data() + j * k;
                for (std::size_t t = 0; t < k; ++t) {
                    tv[t] = sel[t] ? lu[t] + lv[t] : ninf;
                    if (sel[t]) mx = std::max(mx, tv[t]);
                }
            } else {
                for (std::size_t t = 0; t < k; ++t) {
                    tv[t] = lu[t] + lv[t];
                    mx = std::max(mx, tv[t]);
                }
            }
            for (std::size_t t = 0; t < k; ++t) exact[t] = tv[t] == ninf ? -751.0 : tv[t] - mx;
            kernels::exp_apply(exact.data(), exact.data(), k);
            const double ze = kernels::sum(exact.data(), k);
            double rt = 0.0;
            for (std::size_t t = 0; t < k; ++t) {
                r[t] = exact[t] / ze;
                if (r[t] > 0.0) rt += r[t] * tv[t];
            }
            zbuf[c] = ze;
            ebase[c] = mx - rt;
        }
    }
    kernels::log_apply(zbuf.data(), zbuf.data(), cd.nnz);
    for (std::size_t c = 0; c < cd.nnz; ++c) st.cell_entropy[c] = ebase[c] + zbuf[c];
}

void update_a(VariationalState& st, const CellData& cd, const HyperParams& hyper) {
    const std::size_t k = st.k;
    const bool zi = zero_inflated(st.family);
    const bool sparse = sparse_loadings(st.family);
    Mat w_scratch;
    const Mat& w = weighted_loadings(st, w_scratch);

    std::vector<double> colsum(k, 0.0);
    if (!zi)
        for (std::size_t j = 0; j < st.m; ++j) kernels::axpy(1.0, w.row(j), colsum.data(), k);

    std::vector<double> acc(k);
    const double* gate = sparse ? st.p_s.data() : nullptr;
    for (std::size_t i = 0; i < st.n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        kernels::gather_rowsum(cd.x.data(), cd.col.data(), st.resp.data(), cd.row_ptr[i],
                               cd.row_ptr[i + 1], gate, k, acc.data());
        for (std::size_t t = 0; t < k; ++t) st.a_shape(i, t) = hyper.u_shape[t] + acc[t];

        if (!zi) {
            for (std::size_t t = 0; t < k; ++t) st.a_rate(i, t) = hyper.u_rate[t] + colsum[t];
        } else {
            kernels::weighted_colsum(st.p_d.row(i), w.data(), st.m, k, acc.data());
            for (std::size_t t = 0; t < k; ++t) st.a_rate(i, t) = hyper.u_rate[t] + acc[t];
        }
    }
    st.refresh_u_moments();
}

void update_b(VariationalState& st, const CellData& cd, const HyperParams& hyper) {
    const std::size_t k = st.k;
    const bool zi = zero_inflated(st.family);
    const bool sparse = sparse_loadings(st.family);

    // count contributions per (gene, factor), summed in ascending row order
    Mat zsum(st.m, k, 0.0);
    kernels::scatter_axpy(cd.x.data(), cd.col.data(), st.resp.data(), 0, cd.nnz, k, zsum.data());

    // sum_i keep_ij * u_hat_ik per (gene, factor)
    Mat usum(st.m, k, 0.0);
    if (!zi) {
        std::vector<double> colsum(k, 0.0);
        for (std::size_t i = 0; i < st.n; ++i)
            kernels::axpy(1.0, st.u_hat.row(i), colsum.data(), k);
        for (std::size_t j = 0; j < st.m; ++j)
            for (std::size_t t = 0; t < k; ++t) usum(j, t) = colsum[t];
    } else {
        for (std::size_t i = 0; i < st.n; ++i)
            kernels::rank1_update(st.p_d.row(i), st.u_hat.row(i), usum.data(), st.m, k);
    }

    for (std::size_t j = 0; j < st.m; ++j) {
        const double* ps = sparse ? st.p_s.row(j) : nullptr;
        for (std::size_t t = 0; t < k; ++t) {
            double zs = zsum(j, t), us = usum(j, t);
            if (sparse) {
                zs *= ps[t];  // selection weight sits outside the sums
                us *= ps[t];
            }
            st.b_shape(j, t) = hyper.v_shape[t] + zs;
            st.b_rate(j, t) = hyper.v_rate[t] + us;
        }
    }
    st.refresh_v_moments();
}

void update_pd(VariationalState& st, const CellData& cd, const HyperParams& hyper) {
    require_input(zero_inflated(st.family), "dropout update requires a zero-inflated family");
    const std::size_t k = st.k;
    Mat w_scratch;
    const Mat& w = weighted_loadings(st, w_scratch);

    std::vector<double> lpi(st.m);
    for (std::size_t j = 0; j < st.m; ++j) lpi[j] = logit(clamped_prob(hyper.keep_prior[j]));

    std::vector<double> logits(st.m);
    for (std::size_t i = 0; i < st.n; ++i) {
        kernels::row_dots(w.data(), st.u_hat.row(i), st.m, k, logits.data());
        for (std::size_t j = 0; j < st.m; ++j) logits[j] = lpi[j] - logits[j];
        kernels::logistic_apply(logits.data(), st.p_d.row(i), st.m);
        // observed counts cannot be dropouts
        for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c)
            st.p_d(i, cd.col[c]) = 1.0;
    }
}

void update_ps(VariationalState& st, const CellData& cd, const HyperParams& hyper) {
    require_input(sparse_loadings(st.family), "selection update requires the sparse family");
    const std::size_t k = st.k;

    // sum_i keep_ij * u_hat_ik, with the keep probabilities just updated
    Mat usum(st.m, k, 0.0);
    for (std::size_t i = 0; i < st.n; ++i)
        kernels::rank1_update(st.p_d.row(i), st.u_hat.row(i), usum.data(), st.m, k);

    // allocation statistics per (gene, factor): sum of x*r and of x*r*logU
    Mat zsum(st.m, k, 0.0), zlog(st.m, k, 0.0);
    for (std::size_t i = 0; i < cd.n; ++i)
        kernels::scatter_axpy2(cd.x.data(), cd.col.data(), st.resp.data(), cd.row_ptr[i],
                               cd.row_ptr[i + 1], st.log_u.row(i), k, zsum.data(), zlog.data());

    std::vector<double> logits(st.m * k);
    for (std::size_t j = 0; j < st.m; ++j) {
        const double lpi = logit(clamped_prob(hyper.select_prior[j]));
        for (std::size_t t = 0; t < k; ++t)
            logits[j * k + t] = lpi - st.vp_hat(j, t) * usum(j, t) + zlog(j, t) +
                                st.log_vp(j, t) * zsum(j, t);
    }
    kernels::logistic_apply(logits.data(), st.p_s.data(), st.m * k);
    for (std::size_t t = 0; t < st.p_s.size(); ++t)
        st.s_til[t] = st.p_s.data()[t] > st.tau ? 1 : 0;
}

namespace {

struct GammaSolve {
    double shape, rate;
    bool capped;
};

// Root of psi(shape) - log(shape) + d = 0 via safeguarded Newton in 1/shape,
// used when the alternating fixed point has not converged within its cap.
double solve_shape_newton(double d, double shape_start) {
    double u = 1.0 / std::clamp(shape_start, 1.0 / shape_cap, 1e12);
    auto g = [d](double uu) { return digamma(1.0 / uu) + std::log(uu) + d; };
    // bracket the root: g is strictly decreasing in u
    double ulo = u, uhi = u;
    double glo = g(ulo);
    for (int it = 0; it < 200 && glo <= 0.0; ++it) {
        ulo *= 0.5;
        glo = g(ulo);
    }
    double ghi = g(uhi);
    for (int it = 0; it < 200 && ghi >= 0.0; ++it) {
        uhi *= 2.0;
        ghi = g(uhi);
    }
    u = std::sqrt(ulo * uhi);
    for (int it = 0; it < 100; ++it) {
        const double s = 1.0 / u;
        const double gv = digamma(s) + std::log(u) + d;
        if (gv > 0.0)
            ulo = u;
        else
            uhi = u;
        const double dg = s * (1.0 - s * trigamma(s));  // dg/du < 0
        double next = u - gv / dg;
        if (!(next > ulo && next < uhi)) next = 0.5 * (ulo + uhi);
        if (std::fabs(next - u) <= 1e-13 * next) {
            u = next;
            break;
        }
        u = next;
    }
    return 1.0 / u;
}

GammaSolve solve_gamma_pair(double mean_u, double mean_log_u, double shape0, double rate0,
                            bool scale_fixed) {
    require_numeric(std::isfinite(mean_u) && std::isfinite(mean_log_u) && mean_u > 0.0,
                    "non-finite moments in hyperparameter update");
    if (scale_fixed) {
        double s = inv_digamma(std::log(rate0) + mean_log_u);
        if (s > shape_cap) return {shape_cap, rate0, true};
        return {s, rate0, false};
    }
    const double d = std::log(mean_u) - mean_log_u;  // >= 0, zero only for constant moments
    if (!(d > 1e-13)) return {shape_cap, shape_cap / mean_u, true};

    // alternating fixed point from the current shape
    double s = std::clamp(shape0, 1.0 / shape_cap, shape_cap);
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
        const double next = inv_digamma(std::log(s) - d);
        const bool done = std::fabs(next - s) <= 1e-10 * std::fabs(next);
        s = next;
        if (done) {
            converged = true;
            break;
        }
        if (s >= shape_cap) break;
    }
    if (!converged && s < shape_cap) s = solve_shape_newton(d, s);
    if (s > shape_cap) return {shape_cap, shape_cap / mean_u, true};
    return {s, s / mean_u, false};
}

}  // namespace

void m_step(const VariationalState& st, const CellData& cd, bool scale_fixed, HyperParams& hyper,
            std::vector<std::string>* warnings) {
    const std::size_t k = st.k;
    bool capped = false;

    for (std::size_t t = 0; t < k; ++t) {
        double mu = 0.0, mlog = 0.0;
        for (std::size_t i = 0; i < st.n; ++i) {
            mu += st.u_hat(i, t);
            mlog += st.log_u(i, t);
        }
        mu /= static_cast<double>(st.n);
        mlog /= static_cast<double>(st.n);
        const GammaSolve gs =
            solve_gamma_pair(mu, mlog, hyper.u_shape[t], hyper.u_rate[t], scale_fixed);
        hyper.u_shape[t] = gs.shape;
        hyper.u_rate[t] = gs.rate;
        capped |= gs.capped;

        double mv = 0.0, mvlog = 0.0;
        for (std::size_t j = 0; j < st.m; ++j) {
            mv += st.vp_hat(j, t);
            mvlog += st.log_vp(j, t);
        }
        mv /= static_cast<double>(st.m);
        mvlog /= static_cast<double>(st.m);
        const GammaSolve gv =
            solve_gamma_pair(mv, mvlog, hyper.v_shape[t], hyper.v_rate[t], scale_fixed);
        hyper.v_shape[t] = gv.shape;
        hyper.v_rate[t] = gv.rate;
        capped |= gv.capped;
    }

    if (zero_inflated(st.family)) {
        std::vector<double> colsum(st.m, 0.0);
        for (std::size_t i = 0; i < st.n; ++i)
            kernels::axpy(1.0, st.p_d.row(i), colsum.data(), st.m);
        for (std::size_t j = 0; j < st.m; ++j) {
            const double mu = colsum[j] / static_cast<double>(st.n);
            require_numeric(std::isfinite(mu), "non-finite moments in hyperparameter update");
            hyper.keep_prior[j] = mu;
        }
    }
    if (sparse_loadings(st.family)) {
        for (std::size_t j = 0; j < st.m; ++j) {
            double mu = 0.0;
            for (std::size_t t = 0; t < k; ++t) mu += st.p_s(j, t);
            mu /= static_cast<double>(k);
            require_numeric(std::isfinite(mu), "non-finite moments in hyperparameter update");
            hyper.select_prior[j] = mu;
        }
    }

    if (capped && warnings != nullptr)
        warnings->push_back("gamma shape capped at 1e6 (near-degenerate moments)");
    (void)cd;
}

double elbo(const VariationalState& st, const HyperParams& hyper, const CellData& cd) {
    const std::size_t k = st.k;
    const bool zi = zero_inflated(st.family);
    const bool sparse = sparse_loadings(st.family);

    // allocation: sum over nonzero cells of x * (sum_k S r (logU + logV') + entropy)
    double alloc = 0.0;
    for (std::size_t i = 0; i < cd.n; ++i) {
        const double* lu = st.log_u.row(i);
        for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c) {
            const std::size_t j = cd.col[c];
            const double* lv = st.log_vp.row(j);
            const double* r = st.resp.row(c);
            double srt = 0.0;
            if (sparse) {
                const double* ps = st.p_s.row(j);
                for (std::size_t t = 0; t < k; ++t) srt += r[t] * ps[t] * (lu[t] + lv[t]);
            } else {
                for (std::size_t t = 0; t < k; ++t) srt += r[t] * (lu[t] + lv[t]);
            }
            alloc += cd.x[c] * (srt + st.cell_entropy[c]);
        }
    }
    alloc -= cd.sum_log_fact;
    require_numeric(std::isfinite(alloc), "non-finite elbo term: allocation");

    // expected total rate: sum_ij keep_ij * sum_k S U V'
    Mat w_scratch;
    const Mat& w = weighted_loadings(st, w_scratch);
    double rate = 0.0;
    if (!zi) {
        std::vector<double> cu(k, 0.0), cw(k, 0.0);
        for (std::size_t i = 0; i < st.n; ++i) kernels::axpy(1.0, st.u_hat.row(i), cu.data(), k);
        for (std::size_t j = 0; j < st.m; ++j) kernels::axpy(1.0, w.row(j), cw.data(), k);
        rate = kernels::dot(cu.data(), cw.data(), k);
    } else {
        std::vector<double> wc(k);
        for (std::size_t i = 0; i < st.n; ++i) {
            kernels::weighted_colsum(st.p_d.row(i), w.data(), st.m, k, wc.data());
            rate += kernels::dot(st.u_hat.row(i), wc.data(), k);
        }
    }
    require_numeric(std::isfinite(rate), "non-finite elbo term: rate");

    // dropout prior and entropy
    double dropout = 0.0;
    if (zi) {
        std::vector<double> lp(st.m), l1p(st.m), zcol(st.m, 0.0);
        for (std::size_t j = 0; j < st.m; ++j) {
            const double pi = clamped_prob(hyper.keep_prior[j]);
            lp[j] = std::log(pi);
            l1p[j] = std::log1p(-pi);
        }
        // per row: clamp the whole keep row for the entropy logs, then reset the
        // nonzero cells to one so they contribute nothing (log 1 = 0 exactly)
        constexpr double tiny = std::numeric_limits<double>::min();
        std::vector<double> bp(st.m), bq(st.m), lgp(st.m), lgq(st.m);
        for (std::size_t i = 0; i < st.n; ++i) {
            const double* pd = st.p_d.row(i);
            for (std::size_t j = 0; j < st.m; ++j) {
                zcol[j] += pd[j];
                bp[j] = std::max(pd[j], tiny);
                bq[j] = std::max(1.0 - pd[j], tiny);
            }
            for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c) {
                const std::size_t j = cd.col[c];
                zcol[j] -= pd[j];
                bp[j] = 1.0;
                bq[j] = 1.0;
            }
            kernels::log_apply(bp.data(), lgp.data(), st.m);
            kernels::log_apply(bq.data(), lgq.data(), st.m);
            dropout -= kernels::dot(bp.data(), lgp.data(), st.m) +
                       kernels::dot(bq.data(), lgq.data(), st.m);
        }
        for (std::size_t j = 0; j < st.m; ++j) {
            const double zeros = static_cast<double>(st.n) - cd.nnz_per_col[j];
            dropout += (cd.nnz_per_col[j] + zcol[j]) * lp[j] + (zeros - zcol[j]) * l1p[j];
        }
        require_numeric(std::isfinite(dropout), "non-finite elbo term: dropout");
    }

    // Gamma prior cross-entropies plus the cached variational Gamma entropies
    std::vector<double> slog(k, 0.0), smean(k, 0.0);
    for (std::size_t i = 0; i < st.n; ++i) {
        kernels::axpy(1.0, st.log_u.row(i), slog.data(), k);
        kernels::axpy(1.0, st.u_hat.row(i), smean.data(), k);
    }
    double gamma_u = st.gamma_ent_u;
    for (std::size_t t = 0; t < k; ++t) {
        const double a1 = hyper.u_shape[t], a2 = hyper.u_rate[t];
        const double base = a1 * std::log(a2) - log_gamma(a1);
        gamma_u += static_cast<double>(st.n) * base + (a1 - 1.0) * slog[t] - a2 * smean[t];
    }
    require_numeric(std::isfinite(gamma_u), "non-finite elbo term: gamma-u");

    std::fill(slog.begin(), slog.end(), 0.0);
    std::fill(smean.begin(), smean.end(), 0.0);
    for (std::size_t j = 0; j < st.m; ++j) {
        kernels::axpy(1.0, st.log_vp.row(j), slog.data(), k);
        kernels::axpy(1.0, st.vp_hat.row(j), smean.data(), k);
    }
    double gamma_v = st.gamma_ent_v;
    for (std::size_t t = 0; t < k; ++t) {
        const double b1 = hyper.v_shape[t], b2 = hyper.v_rate[t];
        const double base = b1 * std::log(b2) - log_gamma(b1);
        gamma_v += static_cast<double>(st.m) * base + (b1 - 1.0) * slog[t] - b2 * smean[t];
    }
    require_numeric(std::isfinite(gamma_v), "non-finite elbo term: gamma-v");

    // selection prior and entropy, with both entropy logs taken in batched passes
    double select = 0.0;
    if (sparse) {
        constexpr double tiny = std::numeric_limits<double>::min();
        const std::size_t sz = st.m * k;
        const double* ps = st.p_s.data();
        std::vector<double> bp(sz), bq(sz), lg(sz);
        for (std::size_t t = 0; t < sz; ++t) {
            bp[t] = std::max(ps[t], tiny);
            bq[t] = std::max(1.0 - ps[t], tiny);
        }
        kernels::log_apply(bp.data(), lg.data(), sz);
        select -= kernels::dot(bp.data(), lg.data(), sz);
        kernels::log_apply(bq.data(), lg.data(), sz);
        select -= kernels::dot(bq.data(), lg.data(), sz);
        for (std::size_t j = 0; j < st.m; ++j) {
            const double pi = clamped_prob(hyper.select_prior[j]);
            const double rs = kernels::sum(ps + j * k, k);
            select += rs * std::log(pi) + (static_cast<double>(k) - rs) * std::log1p(-pi);
        }
        require_numeric(std::isfinite(select), "non-finite elbo term: selection");
    }

    return alloc - rate + dropout + gamma_u + gamma_v + select;
}

namespace {

Mat effective_loadings(const VariationalState& st) {
    if (!sparse_loadings(st.family)) return st.vp_hat;
    Mat v(st.m, st.k);
    for (std::size_t t = 0; t < v.size(); ++t) v.data()[t] = st.p_s.data()[t] * st.vp_hat.data()[t];
    return v;
}

void check_rates_stable(const VariationalState& st) {
    const auto bad = [](const Mat& r) {
        for (std::size_t t = 0; t < r.size(); ++t)
            if (!(r.data()[t] >= rate_lo && r.data()[t] <= rate_hi)) return true;
        return false;
    };
    require_numeric(!bad(st.a_rate) && !bad(st.b_rate),
                    "variational rate outside stable range; restart diverged");
}

struct RestartOutcome {
    VariationalState state;
    HyperParams hyper;
    std::vector<double> trace;
    std::size_t sweeps = 0;
    bool converged = false;
    double max_drop = 0.0;
    std::vector<std::string> warnings;
};

RestartOutcome run_restart(const CountMatrix& x, const CellData& cd, const FitConfig& cfg,
                           std::size_t restart) {
    RestartOutcome out;
    Rng rng(derive_seed(cfg.seed, SeedStream::restart, restart));
    out.state = init_state(x, cd, cfg, rng, out.hyper);
    const bool fixed = cfg.scale_fixed(cd.n, cd.m);

    Mat prev_u = out.state.u_hat;
    Mat prev_v = effective_loadings(out.state);

    for (std::size_t sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
        update_r(out.state, cd);
        update_a(out.state, cd, out.hyper);
        update_b(out.state, cd, out.hyper);
        if (zero_inflated(cfg.family)) update_pd(out.state, cd, out.hyper);
        if (sparse_loadings(cfg.family)) update_ps(out.state, cd, out.hyper);
        m_step(out.state, cd, fixed, out.hyper, &out.warnings);
        check_rates_stable(out.state);

        const double e = elbo(out.state, out.hyper, cd);
        if (!out.trace.empty() && e < out.trace.back())
            out.max_drop = std::max(out.max_drop, out.trace.back() - e);
        out.trace.push_back(e);
        out.sweeps = sweep;

        const Mat cur_v = effective_loadings(out.state);
        const double gap = std::max(relative_frobenius_gap(out.state.u_hat, prev_u),
                                    relative_frobenius_gap(cur_v, prev_v));
        if (gap < cfg.rel_tol) {
            out.converged = true;
            break;
        }
        prev_u = out.state.u_hat;
        prev_v = cur_v;
    }
    return out;
}

}  // namespace

FitResult fit(const CountMatrix& x, const FitConfig& cfg) {
    cfg.validate();
    require_input(!x.all_zero(), "degenerate all-zero input");
    const CellData cd = CellData::build(x);

    // Restarts are mutually independent (each seeded by its own index and
    // owning its state), so they run concurrently; the reduction below walks
    // them in index order, making the result identical for any thread count.
    const std::size_t n_rs = cfg.n_restarts;
    std::vector<std::unique_ptr<RestartOutcome>> outcomes(n_rs);
    std::vector<std::string> aborts(n_rs);
    std::vector<std::exception_ptr> fatal(n_rs);

    auto run_one = [&](std::size_t rs) {
        try {
            outcomes[rs] = std::make_unique<RestartOutcome>(run_restart(x, cd, cfg, rs));
        } catch (const numeric_error& err) {
            aborts[rs] = err.what();
        } catch (...) {
            fatal[rs] = std::current_exception();
        }
    };

    if (n_rs == 1) {
        run_one(0);
    } else {
        const unsigned hw = std::thread::hardware_concurrency();
        const std::size_t workers = std::min(n_rs, static_cast<std::size_t>(std::max(hw, 1u)));
        std::atomic<std::size_t> next{0};
        auto drain = [&] {
            for (std::size_t rs = next.fetch_add(1); rs < n_rs; rs = next.fetch_add(1))
                run_one(rs);
        };
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t wk = 0; wk < workers; ++wk) pool.emplace_back(drain);
        for (auto& th : pool) th.join();
    }

    for (std::size_t rs = 0; rs < n_rs; ++rs)
        if (fatal[rs]) std::rethrow_exception(fatal[rs]);

    std::size_t best_index = n_rs, failed = 0;
    std::vector<std::string> failure_notes;
    for (std::size_t rs = 0; rs < n_rs; ++rs) {
        if (outcomes[rs]) {
            if (best_index == n_rs ||
                outcomes[rs]->trace.back() > outcomes[best_index]->trace.back())
                best_index = rs;
        } else {
            ++failed;
            failure_notes.push_back("restart " + std::to_string(rs) + " aborted: " + aborts[rs]);
        }
    }
    require_numeric(best_index < n_rs, "all restarts diverged");
    RestartOutcome best = std::move(*outcomes[best_index]);

    FitResult res;
    const VariationalState& st = best.state;
    res.model.family = cfg.family;
    res.model.tau = cfg.tau;
    res.model.u_mean = st.u_hat;
    res.model.u_log = st.log_u;
    res.model.hyper = best.hyper;
    if (sparse_loadings(cfg.family)) {
        res.model.v_mean = effective_loadings(st);
        res.model.v_log = Mat(st.m, st.k);
        for (std::size_t t = 0; t < res.model.v_log.size(); ++t)
            res.model.v_log.data()[t] = std::log(st.p_s.data()[t]) + st.log_vp.data()[t];
        res.model.selected.assign(st.m, 0);
        for (std::size_t j = 0; j < st.m; ++j)
            for (std::size_t t = 0; t < st.k; ++t)
                if (st.selected(j, t)) res.model.selected[j] = 1;
    } else {
        res.model.v_mean = st.vp_hat;
        res.model.v_log = st.log_vp;
        res.model.selected.assign(st.m, 1);
    }

    res.report.elbo_trace = best.trace;
    res.report.final_elbo = best.trace.back();
    res.report.sweeps = best.sweeps;
    res.report.converged = best.converged;
    res.report.restart_index = best_index;
    res.report.restarts_failed = failed;
    res.report.max_elbo_drop = best.max_drop;
    res.report.selected = res.model.selected;
    res.report.gene_flags = st.gene_flags;
    res.report.warnings = std::move(best.warnings);
    for (auto& note : failure_notes) res.report.warnings.push_back(std::move(note));

    try {
        // predicted raw-count mean; zero-inflated families include the
        // expected dropout gate (keep probability is 1 at observed counts)
        Mat lambda = reconstruct(res.model.u_mean, res.model.v_mean);
        if (zero_inflated(cfg.family)) {
            const double* pd = st.p_d.data();
            for (std::size_t t = 0; t < lambda.size(); ++t) lambda.data()[t] *= pd[t];
        }
        res.report.pct_dev = explained_deviance(x, lambda);
        res.report.pct_dev_defined = true;
        res.report.pct_dev_in_range = res.report.pct_dev >= 0.0 && res.report.pct_dev <= 1.0;
        if (!res.report.pct_dev_in_range)
            res.report.warnings.push_back("explained deviance outside [0, 1]");
    } catch (const input_error& err) {
        res.report.pct_dev = std::numeric_limits<double>::quiet_NaN();
        res.report.pct_dev_defined = false;
        res.report.pct_dev_in_range = false;
        res.report.warnings.push_back(std::string("explained deviance undefined: ") + err.what());
    }
    return res;
}

SparseFitResult fit_sparse_reestimate(const CountMatrix& x, const FitConfig& cfg) {
    require_input(cfg.family == ModelFamily::sparse_zi_gap,
                  "re-estimation requires the sparse family");
    SparseFitResult out;
    FitResult stage1 = fit(x, cfg);
    out.stage1_report = stage1.report;

    const std::vector<std::uint8_t>& selected = stage1.model.selected;
    std::size_t n_selected = 0;
    for (auto s : selected) n_selected += s;

    if (n_selected == 0) {
        out.model = std::move(stage1.model);
        out.report = std::move(stage1.report);
        out.report.warnings.push_back("no genes selected; returning first-stage model");
        out.reestimated = false;
        return out;
    }

    CountMatrix x_sub = x.select_columns(selected);
    FitConfig cfg2 = cfg;
    cfg2.family = ModelFamily::zi_gap;
    cfg2.seed = derive_seed(cfg.seed, SeedStream::reestimate);
    FitResult stage2 = fit(x_sub, cfg2);

    // expand the refit loadings back to the full gene set
    out.model.family = cfg.family;
    out.model.tau = cfg.tau;
    out.model.u_mean = std::move(stage2.model.u_mean);
    out.model.u_log = std::move(stage2.model.u_log);
    out.model.v_mean = Mat(x.n_cols(), cfg.k, 0.0);
    out.model.v_log = Mat(x.n_cols(), cfg.k, 0.0);
    out.model.selected = selected;
    const std::vector<double> sub_keep = std::move(stage2.model.hyper.keep_prior);
    out.model.hyper = std::move(stage2.model.hyper);
    out.model.hyper.keep_prior.assign(x.n_cols(), 0.0);
    out.model.hyper.select_prior.assign(x.n_cols(), 1.0);
    std::size_t sub = 0;
    for (std::size_t j = 0; j < x.n_cols(); ++j) {
        if (!selected[j]) continue;
        for (std::size_t t = 0; t < cfg.k; ++t) {
            out.model.v_mean(j, t) = stage2.model.v_mean(sub, t);
            out.model.v_log(j, t) = stage2.model.v_log(sub, t);
        }
        out.model.hyper.keep_prior[j] = sub_keep[sub];
        ++sub;
    }

    out.report = std::move(stage2.report);
    out.report.selected = selected;  // keep the full-gene selection view
    // map the refit's per-gene flags back to full gene indices
    std::vector<std::uint8_t> flags(x.n_cols(), 0);
    sub = 0;
    for (std::size_t j = 0; j < x.n_cols(); ++j) {
        flags[j] = out.stage1_report.gene_flags[j];
        if (selected[j]) {
            if (sub < stage2.report.gene_flags.size()) flags[j] |= stage2.report.gene_flags[sub];
            ++sub;
        }
    }
    out.report.gene_flags = std::move(flags);
    out.reestimated = true;
    return out;
}

}  // namespace pcmf
