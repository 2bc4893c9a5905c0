#include "pcmf/baselines.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>

#include "pcmf/kernels.hpp"
#include "pcmf/rng.hpp"

namespace pcmf {

const char* baseline_method_name(BaselineMethod m) {
    return m == BaselineMethod::poisson_nmf ? "poisson-nmf" : "pca";
}

SvdResult truncated_svd(const Mat& x, std::size_t k) {
    require_input(x.rows() > 0 && x.cols() > 0, "empty matrix");
    require_input(k >= 1 && k <= std::min(x.rows(), x.cols()),
                  "component count must lie in [1, min(n, m)]");

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        x.data(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const auto& eu = svd.matrixU();
    const auto& ev = svd.matrixV();

    SvdResult out;
    out.scores = Mat(x.rows(), k);
    out.loadings = Mat(x.cols(), k);
    out.singular_values.assign(sv.data(), sv.data() + sv.size());

    for (std::size_t t = 0; t < k; ++t) {
        // fix the component sign: largest-magnitude loading is positive
        Eigen::Index arg = 0;
        ev.col(static_cast<Eigen::Index>(t)).cwiseAbs().maxCoeff(&arg);
        const double sign = ev(arg, static_cast<Eigen::Index>(t)) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < x.rows(); ++i)
            out.scores(i, t) = sign * eu(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) *
                               sv(static_cast<Eigen::Index>(t));
        for (std::size_t j = 0; j < x.cols(); ++j)
            out.loadings(j, t) = sign * ev(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t));
    }
    return out;
}

namespace {

// lam_c = dot(U row i, V row j) for every nonzero cell, CSR order
void rates_at_nonzeros(const CellData& cd, const Mat& u, const Mat& v, std::vector<double>& lam) {
    const std::size_t k = u.cols();
    for (std::size_t i = 0; i < cd.n; ++i) {
        const double* ui = u.row(i);
        for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c)
            lam[c] = kernels::dot(ui, v.row(cd.col[c]), k);
    }
}

std::vector<double> column_sums(const Mat& a) {
    std::vector<double> s(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        for (std::size_t t = 0; t < a.cols(); ++t) s[t] += r[t];
    }
    return s;
}

// generalized KL via the nonzero cells plus the closed-form total rate
double kl_objective(const CellData& cd, const std::vector<double>& lam,
                    const std::vector<double>& usum, const std::vector<double>& vsum) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cd.nnz; ++c) {
        const double l = std::max(lam[c], kernels::rate_floor);
        acc += cd.x[c] * std::log(cd.x[c] / l) - cd.x[c];
    }
    for (std::size_t t = 0; t < usum.size(); ++t) acc += usum[t] * vsum[t];
    return acc;
}

}  // namespace

BaselineModel poisson_nmf(const CountMatrix& x, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters, double tol, const FactorPair* warm_start) {
    require_input(k >= 1, "component count must be >= 1");
    require_input(!x.all_zero(), "degenerate all-zero input");
    const CellData cd = CellData::build(x);
    const std::size_t n = cd.n, m = cd.m;

    BaselineModel out;
    out.method = BaselineMethod::poisson_nmf;
    if (warm_start != nullptr) {
        require_input(warm_start->u.rows() == n && warm_start->v.rows() == m &&
                          warm_start->u.cols() == k && warm_start->v.cols() == k,
                      "warm start shape does not match");
        out.u = warm_start->u;
        out.v = warm_start->v;
    } else {
        // entries ~ uniform(0.5, 1.5), scaled so mean(U V^T) matches mean(X)
        Rng rng(derive_seed(seed, SeedStream::baseline));
        std::uniform_real_distribution<double> unif(0.5, 1.5);
        const double mean_x = cd.total / (static_cast<double>(n) * static_cast<double>(m));
        const double scale = std::sqrt(std::max(mean_x, 1e-12) / static_cast<double>(k));
        out.u = Mat(n, k);
        out.v = Mat(m, k);
        for (std::size_t t = 0; t < out.u.size(); ++t) out.u.data()[t] = scale * unif(rng);
        for (std::size_t t = 0; t < out.v.size(); ++t) out.v.data()[t] = scale * unif(rng);
    }

    std::vector<double> lam(cd.nnz), ratio(cd.nnz), num(k);
    double prev_obj = std::numeric_limits<double>::infinity();

    for (std::size_t it = 0; it <= max_iters; ++it) {
        rates_at_nonzeros(cd, out.u, out.v, lam);
        const std::vector<double> usum = column_sums(out.u);
        const std::vector<double> vsum = column_sums(out.v);
        const double obj = kl_objective(cd, lam, usum, vsum);
        out.objective_trace.push_back(obj);
        if (it > 0 && std::fabs(prev_obj - obj) <= tol * std::max(1.0, std::fabs(prev_obj))) {
            out.converged = true;
            break;
        }
        prev_obj = obj;
        if (it == max_iters) break;
        out.iterations = it + 1;

        // U_ik *= (sum_j V_jk x_ij / lam_ij) / (sum_j V_jk)
        for (std::size_t c = 0; c < cd.nnz; ++c)
            ratio[c] = cd.x[c] / std::max(lam[c], kernels::rate_floor);
        for (std::size_t i = 0; i < n; ++i) {
            std::fill(num.begin(), num.end(), 0.0);
            for (std::size_t c = cd.row_ptr[i]; c < cd.row_ptr[i + 1]; ++c)
                kernels::axpy(ratio[c], out.v.row(cd.col[c]), num.data(), k);
            double* ui = out.u.row(i);
            for (std::size_t t = 0; t < k; ++t) ui[t] *= num[t] / std::max(vsum[t], 1e-300);
        }

        // V_jk *= (sum_i U_ik x_ij / lam_ij) / (sum_i U_ik), with rates
        // refreshed after the U half-step (required for monotonicity)
        rates_at_nonzeros(cd, out.u, out.v, lam);
        for (std::size_t c = 0; c < cd.nnz; ++c)
            ratio[c] = cd.x[c] / std::max(lam[c], kernels::rate_floor);
        const std::vector<double> usum2 = column_sums(out.u);
        for (std::size_t j = 0; j < m; ++j) {
            std::fill(num.begin(), num.end(), 0.0);
            for (std::size_t p = cd.col_ptr[j]; p < cd.col_ptr[j + 1]; ++p)
                kernels::axpy(ratio[cd.cell_of[p]], out.u.row(cd.row_of[p]), num.data(), k);
            double* vj = out.v.row(j);
            for (std::size_t t = 0; t < k; ++t) vj[t] *= num[t] / std::max(usum2[t], 1e-300);
        }
    }
    return out;
}

BaselineModel pca_logcounts(const CountMatrix& x, std::size_t k) {
    require_input(k >= 1 && k <= std::min(x.n_rows(), x.n_cols()),
                  "component count must lie in [1, min(n, m)]");
    Mat y(x.n_rows(), x.n_cols());
    for (std::size_t i = 0; i < x.n_rows(); ++i) {
        const double* xr = x.row(i);
        double* yr = y.row(i);
        for (std::size_t j = 0; j < x.n_cols(); ++j) yr[j] = std::log1p(xr[j]);
    }
    for (std::size_t j = 0; j < y.cols(); ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) mu += y(i, j);
        mu /= static_cast<double>(y.rows());
        for (std::size_t i = 0; i < y.rows(); ++i) y(i, j) -= mu;
    }

    SvdResult svd = truncated_svd(y, k);
    BaselineModel out;
    out.method = BaselineMethod::pca;
    out.u = std::move(svd.scores);
    out.v = std::move(svd.loadings);
    out.singular_values = std::move(svd.singular_values);
    out.converged = true;
    try {
        out.explained_var = explained_variance_gaussian(y, k);
    } catch (const input_error&) {
        // K exceeds the numerical rank: the trailing singular values are
        // negligible, so compute the share directly
        double top = 0.0, all = 0.0;
        for (std::size_t t = 0; t < out.singular_values.size(); ++t) {
            const double s2 = out.singular_values[t] * out.singular_values[t];
            all += s2;
            if (t < k) top += s2;
        }
        out.explained_var = all > 0.0 ? top / all : 0.0;
    }
    return out;
}

}  // namespace pcmf
