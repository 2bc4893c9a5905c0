#include "pcmf/model.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pcmf/kernels.hpp"
#include "pcmf/special.hpp"

namespace pcmf {

const char* family_name(ModelFamily f) {
    switch (f) {
        case ModelFamily::gap: return "gap";
        case ModelFamily::zi_gap: return "zigap";
        default: return "spcmf";
    }
}

ModelFamily family_from_name(const std::string& name) {
    if (name == "gap") return ModelFamily::gap;
    if (name == "zigap") return ModelFamily::zi_gap;
    if (name == "spcmf") return ModelFamily::sparse_zi_gap;
    throw input_error("unknown model family: " + name);
}

void HyperParams::validate(std::size_t k, std::size_t m) const {
    require_input(u_shape.size() == k && u_rate.size() == k && v_shape.size() == k &&
                      v_rate.size() == k,
                  "hyperparameter vectors must have one entry per factor");
    for (std::size_t t = 0; t < k; ++t)
        require_input(u_shape[t] > 0 && u_rate[t] > 0 && v_shape[t] > 0 && v_rate[t] > 0,
                      "Gamma hyperparameters must be positive");
    require_input(keep_prior.size() == m && select_prior.size() == m,
                  "Bernoulli priors must have one entry per gene");
    for (std::size_t j = 0; j < m; ++j)
        require_input(keep_prior[j] >= 0 && keep_prior[j] <= 1 && select_prior[j] >= 0 &&
                          select_prior[j] <= 1,
                      "Bernoulli priors must lie in [0, 1]");
}

Mat reconstruct(const Mat& u, const Mat& v) {
    require_input(u.cols() == v.cols(), "factor matrices must share the number of columns");
    Mat lam(u.rows(), v.rows(), 0.0);
    const std::size_t k = u.cols();
    for (std::size_t i = 0; i < u.rows(); ++i) {
        const double* ui = u.row(i);
        double* li = lam.row(i);
        for (std::size_t j = 0; j < v.rows(); ++j) li[j] = kernels::dot(ui, v.row(j), k);
    }
    return lam;
}

namespace {

void check_pair(const CountMatrix& x, const Mat& lambda) {
    require_input(lambda.rows() == x.n_rows() && lambda.cols() == x.n_cols(),
                  "rate matrix shape does not match the count matrix");
    const double* p = lambda.data();
    for (std::size_t t = 0; t < lambda.size(); ++t)
        require_input(std::isfinite(p[t]) && p[t] >= 0.0, "rate entries must be finite and >= 0");
}

std::vector<double> column_means(const CountMatrix& x) {
    std::vector<double> mu(x.n_cols(), 0.0);
    for (std::size_t i = 0; i < x.n_rows(); ++i) {
        const double* row = x.row(i);
        for (std::size_t j = 0; j < x.n_cols(); ++j) mu[j] += row[j];
    }
    for (auto& v : mu) v /= static_cast<double>(x.n_rows());
    return mu;
}

}  // namespace

double poisson_loglik(const CountMatrix& x, const Mat& lambda) {
    check_pair(x, lambda);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.n_rows(); ++i)
        acc += kernels::xlogy_minus_y(x.row(i), lambda.row(i), x.n_cols());
    for (std::size_t i = 0; i < x.n_rows(); ++i) {
        const double* row = x.row(i);
        for (std::size_t j = 0; j < x.n_cols(); ++j)
            if (row[j] > 0.0) acc -= log_factorial(row[j]);
    }
    return acc;
}

double bregman_divergence(const CountMatrix& x, const Mat& lambda) {
    check_pair(x, lambda);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.n_rows(); ++i)
        acc += kernels::bregman_terms(x.row(i), lambda.row(i), x.n_cols());
    return acc;
}

double deviance(const CountMatrix& x, const Mat& lambda) {
    return 2.0 * bregman_divergence(x, lambda);
}

double explained_deviance(const CountMatrix& x, const Mat& lambda) {
    check_pair(x, lambda);
    const std::vector<double> mu = column_means(x);
    Mat null_rates(x.n_rows(), x.n_cols());
    for (std::size_t i = 0; i < x.n_rows(); ++i)
        for (std::size_t j = 0; j < x.n_cols(); ++j) null_rates(i, j) = mu[j];

    const double l_fit = poisson_loglik(x, lambda);
    const double l_null = poisson_loglik(x, null_rates);
    const double l_sat = poisson_loglik(x, x.dense());

    const double den = l_sat - l_null;
    if (den == 0.0 || std::fabs(den) <= 1e-12 * std::max(1.0, std::fabs(l_sat)))
        throw input_error("saturated equals null model");
    return (l_fit - l_null) / den;
}

double explained_variance_gaussian(const Mat& x_centered, std::size_t k) {
    require_input(x_centered.rows() > 0 && x_centered.cols() > 0, "empty matrix");
    double mean_norm2 = 0.0;
    for (std::size_t j = 0; j < x_centered.cols(); ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < x_centered.rows(); ++i) mu += x_centered(i, j);
        mu /= static_cast<double>(x_centered.rows());
        mean_norm2 += mu * mu;
    }
    require_input(std::sqrt(mean_norm2) <= 1e-8, "input must be column-centered");

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        x_centered.data(), static_cast<Eigen::Index>(x_centered.rows()),
        static_cast<Eigen::Index>(x_centered.cols()));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();

    const double tol = std::numeric_limits<double>::epsilon() * sv(0) *
                       static_cast<double>(std::max(x_centered.rows(), x_centered.cols()));
    std::size_t rank = 0;
    for (Eigen::Index t = 0; t < sv.size(); ++t) rank += sv(t) > tol;
    require_input(k >= 1 && k <= rank, "component count must lie in [1, rank]");

    double top = 0.0, all = 0.0;
    for (Eigen::Index t = 0; t < sv.size(); ++t) {
        const double s2 = sv(t) * sv(t);
        all += s2;
        if (static_cast<std::size_t>(t) < k) top += s2;
    }
    return top / all;
}

namespace {

// lam += weight-column k of (u, v): lam_ij += u_ik * v_jk
void add_factor(Mat& lam, const Mat& u, const Mat& v, std::size_t k, std::vector<double>& vcol) {
    for (std::size_t j = 0; j < v.rows(); ++j) vcol[j] = v(j, k);
    for (std::size_t i = 0; i < lam.rows(); ++i)
        kernels::axpy(u(i, k), vcol.data(), lam.row(i), lam.cols());
}

}  // namespace

std::vector<std::size_t> order_factors(const CountMatrix& x, const FactorPair& f) {
    require_input(f.u.rows() == x.n_rows() && f.v.rows() == x.n_cols(),
                  "factor shapes do not match the count matrix");
    require_input(f.u.cols() == f.v.cols() && f.u.cols() > 0, "invalid factor pair");
    const std::size_t k_total = f.k();

    std::vector<std::size_t> order;
    std::vector<bool> used(k_total, false);
    Mat prefix(x.n_rows(), x.n_cols(), 0.0);
    std::vector<double> vcol(x.n_cols());

    for (std::size_t step = 0; step < k_total; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_k = k_total;
        for (std::size_t k = 0; k < k_total; ++k) {
            if (used[k]) continue;
            Mat trial = prefix;
            add_factor(trial, f.u, f.v, k, vcol);
            const double d = bregman_divergence(x, trial);
            if (d < best) {  // strict: ties keep the lower index
                best = d;
                best_k = k;
            }
        }
        used[best_k] = true;
        order.push_back(best_k);
        add_factor(prefix, f.u, f.v, best_k, vcol);
    }
    return order;
}

std::vector<double> deviance_curve(const CountMatrix& x, const FactorPair& f,
                                   const std::vector<std::size_t>& order) {
    require_input(f.u.rows() == x.n_rows() && f.v.rows() == x.n_cols(),
                  "factor shapes do not match the count matrix");
    require_input(order.size() == f.k(), "order must list every factor exactly once");
    Mat prefix(x.n_rows(), x.n_cols(), 0.0);
    std::vector<double> vcol(x.n_cols());
    std::vector<double> curve;
    for (std::size_t k : order) {
        require_input(k < f.k(), "factor index out of range");
        add_factor(prefix, f.u, f.v, k, vcol);
        curve.push_back(bregman_divergence(x, prefix));
    }
    return curve;
}

}  // namespace pcmf
