// Scalar reference implementations. These define the semantics the SIMD
// variants are tested against.

#include <algorithm>
#include <cmath>

#include "pcmf/kernels.hpp"

namespace pcmf::kernels::detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void exp_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void log_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
}

void logistic_scalar(const double* t, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double c = std::clamp(t[i], -30.0, 30.0);
        p[i] = 1.0 / (1.0 + std::exp(-c));
    }
}

double xlogy_minus_y_scalar(const double* x, const double* lam, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) {
            const double l = lam[i] == 0.0 ? rate_floor : lam[i];
            acc += x[i] * std::log(l) - l;
        } else {
            acc += -lam[i];
        }
    }
    return acc;
}

double bregman_terms_scalar(const double* x, const double* lam, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) {
            const double l = lam[i] == 0.0 ? rate_floor : lam[i];
            acc += x[i] * std::log(x[i] / l) - x[i] + l;
        } else {
            acc += lam[i];
        }
    }
    return acc;
}

void weighted_colsum_scalar(const double* p, const double* mat, std::size_t m, std::size_t k,
                            double* out) {
    std::fill(out, out + k, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const double pj = p[j];
        const double* row = mat + j * k;
        for (std::size_t t = 0; t < k; ++t) out[t] += pj * row[t];
    }
}

void rank1_update_scalar(const double* p, const double* v, double* mat, std::size_t m,
                         std::size_t k) {
    for (std::size_t j = 0; j < m; ++j) {
        const double pj = p[j];
        double* row = mat + j * k;
        for (std::size_t t = 0; t < k; ++t) row[t] += pj * v[t];
    }
}

void row_dots_scalar(const double* mat, const double* v, std::size_t m, std::size_t k,
                     double* out) {
    for (std::size_t j = 0; j < m; ++j) out[j] = dot_scalar(mat + j * k, v, k);
}

void axpy2_scalar(double alpha, const double* x, const double* w, double* y1, double* y2,
                  std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double z = alpha * x[i];
        y1[i] += z;
        y2[i] += z * w[i];
    }
}

void scatter_axpy_scalar(const double* x, const std::uint32_t* cols, const double* vals,
                         std::size_t c0, std::size_t c1, std::size_t k, double* out) {
    for (std::size_t c = c0; c < c1; ++c) {
        const double xc = x[c];
        const double* v = vals + c * k;
        double* o = out + static_cast<std::size_t>(cols[c]) * k;
        for (std::size_t t = 0; t < k; ++t) o[t] += xc * v[t];
    }
}

void scatter_axpy2_scalar(const double* x, const std::uint32_t* cols, const double* vals,
                          std::size_t c0, std::size_t c1, const double* w, std::size_t k,
                          double* y1, double* y2) {
    for (std::size_t c = c0; c < c1; ++c) {
        const double xc = x[c];
        const double* v = vals + c * k;
        const std::size_t j = static_cast<std::size_t>(cols[c]) * k;
        for (std::size_t t = 0; t < k; ++t) {
            const double z = xc * v[t];
            y1[j + t] += z;
            y2[j + t] += z * w[t];
        }
    }
}

void matmul_scalar(const double* a, const double* b, std::size_t n, std::size_t m, std::size_t k,
                   double* out) {
    for (std::size_t i = 0; i < n; ++i)
        weighted_colsum_scalar(a + i * m, b, m, k, out + i * k);
}

void matmul_tn_acc_scalar(const double* a, const double* b, std::size_t n, std::size_t m,
                          std::size_t k, double* out) {
    for (std::size_t i = 0; i < n; ++i)
        rank1_update_scalar(a + i * m, b + i * k, out, m, k);
}

void gather_rowsum_scalar(const double* x, const std::uint32_t* cols, const double* vals,
                          std::size_t c0, std::size_t c1, const double* gate, std::size_t k,
                          double* acc) {
    if (gate) {
        for (std::size_t c = c0; c < c1; ++c) {
            const double xc = x[c];
            const double* v = vals + c * k;
            const double* g = gate + static_cast<std::size_t>(cols[c]) * k;
            for (std::size_t t = 0; t < k; ++t) acc[t] += xc * v[t] * g[t];
        }
    } else {
        for (std::size_t c = c0; c < c1; ++c) {
            const double xc = x[c];
            const double* v = vals + c * k;
            for (std::size_t t = 0; t < k; ++t) acc[t] += xc * v[t];
        }
    }
}

}  // namespace

const OpsTable scalar_table = {
    dot_scalar,     sum_scalar,      axpy_scalar,          exp_scalar,
    log_scalar,     logistic_scalar, xlogy_minus_y_scalar, bregman_terms_scalar,
    weighted_colsum_scalar, rank1_update_scalar, row_dots_scalar, axpy2_scalar,
    scatter_axpy_scalar, scatter_axpy2_scalar, gather_rowsum_scalar,
    matmul_scalar, matmul_tn_acc_scalar,
};

}  // namespace pcmf::kernels::detail
