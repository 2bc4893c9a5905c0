#pragma once

#include <cstdint>
#include <vector>

#include "pcmf/count_matrix.hpp"
#include "pcmf/mat.hpp"
#include "pcmf/model.hpp"

namespace pcmf {

enum class BaselineMethod { poisson_nmf, pca };

const char* baseline_method_name(BaselineMethod m);

// A fitted reference method: non-negative factorization of the raw counts or
// PCA of the log counts.
struct BaselineModel {
    BaselineMethod method = BaselineMethod::poisson_nmf;
    Mat u;  // n x K scores
    Mat v;  // m x K loadings

    std::vector<double> objective_trace;  // NMF: generalized KL, one entry per evaluation
    std::vector<double> singular_values;  // PCA: full spectrum of the transformed matrix
    double explained_var = 0.0;           // PCA: top-K share of squared singular values
    std::size_t iterations = 0;
    bool converged = false;
};

// Rank-K truncated SVD. scores = left singular vectors scaled by the singular
// values; loadings = right singular vectors (orthonormal columns); the sign of
// each component is fixed so its largest-magnitude loading is positive.
// singular_values holds the full spectrum, descending.
struct SvdResult {
    Mat scores;    // n x K
    Mat loadings;  // m x K
    std::vector<double> singular_values;
};

SvdResult truncated_svd(const Mat& x, std::size_t k);

// Multiplicative-update NMF minimizing the generalized KL divergence between
// X and U V^T. Stops when the relative objective change drops below tol or
// after max_iters updates. warm_start, when given, replaces the random
// initialization.
BaselineModel poisson_nmf(const CountMatrix& x, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters = 500, double tol = 1e-5,
                          const FactorPair* warm_start = nullptr);

// PCA on log(1 + x) with column centering.
BaselineModel pca_logcounts(const CountMatrix& x, std::size_t k);

}  // namespace pcmf
