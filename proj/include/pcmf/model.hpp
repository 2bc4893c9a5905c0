#pragma once

#include <string>
#include <vector>

#include "pcmf/count_matrix.hpp"
#include "pcmf/mat.hpp"

namespace pcmf {

// Model families: plain Gamma-Poisson factorization, its zero-inflated
// extension, and the sparse (spike-and-slab loadings) zero-inflated variant.
enum class ModelFamily { gap, zi_gap, sparse_zi_gap };

inline bool zero_inflated(ModelFamily f) { return f != ModelFamily::gap; }
inline bool sparse_loadings(ModelFamily f) { return f == ModelFamily::sparse_zi_gap; }

const char* family_name(ModelFamily f);
ModelFamily family_from_name(const std::string& name);

// Prior parameters. Gamma blocks are (shape, rate) per factor; Bernoulli
// priors are per gene.
struct HyperParams {
    std::vector<double> u_shape, u_rate;  // K
    std::vector<double> v_shape, v_rate;  // K
    std::vector<double> keep_prior;       // m: prior prob. that an entry is not dropped
    std::vector<double> select_prior;     // m: prior prob. that a gene loads on a factor

    void validate(std::size_t k, std::size_t m) const;
};

// A rank-K factorization: scores (cells x K) and loadings (genes x K).
struct FactorPair {
    Mat u;  // n x K
    Mat v;  // m x K
    std::size_t k() const { return u.cols(); }
};

// lambda = U V^T, lambda_ij = dot(U row i, V row j)
Mat reconstruct(const Mat& u, const Mat& v);

// ---- count-model criteria -------------------------------------------------
// All use the conventions 0*log(0) = 0 and, for entries where x > 0 and
// lambda == 0, a floor of 1e-12 on lambda (yielding a large negative finite
// log-likelihood rather than -inf).

// sum_ij [ x log(lambda) - lambda - log(x!) ]
double poisson_loglik(const CountMatrix& x, const Mat& lambda);

// Generalized KL: sum_ij [ x log(x / lambda) - x + lambda ]; >= 0, and 0 iff
// lambda == x.
double bregman_divergence(const CountMatrix& x, const Mat& lambda);

// Poisson deviance, computed in its stable form 2 * bregman_divergence.
double deviance(const CountMatrix& x, const Mat& lambda);

// [loglik(lambda) - loglik(null)] / [loglik(saturated) - loglik(null)] where
// the null model predicts each column's mean. Returned raw (not clamped to
// [0, 1]). Throws input_error("saturated equals null model") when the
// denominator degenerates (X constant by column).
double explained_deviance(const CountMatrix& x, const Mat& lambda);

// Gaussian counterpart on an already column-centered matrix: the fraction of
// total squared singular values carried by the top K. Rejects non-centered
// input (column-mean norm > 1e-8) and K outside [1, rank(X)].
double explained_variance_gaussian(const Mat& x_centered, std::size_t k);

// Greedy factor ordering: repeatedly append the factor whose addition
// minimizes the cumulative Bregman divergence of the prefix reconstruction.
// Ties pick the lower index.
std::vector<std::size_t> order_factors(const CountMatrix& x, const FactorPair& f);

// Divergence of each prefix reconstruction, factors taken in the given order.
std::vector<double> deviance_curve(const CountMatrix& x, const FactorPair& f,
                                   const std::vector<std::size_t>& order);

}  // namespace pcmf
