#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcmf/count_matrix.hpp"
#include "pcmf/mat.hpp"
#include "pcmf/model.hpp"
#include "pcmf/rng.hpp"

namespace pcmf {

// Loop controls for the variational fit.
struct FitConfig {
    std::size_t k = 2;
    ModelFamily family = ModelFamily::sparse_zi_gap;
    std::size_t max_sweeps = 1000;
    double rel_tol = 1e-5;
    std::size_t n_restarts = 5;
    double tau = 0.5;       // selection-probability threshold for the hard indicator
    std::uint64_t seed = 0;
    int fix_scale = -1;     // -1: auto (on iff n == m), 0: off, 1: on

    void validate() const;
    bool scale_fixed(std::size_t n, std::size_t m) const;
};

// Per-gene diagnostic flags.
inline constexpr std::uint8_t gene_flag_all_zero = 1;   // column has no counts
inline constexpr std::uint8_t gene_flag_fallback = 2;   // no factor selected; uniform allocation

// Variational posterior: Gamma blocks for scores and loadings, Bernoulli
// blocks for dropout and selection, and a multinomial allocation over the
// nonzero cells. Moment caches (means and mean-logs) are refreshed by every
// update so downstream blocks always read current values.
struct VariationalState {
    ModelFamily family = ModelFamily::gap;
    double tau = 0.5;
    std::size_t n = 0, m = 0, k = 0;

    Mat a_shape, a_rate;  // n x K
    Mat u_hat, log_u;     // n x K caches
    Mat b_shape, b_rate;  // m x K
    Mat vp_hat, log_vp;   // m x K caches

    Mat p_d;                          // n x m keep probabilities (zero-inflated only)
    Mat p_s;                          // m x K selection probabilities (sparse only)
    std::vector<std::uint8_t> s_til;  // m*K hard selection indicators (sparse only)

    Mat resp;                          // nnz x K allocation probabilities, CSR cell order
    std::vector<double> cell_entropy;  // nnz: -sum_k r log r per cell

    // summed Gamma entropies of the score/loading blocks; maintained by the
    // refresh calls below alongside the moment caches
    double gamma_ent_u = 0.0, gamma_ent_v = 0.0;

    std::vector<std::uint8_t> gene_flags;  // m

    void refresh_u_moments();
    void refresh_v_moments();
    bool selected(std::size_t j, std::size_t t) const { return s_til[j * k + t] != 0; }
};

// Point summaries exposed after fitting: posterior means and mean-logs, with
// loadings selection-weighted for the sparse family.
struct FittedModel {
    ModelFamily family = ModelFamily::gap;
    double tau = 0.5;
    Mat u_mean, u_log;  // n x K
    Mat v_mean, v_log;  // m x K
    HyperParams hyper;
    std::vector<std::uint8_t> selected;  // per gene: any factor selected (sparse; else all 1)
};

struct FitReport {
    std::vector<double> elbo_trace;  // one entry per sweep
    double final_elbo = 0.0;
    double pct_dev = 0.0;
    bool pct_dev_defined = false;
    bool pct_dev_in_range = false;
    std::size_t sweeps = 0;
    bool converged = false;
    std::size_t restart_index = 0;
    std::size_t restarts_failed = 0;
    double max_elbo_drop = 0.0;  // largest per-sweep ELBO decrease observed
    std::vector<std::uint8_t> selected;
    std::vector<std::uint8_t> gene_flags;
    std::vector<std::string> warnings;
};

struct FitResult {
    FittedModel model;
    FitReport report;
};

// Two-stage result for the sparse pipeline: model selection by the sparse
// family, then a zero-inflated refit on the selected genes. `model` holds the
// refit expanded back to all genes (unselected loadings rows zero-filled);
// `report` describes the refit (its explained deviance is measured on the
// selected-gene submatrix). When no gene is selected the first-stage result
// is returned unchanged with a warning and reestimated == false.
struct SparseFitResult {
    FittedModel model;
    FitReport report;
    FitReport stage1_report;
    bool reestimated = false;
};

// ---- building blocks (exposed for direct testing) -------------------------

// Draws the initial state and derives starting hyperparameters from it.
// Per-gene variability score 1 - exp(-sd_j / nonzero_mean_j), with the
// standard deviation taken over all cells (zeros included). Zero for all-zero
// genes. Seeds the selection probabilities and drives gene pre-filtering.
std::vector<double> gene_dropout_scores(const CountMatrix& x);

VariationalState init_state(const CountMatrix& x, const CellData& cd, const FitConfig& cfg,
                            Rng& rng, HyperParams& hyper);

// Multinomial allocation over nonzero cells: r_ijk proportional to
// stil_jk * exp(logU_ik + logV'_jk), max-subtracted; rows with no selected
// factor fall back to uniform and flag the gene.
void update_r(VariationalState& st, const CellData& cd);

// Gamma block updates (posterior shape/rate, then moment refresh).
void update_a(VariationalState& st, const CellData& cd, const HyperParams& hyper);
void update_b(VariationalState& st, const CellData& cd, const HyperParams& hyper);

// Bernoulli block updates (zero cells only for p_d; p_s refreshes s_til).
void update_pd(VariationalState& st, const CellData& cd, const HyperParams& hyper);
void update_ps(VariationalState& st, const CellData& cd, const HyperParams& hyper);

// Hyperparameter maximization given the current moments. Gamma pairs are
// solved by the alternating fixed point (tol 1e-10, cap 100 rounds) plus a
// guarded Newton finisher when the alternation has not yet converged; with
// scale_fixed the rates stay put and only shapes update. Appends one warning
// per capped shape when `warnings` is given.
void m_step(const VariationalState& st, const CellData& cd, bool scale_fixed, HyperParams& hyper,
            std::vector<std::string>* warnings);

// Full evidence lower bound under the current state and hyperparameters.
// Reads the Gamma entropy caches, so hand-edited shape/rate blocks need a
// refresh_*_moments() call first. Throws numeric_error naming the offending
// term if any piece is non-finite.
double elbo(const VariationalState& st, const HyperParams& hyper, const CellData& cd);

// Multi-restart variational EM. Restarts are independent (each is seeded by
// its own index) and run concurrently when the machine has multiple cores;
// results are reduced in restart order, so the outcome is deterministic given
// cfg.seed regardless of thread count.
FitResult fit(const CountMatrix& x, const FitConfig& cfg);

// Sparse fit followed by a zero-inflated refit on the selected genes.
SparseFitResult fit_sparse_reestimate(const CountMatrix& x, const FitConfig& cfg);

}  // namespace pcmf
