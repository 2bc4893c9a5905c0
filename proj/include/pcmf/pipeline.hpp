#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcmf/inference.hpp"
#include "pcmf/simulate.hpp"

namespace pcmf {

struct SimulateJob {
    SimScenario scenario;
    std::string out_dir;
    std::string format = "csv";  // "csv" or "mtx"
};

// Writes X(.csv|.mtx with sidecar names), cells.csv / genes.csv (group
// labels), U_true.csv, V_true.csv, keep_prob.csv, and manifest.txt.
SimOutput run_simulate(const SimulateJob& job);

struct FitJob {
    std::string input;
    std::string out_dir;
    FitConfig config;
    // Genes expressed in fewer than min_expr_frac of cells are removed first,
    // then genes whose dropout score is <= filter_threshold. A zero value
    // disables the corresponding filter.
    double min_expr_frac = 0.05;
    double filter_threshold = 0.2;
    bool reestimate = true;  // sparse family only: refit the selected genes
};

struct FitOutcome {
    FittedModel model;  // gene-dimension artifacts expanded back to the input size
    FitReport report;
    bool reestimated = false;
    std::vector<std::uint8_t> gene_kept;  // pre-filter mask over input genes
};

// Writes U.csv, logU.csv, V.csv, logV.csv (filtered/unselected gene rows
// zero-filled), elbo_trace.csv, report.csv, selection.csv, warnings.txt, and
// manifest.txt. Outputs are deterministic given the manifest.
FitOutcome run_fit(const FitJob& job);

struct EvaluateJob {
    std::string fit_dir;
    std::string truth_dir;
    std::string out_path;           // "": <fit_dir>/evaluation.csv
    std::size_t cell_clusters = 0;  // 0: number of distinct true labels
    std::size_t gene_clusters = 0;
    std::uint64_t seed = 0;
};

struct EvaluationRow {
    double ari_u = 0.0;
    double ari_v = 0.0;          // NaN when gene truth is unavailable
    double pct_dev = 0.0;        // copied from the fit report
    double selection_acc = 0.0;  // NaN when gene truth is unavailable
};

// Clusters the fitted coordinates (log-scale embeddings) against the true
// labels and writes a flat one-row CSV for aggregation.
EvaluationRow run_evaluate(const EvaluateJob& job);

struct CompareRow {
    std::string method;
    double dropout = 0.0, noise = 0.0;
    std::uint64_t seed = 0;
    double ari_u = 0.0, ari_v = 0.0, pct_dev = 0.0, runtime_s = 0.0;
};

struct CompareJob {
    SimScenario scenario;  // dropout/noise/seed overridden per grid cell
    std::vector<double> dropout_grid{0.5};
    std::vector<double> noise_grid{0.4};
    std::size_t n_seeds = 10;
    FitConfig config;  // k / restarts / tol / max_sweeps / tau for every method
    std::string out_path;
};

// Runs {gap, zigap, spcmf, poisson-nmf, pca} on each simulated grid cell.
// Emits one row per run with columns exactly
// method,dropout,noise,seed,ari_u,ari_v,pct_dev,runtime_s; a failed run keeps
// its row with NaN metrics. runtime_s covers the model fit only.
std::vector<CompareRow> run_compare(const CompareJob& job);

struct CurveJob {
    std::string input;
    std::string out_path;
    FitConfig config;  // config.k is the largest factor count on the curve
    double min_expr_frac = 0.05;
    double filter_threshold = 0.2;
};

struct CurveResult {
    std::vector<double> deviance;  // prefix deviance after greedy factor ordering
    FitResult fit;                 // the underlying full-rank fit
};

// Fits once at config.k, orders the factors, and writes k,deviance rows.
CurveResult run_deviance_curve(const CurveJob& job);

}  // namespace pcmf
