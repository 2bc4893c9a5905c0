#pragma once

#include <cstdint>
#include <vector>

#include "pcmf/count_matrix.hpp"
#include "pcmf/mat.hpp"
#include "pcmf/rng.hpp"

namespace pcmf {

// Recipe for synthetic grouped count data: cells fall into balanced groups
// tied to disjoint factor blocks, genes split into informative blocks plus a
// noisy remainder, and counts are Poisson draws masked per gene by Bernoulli
// keep indicators.
struct SimScenario {
    std::size_t n = 100, m = 800, k = 40;
    std::size_t cell_groups = 3;
    std::size_t gene_groups = 2;

    // per cell-group in-block score mean; empty: each drawn from {100, 250}
    std::vector<double> group_mean;
    double theta_u = 0.8;          // cell separability in (0,1)
    double loading_mean = 80.0;    // informative in-block loading mean
    double theta_v = 0.8;          // gene separability in (0,1)
    double noise_prop_mean = 0.4;  // expected noisy-gene proportion, in (0,1)
    // expected keep probability (smaller = more forced zeros); exactly 1
    // disables masking entirely
    double dropout_mean = 0.5;
    double beta_concentration = 100.0;  // sharpness of the proportion draws
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimOutput {
    CountMatrix x;
    Mat u_true;                            // n x K
    Mat v_true;                            // m x K
    std::vector<std::size_t> cell_labels;  // 1..cell_groups
    std::vector<std::size_t> gene_labels;  // 0 = noisy, 1..gene_groups
    std::vector<std::uint8_t> kept;        // n*m row-major; 0 = masked to zero
    std::vector<double> keep_prob_true;    // m
};

// Blocked exponential scores: balanced diagonal blocks with in-block mean
// group_mean[g] and off-block mean (1 - theta_u) * avg(group_mean); division
// remainders go to the last block. Labels are 1-based group ids.
Mat generate_cell_scores(const SimScenario& sc, Rng& rng, std::vector<std::size_t>& cell_labels);

// Splits genes by a Beta draw of the informative fraction (forced to at least
// one gene per block), builds informative blocks like the cell scores with
// loading_mean / theta_v, and fills noisy genes (label 0) entirely at the
// off-block mean.
Mat generate_gene_loadings(const SimScenario& sc, Rng& rng, std::vector<std::size_t>& gene_labels);

struct CountsDraw {
    CountMatrix x;
    std::vector<std::uint8_t> kept;
    std::vector<double> keep_prob;
};

// Per-gene keep probabilities from a Beta around dropout_mean (or all one),
// Bernoulli keep mask, then Poisson counts at the factor reconstruction for
// kept cells only.
CountsDraw generate_counts(const Mat& u, const Mat& v, const SimScenario& sc, Rng& rng);

// Full pipeline with seed streams split between factor and count generation.
SimOutput simulate(const SimScenario& sc);

}  // namespace pcmf
