#include "pcmf/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pcmf/common.hpp"

namespace pcmf {
namespace {

double draw_exp_mean(Rng& rng, double mean) {
    std::gamma_distribution<double> g(1.0, mean);  // shape 1, scale = mean
    return g(rng);
}

// balanced diagonal blocks; the division remainder belongs to the last block
std::size_t block_of(std::size_t idx, std::size_t per, std::size_t groups) {
    return per == 0 ? groups - 1 : std::min(idx / per, groups - 1);
}

}  // namespace

void SimScenario::validate() const {
    require_input(n >= 1 && m >= 1 && k >= 1, "scenario dimensions must be positive");
    require_input(cell_groups >= 1 && gene_groups >= 1, "group counts must be positive");
    require_input(k > cell_groups && k > gene_groups,
                  "factor count must exceed both group counts");
    require_input(n >= cell_groups, "cell count must be at least the number of cell groups");
    require_input(m >= gene_groups, "gene count must be at least the number of gene groups");
    require_input(theta_u > 0.0 && theta_u < 1.0, "theta_u must lie in (0, 1)");
    require_input(theta_v > 0.0 && theta_v < 1.0, "theta_v must lie in (0, 1)");
    require_input(noise_prop_mean > 0.0 && noise_prop_mean < 1.0,
                  "noise_prop_mean must lie in (0, 1)");
    require_input(dropout_mean > 0.0 && dropout_mean <= 1.0,
                  "dropout_mean must lie in (0, 1]; 1 disables masking");
    require_input(loading_mean > 0.0, "loading_mean must be positive");
    require_input(beta_concentration > 0.0, "beta_concentration must be positive");
    if (!group_mean.empty()) {
        require_input(group_mean.size() == cell_groups,
                      "group_mean must have one entry per cell group");
        for (double a : group_mean) require_input(a > 0.0, "group means must be positive");
    }
}

Mat generate_cell_scores(const SimScenario& sc, Rng& rng, std::vector<std::size_t>& cell_labels) {
    sc.validate();
    std::vector<double> means = sc.group_mean;
    if (means.empty()) {
        means.resize(sc.cell_groups);
        std::uniform_int_distribution<int> pick(0, 1);
        for (double& a : means) a = pick(rng) == 0 ? 100.0 : 250.0;
    }
    const double avg = std::accumulate(means.begin(), means.end(), 0.0) /
                       static_cast<double>(means.size());
    const double off_mean = (1.0 - sc.theta_u) * avg;
    const std::size_t rows_per = sc.n / sc.cell_groups;
    const std::size_t cols_per = sc.k / sc.cell_groups;

    Mat u(sc.n, sc.k);
    cell_labels.assign(sc.n, 0);
    for (std::size_t i = 0; i < sc.n; ++i) {
        const std::size_t g = block_of(i, rows_per, sc.cell_groups);
        cell_labels[i] = g + 1;
        double* ui = u.row(i);
        for (std::size_t t = 0; t < sc.k; ++t) {
            const bool in_block = block_of(t, cols_per, sc.cell_groups) == g;
            ui[t] = draw_exp_mean(rng, in_block ? means[g] : off_mean);
        }
    }
    return u;
}

Mat generate_gene_loadings(const SimScenario& sc, Rng& rng, std::vector<std::size_t>& gene_labels) {
    sc.validate();
    const double informative_mean = 1.0 - sc.noise_prop_mean;
    const double frac = draw_beta(rng, informative_mean * sc.beta_concentration,
                                  sc.noise_prop_mean * sc.beta_concentration);
    auto m0 = static_cast<std::size_t>(std::llround(frac * static_cast<double>(sc.m)));
    m0 = std::clamp(m0, sc.gene_groups, sc.m);  // at least one gene per block

    const double off_mean = (1.0 - sc.theta_v) * sc.loading_mean;
    const std::size_t rows_per = m0 / sc.gene_groups;
    const std::size_t cols_per = sc.k / sc.gene_groups;

    Mat v(sc.m, sc.k);
    gene_labels.assign(sc.m, 0);
    for (std::size_t j = 0; j < m0; ++j) {
        const std::size_t g = block_of(j, rows_per, sc.gene_groups);
        gene_labels[j] = g + 1;
        double* vj = v.row(j);
        for (std::size_t t = 0; t < sc.k; ++t) {
            const bool in_block = block_of(t, cols_per, sc.gene_groups) == g;
            vj[t] = draw_exp_mean(rng, in_block ? sc.loading_mean : off_mean);
        }
    }
    for (std::size_t j = m0; j < sc.m; ++j) {
        double* vj = v.row(j);
        for (std::size_t t = 0; t < sc.k; ++t) vj[t] = draw_exp_mean(rng, off_mean);
    }
    return v;
}

CountsDraw generate_counts(const Mat& u, const Mat& v, const SimScenario& sc, Rng& rng) {
    require_input(u.cols() == v.cols(), "factor dimensions must match");
    const std::size_t n = u.rows(), m = v.rows(), k = u.cols();

    CountsDraw out;
    out.keep_prob.assign(m, 1.0);
    if (sc.dropout_mean < 1.0) {
        for (std::size_t j = 0; j < m; ++j)
            out.keep_prob[j] = draw_beta(rng, sc.dropout_mean * sc.beta_concentration,
                                         (1.0 - sc.dropout_mean) * sc.beta_concentration);
    }

    out.kept.assign(n * m, 1);
    if (sc.dropout_mean < 1.0) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                std::bernoulli_distribution keep(out.keep_prob[j]);
                out.kept[i * m + j] = keep(rng) ? 1 : 0;
            }
    }

    // Poisson draws happen only for kept cells, in row-major order.
    Mat x(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ui = u.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            if (!out.kept[i * m + j]) continue;
            const double* vj = v.row(j);
            double lam = 0.0;
            for (std::size_t t = 0; t < k; ++t) lam += ui[t] * vj[t];
            if (lam <= 0.0) continue;  // a zero rate forces a zero count
            std::poisson_distribution<long long> pois(lam);
            x(i, j) = static_cast<double>(pois(rng));
        }
    }
    out.x = CountMatrix::from_dense(x);
    return out;
}

SimOutput simulate(const SimScenario& sc) {
    sc.validate();
    SimOutput out;

    Rng factor_rng(derive_seed(sc.seed, SeedStream::simulate_factors));
    out.u_true = generate_cell_scores(sc, factor_rng, out.cell_labels);
    out.v_true = generate_gene_loadings(sc, factor_rng, out.gene_labels);

    Rng count_rng(derive_seed(sc.seed, SeedStream::simulate_counts));
    CountsDraw draw = generate_counts(out.u_true, out.v_true, sc, count_rng);
    out.x = std::move(draw.x);
    out.kept = std::move(draw.kept);
    out.keep_prob_true = std::move(draw.keep_prob);
    return out;
}

}  // namespace pcmf
