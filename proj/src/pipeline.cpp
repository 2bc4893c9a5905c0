#include "pcmf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <utility>

#include "pcmf/baselines.hpp"
#include "pcmf/common.hpp"
#include "pcmf/io.hpp"
#include "pcmf/metrics.hpp"
#include "pcmf/model.hpp"

namespace fs = std::filesystem;

namespace pcmf {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string bool_text(bool b) { return b ? "1" : "0"; }

// single-row CSV without an id column: header line then one value line
void write_flat_row(const std::string& path, const std::vector<std::string>& names,
                    const std::vector<double>& values) {
    std::ofstream out(path);
    require_input(out.good(), "cannot open for writing: " + path);
    for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
    out << '\n';
    for (std::size_t i = 0; i < values.size(); ++i)
        out << (i ? "," : "") << format_number(values[i]);
    out << '\n';
    out.flush();
    require_input(out.good(), "write failed: " + path);
}

std::vector<std::pair<std::string, double>> read_flat_row(const std::string& path) {
    std::ifstream in(path);
    require_input(in.good(), "cannot open for reading: " + path);
    std::string header, row;
    require_input(static_cast<bool>(std::getline(in, header)) &&
                      static_cast<bool>(std::getline(in, row)),
                  path + ": expected a header line and a value line");
    auto split = [](const std::string& line) {
        std::vector<std::string> toks;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                toks.push_back(line.substr(start));
                return toks;
            }
            toks.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
    };
    std::vector<std::string> names = split(header), vals = split(row);
    require_input(names.size() == vals.size(), path + ": header/value count mismatch");
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!names[i].empty() && names[i].back() == '\r') names[i].pop_back();
        std::string v = vals[i];
        if (!v.empty() && v.back() == '\r') v.pop_back();
        out.emplace_back(names[i], std::stod(v));
    }
    return out;
}

double flat_value(const std::vector<std::pair<std::string, double>>& row,
                  const std::string& name, const std::string& path) {
    for (const auto& [key, value] : row)
        if (key == name) return value;
    throw input_error(path + ": missing column '" + name + "'");
}

std::vector<std::size_t> label_column(const Mat& values) {
    std::vector<std::size_t> labels(values.rows());
    for (std::size_t i = 0; i < values.rows(); ++i) {
        const double v = values(i, 0);
        require_input(v >= 0.0 && v == std::floor(v), "labels must be non-negative integers");
        labels[i] = static_cast<std::size_t>(v);
    }
    return labels;
}

std::size_t distinct_count(const std::vector<std::size_t>& labels) {
    return std::set<std::size_t>(labels.begin(), labels.end()).size();
}

std::string dropout_text(double dropout_mean) {
    return dropout_mean == 1.0 ? "none" : format_number(dropout_mean);
}

struct FilteredInput {
    NamedCounts named;
    CountMatrix x_fit;  // kept genes only
    std::vector<std::uint8_t> kept;
    std::size_t n_kept = 0;
};

FilteredInput load_filtered(const std::string& input, double min_expr_frac,
                            double filter_threshold) {
    FilteredInput fi;
    fi.named = read_counts(input);
    const std::size_t n = fi.named.x.n_rows(), m = fi.named.x.n_cols();

    // pre-filter 1: expressed fraction; pre-filter 2: dropout-score threshold
    fi.kept.assign(m, 1);
    std::vector<double> frac(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = fi.named.x.row(i);
        for (std::size_t j = 0; j < m; ++j)
            if (row[j] != 0.0) frac[j] += 1.0;
    }
    for (std::size_t j = 0; j < m; ++j)
        if (frac[j] / static_cast<double>(n) < min_expr_frac) fi.kept[j] = 0;
    if (filter_threshold > 0.0) {
        const std::vector<double> score = gene_dropout_scores(fi.named.x);
        for (std::size_t j = 0; j < m; ++j)
            if (fi.kept[j] && score[j] <= filter_threshold) fi.kept[j] = 0;
    }
    for (std::uint8_t k : fi.kept) fi.n_kept += k;
    require_input(fi.n_kept > 0, "all genes removed by pre-filtering");

    fi.x_fit = fi.n_kept == m ? fi.named.x : fi.named.x.select_columns(fi.kept);
    return fi;
}

// scatter a kept-genes matrix back to the full gene dimension, zero elsewhere
Mat expand_rows(const Mat& sub, const std::vector<std::uint8_t>& kept) {
    Mat full(kept.size(), sub.cols(), 0.0);
    std::size_t s = 0;
    for (std::size_t j = 0; j < kept.size(); ++j) {
        if (!kept[j]) continue;
        for (std::size_t t = 0; t < sub.cols(); ++t) full(j, t) = sub(s, t);
        ++s;
    }
    return full;
}

template <class T>
std::vector<T> expand_values(const std::vector<T>& sub, const std::vector<std::uint8_t>& kept,
                             T fill) {
    std::vector<T> full(kept.size(), fill);
    std::size_t s = 0;
    for (std::size_t j = 0; j < kept.size(); ++j)
        if (kept[j]) full[j] = sub[s++];
    return full;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SimOutput run_simulate(const SimulateJob& job) {
    require_input(!job.out_dir.empty(), "simulate needs an output directory");
    require_input(job.format == "csv" || job.format == "mtx",
                  "format must be 'csv' or 'mtx'");
    job.scenario.validate();
    fs::create_directories(job.out_dir);

    SimOutput out = simulate(job.scenario);
    const SimScenario& sc = job.scenario;
    const auto cells = default_names("cell_", sc.n);
    const auto genes = default_names("gene_", sc.m);
    const auto factors = default_names("factor_", sc.k);

    if (job.format == "mtx")
        write_counts_mm(join(job.out_dir, "X.mtx"), out.x, cells, genes);
    else
        write_counts_csv(join(job.out_dir, "X.csv"), out.x, cells, genes);

    Mat cell_groups(sc.n, 1), gene_groups(sc.m, 1), keep_prob(sc.m, 1);
    for (std::size_t i = 0; i < sc.n; ++i)
        cell_groups(i, 0) = static_cast<double>(out.cell_labels[i]);
    for (std::size_t j = 0; j < sc.m; ++j) {
        gene_groups(j, 0) = static_cast<double>(out.gene_labels[j]);
        keep_prob(j, 0) = out.keep_prob_true[j];
    }
    write_table_csv(join(job.out_dir, "cells.csv"), cell_groups, cells, {"group"}, "cell");
    write_table_csv(join(job.out_dir, "genes.csv"), gene_groups, genes, {"group"}, "gene");
    write_table_csv(join(job.out_dir, "keep_prob.csv"), keep_prob, genes, {"keep_prob"}, "gene");
    write_table_csv(join(job.out_dir, "U_true.csv"), out.u_true, cells, factors, "cell");
    write_table_csv(join(job.out_dir, "V_true.csv"), out.v_true, genes, factors, "gene");

    std::string means = "auto";
    if (!sc.group_mean.empty()) {
        means.clear();
        for (std::size_t g = 0; g < sc.group_mean.size(); ++g)
            means += (g ? ";" : "") + format_number(sc.group_mean[g]);
    }
    write_manifest(join(job.out_dir, "manifest.txt"),
                   {{"command", "simulate"},
                    {"cells", std::to_string(sc.n)},
                    {"genes", std::to_string(sc.m)},
                    {"factors", std::to_string(sc.k)},
                    {"cell_groups", std::to_string(sc.cell_groups)},
                    {"gene_groups", std::to_string(sc.gene_groups)},
                    {"group_means", means},
                    {"theta_u", format_number(sc.theta_u)},
                    {"loading_mean", format_number(sc.loading_mean)},
                    {"theta_v", format_number(sc.theta_v)},
                    {"noise_prop_mean", format_number(sc.noise_prop_mean)},
                    {"dropout_mean", dropout_text(sc.dropout_mean)},
                    {"beta_concentration", format_number(sc.beta_concentration)},
                    {"seed", std::to_string(sc.seed)},
                    {"format", job.format}});
    return out;
}

FitOutcome run_fit(const FitJob& job) {
    require_input(!job.out_dir.empty(), "fit needs an output directory");
    job.config.validate();
    require_input(job.min_expr_frac >= 0.0 && job.min_expr_frac <= 1.0,
                  "min_expr_frac must lie in [0, 1]");
    require_input(job.filter_threshold >= 0.0 && job.filter_threshold < 1.0,
                  "filter_threshold must lie in [0, 1)");
    fs::create_directories(job.out_dir);

    FilteredInput fi = load_filtered(job.input, job.min_expr_frac, job.filter_threshold);
    const std::size_t m_in = fi.named.x.n_cols(), k = job.config.k;

    FitOutcome out;
    out.gene_kept = fi.kept;
    if (sparse_loadings(job.config.family) && job.reestimate) {
        SparseFitResult r = fit_sparse_reestimate(fi.x_fit, job.config);
        out.model = std::move(r.model);
        out.report = std::move(r.report);
        out.reestimated = r.reestimated;
    } else {
        FitResult r = fit(fi.x_fit, job.config);
        out.model = std::move(r.model);
        out.report = std::move(r.report);
    }

    if (fi.n_kept != m_in) {
        out.model.v_mean = expand_rows(out.model.v_mean, fi.kept);
        out.model.v_log = expand_rows(out.model.v_log, fi.kept);
        out.model.selected = expand_values(out.model.selected, fi.kept, std::uint8_t{0});
        out.model.hyper.keep_prior = expand_values(out.model.hyper.keep_prior, fi.kept, 0.0);
        out.model.hyper.select_prior = expand_values(out.model.hyper.select_prior, fi.kept, 0.0);
        out.report.selected = out.model.selected;
        out.report.gene_flags = expand_values(out.report.gene_flags, fi.kept, std::uint8_t{0});
    }

    const auto factors = default_names("factor_", k);
    write_table_csv(join(job.out_dir, "U.csv"), out.model.u_mean, fi.named.cell_ids, factors,
                    "cell");
    write_table_csv(join(job.out_dir, "logU.csv"), out.model.u_log, fi.named.cell_ids, factors,
                    "cell");
    write_table_csv(join(job.out_dir, "V.csv"), out.model.v_mean, fi.named.gene_names, factors,
                    "gene");
    write_table_csv(join(job.out_dir, "logV.csv"), out.model.v_log, fi.named.gene_names, factors,
                    "gene");

    Mat trace(out.report.elbo_trace.size(), 1);
    for (std::size_t s = 0; s < trace.rows(); ++s) trace(s, 0) = out.report.elbo_trace[s];
    write_table_csv(join(job.out_dir, "elbo_trace.csv"), trace,
                    default_names("", trace.rows()), {"elbo"}, "sweep");

    write_flat_row(join(job.out_dir, "report.csv"),
                   {"final_elbo", "pct_dev", "pct_dev_defined", "pct_dev_in_range", "sweeps",
                    "converged", "restart_index", "restarts_failed", "max_elbo_drop",
                    "reestimated", "genes_kept", "genes_total"},
                   {out.report.final_elbo, out.report.pct_dev_defined ? out.report.pct_dev : kNaN,
                    out.report.pct_dev_defined ? 1.0 : 0.0,
                    out.report.pct_dev_in_range ? 1.0 : 0.0,
                    static_cast<double>(out.report.sweeps), out.report.converged ? 1.0 : 0.0,
                    static_cast<double>(out.report.restart_index),
                    static_cast<double>(out.report.restarts_failed), out.report.max_elbo_drop,
                    out.reestimated ? 1.0 : 0.0, static_cast<double>(fi.n_kept),
                    static_cast<double>(m_in)});

    Mat selection(m_in, 3);
    for (std::size_t j = 0; j < m_in; ++j) {
        selection(j, 0) = out.model.selected.empty() ? 1.0 : out.model.selected[j];
        selection(j, 1) = fi.kept[j];
        selection(j, 2) =
            out.report.gene_flags.empty() ? 0.0 : static_cast<double>(out.report.gene_flags[j]);
    }
    write_table_csv(join(job.out_dir, "selection.csv"), selection, fi.named.gene_names,
                    {"selected", "kept", "flags"}, "gene");

    {
        std::ofstream warn(join(job.out_dir, "warnings.txt"));
        for (const auto& w : out.report.warnings) warn << w << '\n';
    }

    std::string mask(m_in, '0');
    for (std::size_t j = 0; j < m_in; ++j)
        if (fi.kept[j]) mask[j] = '1';
    write_manifest(join(job.out_dir, "manifest.txt"),
                   {{"command", "fit"},
                    {"input", job.input},
                    {"family", family_name(job.config.family)},
                    {"k", std::to_string(k)},
                    {"seed", std::to_string(job.config.seed)},
                    {"restarts", std::to_string(job.config.n_restarts)},
                    {"tol", format_number(job.config.rel_tol)},
                    {"max_sweeps", std::to_string(job.config.max_sweeps)},
                    {"tau", format_number(job.config.tau)},
                    {"fix_scale", std::to_string(job.config.fix_scale)},
                    {"reestimate", bool_text(job.reestimate)},
                    {"min_expr_frac", format_number(job.min_expr_frac)},
                    {"filter_threshold", format_number(job.filter_threshold)},
                    {"genes_kept", std::to_string(fi.n_kept)},
                    {"filter_mask", mask}});
    return out;
}

EvaluationRow run_evaluate(const EvaluateJob& job) {
    std::vector<std::string> cells_fit, cells_truth;
    Mat log_u = read_table_csv(join(job.fit_dir, "logU.csv"), &cells_fit);
    Mat cell_groups = read_table_csv(join(job.truth_dir, "cells.csv"), &cells_truth);
    require_input(cells_fit.size() == cells_truth.size(),
                  "cell label count does not match the fitted embedding");
    require_input(cells_fit == cells_truth, "cell ids in the fit and truth files do not match");
    const std::vector<std::size_t> cell_truth = label_column(cell_groups);

    EvaluationRow row;
    const std::size_t kappa_u =
        job.cell_clusters ? job.cell_clusters : distinct_count(cell_truth);
    row.ari_u = adjusted_rand_index(
        kmeans(log_u, kappa_u, derive_seed(job.seed, SeedStream::kmeans, 0)).labels, cell_truth);

    row.ari_v = kNaN;
    row.selection_acc = kNaN;
    const std::string genes_path = join(job.truth_dir, "genes.csv");
    if (fs::exists(genes_path)) {
        std::vector<std::string> genes_fit, genes_truth;
        Mat log_v = read_table_csv(join(job.fit_dir, "logV.csv"), &genes_fit);
        Mat gene_groups = read_table_csv(genes_path, &genes_truth);
        require_input(genes_fit.size() == genes_truth.size(),
                      "gene label count does not match the fitted loadings");
        require_input(genes_fit == genes_truth,
                      "gene ids in the fit and truth files do not match");
        const std::vector<std::size_t> gene_truth = label_column(gene_groups);
        const std::size_t kappa_v =
            job.gene_clusters ? job.gene_clusters : distinct_count(gene_truth);
        row.ari_v = adjusted_rand_index(
            kmeans(log_v, kappa_v, derive_seed(job.seed, SeedStream::kmeans, 1)).labels,
            gene_truth);

        std::vector<std::string> sel_genes, sel_cols;
        Mat selection = read_table_csv(join(job.fit_dir, "selection.csv"), &sel_genes, &sel_cols);
        const auto sel_it = std::find(sel_cols.begin(), sel_cols.end(), "selected");
        require_input(sel_it != sel_cols.end(), "selection.csv lacks a 'selected' column");
        const auto sel_col = static_cast<std::size_t>(sel_it - sel_cols.begin());
        require_input(sel_genes == genes_truth,
                      "gene ids in the selection and truth files do not match");
        std::vector<std::uint8_t> selected(selection.rows()), informative(selection.rows());
        for (std::size_t j = 0; j < selection.rows(); ++j) {
            selected[j] = selection(j, sel_col) != 0.0 ? 1 : 0;
            informative[j] = gene_truth[j] != 0 ? 1 : 0;
        }
        row.selection_acc = selection_accuracy(selected, informative);
    }

    row.pct_dev = flat_value(read_flat_row(join(job.fit_dir, "report.csv")), "pct_dev",
                             join(job.fit_dir, "report.csv"));

    const std::string out_path =
        job.out_path.empty() ? join(job.fit_dir, "evaluation.csv") : job.out_path;
    write_flat_row(out_path, {"ari_u", "ari_v", "pct_dev", "selection_accuracy"},
                   {row.ari_u, row.ari_v, row.pct_dev, row.selection_acc});
    return row;
}

namespace {

struct MethodFit {
    Mat u_pts, v_pts;    // clustering coordinates (log scale for the factor models)
    double pct_dev = kNaN;
};

MethodFit fit_factor_model(const CountMatrix& x, FitConfig cfg, ModelFamily family,
                           std::uint64_t seed) {
    cfg.family = family;
    cfg.seed = seed;
    MethodFit mf;
    if (family == ModelFamily::sparse_zi_gap) {
        SparseFitResult r = fit_sparse_reestimate(x, cfg);
        mf.u_pts = std::move(r.model.u_log);
        mf.v_pts = std::move(r.model.v_log);
        // score every method on the same full-matrix raw-count scale: the
        // first-stage reconstruction covers all genes
        if (r.stage1_report.pct_dev_defined) mf.pct_dev = r.stage1_report.pct_dev;
    } else {
        FitResult r = fit(x, cfg);
        mf.u_pts = std::move(r.model.u_log);
        mf.v_pts = std::move(r.model.v_log);
        if (r.report.pct_dev_defined) mf.pct_dev = r.report.pct_dev;
    }
    return mf;
}

MethodFit fit_baseline(const CountMatrix& x, const FitConfig& cfg, BaselineMethod method,
                       std::uint64_t seed) {
    MethodFit mf;
    if (method == BaselineMethod::poisson_nmf) {
        BaselineModel b = poisson_nmf(x, cfg.k, derive_seed(seed, SeedStream::baseline));
        mf.pct_dev = explained_deviance(x, reconstruct(b.u, b.v));
        mf.u_pts = std::move(b.u);
        mf.v_pts = std::move(b.v);
    } else {
        BaselineModel b = pca_logcounts(x, cfg.k);
        // implied intensity: invert the log1p transform, floored to stay valid
        const std::size_t n = x.n_rows(), m = x.n_cols();
        std::vector<double> col_mean(m, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) col_mean[j] += std::log1p(x(i, j));
        for (double& v : col_mean) v /= static_cast<double>(n);
        Mat lambda = reconstruct(b.u, b.v);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                lambda(i, j) = std::max(std::expm1(lambda(i, j) + col_mean[j]), 1e-8);
        mf.pct_dev = explained_deviance(x, lambda);
        mf.u_pts = std::move(b.u);
        mf.v_pts = std::move(b.v);
    }
    return mf;
}

}  // namespace

std::vector<CompareRow> run_compare(const CompareJob& job) {
    require_input(!job.out_path.empty(), "compare needs an output path");
    require_input(!job.dropout_grid.empty() && !job.noise_grid.empty() && job.n_seeds >= 1,
                  "compare needs a non-empty grid");
    job.config.validate();

    const char* methods[] = {"gap", "zigap", "spcmf", "poisson-nmf", "pca"};
    std::vector<CompareRow> rows;

    for (double dropout : job.dropout_grid)
        for (double noise : job.noise_grid)
            for (std::size_t s = 0; s < job.n_seeds; ++s) {
                SimScenario sc = job.scenario;
                sc.dropout_mean = dropout;
                sc.noise_prop_mean = noise;
                sc.seed = job.scenario.seed + s;
                sc.validate();
                const SimOutput sim = simulate(sc);
                const std::size_t kappa_u = distinct_count(sim.cell_labels);
                const std::size_t kappa_v = distinct_count(sim.gene_labels);

                for (std::size_t mi = 0; mi < 5; ++mi) {
                    CompareRow row;
                    row.method = methods[mi];
                    row.dropout = dropout;
                    row.noise = noise;
                    row.seed = sc.seed;
                    row.ari_u = row.ari_v = row.pct_dev = kNaN;
                    const auto t0 = std::chrono::steady_clock::now();
                    try {
                        MethodFit mf;
                        switch (mi) {
                            case 0:
                                mf = fit_factor_model(sim.x, job.config, ModelFamily::gap, sc.seed);
                                break;
                            case 1:
                                mf = fit_factor_model(sim.x, job.config, ModelFamily::zi_gap,
                                                      sc.seed);
                                break;
                            case 2:
                                mf = fit_factor_model(sim.x, job.config,
                                                      ModelFamily::sparse_zi_gap, sc.seed);
                                break;
                            case 3:
                                mf = fit_baseline(sim.x, job.config, BaselineMethod::poisson_nmf,
                                                  sc.seed);
                                break;
                            default:
                                mf = fit_baseline(sim.x, job.config, BaselineMethod::pca, sc.seed);
                        }
                        row.runtime_s = seconds_since(t0);
                        row.pct_dev = mf.pct_dev;
                        row.ari_u = adjusted_rand_index(
                            kmeans(mf.u_pts, kappa_u,
                                   derive_seed(sc.seed, SeedStream::kmeans, 2 * mi))
                                .labels,
                            sim.cell_labels);
                        row.ari_v = adjusted_rand_index(
                            kmeans(mf.v_pts, kappa_v,
                                   derive_seed(sc.seed, SeedStream::kmeans, 2 * mi + 1))
                                .labels,
                            sim.gene_labels);
                    } catch (const std::exception&) {
                        row.runtime_s = seconds_since(t0);  // row kept, metrics stay NaN
                    }
                    rows.push_back(std::move(row));
                }
            }

    std::ofstream out(job.out_path);
    require_input(out.good(), "cannot open for writing: " + job.out_path);
    out << "method,dropout,noise,seed,ari_u,ari_v,pct_dev,runtime_s\n";
    for (const CompareRow& r : rows)
        out << r.method << ',' << format_number(r.dropout) << ',' << format_number(r.noise) << ','
            << r.seed << ',' << format_number(r.ari_u) << ',' << format_number(r.ari_v) << ','
            << format_number(r.pct_dev) << ',' << format_number(r.runtime_s) << '\n';
    out.flush();
    require_input(out.good(), "write failed: " + job.out_path);
    return rows;
}

CurveResult run_deviance_curve(const CurveJob& job) {
    require_input(!job.out_path.empty(), "deviance-curve needs an output path");
    job.config.validate();
    FilteredInput fi = load_filtered(job.input, job.min_expr_frac, job.filter_threshold);

    CurveResult res;
    res.fit = fit(fi.x_fit, job.config);
    const FactorPair f{res.fit.model.u_mean, res.fit.model.v_mean};
    const std::vector<std::size_t> order = order_factors(fi.x_fit, f);
    res.deviance = deviance_curve(fi.x_fit, f, order);

    Mat curve(res.deviance.size(), 1);
    for (std::size_t t = 0; t < res.deviance.size(); ++t) curve(t, 0) = res.deviance[t];
    write_table_csv(job.out_path, curve, default_names("", curve.rows()), {"deviance"}, "k");
    write_manifest(job.out_path + ".manifest",
                   {{"command", "deviance-curve"},
                    {"input", job.input},
                    {"family", family_name(job.config.family)},
                    {"k", std::to_string(job.config.k)},
                    {"seed", std::to_string(job.config.seed)},
                    {"restarts", std::to_string(job.config.n_restarts)},
                    {"tol", format_number(job.config.rel_tol)},
                    {"max_sweeps", std::to_string(job.config.max_sweeps)},
                    {"tau", format_number(job.config.tau)},
                    {"fix_scale", std::to_string(job.config.fix_scale)},
                    {"min_expr_frac", format_number(job.min_expr_frac)},
                    {"filter_threshold", format_number(job.filter_threshold)}});
    return res;
}

}  // namespace pcmf
