#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcmf/common.hpp"
#include "pcmf/io.hpp"
#include "pcmf/model.hpp"
#include "pcmf/pipeline.hpp"

namespace {

double parse_dropout(const std::string& text) {
    if (text == "none") return 1.0;
    try {
        return std::stod(text);
    } catch (const std::exception&) {
        throw pcmf::input_error("cannot parse dropout value '" + text + "'");
    }
}

void add_scenario_flags(CLI::App* cmd, pcmf::SimScenario& sc, std::string& dropout_text) {
    cmd->add_option("--cells", sc.n, "number of cells")->capture_default_str();
    cmd->add_option("--genes", sc.m, "number of genes")->capture_default_str();
    cmd->add_option("--factors", sc.k, "true factor count")->capture_default_str();
    cmd->add_option("--cell-groups", sc.cell_groups, "number of cell groups")
        ->capture_default_str();
    cmd->add_option("--gene-groups", sc.gene_groups, "number of informative gene groups")
        ->capture_default_str();
    cmd->add_option("--group-means", sc.group_mean,
                    "per-group score means (default: drawn from {100,250})")
        ->delimiter(',');
    cmd->add_option("--theta-u", sc.theta_u, "cell separability in (0,1)")
        ->capture_default_str();
    cmd->add_option("--loading-mean", sc.loading_mean, "informative loading mean")
        ->capture_default_str();
    cmd->add_option("--theta-v", sc.theta_v, "gene separability in (0,1)")
        ->capture_default_str();
    cmd->add_option("--noise", sc.noise_prop_mean, "expected noisy-gene proportion")
        ->capture_default_str();
    cmd->add_option("--dropout", dropout_text,
                    "expected keep probability in (0,1), or 'none'")
        ->capture_default_str();
    cmd->add_option("--concentration", sc.beta_concentration,
                    "sharpness of the proportion draws")
        ->capture_default_str();
}

void add_fit_flags(CLI::App* cmd, pcmf::FitConfig& cfg, std::string& family) {
    cmd->add_option("--family", family, "model family: gap | zigap | spcmf")
        ->capture_default_str();
    cmd->add_option("--k", cfg.k, "number of factors")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "random seed")->capture_default_str();
    cmd->add_option("--restarts", cfg.n_restarts, "number of restarts")->capture_default_str();
    cmd->add_option("--tol", cfg.rel_tol, "relative convergence tolerance")
        ->capture_default_str();
    cmd->add_option("--max-sweeps", cfg.max_sweeps, "sweep budget per restart")
        ->capture_default_str();
    cmd->add_option("--tau", cfg.tau, "selection threshold")->capture_default_str();
    cmd->add_option("--fix-scale", cfg.fix_scale,
                    "pin prior rates: -1 auto (square matrices), 0 free, 1 fixed")
        ->capture_default_str();
}

void add_filter_flags(CLI::App* cmd, double& min_expr_frac, double& filter_threshold) {
    cmd->add_option("--min-expr-frac", min_expr_frac,
                    "remove genes expressed in fewer than this fraction of cells (0 disables)")
        ->capture_default_str();
    cmd->add_option("--filter-threshold", filter_threshold,
                    "remove genes with dropout score at or below this value (0 disables)")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"zero-inflated sparse Gamma-Poisson factorization for count matrices"};
    app.require_subcommand(1);

    // ---- simulate ----------------------------------------------------------
    pcmf::SimulateJob sim_job;
    std::string sim_dropout = "0.5";
    auto* cmd_sim = app.add_subcommand("simulate", "generate a synthetic grouped count matrix");
    add_scenario_flags(cmd_sim, sim_job.scenario, sim_dropout);
    cmd_sim->add_option("--seed", sim_job.scenario.seed, "random seed")->capture_default_str();
    cmd_sim->add_option("--out", sim_job.out_dir, "output directory")->required();
    cmd_sim->add_option("--format", sim_job.format, "count matrix format: csv | mtx")
        ->capture_default_str();
    cmd_sim->callback([&] {
        sim_job.scenario.dropout_mean = parse_dropout(sim_dropout);
        const pcmf::SimOutput out = pcmf::run_simulate(sim_job);
        const double cells = static_cast<double>(out.x.n_rows() * out.x.n_cols());
        std::printf("simulated %zu cells x %zu genes (zero fraction %.3f) -> %s\n",
                    out.x.n_rows(), out.x.n_cols(),
                    (cells - static_cast<double>(out.x.nnz())) / cells,
                    sim_job.out_dir.c_str());
    });

    // ---- fit ---------------------------------------------------------------
    pcmf::FitJob fit_job;
    std::string fit_family = "spcmf";
    auto* cmd_fit = app.add_subcommand("fit", "fit a factor model to a count matrix");
    cmd_fit->add_option("--input", fit_job.input, "count matrix (.csv, .mtx)")->required();
    cmd_fit->add_option("--out", fit_job.out_dir, "output directory")->required();
    add_fit_flags(cmd_fit, fit_job.config, fit_family);
    add_filter_flags(cmd_fit, fit_job.min_expr_frac, fit_job.filter_threshold);
    cmd_fit->add_flag("--no-reestimate", [&](std::int64_t) { fit_job.reestimate = false; },
                      "skip the selected-genes refit for the sparse family");
    cmd_fit->callback([&] {
        fit_job.config.family = pcmf::family_from_name(fit_family);
        const pcmf::FitOutcome out = pcmf::run_fit(fit_job);
        std::printf("fit complete: family=%s elbo=%s pct_dev=%s sweeps=%zu converged=%d -> %s\n",
                    pcmf::family_name(fit_job.config.family),
                    pcmf::format_number(out.report.final_elbo).c_str(),
                    pcmf::format_number(out.report.pct_dev).c_str(), out.report.sweeps,
                    out.report.converged ? 1 : 0, fit_job.out_dir.c_str());
        for (const auto& w : out.report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    });

    // ---- evaluate ----------------------------------------------------------
    pcmf::EvaluateJob eval_job;
    auto* cmd_eval = app.add_subcommand("evaluate", "score a fit against simulation truth");
    cmd_eval->add_option("--fit-dir", eval_job.fit_dir, "directory written by fit")->required();
    cmd_eval->add_option("--truth-dir", eval_job.truth_dir, "directory written by simulate")
        ->required();
    cmd_eval->add_option("--out", eval_job.out_path, "output CSV (default <fit-dir>/evaluation.csv)");
    cmd_eval->add_option("--cell-clusters", eval_job.cell_clusters,
                         "k-means cluster count for cells (0: from truth)");
    cmd_eval->add_option("--gene-clusters", eval_job.gene_clusters,
                         "k-means cluster count for genes (0: from truth)");
    cmd_eval->add_option("--seed", eval_job.seed, "clustering seed")->capture_default_str();
    cmd_eval->callback([&] {
        const pcmf::EvaluationRow row = pcmf::run_evaluate(eval_job);
        std::printf("ari_u=%s ari_v=%s pct_dev=%s selection_accuracy=%s\n",
                    pcmf::format_number(row.ari_u).c_str(),
                    pcmf::format_number(row.ari_v).c_str(),
                    pcmf::format_number(row.pct_dev).c_str(),
                    pcmf::format_number(row.selection_acc).c_str());
    });

    // ---- compare -----------------------------------------------------------
    pcmf::CompareJob cmp_job;
    std::string cmp_family_unused = "spcmf";  // all methods always run
    auto* cmd_cmp = app.add_subcommand(
        "compare", "run all methods over a (dropout x noise x seed) simulation grid");
    std::string cmp_dropout_unused = "0.5";
    add_scenario_flags(cmd_cmp, cmp_job.scenario, cmp_dropout_unused);
    cmd_cmp->get_option("--dropout")->group("");  // grid flag below replaces it
    cmd_cmp->add_option("--dropouts", cmp_job.dropout_grid,
                        "dropout levels, comma separated (1 = none)")
        ->delimiter(',')
        ->capture_default_str();
    cmd_cmp->add_option("--noises", cmp_job.noise_grid, "noise proportions, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    cmd_cmp->add_option("--seeds", cmp_job.n_seeds, "number of seeds per grid cell")
        ->capture_default_str();
    cmd_cmp->add_option("--seed", cmp_job.scenario.seed, "base seed")->capture_default_str();
    cmd_cmp->add_option("--k", cmp_job.config.k, "fitted factor count")->capture_default_str();
    cmd_cmp->add_option("--restarts", cmp_job.config.n_restarts, "restarts per fit")
        ->capture_default_str();
    cmd_cmp->add_option("--tol", cmp_job.config.rel_tol, "relative convergence tolerance")
        ->capture_default_str();
    cmd_cmp->add_option("--max-sweeps", cmp_job.config.max_sweeps, "sweep budget per restart")
        ->capture_default_str();
    cmd_cmp->add_option("--tau", cmp_job.config.tau, "selection threshold")
        ->capture_default_str();
    cmd_cmp->add_option("--out", cmp_job.out_path, "output CSV")->required();
    cmd_cmp->callback([&] {
        const auto rows = pcmf::run_compare(cmp_job);
        std::printf("wrote %zu rows -> %s\n", rows.size(), cmp_job.out_path.c_str());
    });

    // ---- deviance-curve ----------------------------------------------------
    pcmf::CurveJob curve_job;
    std::string curve_family = "spcmf";
    auto* cmd_curve =
        app.add_subcommand("deviance-curve", "prefix deviance per ordered factor count");
    cmd_curve->add_option("--input", curve_job.input, "count matrix (.csv, .mtx)")->required();
    cmd_curve->add_option("--out", curve_job.out_path, "output CSV")->required();
    add_fit_flags(cmd_curve, curve_job.config, curve_family);
    add_filter_flags(cmd_curve, curve_job.min_expr_frac, curve_job.filter_threshold);
    cmd_curve->callback([&] {
        curve_job.config.family = pcmf::family_from_name(curve_family);
        const pcmf::CurveResult res = pcmf::run_deviance_curve(curve_job);
        std::printf("wrote %zu curve rows -> %s\n", res.deviance.size(),
                    curve_job.out_path.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const pcmf::input_error& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 2;
    } catch (const pcmf::numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
