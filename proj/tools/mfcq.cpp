// Batch front-end: solve / evaluate / compare / covering-time / meanfield-gap.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfcq/config.hpp"
#include "mfcq/errors.hpp"
#include "mfcq/pipeline.hpp"
#include "mfcq/version.hpp"

namespace {

// Documented exit codes (see README):
//   0 success, 1 unexpected error, 2 configuration error,
//   3 coverage failure, 4 non-convergence, 5 resource cap.
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCoverage = 3;
constexpr int kExitNonConvergence = 4;
constexpr int kExitResource = 5;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

mfcq::ExperimentConfig resolve_config(const GlobalOpts& g) {
    mfcq::ExperimentConfig cfg =
        g.config_path.empty() ? mfcq::ExperimentConfig{} : mfcq::load_config(g.config_path);
    if (g.seed_set) cfg.master_seed = g.seed;
    if (!g.out_dir.empty()) cfg.output.directory = g.out_dir;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel-based Q-learning toolkit for mean-field control"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(mfcq::kToolkitVersion));

    GlobalOpts g;
    app.add_option("--config", g.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--out", g.out_dir, "Output directory (overrides the config)");
    auto* seed_opt = app.add_option("--seed", g.seed, "Master seed (overrides the config)");
    app.add_option("--threads", g.threads, "Worker threads; affects speed only, never results");

    auto* solve = app.add_subcommand("solve", "Collect samples and solve the fixed point");

    std::string qtable_path;
    auto* evaluate = app.add_subcommand("evaluate", "Average discounted reward C1 over the N list");
    evaluate->add_option("--qtable", qtable_path, "Stored Q table")->required()->check(CLI::ExistingFile);

    std::vector<std::string> cmp_tables;
    std::vector<std::string> cmp_kernels;
    auto* compare = app.add_subcommand("compare", "Pairwise relative improvement C2");
    compare->add_option("--qtable", cmp_tables, "Stored Q tables (repeatable)")->check(CLI::ExistingFile);
    compare->add_option("--kernels", cmp_kernels,
                        "Kernel presets to solve and compare (e.g. triangular constant 1nn 3nn)");

    std::string cov_qtable;
    auto* covering = app.add_subcommand("covering-time", "Covering time of the exploration policy");
    covering->add_option("--qtable", cov_qtable, "Optional stored Q table for the greedy arm")
        ->check(CLI::ExistingFile);

    std::string gap_qtable;
    auto* gap = app.add_subcommand("meanfield-gap", "N-agent vs mean-field value gap over N");
    gap->add_option("--qtable", gap_qtable, "Stored Q table")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        const mfcq::ExperimentConfig cfg = resolve_config(g);
        const std::string out = cfg.output.directory;
        if (solve->parsed()) {
            const auto art = mfcq::cmd_solve(cfg, out, g.threads);
            std::cout << "solved: " << art.table.values.size() << " cells, "
                      << art.table.delta_trace.size() << " sweeps, final delta "
                      << art.table.delta_trace.back() << "\n"
                      << "wrote " << art.qtable_path.string() << "\n";
        } else if (evaluate->parsed()) {
            const auto csv = mfcq::cmd_evaluate(cfg, qtable_path, out, g.threads);
            std::cout << "wrote " << csv.string() << "\n";
        } else if (compare->parsed()) {
            const auto csv = mfcq::cmd_compare(cfg, cmp_tables, cmp_kernels, out, g.threads);
            std::cout << "wrote " << csv.string() << "\n";
        } else if (covering->parsed()) {
            const auto csv = mfcq::cmd_covering_time(cfg, cov_qtable, out, g.threads);
            std::cout << "wrote " << csv.string() << "\n";
        } else if (gap->parsed()) {
            const auto csv = mfcq::cmd_meanfield_gap(cfg, gap_qtable, out, g.threads);
            std::cout << "wrote " << csv.string() << "\n";
        }
        return kExitOk;
    } catch (const mfcq::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mfcq::CoverageError& e) {
        std::cerr << "coverage failure: " << e.what() << "\n";
        return kExitCoverage;
    } catch (const mfcq::ConvergenceError& e) {
        std::cerr << "non-convergence: " << e.what() << "\n";
        return kExitNonConvergence;
    } catch (const mfcq::ResourceError& e) {
        std::cerr << "resource cap: " << e.what() << "\n";
        return kExitResource;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}
