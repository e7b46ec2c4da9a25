#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mfcq/config.hpp"
#include "mfcq/congestion.hpp"
#include "mfcq/nagent.hpp"
#include "mfcq/serialize.hpp"
#include "mfcq/solver.hpp"
#include "mfcq/version.hpp"

// Batch orchestration behind the CLI subcommands. Every command writes its
// artifacts into one output directory and finishes with a manifest listing
// every produced file; the manifest is written last, so its presence marks a
// completed run.

namespace mfcq {

namespace fs = std::filesystem;

class RunManifest {
public:
    RunManifest(const ExperimentConfig& cfg, std::string command)
        : command_(std::move(command)), config_hash_(config_hash(cfg)), seed_(cfg.master_seed),
          start_(std::chrono::steady_clock::now()) {}

    void add_file(const fs::path& p) { files_.push_back(p.filename().string()); }

    void write(const fs::path& dir) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        Json j;
        j["magic"] = kFileMagic;
        j["kind"] = "manifest";
        j["toolkit_version"] = kToolkitVersion;
        j["command"] = command_;
        j["config_hash"] = config_hash_;
        j["master_seed"] = seed_;
        j["wall_clock_seconds"] = wall;
        j["files"] = files_;
        detail::write_json_file((dir / "manifest.json").string(), j);
    }

private:
    std::string command_;
    std::uint64_t config_hash_;
    std::uint64_t seed_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> files_;
};

inline std::unique_ptr<MeanFieldEnv> make_env(const ExperimentConfig& cfg) {
    if (cfg.environment.kind == "congestion") {
        return std::make_unique<CongestionEnv>(cfg.environment.congestion);
    }
    throw ConfigError("unknown environment kind '" + cfg.environment.kind + "'");
}

inline std::shared_ptr<const EpsilonNet> build_net_for(const ExperimentConfig& cfg,
                                                       const MeanFieldEnv& env) {
    return std::make_shared<const EpsilonNet>(
        EpsilonNet::build(env.num_states(), env.num_actions(), cfg.solver.epsilon, env.mask()));
}

inline fs::path prepare_out_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

struct SolveArtifacts {
    QTable table;
    fs::path qtable_path;
    fs::path store_path;
    fs::path delta_csv_path;
};

// solve: collect samples per the configured mode, iterate to the fixed point,
// persist table + store + delta trace.
inline SolveArtifacts cmd_solve(const ExperimentConfig& cfg, const std::string& out_dir, int threads) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out_dir);
    RunManifest manifest(cfg, "solve");

    const auto env = make_env(cfg);
    const auto net = build_net_for(cfg, *env);
    SolverConfig scfg = cfg.solver;
    scfg.rng_seed = cfg.master_seed;
    scfg.threads = threads;

    const SampleStore store =
        explore_and_collect(*env, *net, scfg, StateDist::uniform(env->num_states()));
    QTable table = solve_fixed_point(store, net, scfg);

    SolveArtifacts art;
    art.qtable_path = dir / "qtable.json";
    art.store_path = dir / "sample_store.json";
    art.delta_csv_path = dir / "delta_trace.csv";
    save_qtable(art.qtable_path.string(), table);
    save_sample_store(art.store_path.string(), store, *net);
    {
        CsvWriter csv(art.delta_csv_path.string(), {"sweep", "delta"});
        for (std::size_t i = 0; i < table.delta_trace.size(); ++i) {
            csv.add(static_cast<std::int64_t>(i + 1)).add(table.delta_trace[i]);
            csv.end_row();
        }
    }
    manifest.add_file(art.qtable_path);
    manifest.add_file(art.store_path);
    manifest.add_file(art.delta_csv_path);
    manifest.write(dir);
    art.table = std::move(table);
    return art;
}

namespace detail {

inline void check_net_matches_env(const EpsilonNet& net, const MeanFieldEnv& env) {
    if (net.num_states() != env.num_states() || net.num_actions() != env.num_actions()) {
        throw Error("loaded table was built for |X|=" + std::to_string(net.num_states()) +
                    ", |U|=" + std::to_string(net.num_actions()) +
                    " but the configured environment has |X|=" + std::to_string(env.num_states()) +
                    ", |U|=" + std::to_string(env.num_actions()));
    }
}

inline void check_table_matches_env(const QTable& table, const MeanFieldEnv& env) {
    check_net_matches_env(*table.net, env);
}

}  // namespace detail

// evaluate: per-N average discounted reward of the stored policy with
// confidence intervals from repeated experiments.
inline fs::path cmd_evaluate(const ExperimentConfig& cfg, const std::string& qtable_path,
                             const std::string& out_dir, int threads) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out_dir);
    RunManifest manifest(cfg, "evaluate");

    const auto env = make_env(cfg);
    const QTable table = load_qtable(qtable_path);
    detail::check_table_matches_env(table, *env);
    const GreedyPolicy policy = extract_policy(table);
    const auto& e = cfg.evaluation;

    const fs::path csv_path = dir / "c1.csv";
    CsvWriter csv(csv_path.string(), {"n_agents", "c1_mean", "ci_half_width", "rollouts", "horizon", "repeats"});
    for (const int n : e.n_agents) {
        const std::uint64_t seed =
            substream_seed(cfg.master_seed, Stream::Measurement, static_cast<std::uint64_t>(n));
        const C1Result res = evaluate_c1(policy, cfg.environment.congestion, n, e.rollouts, e.horizon,
                                         cfg.solver.gamma, seed, e.repeats, threads);
        csv.add(n).add(res.mean).add(res.ci_half_width).add(e.rollouts).add(e.horizon).add(e.repeats);
        csv.end_row();
    }
    manifest.add_file(csv_path);
    manifest.write(dir);
    return csv_path;
}

struct ComparePolicy {
    std::string name;
    GreedyPolicy policy;
};

// compare: pairwise relative improvement C2 with common random numbers.
// Policies come either from stored tables or from solving the configured
// instance once per named kernel preset (sharing one collected store).
inline fs::path cmd_compare(const ExperimentConfig& cfg, const std::vector<std::string>& qtable_paths,
                            const std::vector<std::string>& kernel_presets, const std::string& out_dir,
                            int threads) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out_dir);
    RunManifest manifest(cfg, "compare");

    std::vector<ComparePolicy> policies;
    for (const auto& path : qtable_paths) {
        QTable t = load_qtable(path);
        policies.push_back({fs::path(path).stem().string(), extract_policy(t)});
    }
    if (!kernel_presets.empty()) {
        const auto env = make_env(cfg);
        const auto net = build_net_for(cfg, *env);
        SolverConfig scfg = cfg.solver;
        scfg.rng_seed = cfg.master_seed;
        scfg.threads = threads;
        const SampleStore store =
            explore_and_collect(*env, *net, scfg, StateDist::uniform(env->num_states()));
        for (const auto& name : kernel_presets) {
            SolverConfig kcfg = scfg;
            kcfg.kernel = parse_kernel_preset(name);
            QTable t = solve_fixed_point(store, net, kcfg);
            policies.push_back({name, extract_policy(t)});
        }
    }
    if (policies.size() < 2) throw ConfigError("compare: need at least two policies");

    const auto env = make_env(cfg);
    for (const auto& p : policies) detail::check_net_matches_env(p.policy.net(), *env);

    const auto& e = cfg.evaluation;
    const fs::path csv_path = dir / "c2.csv";
    CsvWriter csv(csv_path.string(),
                  {"policy1", "policy2", "n_agents", "c2_mean", "included", "excluded"});
    for (std::size_t i = 0; i < policies.size(); ++i) {
        for (std::size_t j = i + 1; j < policies.size(); ++j) {
            for (const int n : e.n_agents) {
                const std::uint64_t seed = substream_seed(
                    cfg.master_seed, Stream::Measurement,
                    (static_cast<std::uint64_t>(n) << 16) + (i << 8) + j);
                const C2Result res =
                    evaluate_c2(policies[i].policy, policies[j].policy, cfg.environment.congestion, n,
                                e.rollouts, e.horizon, cfg.solver.gamma, seed, threads);
                csv.add(policies[i].name).add(policies[j].name).add(n).add(res.mean);
                csv.add(res.included).add(res.excluded);
                csv.end_row();
            }
        }
    }
    manifest.add_file(csv_path);
    manifest.write(dir);
    return csv_path;
}

// covering-time: per-seed first-full-coverage step counts of the exploration
// policy over the configured explore_epsilon values. Coverage failures are
// rows with covered=0, not fatal errors. An optional stored table supplies
// the greedy arm.
inline fs::path cmd_covering_time(const ExperimentConfig& cfg, const std::string& qtable_path,
                                  const std::string& out_dir, int threads) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out_dir);
    RunManifest manifest(cfg, "covering-time");

    const auto env = make_env(cfg);
    const auto net = build_net_for(cfg, *env);
    std::unique_ptr<GreedyPolicy> greedy;
    if (!qtable_path.empty()) {
        QTable t = load_qtable(qtable_path);
        detail::check_table_matches_env(t, *env);
        greedy = std::make_unique<GreedyPolicy>(t.net, t.kernel, t.values);
    }

    const fs::path csv_path = dir / "covering_time.csv";
    CsvWriter csv(csv_path.string(), {"explore_epsilon", "seed", "steps", "covered"});
    for (const double ee : cfg.evaluation.explore_epsilons) {
        SolverConfig scfg = cfg.solver;
        scfg.rng_seed = substream_seed(cfg.master_seed, Stream::CoveringTime,
                                       static_cast<std::uint64_t>(ee * 1e6));
        scfg.threads = threads;
        scfg.explore_epsilon = ee;
        const CoveringStats stats =
            measure_covering_time(*env, *net, scfg, cfg.evaluation.covering_seeds, greedy.get());
        for (std::size_t s = 0; s < stats.steps.size(); ++s) {
            const auto steps = stats.steps[s];
            csv.add(ee).add(static_cast<std::int64_t>(s)).add(steps < 0 ? scfg.max_explore_steps : steps);
            csv.add(static_cast<std::int64_t>(steps >= 0 ? 1 : 0));
            csv.end_row();
        }
    }
    manifest.add_file(csv_path);
    manifest.write(dir);
    return csv_path;
}

// meanfield-gap: |u_N - v| rows over the configured N list and seeds.
inline fs::path cmd_meanfield_gap(const ExperimentConfig& cfg, const std::string& qtable_path,
                                  const std::string& out_dir, int threads) {
    cfg.validate();
    const fs::path dir = prepare_out_dir(out_dir);
    RunManifest manifest(cfg, "meanfield-gap");

    const auto env = make_env(cfg);
    const QTable table = load_qtable(qtable_path);
    detail::check_table_matches_env(table, *env);
    const GreedyPolicy policy = extract_policy(table);
    const auto& e = cfg.evaluation;

    const auto rows = meanfield_gap(policy, cfg.environment.congestion, e.gap_n_agents, e.gap_rollouts,
                                    e.horizon, cfg.solver.gamma, cfg.master_seed, e.gap_seeds, threads);
    const fs::path csv_path = dir / "meanfield_gap.csv";
    CsvWriter csv(csv_path.string(),
                  {"n_agents", "seed", "n_agent_value", "mean_field_value", "gap", "tail_bound"});
    for (const auto& r : rows) {
        csv.add(r.num_agents).add(r.seed).add(r.n_agent_value).add(r.mean_field_value).add(r.gap);
        csv.add(r.tail_bound);
        csv.end_row();
    }
    manifest.add_file(csv_path);
    manifest.write(dir);
    return csv_path;
}

}  // namespace mfcq
