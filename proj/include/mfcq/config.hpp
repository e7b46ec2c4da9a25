#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfcq/congestion.hpp"
#include "mfcq/errors.hpp"
#include "mfcq/kernels.hpp"
#include "mfcq/solver.hpp"
#include "mfcq/version.hpp"

namespace mfcq {

using Json = nlohmann::ordered_json;

struct EnvironmentConfig {
    std::string kind = "congestion";
    CongestionParams congestion{};
};

struct EvaluationConfig {
    std::vector<int> n_agents;            // N values for C1/C2 rows
    int rollouts = 500;                   // K
    int horizon = 30;                     // T0
    int repeats = 20;                     // confidence-interval repeats
    std::vector<int> gap_n_agents{10, 20, 40, 80, 160, 320};
    int gap_rollouts = 48;
    int gap_seeds = 20;
    std::vector<double> explore_epsilons{1.0, 0.5};
    int covering_seeds = 20;

    EvaluationConfig() {
        for (int n = 1; n <= 20; ++n) n_agents.push_back(5 * n);
    }
};

struct OutputConfig {
    std::string directory = "out";
};

struct ExperimentConfig {
    int version = 1;
    std::uint64_t master_seed = 1;
    EnvironmentConfig environment{};
    SolverConfig solver{};
    EvaluationConfig evaluation{};
    OutputConfig output{};

    void validate() const {
        if (version != 1) throw ConfigError("config: unsupported version " + std::to_string(version));
        if (environment.kind != "congestion") {
            throw ConfigError("config: unknown environment kind '" + environment.kind + "'");
        }
        environment.congestion.validate();
        solver.validate();
        if (evaluation.rollouts < 1 || evaluation.horizon < 1 || evaluation.repeats < 1 ||
            evaluation.gap_rollouts < 1 || evaluation.gap_seeds < 1 || evaluation.covering_seeds < 1) {
            throw ConfigError("config: evaluation counts must be >= 1");
        }
        for (int n : evaluation.n_agents) {
            if (n < 1) throw ConfigError("config: n_agents entries must be >= 1");
        }
        for (double e : evaluation.explore_epsilons) {
            if (!(e > 0.0 && e <= 1.0)) throw ConfigError("config: explore_epsilons must lie in (0,1]");
        }
    }
};

inline const char* kernel_metric_name(KernelMetric m) {
    return m == KernelMetric::LiftedL1 ? "lifted_l1" : "euclidean";
}

inline KernelMetric parse_kernel_metric(const std::string& s) {
    if (s == "lifted_l1") return KernelMetric::LiftedL1;
    if (s == "euclidean") return KernelMetric::Euclidean;
    throw ConfigError("unknown kernel metric '" + s + "'");
}

inline Json kernel_to_json(const KernelSpec& k) {
    return Json{{"family", kernel_family_name(k.family)},
                {"bandwidth", k.bandwidth},
                {"k", k.k},
                {"metric", kernel_metric_name(k.metric)}};
}

inline KernelSpec kernel_from_json(const Json& j) {
    KernelSpec k;
    k.family = parse_kernel_family(j.value("family", std::string("triangular")));
    k.bandwidth = j.value("bandwidth", 0.0);
    k.k = j.value("k", 1);
    k.metric = parse_kernel_metric(j.value("metric", std::string("lifted_l1")));
    k.validate();
    return k;
}

// Short preset names for kernel comparisons: a family name, or "<k>nn".
inline KernelSpec parse_kernel_preset(const std::string& name) {
    KernelSpec spec;
    if (name.size() > 2 && name.substr(name.size() - 2) == "nn") {
        spec.family = KernelFamily::Knn;
        try {
            spec.k = std::stoi(name.substr(0, name.size() - 2));
        } catch (const std::exception&) {
            throw ConfigError("bad kernel preset '" + name + "'");
        }
        spec.validate();
        return spec;
    }
    spec.family = parse_kernel_family(name);
    return spec;
}

inline std::string kernel_preset_name(const KernelSpec& k) {
    if (k.family == KernelFamily::Knn) return std::to_string(k.k) + "nn";
    return kernel_family_name(k.family);
}

inline Json config_to_json(const ExperimentConfig& cfg) {
    const auto& c = cfg.environment.congestion;
    const auto& s = cfg.solver;
    const auto& e = cfg.evaluation;
    Json j;
    j["version"] = cfg.version;
    j["master_seed"] = cfg.master_seed;
    j["environment"] = Json{{"kind", cfg.environment.kind},
                            {"congestion", Json{{"num_states", c.num_states},
                                                {"num_actions", c.num_actions},
                                                {"a", c.a},
                                                {"b", c.b},
                                                {"d", c.d},
                                                {"c", c.c}}}};
    j["solver"] = Json{{"gamma", s.gamma},
                       {"epsilon", s.epsilon},
                       {"explore_epsilon", s.explore_epsilon},
                       {"kernel", kernel_to_json(s.kernel)},
                       {"fp_tolerance", s.fp_tolerance},
                       {"max_fp_iters", s.max_fp_iters},
                       {"max_explore_steps", s.max_explore_steps},
                       {"collection", s.collection == CollectionMode::Anchor ? "anchor" : "trajectory"},
                       {"strict_paper_phi", s.strict_paper_phi}};
    j["evaluation"] = Json{{"n_agents", e.n_agents},
                           {"rollouts", e.rollouts},
                           {"horizon", e.horizon},
                           {"repeats", e.repeats},
                           {"gap_n_agents", e.gap_n_agents},
                           {"gap_rollouts", e.gap_rollouts},
                           {"gap_seeds", e.gap_seeds},
                           {"explore_epsilons", e.explore_epsilons},
                           {"covering_seeds", e.covering_seeds}};
    j["output"] = Json{{"directory", cfg.output.directory}};
    return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig cfg;
    try {
        cfg.version = j.value("version", 1);
        cfg.master_seed = j.value("master_seed", std::uint64_t{1});
        if (j.contains("environment")) {
            const auto& je = j.at("environment");
            cfg.environment.kind = je.value("kind", std::string("congestion"));
            if (je.contains("congestion")) {
                const auto& jc = je.at("congestion");
                auto& c = cfg.environment.congestion;
                c.num_states = jc.value("num_states", c.num_states);
                c.num_actions = jc.value("num_actions", c.num_actions);
                c.a = jc.value("a", c.a);
                c.b = jc.value("b", c.b);
                c.d = jc.value("d", c.d);
                c.c = jc.value("c", c.c);
            }
        }
        if (j.contains("solver")) {
            const auto& js = j.at("solver");
            auto& s = cfg.solver;
            s.gamma = js.value("gamma", s.gamma);
            s.epsilon = js.value("epsilon", s.epsilon);
            s.explore_epsilon = js.value("explore_epsilon", s.explore_epsilon);
            if (js.contains("kernel")) s.kernel = kernel_from_json(js.at("kernel"));
            s.fp_tolerance = js.value("fp_tolerance", s.fp_tolerance);
            s.max_fp_iters = js.value("max_fp_iters", s.max_fp_iters);
            s.max_explore_steps = js.value("max_explore_steps", s.max_explore_steps);
            const std::string mode = js.value("collection", std::string("anchor"));
            if (mode == "anchor") {
                s.collection = CollectionMode::Anchor;
            } else if (mode == "trajectory") {
                s.collection = CollectionMode::Trajectory;
            } else {
                throw ConfigError("config: unknown collection mode '" + mode + "'");
            }
            s.strict_paper_phi = js.value("strict_paper_phi", false);
        }
        if (j.contains("evaluation")) {
            const auto& je = j.at("evaluation");
            auto& e = cfg.evaluation;
            if (je.contains("n_agents")) e.n_agents = je.at("n_agents").get<std::vector<int>>();
            e.rollouts = je.value("rollouts", e.rollouts);
            e.horizon = je.value("horizon", e.horizon);
            e.repeats = je.value("repeats", e.repeats);
            if (je.contains("gap_n_agents")) e.gap_n_agents = je.at("gap_n_agents").get<std::vector<int>>();
            e.gap_rollouts = je.value("gap_rollouts", e.gap_rollouts);
            e.gap_seeds = je.value("gap_seeds", e.gap_seeds);
            if (je.contains("explore_epsilons")) {
                e.explore_epsilons = je.at("explore_epsilons").get<std::vector<double>>();
            }
            e.covering_seeds = je.value("covering_seeds", e.covering_seeds);
        }
        if (j.contains("output")) {
            cfg.output.directory = j.at("output").value("directory", cfg.output.directory);
        }
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

// FNV-1a over the canonical dump; stable across runs for identical configs.
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace mfcq
