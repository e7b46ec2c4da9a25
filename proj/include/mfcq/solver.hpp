#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfcq/env.hpp"
#include "mfcq/errors.hpp"
#include "mfcq/kernels.hpp"
#include "mfcq/net.hpp"
#include "mfcq/parallel.hpp"
#include "mfcq/rng.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

// How (r-hat, Phi-hat) get populated. Anchor queries the simulator once per
// net point, the protocol used for the benchmark experiments. Trajectory runs
// the literal exploration loop and is what the covering-time studies measure.
enum class CollectionMode { Anchor, Trajectory };

struct SolverConfig {
    double gamma = 0.5;
    double epsilon = 0.25;
    double explore_epsilon = 1.0;  // epsilon' of the exploration policy
    KernelSpec kernel{};
    double fp_tolerance = 1e-6;
    int max_fp_iters = 200;
    std::int64_t max_explore_steps = 2'000'000;
    std::uint64_t rng_seed = 1;
    CollectionMode collection = CollectionMode::Anchor;
    // Algorithm line "Phi-hat <- avg of mu_t" taken literally; default stores
    // the observed next distribution instead, which the fixed-point theory
    // requires.
    bool strict_paper_phi = false;
    int threads = 0;

    void validate() const {
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("SolverConfig: gamma must lie in (0,1)");
        if (!(epsilon > 0.0)) throw ConfigError("SolverConfig: epsilon must be positive");
        if (!(explore_epsilon > 0.0 && explore_epsilon <= 1.0)) {
            throw ConfigError("SolverConfig: explore_epsilon must lie in (0,1]");
        }
        if (!(fp_tolerance > 0.0)) throw ConfigError("SolverConfig: fp_tolerance must be positive");
        if (max_fp_iters < 1) throw ConfigError("SolverConfig: max_fp_iters must be >= 1");
        if (max_explore_steps < 1) throw ConfigError("SolverConfig: max_explore_steps must be >= 1");
        kernel.validate();
    }
};

// Per-cell sample averages collected on the net: visit counts N(c^i), mean
// observed reward r-hat and mean observed next distribution Phi-hat. With the
// deterministic mean-field simulator repeated observations coincide, so the
// incremental mean never drifts.
struct SampleStore {
    int num_states = 0;
    std::vector<std::int64_t> visits;
    std::vector<double> reward_avg;
    std::vector<double> next_mu_avg;  // flat [cell * num_states + x]
    std::int64_t steps_taken = 0;
    std::int64_t coverage_step = -1;  // first step count with every cell visited
    std::size_t visited_cells = 0;

    void init(std::size_t cells, int nx) {
        num_states = nx;
        visits.assign(cells, 0);
        reward_avg.assign(cells, 0.0);
        next_mu_avg.assign(cells * static_cast<std::size_t>(nx), 0.0);
        steps_taken = 0;
        coverage_step = -1;
        visited_cells = 0;
    }

    std::size_t size() const { return visits.size(); }
    bool fully_covered() const { return visited_cells == visits.size() && !visits.empty(); }

    std::span<const double> next_mu(std::size_t cell) const {
        return {next_mu_avg.data() + cell * static_cast<std::size_t>(num_states),
                static_cast<std::size_t>(num_states)};
    }

    bool record(std::size_t cell, double reward, std::span<const double> mu_obs) {
        auto& n = visits[cell];
        ++n;
        const double w = 1.0 / static_cast<double>(n);
        reward_avg[cell] += (reward - reward_avg[cell]) * w;
        double* dst = next_mu_avg.data() + cell * static_cast<std::size_t>(num_states);
        for (int x = 0; x < num_states; ++x) {
            dst[x] += (mu_obs[static_cast<std::size_t>(x)] - dst[x]) * w;
        }
        if (n == 1) {
            ++visited_cells;
            return true;
        }
        return false;
    }

    std::vector<std::size_t> uncovered(std::size_t limit) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < visits.size() && out.size() < limit; ++i) {
            if (visits[i] == 0) out.push_back(i);
        }
        return out;
    }
};

namespace detail {

// For every action-net point b, the points b' with distance term < bound,
// sorted by (term, index). The term is d_H for the lifted-l1 metric and the
// summed squared row distance for the Euclidean one.
struct ActionLists {
    std::vector<std::uint32_t> offset;  // size N_H + 1
    std::vector<std::uint32_t> idx;
    std::vector<double> term;

    std::size_t row_begin(std::size_t b) const { return offset[b]; }
    std::size_t row_end(std::size_t b) const { return offset[b + 1]; }
};

inline std::vector<std::vector<double>> row_dist_tables(const EpsilonNet& net, bool squared) {
    const int nx = net.num_states();
    const int nu = net.num_actions();
    std::vector<std::vector<double>> tables(static_cast<std::size_t>(nx));
    for (int x = 0; x < nx; ++x) {
        const auto& grid = net.row_grid(x);
        const std::size_t n = grid.size();
        auto& t = tables[static_cast<std::size_t>(x)];
        t.assign(n * n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t l = j + 1; l < n; ++l) {
                double d = 0.0;
                if (squared) {
                    for (int u = 0; u < nu; ++u) {
                        const double e = grid[j][static_cast<std::size_t>(u)] - grid[l][static_cast<std::size_t>(u)];
                        d += e * e;
                    }
                } else {
                    for (int u = 0; u < nu; ++u) {
                        d += std::abs(grid[j][static_cast<std::size_t>(u)] - grid[l][static_cast<std::size_t>(u)]);
                    }
                }
                t[j * n + l] = d;
                t[l * n + j] = d;
            }
        }
    }
    return tables;
}

inline double action_pair_term(const EpsilonNet& net, const std::vector<std::vector<double>>& tables,
                               std::size_t b1, std::size_t b2, bool squared) {
    const int nx = net.num_states();
    double d = 0.0;
    for (int x = 0; x < nx; ++x) {
        const auto& t = tables[static_cast<std::size_t>(x)];
        const std::size_t n = net.row_grid(x).size();
        const double v = t[net.row_index(b1, x) * n + net.row_index(b2, x)];
        if (squared) {
            d += v;
        } else {
            d = std::max(d, v);
        }
    }
    return d;
}

inline ActionLists build_action_lists(const EpsilonNet& net, double bound, bool squared) {
    const std::size_t nh = net.num_action_points();
    const auto tables = row_dist_tables(net, squared);
    ActionLists lists;
    lists.offset.assign(nh + 1, 0);
    std::vector<std::pair<double, std::uint32_t>> row;
    std::vector<std::vector<std::pair<double, std::uint32_t>>> rows(nh);
    for (std::size_t b = 0; b < nh; ++b) {
        row.clear();
        for (std::size_t b2 = 0; b2 < nh; ++b2) {
            const double d = action_pair_term(net, tables, b, b2, squared);
            if (d < bound) row.emplace_back(d, static_cast<std::uint32_t>(b2));
        }
        std::sort(row.begin(), row.end());
        rows[b] = row;
        lists.offset[b + 1] = lists.offset[b] + static_cast<std::uint32_t>(row.size());
    }
    lists.idx.resize(lists.offset[nh]);
    lists.term.resize(lists.offset[nh]);
    for (std::size_t b = 0; b < nh; ++b) {
        std::size_t w = lists.offset[b];
        for (const auto& [d, b2] : rows[b]) {
            lists.term[w] = d;
            lists.idx[w] = b2;
            ++w;
        }
    }
    return lists;
}

// First k entries by (term, index), extended through exact ties at the k-th
// term so downstream selection by (sum, cell) stays exact.
inline void knn_window(std::span<const double> terms, int k,
                       std::vector<std::pair<double, std::uint32_t>>& out) {
    out.clear();
    out.reserve(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        out.emplace_back(terms[i], static_cast<std::uint32_t>(i));
    }
    std::sort(out.begin(), out.end());
    if (out.size() > static_cast<std::size_t>(k)) {
        const double kth = out[static_cast<std::size_t>(k) - 1].first;
        std::size_t end = static_cast<std::size_t>(k);
        while (end < out.size() && out[end].first == kth) ++end;
        out.resize(end);
    }
}

inline ActionLists build_action_knn_windows(const EpsilonNet& net, int k, bool squared) {
    const std::size_t nh = net.num_action_points();
    const auto tables = row_dist_tables(net, squared);
    ActionLists lists;
    lists.offset.assign(nh + 1, 0);
    std::vector<double> terms(nh);
    std::vector<std::pair<double, std::uint32_t>> window;
    std::vector<std::vector<std::pair<double, std::uint32_t>>> rows(nh);
    for (std::size_t b = 0; b < nh; ++b) {
        for (std::size_t b2 = 0; b2 < nh; ++b2) {
            terms[b2] = action_pair_term(net, tables, b, b2, squared);
        }
        knn_window(terms, k, window);
        rows[b] = window;
        lists.offset[b + 1] = lists.offset[b] + static_cast<std::uint32_t>(window.size());
    }
    lists.idx.resize(lists.offset[nh]);
    lists.term.resize(lists.offset[nh]);
    for (std::size_t b = 0; b < nh; ++b) {
        std::size_t w = lists.offset[b];
        for (const auto& [d, b2] : rows[b]) {
            lists.term[w] = d;
            lists.idx[w] = b2;
            ++w;
        }
    }
    return lists;
}

}  // namespace detail

// State-side neighbor data of one regression query: for bandwidth kernels the
// state-net points within the bandwidth (ascending index); for knn the sorted
// k-window; for 1-NN just the nearest state index.
struct StateSideView {
    std::span<const std::uint32_t> idx;
    std::span<const double> term;
    std::uint32_t nearest = 0;
};

// Shared evaluation machinery for one (net, kernel) pair: regression of a net
// table at (mu, h^b) queries and exhaustive argmax over the action net. This
// is the inner loop of both the Bellman sweep and greedy-policy evaluation;
// it matches kernel_weights/regress on every query.
class KernelEngine {
public:
    KernelEngine(const EpsilonNet& net, KernelSpec spec) : net_(&net), spec_(spec) {
        spec_.validate();
        if (spec_.family == KernelFamily::Knn) {
            if (static_cast<std::size_t>(spec_.k) > net.size()) {
                throw ArgumentError("KernelEngine: k exceeds the net size");
            }
            if (spec_.k > 1) {
                action_lists_ = detail::build_action_knn_windows(net, spec_.k, squared());
            }
        } else {
            spec_.bandwidth = spec_.resolved_bandwidth(net);
            const double bound = squared() ? spec_.bandwidth * spec_.bandwidth : spec_.bandwidth;
            action_lists_ = detail::build_action_lists(net, bound, squared());
        }
    }

    const KernelSpec& spec() const { return spec_; }
    const EpsilonNet& net() const { return *net_; }
    bool squared() const { return spec_.metric == KernelMetric::Euclidean; }

    // Owning state-side buffers, reusable across queries.
    struct StateSide {
        std::vector<std::uint32_t> idx;
        std::vector<double> term;
        std::uint32_t nearest = 0;
        std::vector<double> scratch;

        StateSideView view() const { return StateSideView{idx, term, nearest}; }
    };

    void build_state_side(std::span<const double> mu, StateSide& side) const {
        side.scratch.resize(net_->num_state_points());
        if (squared()) {
            net_->state_sq_dists(mu, side.scratch);
        } else {
            net_->state_dists(mu, side.scratch);
        }
        side.idx.clear();
        side.term.clear();
        std::uint32_t best = 0;
        for (std::size_t a = 1; a < side.scratch.size(); ++a) {
            if (side.scratch[a] < side.scratch[best]) best = static_cast<std::uint32_t>(a);
        }
        side.nearest = best;
        if (spec_.family == KernelFamily::Knn) {
            if (spec_.k == 1) return;
            std::vector<std::pair<double, std::uint32_t>> window;
            detail::knn_window(side.scratch, spec_.k, window);
            for (const auto& [d, a] : window) {
                side.term.push_back(d);
                side.idx.push_back(a);
            }
            return;
        }
        const double bound = squared() ? spec_.bandwidth * spec_.bandwidth : spec_.bandwidth;
        for (std::size_t a = 0; a < side.scratch.size(); ++a) {
            if (side.scratch[a] < bound) {
                side.idx.push_back(static_cast<std::uint32_t>(a));
                side.term.push_back(side.scratch[a]);
            }
        }
    }

    // Gamma_K q at (mu, h^b) with mu described by `sn`.
    double evaluate(std::span<const double> q, const StateSideView& sn, std::size_t b) const {
        const std::size_t nh = net_->num_action_points();
        if (spec_.family == KernelFamily::Knn) {
            if (spec_.k == 1) return q[static_cast<std::size_t>(sn.nearest) * nh + b];
            return evaluate_knn(q, sn, b);
        }
        const double eps = spec_.bandwidth;
        const double bound = squared() ? eps * eps : eps;
        double num = 0.0;
        double den = 0.0;
        const std::size_t begin = action_lists_.row_begin(b);
        const std::size_t end = action_lists_.row_end(b);
        for (std::size_t s = 0; s < sn.idx.size(); ++s) {
            const double ds = sn.term[s];
            const double room = bound - ds;
            const double* qrow = q.data() + static_cast<std::size_t>(sn.idx[s]) * nh;
            for (std::size_t j = begin; j < end && action_lists_.term[j] < room; ++j) {
                const double d = squared() ? std::sqrt(ds + action_lists_.term[j]) : ds + action_lists_.term[j];
                const double phi = affinity(d);
                den += phi;
                num += phi * qrow[action_lists_.idx[j]];
            }
        }
        if (den > 0.0) return num / den;
        // No support within the bandwidth: fall back to the nearest cell,
        // which for an on-net action is (nearest state point, b).
        return q[static_cast<std::size_t>(sn.nearest) * nh + b];
    }

    // max over the action net, ties to the lowest index.
    std::pair<std::size_t, double> best_action(std::span<const double> q, const StateSideView& sn) const {
        const std::size_t nh = net_->num_action_points();
        if (spec_.family == KernelFamily::Knn && spec_.k == 1) {
            const double* qrow = q.data() + static_cast<std::size_t>(sn.nearest) * nh;
            std::size_t arg = 0;
            double best = qrow[0];
            for (std::size_t b = 1; b < nh; ++b) {
                if (qrow[b] > best) {
                    best = qrow[b];
                    arg = b;
                }
            }
            return {arg, best};
        }
        std::size_t arg = 0;
        double best = evaluate(q, sn, 0);
        for (std::size_t b = 1; b < nh; ++b) {
            const double v = evaluate(q, sn, b);
            if (v > best) {
                best = v;
                arg = b;
            }
        }
        return {arg, best};
    }

private:
    double affinity(double d) const {
        const double eps = spec_.bandwidth;
        switch (spec_.family) {
            case KernelFamily::Triangular:
                return eps - d;
            case KernelFamily::Gaussian: {
                const double t = eps - d;
                return std::exp(-t * t) * 0x1.9884533d43651p-2;  // 1/sqrt(2 pi)
            }
            case KernelFamily::Constant:
                return 1.0;
            case KernelFamily::Knn:
                break;
        }
        return 0.0;
    }

    double evaluate_knn(std::span<const double> q, const StateSideView& sn, std::size_t b) const {
        const std::size_t nh = net_->num_action_points();
        // Candidate pairs from the two tie-extended windows; k smallest by
        // (distance, cell) then a uniform average.
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(sn.idx.size() * (action_lists_.row_end(b) - action_lists_.row_begin(b)));
        for (std::size_t s = 0; s < sn.idx.size(); ++s) {
            for (std::size_t j = action_lists_.row_begin(b); j < action_lists_.row_end(b); ++j) {
                cand.emplace_back(sn.term[s] + action_lists_.term[j],
                                  static_cast<std::size_t>(sn.idx[s]) * nh + action_lists_.idx[j]);
            }
        }
        std::sort(cand.begin(), cand.end());
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(spec_.k), cand.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += q[cand[i].second];
        return sum / static_cast<double>(k);
    }

    const EpsilonNet* net_;
    KernelSpec spec_;
    detail::ActionLists action_lists_;
};

// Learned Q values on the net plus everything needed to evaluate the
// regressed function on all of C.
struct QTable {
    std::shared_ptr<const EpsilonNet> net;
    KernelSpec kernel{};
    double gamma = 0.0;
    std::vector<double> values;
    std::vector<double> delta_trace;  // sup-norm delta per sweep
    double value_bound = 0.0;         // max|r-hat| / (1 - gamma)
};

inline double q_at(const QTable& table, const LiftedPair& c) {
    return regress(table.values, *table.net, c, table.kernel);
}

// Stationary greedy policy mu -> argmax over the action net of the regressed
// Q at (mu, h~). Deterministic; ties resolve to the lowest net index.
class GreedyPolicy {
public:
    GreedyPolicy(std::shared_ptr<const EpsilonNet> net, KernelSpec kernel, std::vector<double> values)
        : net_(std::move(net)), engine_(*net_, kernel), values_(std::move(values)) {
        if (values_.size() != net_->size()) {
            throw ContractError("GreedyPolicy: table size does not match the net");
        }
    }

    const EpsilonNet& net() const { return *net_; }
    std::shared_ptr<const EpsilonNet> net_ptr() const { return net_; }
    const KernelSpec& kernel() const { return engine_.spec(); }
    std::span<const double> values() const { return values_; }

    std::size_t action_index(const StateDist& mu) const {
        KernelEngine::StateSide side;
        engine_.build_state_side(mu.span(), side);
        return engine_.best_action(values_, side.view()).first;
    }

    // Optimal value estimate v-hat(mu) = max over the action net.
    double value(const StateDist& mu) const {
        KernelEngine::StateSide side;
        engine_.build_state_side(mu.span(), side);
        return engine_.best_action(values_, side.view()).second;
    }

    const LocalPolicy& local_policy(std::size_t action_index) const {
        return net_->action_net()[action_index];
    }

    const LocalPolicy& act(const StateDist& mu) const { return local_policy(action_index(mu)); }

private:
    std::shared_ptr<const EpsilonNet> net_;
    KernelEngine engine_;
    std::vector<double> values_;
};

inline GreedyPolicy extract_policy(const QTable& table) {
    return GreedyPolicy(table.net, table.kernel, table.values);
}

// One draw of the epsilon'-greedy exploration policy on the action net. With
// probability explore_epsilon (or whenever no greedy source exists) the draw
// is uniform; the coin is always consumed so runs replay identically.
inline std::size_t greedy_or_uniform_action(const GreedyPolicy* greedy, const StateDist& mu,
                                            const EpsilonNet& net, const SolverConfig& cfg, Rng& rng) {
    if (net.num_action_points() == 0) throw ConfigError("greedy_or_uniform_action: empty action net");
    const double coin = rng.unit();
    if (greedy == nullptr || coin < cfg.explore_epsilon) {
        return rng.index(net.num_action_points());
    }
    return greedy->action_index(mu);
}

namespace detail {

inline void check_env_net(const MeanFieldEnv& env, const EpsilonNet& net) {
    if (env.num_states() != net.num_states() || env.num_actions() != net.num_actions()) {
        throw DimensionError("solver: environment and net dimensions differ");
    }
}

}  // namespace detail

// Queries the exact simulator once per net point ("sample G(mu,h) once for
// all net pairs"). Every cell holds exact (r, Phi) afterwards.
inline SampleStore collect_anchor(const MeanFieldEnv& env, const EpsilonNet& net,
                                  bool strict_paper_phi = false) {
    detail::check_env_net(env, net);
    SampleStore store;
    store.init(net.size(), net.num_states());
    const auto& states = net.state_net();
    const auto& actions = net.action_net();
    std::size_t cell = 0;
    for (std::size_t a = 0; a < states.size(); ++a) {
        for (std::size_t b = 0; b < actions.size(); ++b, ++cell) {
            const MfcTransition tr = env.step(states[a], actions[b]);
            store.record(cell, tr.reward, strict_paper_phi ? states[a].span() : tr.next_mu.span());
        }
    }
    store.steps_taken = static_cast<std::int64_t>(net.size());
    store.coverage_step = store.steps_taken;
    return store;
}

// Exploration phase of the learning loop: runs the environment under the
// epsilon'-greedy policy and updates the running averages of every cell whose
// epsilon-neighborhood contains the visited pair, until all cells are covered.
inline SampleStore explore_and_collect(const MeanFieldEnv& env, const EpsilonNet& net,
                                       const SolverConfig& cfg, const StateDist& initial_mu,
                                       const GreedyPolicy* greedy = nullptr) {
    cfg.validate();
    detail::check_env_net(env, net);
    if (cfg.collection == CollectionMode::Anchor) {
        return collect_anchor(env, net, cfg.strict_paper_phi);
    }

    const double eps = net.epsilon();
    const detail::ActionLists lists = detail::build_action_lists(net, eps, false);
    SampleStore store;
    store.init(net.size(), net.num_states());
    Rng rng(substream_seed(cfg.rng_seed, Stream::Exploration));
    StateDist mu = initial_mu;
    std::vector<double> sd(net.num_state_points());
    const std::size_t nh = net.num_action_points();

    for (std::int64_t t = 0; t < cfg.max_explore_steps; ++t) {
        const std::size_t b = greedy_or_uniform_action(greedy, mu, net, cfg, rng);
        const LocalPolicy& h = net.action_net()[b];
        const MfcTransition tr = env.step(mu, h);
        net.state_dists(mu.span(), sd);
        const std::span<const double> obs = cfg.strict_paper_phi ? mu.span() : tr.next_mu.span();
        for (std::size_t a = 0; a < sd.size(); ++a) {
            if (sd[a] >= eps) continue;
            const double room = eps - sd[a];
            for (std::size_t j = lists.row_begin(b); j < lists.row_end(b) && lists.term[j] < room; ++j) {
                store.record(a * nh + lists.idx[j], tr.reward, obs);
            }
        }
        store.steps_taken = t + 1;
        mu = tr.next_mu;
        if (store.fully_covered()) {
            store.coverage_step = t + 1;
            break;
        }
    }
    if (!store.fully_covered()) {
        const auto missing = store.uncovered(16);
        std::string msg = "exploration hit the step cap (" + std::to_string(cfg.max_explore_steps) +
                          ") with " + std::to_string(store.size() - store.visited_cells) +
                          " unvisited cells (controllability assumption may fail); first:";
        for (std::size_t i : missing) msg += " " + std::to_string(i);
        throw CoverageError(msg, store.uncovered(store.size()));
    }
    return store;
}

// Precomputed per-cell state-side data for the fixed-point iteration; the
// queries (Phi-hat(c^i), h~) never change across sweeps.
struct SweepPlan {
    KernelEngine engine;
    std::vector<std::uint32_t> sn_offset;
    std::vector<std::uint32_t> sn_idx;
    std::vector<double> sn_term;
    std::vector<std::uint32_t> sn_nearest;
    int threads = 0;

    StateSideView cell_view(std::size_t i) const {
        const std::size_t b = sn_offset[i];
        const std::size_t e = sn_offset[i + 1];
        return StateSideView{{sn_idx.data() + b, e - b}, {sn_term.data() + b, e - b}, sn_nearest[i]};
    }
};

inline SweepPlan prepare_sweep(const EpsilonNet& net, const SampleStore& store, const SolverConfig& cfg) {
    if (store.size() != net.size()) throw DimensionError("prepare_sweep: store does not match the net");
    if (!store.fully_covered()) {
        throw ContractError("prepare_sweep: store covers " + std::to_string(store.visited_cells) + " of " +
                            std::to_string(store.size()) + " cells");
    }
    SweepPlan plan{KernelEngine(net, cfg.kernel), {}, {}, {}, {}, cfg.threads};
    const std::size_t cells = net.size();
    plan.sn_offset.assign(cells + 1, 0);
    plan.sn_nearest.assign(cells, 0);

    std::vector<std::uint32_t> counts(cells, 0);
    // Pass 1: per-cell neighbor counts; pass 2: fill. Both embarrassingly
    // parallel and independent of the thread partition.
    parallel_for(cells, cfg.threads, [&](std::size_t lo, std::size_t hi) {
        KernelEngine::StateSide side;
        for (std::size_t i = lo; i < hi; ++i) {
            plan.engine.build_state_side(store.next_mu(i), side);
            counts[i] = static_cast<std::uint32_t>(side.idx.size());
            plan.sn_nearest[i] = side.nearest;
        }
    });
    for (std::size_t i = 0; i < cells; ++i) plan.sn_offset[i + 1] = plan.sn_offset[i] + counts[i];
    plan.sn_idx.resize(plan.sn_offset[cells]);
    plan.sn_term.resize(plan.sn_offset[cells]);
    parallel_for(cells, cfg.threads, [&](std::size_t lo, std::size_t hi) {
        KernelEngine::StateSide side;
        for (std::size_t i = lo; i < hi; ++i) {
            plan.engine.build_state_side(store.next_mu(i), side);
            std::copy(side.idx.begin(), side.idx.end(), plan.sn_idx.begin() + plan.sn_offset[i]);
            std::copy(side.term.begin(), side.term.end(), plan.sn_term.begin() + plan.sn_offset[i]);
        }
    });
    return plan;
}

// One Jacobi application of the approximated Bellman operator:
// q'(c^i) = r-hat(c^i) + gamma * max over h~ of Gamma_K q(Phi-hat(c^i), h~).
// Returns the sup-norm delta. Cells are independent, so the result is
// bitwise identical for any thread count.
inline double bellman_sweep(std::span<const double> q_in, std::span<double> q_out, const SweepPlan& plan,
                            const SampleStore& store, const SolverConfig& cfg) {
    const std::size_t cells = q_in.size();
    parallel_for(cells, plan.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto view = plan.cell_view(i);
            const double best = plan.engine.best_action(q_in, view).second;
            q_out[i] = store.reward_avg[i] + cfg.gamma * best;
        }
    });
    double delta = 0.0;
    for (std::size_t i = 0; i < cells; ++i) delta = std::max(delta, std::abs(q_out[i] - q_in[i]));
    return delta;
}

// Fixed-point iteration of the sampled Bellman operator from q0 = 0 until the
// sup-norm delta drops below fp_tolerance. Verifies the gamma-contraction
// certificate on the delta sequence and the V_max bound on the result.
inline QTable solve_fixed_point(const SampleStore& store, std::shared_ptr<const EpsilonNet> net,
                                const SolverConfig& cfg) {
    cfg.validate();
    SweepPlan plan = prepare_sweep(*net, store, cfg);

    QTable table;
    table.net = net;
    table.kernel = plan.engine.spec();
    table.gamma = cfg.gamma;

    double r_max = 0.0;
    for (double r : store.reward_avg) r_max = std::max(r_max, std::abs(r));
    table.value_bound = r_max / (1.0 - cfg.gamma);

    std::vector<double> q(net->size(), 0.0);
    std::vector<double> q_next(net->size(), 0.0);
    for (int sweep = 1; sweep <= cfg.max_fp_iters; ++sweep) {
        const double delta = bellman_sweep(q, q_next, plan, store, cfg);
        q.swap(q_next);
        if (!table.delta_trace.empty()) {
            const double prev = table.delta_trace.back();
            if (delta > cfg.gamma * prev + 1e-10) {
                throw ContractError("solve_fixed_point: contraction certificate violated at sweep " +
                                    std::to_string(sweep) + ": " + std::to_string(delta) + " > gamma * " +
                                    std::to_string(prev));
            }
        }
        table.delta_trace.push_back(delta);
        if (delta < cfg.fp_tolerance) {
            table.values = std::move(q);
            double norm = 0.0;
            for (double v : table.values) norm = std::max(norm, std::abs(v));
            if (norm > table.value_bound + 1e-9) {
                throw ContractError("solve_fixed_point: ||q|| = " + std::to_string(norm) +
                                    " exceeds V_max = " + std::to_string(table.value_bound));
            }
            return table;
        }
    }
    throw ConvergenceError("solve_fixed_point: no convergence to " + std::to_string(cfg.fp_tolerance) +
                           " within " + std::to_string(cfg.max_fp_iters) + " sweeps (last delta " +
                           std::to_string(table.delta_trace.back()) + ")",
                           table.delta_trace);
}

// Reference solution: value iteration of the approximated Bellman operator on
// a net at fine_epsilon with exact (r, Phi) from the simulator.
inline QTable oracle_value_iteration(const MeanFieldEnv& env, double fine_epsilon, SolverConfig cfg,
                                     NetLimits limits = {}) {
    cfg.epsilon = fine_epsilon;
    if (cfg.kernel.family != KernelFamily::Knn) cfg.kernel.bandwidth = fine_epsilon;
    auto net = std::make_shared<const EpsilonNet>(
        EpsilonNet::build(env.num_states(), env.num_actions(), fine_epsilon, env.mask(), limits));
    const SampleStore store = collect_anchor(env, *net);
    return solve_fixed_point(store, std::move(net), cfg);
}

// Covering-time measurement for the epsilon'-greedy exploration policy.
struct CoveringStats {
    std::vector<std::int64_t> steps;  // -1 where the cap was hit first
    std::int64_t cap = 0;

    int failures() const {
        int n = 0;
        for (auto s : steps) n += (s < 0) ? 1 : 0;
        return n;
    }

    double mean() const {
        double total = 0.0;
        int n = 0;
        for (auto s : steps) {
            if (s >= 0) {
                total += static_cast<double>(s);
                ++n;
            }
        }
        return n == 0 ? 0.0 : total / n;
    }

    // Lower-middle order statistic; failures sort as +infinity.
    std::int64_t median() const { return quantile(0.5); }

    std::int64_t quantile(double p) const {
        if (steps.empty()) return -1;
        std::vector<std::int64_t> s = steps;
        for (auto& v : s) {
            if (v < 0) v = std::numeric_limits<std::int64_t>::max();
        }
        std::sort(s.begin(), s.end());
        const auto pos = static_cast<std::size_t>(p * static_cast<double>(s.size() - 1));
        const std::int64_t v = s[pos];
        return v == std::numeric_limits<std::int64_t>::max() ? -1 : v;
    }

    std::int64_t max() const {
        std::int64_t m = -1;
        for (auto s : steps) m = std::max(m, s);
        return m;
    }
};

// Runs num_seeds independent exploration trajectories and records, per seed,
// the first step at which every cell's epsilon-neighborhood has been visited.
// A greedy source makes the non-exploring arm of the policy meaningful;
// without one every draw is uniform and explore_epsilon has no effect.
inline CoveringStats measure_covering_time(const MeanFieldEnv& env, const EpsilonNet& net,
                                           const SolverConfig& cfg, int num_seeds,
                                           const GreedyPolicy* greedy = nullptr,
                                           const StateDist* initial = nullptr) {
    cfg.validate();
    detail::check_env_net(env, net);
    const double eps = net.epsilon();
    const detail::ActionLists lists = detail::build_action_lists(net, eps, false);
    const std::size_t nh = net.num_action_points();

    CoveringStats stats;
    stats.cap = cfg.max_explore_steps;
    std::vector<double> sd(net.num_state_points());
    std::vector<std::uint8_t> visited;
    for (int s = 0; s < num_seeds; ++s) {
        Rng rng(substream_seed(cfg.rng_seed, Stream::CoveringTime, static_cast<std::uint64_t>(s)));
        visited.assign(net.size(), 0);
        std::size_t remaining = net.size();
        StateDist mu = initial != nullptr ? *initial : StateDist::uniform(net.num_states());
        std::int64_t covered_at = -1;
        for (std::int64_t t = 0; t < cfg.max_explore_steps && remaining > 0; ++t) {
            const std::size_t b = greedy_or_uniform_action(greedy, mu, net, cfg, rng);
            const MfcTransition tr = env.step(mu, net.action_net()[b]);
            net.state_dists(mu.span(), sd);
            for (std::size_t a = 0; a < sd.size(); ++a) {
                if (sd[a] >= eps) continue;
                const double room = eps - sd[a];
                for (std::size_t j = lists.row_begin(b); j < lists.row_end(b) && lists.term[j] < room; ++j) {
                    auto& flag = visited[a * nh + lists.idx[j]];
                    if (flag == 0) {
                        flag = 1;
                        --remaining;
                    }
                }
            }
            mu = tr.next_mu;
            if (remaining == 0) covered_at = t + 1;
        }
        stats.steps.push_back(covered_at);
    }
    return stats;
}

}  // namespace mfcq
