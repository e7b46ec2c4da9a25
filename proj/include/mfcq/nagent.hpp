#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mfcq/congestion.hpp"
#include "mfcq/errors.hpp"
#include "mfcq/parallel.hpp"
#include "mfcq/rng.hpp"
#include "mfcq/solver.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

// Per-agent inventories x^{j,N}.
struct JointState {
    std::vector<std::int32_t> x;

    int num_agents() const { return static_cast<int>(x.size()); }

    static JointState uniform_random(int n, int num_states, Rng& rng) {
        JointState joint;
        joint.x.resize(static_cast<std::size_t>(n));
        for (auto& v : joint.x) v = static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(num_states)));
        return joint;
    }
};

namespace detail {

struct CountsHash {
    std::size_t operator()(const std::vector<std::int32_t>& v) const {
        std::size_t h = 1469598103934665603ULL;
        for (const auto x : v) {
            h ^= static_cast<std::size_t>(x) + 0x9e3779b97f4a7c15ULL;
            h *= 1099511628211ULL;
        }
        return h;
    }
};

}  // namespace detail

// mu^N(x) = #{j : x^j = x} / N.
inline StateDist empirical_state_dist(const JointState& joint, int num_states) {
    if (joint.x.empty()) throw DimensionError("empirical_state_dist: no agents");
    std::vector<double> p(static_cast<std::size_t>(num_states), 0.0);
    const double w = 1.0 / static_cast<double>(joint.x.size());
    for (const auto v : joint.x) {
        if (v < 0 || v >= num_states) throw ContractError("empirical_state_dist: state out of range");
        p[static_cast<std::size_t>(v)] += w;
    }
    return StateDist(std::move(p));
}

struct NAgentStep {
    JointState next;
    std::vector<double> rewards;
    double mean_reward = 0.0;
    double realized_rate = 0.0;  // empirical F from the sampled actions
    double loss_prob = 0.0;
};

// One synchronous round of the stochastic N-agent congestion simulator.
// Each agent samples u^j ~ h(x^j) (the overshoot mask keeps u <= x), the
// realized average rate sets a common loss probability, losses hit agents
// independently, a lost packet re-enters the queue, and an agent whose
// post-loss inventory is zero draws a uniform refill.
//
// Per-agent reward: a*u(1-1L) - b*x*Lbar - d*u*1L, where Lbar is the mean
// inventory of the current joint state. Averaged over agents this matches
// congestion_reward(mu^N, h) in expectation as N grows.
inline NAgentStep nagent_step(const CongestionParams& params, const JointState& joint,
                              const LocalPolicy& h, Rng& rng) {
    params.validate();
    if (h.num_states() != params.num_states || h.num_actions() != params.num_actions) {
        throw DimensionError("nagent_step: policy does not match the parameters");
    }
    h.check_mask(params.overshoot_mask());
    const int n = joint.num_agents();
    if (n <= 0) throw DimensionError("nagent_step: no agents");

    double mean_inventory = 0.0;
    for (const auto x : joint.x) {
        if (x < 0 || x >= params.num_states) throw ContractError("nagent_step: state out of range");
        mean_inventory += static_cast<double>(x);
    }
    mean_inventory /= static_cast<double>(n);

    NAgentStep out;
    out.next.x.resize(static_cast<std::size_t>(n));
    out.rewards.resize(static_cast<std::size_t>(n));

    // Draw all sending rates first; the loss probability depends on the
    // realized average rate.
    std::vector<std::int32_t> u(static_cast<std::size_t>(n));
    double rate = 0.0;
    for (int j = 0; j < n; ++j) {
        const auto& row = h.row(joint.x[static_cast<std::size_t>(j)]);
        const double xi = rng.unit();
        double cum = 0.0;
        std::int32_t pick = -1;
        std::int32_t last_positive = 0;
        for (int a = 0; a < params.num_actions; ++a) {
            const double mass = row[static_cast<std::size_t>(a)];
            if (mass > 0.0) last_positive = static_cast<std::int32_t>(a);
            cum += mass;
            if (xi < cum) {
                pick = static_cast<std::int32_t>(a);
                break;
            }
        }
        // Guards the (measure-zero) case where rounding left cum below xi.
        if (pick < 0) pick = last_positive;
        u[static_cast<std::size_t>(j)] = pick;
        rate += static_cast<double>(pick);
    }
    rate /= static_cast<double>(n);
    const double p = loss_probability(params, rate);
    out.realized_rate = rate;
    out.loss_prob = p;

    double reward_sum = 0.0;
    for (int j = 0; j < n; ++j) {
        const std::int32_t xj = joint.x[static_cast<std::size_t>(j)];
        const std::int32_t uj = u[static_cast<std::size_t>(j)];
        const bool lost = rng.unit() < p;
        std::int32_t post = xj - uj + (lost ? uj : 0);
        if (post == 0) {
            post = static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(params.num_states)));
        }
        out.next.x[static_cast<std::size_t>(j)] = post;
        const double thr = lost ? 0.0 : static_cast<double>(uj);
        const double lossu = lost ? static_cast<double>(uj) : 0.0;
        const double r = params.a * thr - params.b * static_cast<double>(xj) * mean_inventory - params.d * lossu;
        out.rewards[static_cast<std::size_t>(j)] = r;
        reward_sum += r;
    }
    out.mean_reward = reward_sum / static_cast<double>(n);
    return out;
}

// Evaluates the mean-field greedy policy at the empirical distribution of a
// finite population, with memoization keyed on the exact state counts.
class MfcPolicyAdapter {
public:
    explicit MfcPolicyAdapter(const GreedyPolicy& policy) : policy_(&policy) {}

    std::size_t action_index(const JointState& joint) {
        const int nx = policy_->net().num_states();
        key_.assign(static_cast<std::size_t>(nx), 0);
        for (const auto x : joint.x) ++key_[static_cast<std::size_t>(x)];
        const auto it = cache_.find(key_);
        if (it != cache_.end()) return it->second;
        const std::size_t b = policy_->action_index(empirical_state_dist(joint, nx));
        cache_.emplace(key_, b);
        return b;
    }

    const LocalPolicy& operator()(const JointState& joint) {
        return policy_->local_policy(action_index(joint));
    }

private:
    const GreedyPolicy* policy_;
    std::vector<std::int32_t> key_;
    std::unordered_map<std::vector<std::int32_t>, std::size_t, detail::CountsHash> cache_;
};

// apply_mfc_policy: the local policy the central controller would issue for
// the empirical distribution of this joint state.
inline const LocalPolicy& apply_mfc_policy(const GreedyPolicy& policy, const JointState& joint) {
    return policy.local_policy(policy.action_index(empirical_state_dist(joint, policy.net().num_states())));
}

// Average rewards per round and their discounted sum
// R_N = sum_{t=1..T0} gamma^t rbar_t.
struct RolloutResult {
    std::vector<double> round_rewards;
    double discounted = 0.0;
};

template <typename Policy>
RolloutResult rollout(const CongestionParams& params, Policy&& policy, JointState joint, int horizon,
                      double gamma, Rng& rng) {
    RolloutResult res;
    res.round_rewards.reserve(static_cast<std::size_t>(horizon));
    double discount = 1.0;
    for (int t = 1; t <= horizon; ++t) {
        const LocalPolicy& h = policy(joint);
        NAgentStep step = nagent_step(params, joint, h, rng);
        discount *= gamma;
        res.round_rewards.push_back(step.mean_reward);
        res.discounted += discount * step.mean_reward;
        joint = std::move(step.next);
    }
    return res;
}

struct C1Result {
    double mean = 0.0;
    double ci_half_width = 0.0;  // 1.96 * sd / sqrt(repeats)
    std::vector<double> per_repeat;
    int num_agents = 0;
};

// C1(pi) = (1/K) sum_k R_N(x0^k) over uniformly random initial joint states,
// repeated `repeats` times for the confidence interval. Rollouts use
// independent per-index substreams, so results do not depend on the thread
// partition.
inline C1Result evaluate_c1(const GreedyPolicy& policy, const CongestionParams& params, int num_agents,
                            int rollouts, int horizon, double gamma, std::uint64_t master_seed,
                            int repeats = 20, int threads = 0) {
    if (rollouts < 1 || repeats < 1) throw ArgumentError("evaluate_c1: rollouts and repeats must be >= 1");
    const std::size_t total = static_cast<std::size_t>(rollouts) * static_cast<std::size_t>(repeats);
    std::vector<double> scores(total, 0.0);
    parallel_for(total, threads, [&](std::size_t lo, std::size_t hi) {
        MfcPolicyAdapter adapter(policy);
        for (std::size_t i = lo; i < hi; ++i) {
            Rng init_rng(substream_seed(master_seed, Stream::InitialStates, i));
            Rng dyn_rng(substream_seed(master_seed, Stream::Rollout, i));
            JointState joint = JointState::uniform_random(num_agents, params.num_states, init_rng);
            scores[i] = rollout(params, adapter, std::move(joint), horizon, gamma, dyn_rng).discounted;
        }
    });

    C1Result res;
    res.num_agents = num_agents;
    res.per_repeat.resize(static_cast<std::size_t>(repeats), 0.0);
    for (int r = 0; r < repeats; ++r) {
        double s = 0.0;
        for (int k = 0; k < rollouts; ++k) {
            s += scores[static_cast<std::size_t>(r) * static_cast<std::size_t>(rollouts) +
                        static_cast<std::size_t>(k)];
        }
        res.per_repeat[static_cast<std::size_t>(r)] = s / static_cast<double>(rollouts);
    }
    double mean = 0.0;
    for (double v : res.per_repeat) mean += v;
    mean /= static_cast<double>(repeats);
    double var = 0.0;
    for (double v : res.per_repeat) var += (v - mean) * (v - mean);
    var = repeats > 1 ? var / static_cast<double>(repeats - 1) : 0.0;
    res.mean = mean;
    res.ci_half_width = 1.96 * std::sqrt(var / static_cast<double>(repeats));
    return res;
}

struct C2Result {
    double mean = 0.0;       // mean of (R1 - R2) / R1 over included rollouts
    int included = 0;
    int excluded = 0;        // |R1| below the division guard
};

// C2(pi1, pi2) with common random numbers: each k shares the initial state
// and the dynamics stream across the two policies, so C2(pi, pi) = 0 exactly.
inline C2Result evaluate_c2(const GreedyPolicy& policy1, const GreedyPolicy& policy2,
                            const CongestionParams& params, int num_agents, int rollouts, int horizon,
                            double gamma, std::uint64_t master_seed, int threads = 0) {
    if (rollouts < 1) throw ArgumentError("evaluate_c2: rollouts must be >= 1");
    constexpr double kGuard = 1e-9;
    std::vector<double> r1(static_cast<std::size_t>(rollouts), 0.0);
    std::vector<double> r2(static_cast<std::size_t>(rollouts), 0.0);
    parallel_for(static_cast<std::size_t>(rollouts), threads, [&](std::size_t lo, std::size_t hi) {
        MfcPolicyAdapter a1(policy1);
        MfcPolicyAdapter a2(policy2);
        for (std::size_t k = lo; k < hi; ++k) {
            Rng init_rng(substream_seed(master_seed, Stream::InitialStates, k));
            const JointState joint = JointState::uniform_random(num_agents, params.num_states, init_rng);
            Rng dyn1(substream_seed(master_seed, Stream::Rollout, k));
            Rng dyn2(substream_seed(master_seed, Stream::Rollout, k));
            r1[k] = rollout(params, a1, joint, horizon, gamma, dyn1).discounted;
            r2[k] = rollout(params, a2, joint, horizon, gamma, dyn2).discounted;
        }
    });
    C2Result res;
    double sum = 0.0;
    for (int k = 0; k < rollouts; ++k) {
        const double a = r1[static_cast<std::size_t>(k)];
        if (std::abs(a) < kGuard) {
            ++res.excluded;
            continue;
        }
        sum += (a - r2[static_cast<std::size_t>(k)]) / a;
        ++res.included;
    }
    res.mean = res.included > 0 ? sum / static_cast<double>(res.included) : 0.0;
    return res;
}

struct GapRow {
    int num_agents = 0;
    int seed = 0;
    double n_agent_value = 0.0;   // u_N: Monte-Carlo N-agent value
    double mean_field_value = 0.0;  // v: deterministic mean-field value
    double gap = 0.0;
    double tail_bound = 0.0;      // gamma^T0 * V_max truncation bound
};

// |u_N - v| under one policy: the N-agent Monte-Carlo value against the
// deterministic mean-field flow from the same initial empirical
// distributions, both truncated at the horizon.
inline std::vector<GapRow> meanfield_gap(const GreedyPolicy& policy, const CongestionParams& params,
                                         std::span<const int> n_list, int rollouts, int horizon,
                                         double gamma, std::uint64_t master_seed, int num_seeds,
                                         int threads = 0) {
    if (rollouts < 1 || num_seeds < 1) throw ArgumentError("meanfield_gap: rollouts and seeds must be >= 1");
    const CongestionEnv env(params);
    const double vmax = env.reward_bound() / (1.0 - gamma);
    const double tail = std::pow(gamma, horizon) * vmax;

    std::vector<GapRow> rows;
    for (const int n : n_list) {
        for (int s = 0; s < num_seeds; ++s) {
            const std::uint64_t base =
                substream_seed(master_seed, Stream::GapInitialStates,
                               (static_cast<std::uint64_t>(n) << 20) + static_cast<std::uint64_t>(s));
            std::vector<double> u_scores(static_cast<std::size_t>(rollouts), 0.0);
            std::vector<double> v_scores(static_cast<std::size_t>(rollouts), 0.0);
            parallel_for(static_cast<std::size_t>(rollouts), threads, [&](std::size_t lo, std::size_t hi) {
                MfcPolicyAdapter adapter(policy);
                for (std::size_t k = lo; k < hi; ++k) {
                    Rng init_rng(substream_seed(base, Stream::InitialStates, k));
                    const JointState joint = JointState::uniform_random(n, params.num_states, init_rng);
                    Rng dyn(substream_seed(base, Stream::GapRollout, k));
                    u_scores[k] = rollout(params, adapter, joint, horizon, gamma, dyn).discounted;
                }
            });
            // Deterministic mean-field flow from the same starts, same
            // t=1..T0 discounting; memoized on the initial counts.
            std::unordered_map<std::vector<std::int32_t>, double, detail::CountsHash> mf_cache;
            for (std::size_t k = 0; k < static_cast<std::size_t>(rollouts); ++k) {
                Rng init_rng(substream_seed(base, Stream::InitialStates, k));
                const JointState joint = JointState::uniform_random(n, params.num_states, init_rng);
                std::vector<std::int32_t> counts(static_cast<std::size_t>(params.num_states), 0);
                for (const auto x : joint.x) ++counts[static_cast<std::size_t>(x)];
                const auto it = mf_cache.find(counts);
                if (it != mf_cache.end()) {
                    v_scores[k] = it->second;
                    continue;
                }
                StateDist mu = empirical_state_dist(joint, params.num_states);
                double discount = 1.0;
                double value = 0.0;
                for (int t = 1; t <= horizon; ++t) {
                    const LocalPolicy& h = policy.act(mu);
                    const MfcTransition tr = env.step(mu, h);
                    discount *= gamma;
                    value += discount * tr.reward;
                    mu = tr.next_mu;
                }
                v_scores[k] = value;
                mf_cache.emplace(std::move(counts), value);
            }
            GapRow row;
            row.num_agents = n;
            row.seed = s;
            for (int k = 0; k < rollouts; ++k) {
                row.n_agent_value += u_scores[static_cast<std::size_t>(k)];
                row.mean_field_value += v_scores[static_cast<std::size_t>(k)];
            }
            row.n_agent_value /= static_cast<double>(rollouts);
            row.mean_field_value /= static_cast<double>(rollouts);
            row.gap = std::abs(row.n_agent_value - row.mean_field_value);
            row.tail_bound = tail;
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace mfcq
