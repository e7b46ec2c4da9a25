#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfcq/errors.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

// A single representative agent: transition kernel P(x, mu, u, nu) and reward
// r~(x, mu, u, nu), with a declared reward bound and optional Lipschitz hints
// used only for diagnostics.
struct AgentModel {
    int num_states = 0;
    int num_actions = 0;
    std::function<StateDist(int x, const StateDist& mu, int u, const ActionDist& nu)> transition;
    std::function<double(int x, const StateDist& mu, int u, const ActionDist& nu)> reward;
    double reward_bound = 0.0;
    std::optional<double> lipschitz_transition;
    std::optional<double> lipschitz_reward;
};

// nu(mu, h)(u) = sum_x h(x)(u) mu(x): the population action distribution.
inline ActionDist action_dist(const StateDist& mu, const LocalPolicy& h) {
    if (mu.size() != h.num_states()) throw DimensionError("action_dist: |X| mismatch");
    std::vector<double> nu(static_cast<std::size_t>(h.num_actions()), 0.0);
    for (int x = 0; x < mu.size(); ++x) {
        const double mx = mu[static_cast<std::size_t>(x)];
        if (mx == 0.0) continue;
        for (int u = 0; u < h.num_actions(); ++u) {
            nu[static_cast<std::size_t>(u)] += h.row(x)[static_cast<std::size_t>(u)] * mx;
        }
    }
    return ActionDist(std::move(nu));
}

// Aggregated dynamics: Phi(mu, h)(x') = sum_x sum_u P(x,mu,u,nu)(x') mu(x) h(x)(u).
inline StateDist aggregate_flow(const AgentModel& model, const StateDist& mu, const LocalPolicy& h) {
    if (mu.size() != model.num_states || h.num_states() != model.num_states ||
        h.num_actions() != model.num_actions) {
        throw DimensionError("aggregate_flow: dimensions do not match the model");
    }
    const ActionDist nu = action_dist(mu, h);
    std::vector<double> next(static_cast<std::size_t>(model.num_states), 0.0);
    for (int x = 0; x < model.num_states; ++x) {
        const double mx = mu[static_cast<std::size_t>(x)];
        if (mx == 0.0) continue;
        for (int u = 0; u < model.num_actions; ++u) {
            const double w = mx * h.row(x)[static_cast<std::size_t>(u)];
            if (w == 0.0) continue;
            StateDist px;
            try {
                px = model.transition(x, mu, u, nu);
            } catch (const ContractError& e) {
                throw ContractError(std::string("aggregate_flow: model transition invalid: ") + e.what());
            }
            if (px.size() != model.num_states) {
                throw ContractError("aggregate_flow: model transition has wrong dimension");
            }
            for (int y = 0; y < model.num_states; ++y) {
                next[static_cast<std::size_t>(y)] += w * px[static_cast<std::size_t>(y)];
            }
        }
    }
    return StateDist(std::move(next));
}

// Aggregated reward: r(mu, h) = sum_x sum_u r~(x,mu,u,nu) mu(x) h(x)(u).
inline double aggregate_reward(const AgentModel& model, const StateDist& mu, const LocalPolicy& h) {
    if (mu.size() != model.num_states || h.num_states() != model.num_states ||
        h.num_actions() != model.num_actions) {
        throw DimensionError("aggregate_reward: dimensions do not match the model");
    }
    const ActionDist nu = action_dist(mu, h);
    double r = 0.0;
    for (int x = 0; x < model.num_states; ++x) {
        const double mx = mu[static_cast<std::size_t>(x)];
        if (mx == 0.0) continue;
        for (int u = 0; u < model.num_actions; ++u) {
            const double w = mx * h.row(x)[static_cast<std::size_t>(u)];
            if (w == 0.0) continue;
            const double rw = model.reward(x, mu, u, nu);
            if (std::abs(rw) > model.reward_bound + 1e-12) {
                throw ContractError("aggregate_reward: model reward " + std::to_string(rw) +
                                    " exceeds declared bound " + std::to_string(model.reward_bound));
            }
            r += w * rw;
        }
    }
    return r;
}

struct MfcTransition {
    StateDist next_mu;
    double reward = 0.0;
};

// The exact mean-field simulator G(mu, h) = (mu', r). Deterministic: the
// aggregated dynamics carry no noise.
class MeanFieldEnv {
public:
    virtual ~MeanFieldEnv() = default;
    virtual int num_states() const = 0;
    virtual int num_actions() const = 0;
    virtual std::optional<SupportMask> mask() const { return std::nullopt; }
    virtual double reward_bound() const = 0;
    virtual MfcTransition step(const StateDist& mu, const LocalPolicy& h) const = 0;
};

// Generic environment assembled from a per-agent model via aggregation.
class AgentModelEnv final : public MeanFieldEnv {
public:
    explicit AgentModelEnv(AgentModel model) : model_(std::move(model)) {
        if (model_.num_states <= 0 || model_.num_actions <= 0 || !model_.transition || !model_.reward) {
            throw ConfigError("AgentModelEnv: incomplete model");
        }
    }

    int num_states() const override { return model_.num_states; }
    int num_actions() const override { return model_.num_actions; }
    double reward_bound() const override { return model_.reward_bound; }
    const AgentModel& model() const { return model_; }

    MfcTransition step(const StateDist& mu, const LocalPolicy& h) const override {
        return MfcTransition{aggregate_flow(model_, mu, h), aggregate_reward(model_, mu, h)};
    }

private:
    AgentModel model_;
};

inline MfcTransition mfc_simulate(const MeanFieldEnv& env, const StateDist& mu, const LocalPolicy& h) {
    return env.step(mu, h);
}

}  // namespace mfcq
