#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mfcq/env.hpp"
#include "mfcq/errors.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

// Shared-link congestion control: states are packet inventories 0..|X|-1,
// actions are sending rates 0..|U|-1 with the overshoot constraint u <= x.
// The link carries c units per agent; when the average sending rate F
// exceeds c, each packet is lost with probability (F - c) / F.
struct CongestionParams {
    int num_states = 3;
    int num_actions = 3;
    double a = 30.0;  // throughput weight
    double b = 10.0;  // latency^2 penalty
    double d = 50.0;  // loss penalty
    double c = 0.4;   // per-capita bandwidth

    void validate() const {
        if (num_states <= 0 || num_actions <= 0) {
            throw ConfigError("CongestionParams: state and action counts must be positive");
        }
        if (!(a >= 0.0) || !(b >= 0.0) || !(d >= 0.0)) {
            throw ConfigError("CongestionParams: reward coefficients must be nonnegative and finite");
        }
        if (!(c > 0.0)) throw ConfigError("CongestionParams: bandwidth c must be positive");
    }

    SupportMask overshoot_mask() const { return SupportMask::overshoot(num_states, num_actions); }
};

namespace detail {

inline void check_congestion_pair(const CongestionParams& params, const StateDist& mu,
                                  const LocalPolicy& h) {
    if (mu.size() != params.num_states || h.num_states() != params.num_states ||
        h.num_actions() != params.num_actions) {
        throw DimensionError("congestion: dimensions do not match the parameters");
    }
    h.check_mask(params.overshoot_mask());
}

}  // namespace detail

// Average sending rate F = sum_{x,u} u h(x)(u) mu(x).
inline double mean_send_rate(const CongestionParams& params, const StateDist& mu,
                             const LocalPolicy& h) {
    detail::check_congestion_pair(params, mu, h);
    double f = 0.0;
    for (int x = 0; x < params.num_states; ++x) {
        const double mx = mu[static_cast<std::size_t>(x)];
        if (mx == 0.0) continue;
        for (int u = 1; u < params.num_actions; ++u) {
            f += static_cast<double>(u) * h.row(x)[static_cast<std::size_t>(u)] * mx;
        }
    }
    return f;
}

// Per-packet loss probability: 0 under capacity, (F - c)/F above it.
inline double loss_probability(const CongestionParams& params, double rate) {
    if (rate < 0.0) throw ArgumentError("loss_probability: negative rate");
    if (rate <= params.c) return 0.0;
    return (rate - params.c) / rate;
}

// Population transition. Stage one moves mass x' -> x' - u for delivered
// packets and keeps lost packets in place; stage two refills the
// zero-inventory mass uniformly over X.
inline StateDist congestion_flow(const CongestionParams& params, const StateDist& mu,
                                 const LocalPolicy& h) {
    detail::check_congestion_pair(params, mu, h);
    const int nx = params.num_states;
    const double p = loss_probability(params, mean_send_rate(params, mu, h));

    std::vector<double> stage(static_cast<std::size_t>(nx), 0.0);
    for (int x = 0; x < nx; ++x) {
        const double mx = mu[static_cast<std::size_t>(x)];
        if (mx == 0.0) continue;
        const int umax = std::min(x, params.num_actions - 1);
        for (int u = 0; u <= umax; ++u) {
            stage[static_cast<std::size_t>(x - u)] += mx * h.row(x)[static_cast<std::size_t>(u)] * (1.0 - p);
        }
        stage[static_cast<std::size_t>(x)] += mx * p;
    }

    const double refill = stage[0] / static_cast<double>(nx);
    std::vector<double> next(static_cast<std::size_t>(nx));
    next[0] = refill;
    for (int x = 1; x < nx; ++x) next[static_cast<std::size_t>(x)] = stage[static_cast<std::size_t>(x)] + refill;
    return StateDist(std::move(next));
}

// Population reward a*F(1-p) - b*L^2 - d*F*p with L the mean inventory.
inline double congestion_reward(const CongestionParams& params, const StateDist& mu,
                                const LocalPolicy& h) {
    detail::check_congestion_pair(params, mu, h);
    const double f = mean_send_rate(params, mu, h);
    const double p = loss_probability(params, f);
    double latency = 0.0;
    for (int x = 1; x < params.num_states; ++x) {
        latency += static_cast<double>(x) * mu[static_cast<std::size_t>(x)];
    }
    return params.a * f * (1.0 - p) - params.b * latency * latency - params.d * f * p;
}

class CongestionEnv final : public MeanFieldEnv {
public:
    explicit CongestionEnv(CongestionParams params) : params_(params) {
        params_.validate();
    }

    int num_states() const override { return params_.num_states; }
    int num_actions() const override { return params_.num_actions; }
    std::optional<SupportMask> mask() const override { return params_.overshoot_mask(); }
    const CongestionParams& params() const { return params_; }

    double reward_bound() const override {
        const double umax = static_cast<double>(params_.num_actions - 1);
        const double xmax = static_cast<double>(params_.num_states - 1);
        const double best = params_.a * std::min(params_.c, umax);
        const double worst = params_.b * xmax * xmax + params_.d * std::max(0.0, umax - params_.c);
        return std::max(best, worst);
    }

    MfcTransition step(const StateDist& mu, const LocalPolicy& h) const override {
        return MfcTransition{congestion_flow(params_, mu, h), congestion_reward(params_, mu, h)};
    }

private:
    CongestionParams params_;
};

}  // namespace mfcq
