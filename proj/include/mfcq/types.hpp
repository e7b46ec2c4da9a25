#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfcq/errors.hpp"

namespace mfcq {

// Absolute tolerance for simplex membership (nonnegativity, sum to one).
inline constexpr double kSimplexTol = 1e-12;

namespace detail {

inline void check_simplex(std::span<const double> p, const char* what) {
    if (p.empty()) throw DimensionError(std::string(what) + ": empty distribution");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= -kSimplexTol)) {
            throw ContractError(std::string(what) + ": negative mass " + std::to_string(v));
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexTol) {
        throw ContractError(std::string(what) + ": mass sums to " + std::to_string(sum));
    }
}

inline double l1_distance(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    }
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

}  // namespace detail

// A point of P(X): probability mass per state.
class StateDist {
public:
    StateDist() = default;

    explicit StateDist(std::vector<double> probs) : p_(std::move(probs)) {
        detail::check_simplex(p_, "StateDist");
    }

    static StateDist delta(int n, int i) {
        std::vector<double> p(static_cast<std::size_t>(n), 0.0);
        p.at(static_cast<std::size_t>(i)) = 1.0;
        return StateDist(std::move(p));
    }

    static StateDist uniform(int n) {
        if (n <= 0) throw DimensionError("StateDist::uniform: n must be positive");
        return StateDist(std::vector<double>(static_cast<std::size_t>(n), 1.0 / n));
    }

    int size() const { return static_cast<int>(p_.size()); }
    double operator[](std::size_t i) const { return p_[i]; }
    const std::vector<double>& probs() const { return p_; }
    std::span<const double> span() const { return p_; }

    friend bool operator==(const StateDist& a, const StateDist& b) { return a.p_ == b.p_; }

private:
    std::vector<double> p_;
};

// A point of P(U): probability mass per action.
class ActionDist {
public:
    ActionDist() = default;

    explicit ActionDist(std::vector<double> probs) : p_(std::move(probs)) {
        detail::check_simplex(p_, "ActionDist");
    }

    static ActionDist delta(int n, int i) {
        std::vector<double> p(static_cast<std::size_t>(n), 0.0);
        p.at(static_cast<std::size_t>(i)) = 1.0;
        return ActionDist(std::move(p));
    }

    static ActionDist uniform(int n) {
        if (n <= 0) throw DimensionError("ActionDist::uniform: n must be positive");
        return ActionDist(std::vector<double>(static_cast<std::size_t>(n), 1.0 / n));
    }

    int size() const { return static_cast<int>(p_.size()); }
    double operator[](std::size_t i) const { return p_[i]; }
    const std::vector<double>& probs() const { return p_; }
    std::span<const double> span() const { return p_; }

    friend bool operator==(const ActionDist& a, const ActionDist& b) { return a.p_ == b.p_; }

private:
    std::vector<double> p_;
};

// Per-state allowed-action set, for environments that forbid some actions.
class SupportMask {
public:
    SupportMask(int num_states, int num_actions, std::vector<std::uint8_t> allowed)
        : nx_(num_states), nu_(num_actions), allowed_(std::move(allowed)) {
        if (nx_ <= 0 || nu_ <= 0 ||
            allowed_.size() != static_cast<std::size_t>(nx_) * static_cast<std::size_t>(nu_)) {
            throw DimensionError("SupportMask: bad dimensions");
        }
        for (int x = 0; x < nx_; ++x) {
            if (allowed_count(x) == 0) {
                throw ConfigError("SupportMask: state " + std::to_string(x) + " has no allowed action");
            }
        }
    }

    // Sending more than the current inventory is disallowed: u <= x.
    static SupportMask overshoot(int num_states, int num_actions) {
        std::vector<std::uint8_t> allowed(
            static_cast<std::size_t>(num_states) * static_cast<std::size_t>(num_actions), 0);
        for (int x = 0; x < num_states; ++x) {
            for (int u = 0; u < num_actions; ++u) {
                if (u <= x) allowed[static_cast<std::size_t>(x) * num_actions + u] = 1;
            }
        }
        return SupportMask(num_states, num_actions, std::move(allowed));
    }

    int num_states() const { return nx_; }
    int num_actions() const { return nu_; }

    bool allowed(int x, int u) const {
        return allowed_[static_cast<std::size_t>(x) * nu_ + u] != 0;
    }

    int allowed_count(int x) const {
        int n = 0;
        for (int u = 0; u < nu_; ++u) n += allowed(x, u) ? 1 : 0;
        return n;
    }

    std::vector<int> allowed_actions(int x) const {
        std::vector<int> us;
        for (int u = 0; u < nu_; ++u) {
            if (allowed(x, u)) us.push_back(u);
        }
        return us;
    }

    friend bool operator==(const SupportMask& a, const SupportMask& b) {
        return a.nx_ == b.nx_ && a.nu_ == b.nu_ && a.allowed_ == b.allowed_;
    }

private:
    int nx_ = 0;
    int nu_ = 0;
    std::vector<std::uint8_t> allowed_;
};

// A local policy h: X -> P(U), one action distribution per state.
class LocalPolicy {
public:
    LocalPolicy() = default;

    explicit LocalPolicy(std::vector<ActionDist> rows, std::optional<SupportMask> mask = std::nullopt)
        : rows_(std::move(rows)), mask_(std::move(mask)) {
        if (rows_.empty()) throw DimensionError("LocalPolicy: no rows");
        const int nu = rows_.front().size();
        for (const auto& row : rows_) {
            if (row.size() != nu) throw DimensionError("LocalPolicy: ragged rows");
        }
        if (mask_.has_value()) {
            if (mask_->num_states() != num_states() || mask_->num_actions() != nu) {
                throw DimensionError("LocalPolicy: mask dimensions do not match rows");
            }
            check_mask(*mask_);
        }
    }

    // All-mass-on-one-action policy: h(x) = delta_{action(x)}.
    static LocalPolicy deterministic(int num_states, int num_actions, std::span<const int> action_per_state,
                                     std::optional<SupportMask> mask = std::nullopt) {
        if (static_cast<int>(action_per_state.size()) != num_states) {
            throw DimensionError("LocalPolicy::deterministic: wrong number of actions");
        }
        std::vector<ActionDist> rows;
        rows.reserve(static_cast<std::size_t>(num_states));
        for (int x = 0; x < num_states; ++x) {
            rows.push_back(ActionDist::delta(num_actions, action_per_state[static_cast<std::size_t>(x)]));
        }
        return LocalPolicy(std::move(rows), std::move(mask));
    }

    int num_states() const { return static_cast<int>(rows_.size()); }
    int num_actions() const { return rows_.empty() ? 0 : rows_.front().size(); }
    const ActionDist& row(int x) const { return rows_[static_cast<std::size_t>(x)]; }
    const std::vector<ActionDist>& rows() const { return rows_; }
    const std::optional<SupportMask>& mask() const { return mask_; }

    // Verifies h(x)(u) == 0 for every masked-out action.
    void check_mask(const SupportMask& mask) const {
        for (int x = 0; x < num_states(); ++x) {
            for (int u = 0; u < num_actions(); ++u) {
                if (!mask.allowed(x, u) && row(x)[static_cast<std::size_t>(u)] > kSimplexTol) {
                    throw ContractError("LocalPolicy: mass " + std::to_string(row(x)[static_cast<std::size_t>(u)]) +
                                        " on disallowed action u=" + std::to_string(u) +
                                        " at state x=" + std::to_string(x));
                }
            }
        }
    }

    friend bool operator==(const LocalPolicy& a, const LocalPolicy& b) { return a.rows_ == b.rows_; }

private:
    std::vector<ActionDist> rows_;
    std::optional<SupportMask> mask_;
};

// A point c = (mu, h) of the lifted space C = P(X) x H.
struct LiftedPair {
    StateDist mu;
    LocalPolicy h;
};

// l1 distance on P(X).
inline double dist_state(const StateDist& a, const StateDist& b) {
    return detail::l1_distance(a.span(), b.span(), "dist_state");
}

// d_H(h1, h2) = max_x ||h1(x) - h2(x)||_1.
inline double dist_policy(const LocalPolicy& a, const LocalPolicy& b) {
    if (a.num_states() != b.num_states() || a.num_actions() != b.num_actions()) {
        throw DimensionError("dist_policy: policy dimensions differ");
    }
    double d = 0.0;
    for (int x = 0; x < a.num_states(); ++x) {
        d = std::max(d, detail::l1_distance(a.row(x).span(), b.row(x).span(), "dist_policy"));
    }
    return d;
}

// d_C((mu1,h1),(mu2,h2)) = ||mu1 - mu2||_1 + d_H(h1, h2).
inline double dist_lifted(const LiftedPair& a, const LiftedPair& b) {
    return dist_state(a.mu, b.mu) + dist_policy(a.h, b.h);
}

}  // namespace mfcq
