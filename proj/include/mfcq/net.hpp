#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfcq/errors.hpp"
#include "mfcq/grid.hpp"
#include "mfcq/rng.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

struct NetLimits {
    std::uint64_t max_cells = 20'000'000;
    std::uint64_t max_action_points = 200'000;
};

inline constexpr int kCoveringSamples = 10'000;
inline constexpr std::uint64_t kCertificationSeed = 0x6e65744365727431ULL;

// Finite covering of the lifted space C = P(X) x H at radius epsilon.
//
// The net is the product of a uniform state grid on P(X) and, per state, a
// uniform grid on the (possibly masked) action simplex; all grids share one
// step 1/m, the largest for which the analytic worst-case covering radius of
// the product stays below epsilon. Covering is then certified by sampling.
// Cells are indexed i = a * N_H + b with a the state-grid index and b the
// action-net index, so the full point list never needs materializing.
class EpsilonNet {
public:
    static EpsilonNet build(int num_states, int num_actions, double epsilon,
                            std::optional<SupportMask> mask = std::nullopt,
                            NetLimits limits = {}) {
        if (num_states <= 0 || num_actions <= 0) {
            throw ConfigError("EpsilonNet: state and action counts must be positive");
        }
        if (!(epsilon > 0.0)) throw ConfigError("EpsilonNet: epsilon must be positive");
        if (mask.has_value() &&
            (mask->num_states() != num_states || mask->num_actions() != num_actions)) {
            throw DimensionError("EpsilonNet: mask dimensions do not match");
        }

        EpsilonNet net;
        net.nx_ = num_states;
        net.nu_ = num_actions;
        net.epsilon_ = epsilon;
        net.mask_ = std::move(mask);

        std::vector<int> row_dims(static_cast<std::size_t>(num_states), num_actions);
        if (net.mask_.has_value()) {
            for (int x = 0; x < num_states; ++x) {
                row_dims[static_cast<std::size_t>(x)] = net.mask_->allowed_count(x);
            }
        }

        // Largest step 1/m with analytic product covering radius < epsilon.
        const auto radius_for = [&](int m) {
            const double s = 1.0 / m;
            double r = simplex_covering_radius_l1(num_states, s);
            double rh = 0.0;
            for (int dim : row_dims) rh = std::max(rh, simplex_covering_radius_l1(dim, s));
            return r + rh;
        };
        int m = 1;
        while (!(radius_for(m) < epsilon)) {
            ++m;
            if (m > 1'000'000) throw ConfigError("EpsilonNet: epsilon too small for a tractable grid");
        }
        net.m_ = m;
        net.analytic_radius_ = radius_for(m);

        // Size guard before materializing anything.
        long double cells = static_cast<long double>(simplex_grid_size(num_states, m));
        long double actions = 1.0L;
        for (int dim : row_dims) actions *= static_cast<long double>(simplex_grid_size(dim, m));
        cells *= actions;
        if (actions > static_cast<long double>(limits.max_action_points)) {
            throw ResourceError("EpsilonNet: induced action net would have " +
                                std::to_string(static_cast<double>(actions)) +
                                " points, over the cap of " + std::to_string(limits.max_action_points));
        }
        if (cells > static_cast<long double>(limits.max_cells)) {
            throw ResourceError("EpsilonNet: N_epsilon = " + std::to_string(static_cast<double>(cells)) +
                                " cells, over the cap of " + std::to_string(limits.max_cells));
        }

        net.build_grids(row_dims);
        net.certify_covering();
        return net;
    }

    int num_states() const { return nx_; }
    int num_actions() const { return nu_; }
    double epsilon() const { return epsilon_; }
    int grid_m() const { return m_; }
    double grid_step() const { return 1.0 / m_; }
    double analytic_covering_radius() const { return analytic_radius_; }
    double measured_covering_radius() const { return measured_radius_; }
    const std::optional<SupportMask>& mask() const { return mask_; }

    const std::vector<StateDist>& state_net() const { return state_net_; }
    const std::vector<LocalPolicy>& action_net() const { return action_net_; }
    const std::vector<ActionDist>& row_grid(int x) const { return row_grids_[static_cast<std::size_t>(x)]; }

    std::size_t num_state_points() const { return state_net_.size(); }
    std::size_t num_action_points() const { return action_net_.size(); }
    std::size_t size() const { return state_net_.size() * action_net_.size(); }

    std::size_t state_index_of(std::size_t cell) const { return cell / action_net_.size(); }
    std::size_t action_index_of(std::size_t cell) const { return cell % action_net_.size(); }
    std::size_t cell_index(std::size_t a, std::size_t b) const { return a * action_net_.size() + b; }

    // Row-grid index of action-net point b at state x.
    std::uint32_t row_index(std::size_t b, int x) const {
        return row_index_[b * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(x)];
    }

    LiftedPair point(std::size_t cell) const {
        if (cell >= size()) throw ArgumentError("EpsilonNet::point: index out of range");
        return LiftedPair{state_net_[state_index_of(cell)], action_net_[action_index_of(cell)]};
    }

    // l1 distances from mu to every state-net point.
    void state_dists(const StateDist& mu, std::span<double> out) const {
        if (mu.size() != nx_) throw DimensionError("EpsilonNet::state_dists: wrong dimension");
        state_dists(mu.span(), out);
    }

    // Unvalidated span variant for hot paths (stored averages are known-valid).
    void state_dists(std::span<const double> mu, std::span<double> out) const {
        if (out.size() != state_net_.size()) throw DimensionError("EpsilonNet::state_dists: bad buffer");
        for (std::size_t a = 0; a < state_net_.size(); ++a) {
            const auto& g = state_net_[a];
            double d = 0.0;
            for (int i = 0; i < nx_; ++i) {
                d += std::abs(mu[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(i)]);
            }
            out[a] = d;
        }
    }

    // d_H distances from h to every action-net point.
    void action_dists(const LocalPolicy& h, std::span<double> out) const {
        if (h.num_states() != nx_ || h.num_actions() != nu_) {
            throw DimensionError("EpsilonNet::action_dists: wrong dimension");
        }
        if (out.size() != action_net_.size()) throw DimensionError("EpsilonNet::action_dists: bad buffer");
        // Per-row distance tables, then a max over rows per net point.
        std::vector<std::vector<double>> rd(static_cast<std::size_t>(nx_));
        for (int x = 0; x < nx_; ++x) {
            const auto& grid = row_grids_[static_cast<std::size_t>(x)];
            auto& v = rd[static_cast<std::size_t>(x)];
            v.resize(grid.size());
            for (std::size_t j = 0; j < grid.size(); ++j) {
                v[j] = detail::l1_distance(h.row(x).span(), grid[j].span(), "action_dists");
            }
        }
        for (std::size_t b = 0; b < action_net_.size(); ++b) {
            double d = 0.0;
            for (int x = 0; x < nx_; ++x) {
                d = std::max(d, rd[static_cast<std::size_t>(x)][row_index(b, x)]);
            }
            out[b] = d;
        }
    }

    // Squared l2 distances (state part / summed action rows), for the
    // Euclidean kernel metric option.
    void state_sq_dists(const StateDist& mu, std::span<double> out) const {
        if (mu.size() != nx_) throw DimensionError("EpsilonNet::state_sq_dists: wrong dimension");
        state_sq_dists(mu.span(), out);
    }

    void state_sq_dists(std::span<const double> mu, std::span<double> out) const {
        for (std::size_t a = 0; a < state_net_.size(); ++a) {
            double s = 0.0;
            for (int i = 0; i < nx_; ++i) {
                const double d = mu[static_cast<std::size_t>(i)] - state_net_[a][static_cast<std::size_t>(i)];
                s += d * d;
            }
            out[a] = s;
        }
    }

    void action_sq_dists(const LocalPolicy& h, std::span<double> out) const {
        if (h.num_states() != nx_ || h.num_actions() != nu_) {
            throw DimensionError("EpsilonNet::action_sq_dists: wrong dimension");
        }
        std::vector<std::vector<double>> rd(static_cast<std::size_t>(nx_));
        for (int x = 0; x < nx_; ++x) {
            const auto& grid = row_grids_[static_cast<std::size_t>(x)];
            auto& v = rd[static_cast<std::size_t>(x)];
            v.resize(grid.size());
            for (std::size_t j = 0; j < grid.size(); ++j) {
                double s = 0.0;
                for (int u = 0; u < nu_; ++u) {
                    const double d = h.row(x)[static_cast<std::size_t>(u)] - grid[j][static_cast<std::size_t>(u)];
                    s += d * d;
                }
                v[j] = s;
            }
        }
        for (std::size_t b = 0; b < action_net_.size(); ++b) {
            double s = 0.0;
            for (int x = 0; x < nx_; ++x) s += rd[static_cast<std::size_t>(x)][row_index(b, x)];
            out[b] = s;
        }
    }

    // Indices i with d_C(c^i, c) < radius, ascending.
    std::vector<std::size_t> neighbors_within(const LiftedPair& c, double radius) const {
        if (!(radius > 0.0)) throw ArgumentError("neighbors_within: radius must be positive");
        std::vector<std::pair<std::size_t, double>> hits;
        neighbors_within(c, radius, hits);
        std::vector<std::size_t> out;
        out.reserve(hits.size());
        for (const auto& [i, d] : hits) out.push_back(i);
        return out;
    }

    // Same, keeping the distances (ascending cell index).
    void neighbors_within(const LiftedPair& c, double radius,
                          std::vector<std::pair<std::size_t, double>>& out) const {
        out.clear();
        std::vector<double> sd(state_net_.size());
        std::vector<double> ad(action_net_.size());
        state_dists(c.mu, sd);
        action_dists(c.h, ad);
        for (std::size_t a = 0; a < sd.size(); ++a) {
            if (sd[a] >= radius) continue;
            const double room = radius - sd[a];
            for (std::size_t b = 0; b < ad.size(); ++b) {
                if (ad[b] < room) out.emplace_back(cell_index(a, b), sd[a] + ad[b]);
            }
        }
    }

    // k nearest cells by d_C, ties broken by lower cell index.
    std::vector<std::size_t> nearest(const LiftedPair& c, std::size_t k) const {
        if (k == 0) throw ArgumentError("nearest: k must be positive");
        if (k > size()) {
            throw ArgumentError("nearest: k = " + std::to_string(k) + " exceeds net size " +
                                std::to_string(size()));
        }
        std::vector<double> sd(state_net_.size());
        std::vector<double> ad(action_net_.size());
        state_dists(c.mu, sd);
        action_dists(c.h, ad);
        return nearest_from_factors(sd, ad, k);
    }

    // k smallest sums sd[a] + ad[b]; factor ties resolved by lower index so
    // the global (distance, cell) order is exact.
    std::vector<std::size_t> nearest_from_factors(std::span<const double> sd, std::span<const double> ad,
                                                  std::size_t k) const {
        const std::size_t na = sd.size();
        const std::size_t nb = ad.size();
        std::vector<std::uint32_t> sa(na), sb(nb);
        for (std::size_t i = 0; i < na; ++i) sa[i] = static_cast<std::uint32_t>(i);
        for (std::size_t i = 0; i < nb; ++i) sb[i] = static_cast<std::uint32_t>(i);
        std::sort(sa.begin(), sa.end(), [&](auto l, auto r) {
            return sd[l] != sd[r] ? sd[l] < sd[r] : l < r;
        });
        std::sort(sb.begin(), sb.end(), [&](auto l, auto r) {
            return ad[l] != ad[r] ? ad[l] < ad[r] : l < r;
        });

        struct Node {
            double d;
            std::size_t cell;
            std::uint32_t ia, ib;
        };
        const auto cmp = [](const Node& l, const Node& r) {
            return l.d != r.d ? l.d > r.d : l.cell > r.cell;
        };
        std::priority_queue<Node, std::vector<Node>, decltype(cmp)> heap(cmp);
        const auto make = [&](std::uint32_t ia, std::uint32_t ib) {
            return Node{sd[sa[ia]] + ad[sb[ib]], cell_index(sa[ia], sb[ib]), ia, ib};
        };
        heap.push(make(0, 0));

        std::vector<std::pair<double, std::size_t>> cand;
        while (!heap.empty()) {
            if (cand.size() >= k && heap.top().d > cand[k - 1].first) break;
            const Node n = heap.top();
            heap.pop();
            cand.emplace_back(n.d, n.cell);
            if (n.ib + 1 < nb) heap.push(make(n.ia, n.ib + 1));
            if (n.ib == 0 && n.ia + 1 < na) heap.push(make(n.ia + 1, 0));
        }
        std::sort(cand.begin(), cand.end());
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) out.push_back(cand[i].second);
        return out;
    }

private:
    EpsilonNet() = default;

    void build_grids(const std::vector<int>& row_dims) {
        const double step = 1.0 / m_;
        for (const auto& p : simplex_grid(nx_, step)) state_net_.emplace_back(p);

        row_grids_.resize(static_cast<std::size_t>(nx_));
        for (int x = 0; x < nx_; ++x) {
            std::vector<int> allowed;
            if (mask_.has_value()) {
                allowed = mask_->allowed_actions(x);
            } else {
                allowed.resize(static_cast<std::size_t>(nu_));
                for (int u = 0; u < nu_; ++u) allowed[static_cast<std::size_t>(u)] = u;
            }
            for (const auto& q : simplex_grid(row_dims[static_cast<std::size_t>(x)], step)) {
                std::vector<double> row(static_cast<std::size_t>(nu_), 0.0);
                for (std::size_t j = 0; j < allowed.size(); ++j) {
                    row[static_cast<std::size_t>(allowed[j])] = q[j];
                }
                row_grids_[static_cast<std::size_t>(x)].emplace_back(std::move(row));
            }
        }

        // Action net: product of the row grids, state 0 most significant.
        std::size_t nh = 1;
        for (const auto& g : row_grids_) nh *= g.size();
        action_net_.reserve(nh);
        row_index_.resize(nh * static_cast<std::size_t>(nx_));
        std::vector<std::size_t> idx(static_cast<std::size_t>(nx_), 0);
        for (std::size_t b = 0; b < nh; ++b) {
            std::vector<ActionDist> rows;
            rows.reserve(static_cast<std::size_t>(nx_));
            for (int x = 0; x < nx_; ++x) {
                rows.push_back(row_grids_[static_cast<std::size_t>(x)][idx[static_cast<std::size_t>(x)]]);
                row_index_[b * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(x)] =
                    static_cast<std::uint32_t>(idx[static_cast<std::size_t>(x)]);
            }
            action_net_.emplace_back(std::move(rows), mask_);
            for (int x = nx_ - 1; x >= 0; --x) {
                auto& i = idx[static_cast<std::size_t>(x)];
                if (++i < row_grids_[static_cast<std::size_t>(x)].size()) break;
                i = 0;
            }
        }
    }

    // Monte-Carlo covering certificate with a fixed seed: samples uniform
    // points of C and records the worst nearest-cell distance seen. Separable
    // because the action net is the full product of the row grids.
    void certify_covering() {
        Rng rng(kCertificationSeed);
        std::vector<double> mu(static_cast<std::size_t>(nx_));
        std::vector<double> row(static_cast<std::size_t>(nu_));
        double worst = 0.0;
        for (int s = 0; s < kCoveringSamples; ++s) {
            rng.dirichlet(mu);
            double best_state = std::numeric_limits<double>::infinity();
            for (const auto& g : state_net_) {
                double d = 0.0;
                for (int i = 0; i < nx_; ++i) d += std::abs(mu[static_cast<std::size_t>(i)] - g[static_cast<std::size_t>(i)]);
                best_state = std::min(best_state, d);
            }
            double worst_row = 0.0;
            for (int x = 0; x < nx_; ++x) {
                std::fill(row.begin(), row.end(), 0.0);
                if (mask_.has_value()) {
                    const auto allowed = mask_->allowed_actions(x);
                    std::vector<double> sub(allowed.size());
                    rng.dirichlet(sub);
                    for (std::size_t j = 0; j < allowed.size(); ++j) {
                        row[static_cast<std::size_t>(allowed[j])] = sub[j];
                    }
                } else {
                    rng.dirichlet(row);
                }
                double best_row = std::numeric_limits<double>::infinity();
                for (const auto& g : row_grids_[static_cast<std::size_t>(x)]) {
                    double d = 0.0;
                    for (int u = 0; u < nu_; ++u) d += std::abs(row[static_cast<std::size_t>(u)] - g[static_cast<std::size_t>(u)]);
                    best_row = std::min(best_row, d);
                }
                worst_row = std::max(worst_row, best_row);
            }
            worst = std::max(worst, best_state + worst_row);
        }
        measured_radius_ = worst;
    }

    int nx_ = 0;
    int nu_ = 0;
    int m_ = 1;
    double epsilon_ = 0.0;
    double analytic_radius_ = 0.0;
    double measured_radius_ = 0.0;
    std::optional<SupportMask> mask_;
    std::vector<StateDist> state_net_;
    std::vector<std::vector<ActionDist>> row_grids_;
    std::vector<LocalPolicy> action_net_;
    std::vector<std::uint32_t> row_index_;
};

}  // namespace mfcq
