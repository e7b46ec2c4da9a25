#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mfcq/congestion.hpp"
#include "mfcq/env.hpp"
#include "mfcq/rng.hpp"
#include "mfcq/types.hpp"

using namespace mfcq;

namespace {

StateDist random_state(int n, Rng& rng) {
    std::vector<double> p(static_cast<std::size_t>(n));
    rng.dirichlet(p);
    return StateDist(std::move(p));
}

LocalPolicy random_policy(int nx, int nu, Rng& rng, const std::optional<SupportMask>& mask = {}) {
    std::vector<ActionDist> rows;
    for (int x = 0; x < nx; ++x) {
        std::vector<double> row(static_cast<std::size_t>(nu), 0.0);
        if (mask.has_value()) {
            const auto allowed = mask->allowed_actions(x);
            std::vector<double> sub(allowed.size());
            rng.dirichlet(sub);
            for (std::size_t j = 0; j < allowed.size(); ++j) row[static_cast<std::size_t>(allowed[j])] = sub[j];
        } else {
            rng.dirichlet(row);
        }
        rows.emplace_back(std::move(row));
    }
    return LocalPolicy(std::move(rows), mask);
}

// A fixed small model with nontrivial transitions for oracle checks.
AgentModel toy_model() {
    AgentModel m;
    m.num_states = 2;
    m.num_actions = 2;
    m.reward_bound = 10.0;
    m.transition = [](int x, const StateDist& mu, int u, const ActionDist& nu) {
        const double stay = 0.2 + 0.5 * mu[static_cast<std::size_t>(x)] + 0.2 * nu[static_cast<std::size_t>(u)];
        std::vector<double> p(2, 0.0);
        p[static_cast<std::size_t>(x)] = stay;
        p[static_cast<std::size_t>(1 - x)] = 1.0 - stay;
        return StateDist(std::move(p));
    };
    m.reward = [](int x, const StateDist& mu, int u, const ActionDist& nu) {
        return static_cast<double>(u) + 0.5 * mu[0] - 0.25 * nu[static_cast<std::size_t>(u)] +
               0.1 * static_cast<double>(x);
    };
    return m;
}

}  // namespace

TEST_CASE("action_dist aggregation") {
    const LocalPolicy all_first({ActionDist({1.0, 0.0}), ActionDist({1.0, 0.0})});
    CHECK(action_dist(StateDist({0.3, 0.7}), all_first) == ActionDist({1.0, 0.0}));

    const LocalPolicy h({ActionDist({0.2, 0.8}), ActionDist({0.6, 0.4})});
    CHECK(action_dist(StateDist::delta(2, 1), h) == h.row(1));

    const LocalPolicy flip({ActionDist({1.0, 0.0}), ActionDist({0.0, 1.0})});
    const ActionDist nu = action_dist(StateDist({0.5, 0.5}), flip);
    CHECK_THAT(nu[0], Catch::Matchers::WithinAbs(0.5, 1e-15));
    CHECK_THAT(nu[1], Catch::Matchers::WithinAbs(0.5, 1e-15));

    CHECK_THROWS_AS(action_dist(StateDist({1.0}), h), DimensionError);
}

TEST_CASE("aggregate flow on degenerate models") {
    AgentModel identity;
    identity.num_states = 2;
    identity.num_actions = 2;
    identity.reward_bound = 1.0;
    identity.transition = [](int x, const StateDist&, int, const ActionDist&) {
        return StateDist::delta(2, x);
    };
    identity.reward = [](int, const StateDist&, int, const ActionDist&) { return 1.0; };

    Rng rng(31);
    for (int t = 0; t < 20; ++t) {
        const StateDist mu = random_state(2, rng);
        const LocalPolicy h = random_policy(2, 2, rng);
        const StateDist next = aggregate_flow(identity, mu, h);
        CHECK_THAT(dist_state(next, mu), Catch::Matchers::WithinAbs(0.0, 1e-12));
        // r~ == 1 integrates to 1
        CHECK_THAT(aggregate_reward(identity, mu, h), Catch::Matchers::WithinAbs(1.0, 1e-12));
    }

    AgentModel single;
    single.num_states = 1;
    single.num_actions = 3;
    single.reward_bound = 1.0;
    single.transition = [](int, const StateDist&, int, const ActionDist&) { return StateDist::delta(1, 0); };
    single.reward = [](int, const StateDist&, int, const ActionDist&) { return 1.0; };
    const StateDist one = StateDist::delta(1, 0);
    const LocalPolicy h1({ActionDist({0.3, 0.3, 0.4})});
    CHECK(aggregate_flow(single, one, h1) == one);
}

TEST_CASE("aggregate flow and reward match a brute-force double sum") {
    const AgentModel m = toy_model();
    Rng rng(32);
    for (int t = 0; t < 50; ++t) {
        const StateDist mu = random_state(2, rng);
        const LocalPolicy h = random_policy(2, 2, rng);
        const ActionDist nu = action_dist(mu, h);

        std::vector<double> expected_flow(2, 0.0);
        double expected_reward = 0.0;
        for (int x = 0; x < 2; ++x) {
            for (int u = 0; u < 2; ++u) {
                const double w = mu[static_cast<std::size_t>(x)] * h.row(x)[static_cast<std::size_t>(u)];
                const StateDist px = m.transition(x, mu, u, nu);
                for (int y = 0; y < 2; ++y) expected_flow[static_cast<std::size_t>(y)] += w * px[static_cast<std::size_t>(y)];
                expected_reward += w * m.reward(x, mu, u, nu);
            }
        }
        const StateDist flow = aggregate_flow(m, mu, h);
        for (int y = 0; y < 2; ++y) {
            CHECK_THAT(flow[static_cast<std::size_t>(y)],
                       Catch::Matchers::WithinAbs(expected_flow[static_cast<std::size_t>(y)], 1e-13));
        }
        CHECK_THAT(aggregate_reward(m, mu, h), Catch::Matchers::WithinAbs(expected_reward, 1e-13));
    }
}

TEST_CASE("aggregate reward with action-valued rewards") {
    AgentModel m = toy_model();
    m.num_actions = 3;
    m.transition = [](int x, const StateDist&, int, const ActionDist&) { return StateDist::delta(2, x); };
    m.reward = [](int, const StateDist&, int u, const ActionDist&) { return static_cast<double>(u); };
    const StateDist mu({0.25, 0.75});
    std::vector<int> per_state{2, 1};
    const LocalPolicy h = LocalPolicy::deterministic(2, 3, per_state);
    CHECK_THAT(aggregate_reward(m, mu, h), Catch::Matchers::WithinAbs(0.25 * 2 + 0.75 * 1, 1e-14));
}

TEST_CASE("model contract violations surface") {
    AgentModel bad = toy_model();
    bad.transition = [](int, const StateDist&, int, const ActionDist&) {
        return StateDist({0.6, 0.6});  // throws inside
    };
    const StateDist mu({0.5, 0.5});
    const LocalPolicy h({ActionDist({1.0, 0.0}), ActionDist({1.0, 0.0})});
    CHECK_THROWS_AS(aggregate_flow(bad, mu, h), ContractError);

    AgentModel loud = toy_model();
    loud.reward_bound = 0.5;
    CHECK_THROWS_AS(aggregate_reward(loud, mu, h), ContractError);
}

TEST_CASE("mean send rate") {
    CongestionParams params;  // defaults: 3 states, 3 actions
    const auto mask = params.overshoot_mask();

    const LocalPolicy send0 = LocalPolicy::deterministic(3, 3, std::vector<int>{0, 0, 0}, mask);
    CHECK(mean_send_rate(params, StateDist({0.2, 0.3, 0.5}), send0) == 0.0);

    const LocalPolicy send1 = LocalPolicy::deterministic(3, 3, std::vector<int>{0, 1, 1}, mask);
    CHECK_THAT(mean_send_rate(params, StateDist::delta(3, 1), send1),
               Catch::Matchers::WithinAbs(1.0, 1e-15));

    Rng rng(41);
    for (int t = 0; t < 30; ++t) {
        const StateDist mu = random_state(3, rng);
        const LocalPolicy h = random_policy(3, 3, rng, mask);
        double expected = 0.0;
        for (int x = 0; x < 3; ++x) {
            for (int u = 0; u < 3; ++u) {
                expected += static_cast<double>(u) * h.row(x)[static_cast<std::size_t>(u)] *
                            mu[static_cast<std::size_t>(x)];
            }
        }
        CHECK_THAT(mean_send_rate(params, mu, h), Catch::Matchers::WithinAbs(expected, 1e-13));
        CHECK(mean_send_rate(params, mu, h) >= 0.0);
        CHECK(mean_send_rate(params, mu, h) <= 2.0);
    }

    // mask violations are rejected
    const LocalPolicy overshoot({ActionDist({0.0, 1.0, 0.0}), ActionDist({1.0, 0.0, 0.0}),
                                 ActionDist({1.0, 0.0, 0.0})});
    CHECK_THROWS_AS(mean_send_rate(params, StateDist::uniform(3), overshoot), ContractError);
}

TEST_CASE("loss probability") {
    CongestionParams params;
    CHECK(loss_probability(params, 0.3) == 0.0);
    CHECK_THAT(loss_probability(params, 1.0), Catch::Matchers::WithinAbs(0.6, 1e-15));
    CHECK(loss_probability(params, params.c) == 0.0);
    // continuity at the kink and range
    CHECK(loss_probability(params, params.c + 1e-12) < 1e-11);
    for (double f : {0.01, 0.4, 0.41, 1.0, 2.0, 100.0}) {
        const double p = loss_probability(params, f);
        CHECK(p >= 0.0);
        CHECK(p < 1.0);
    }
    CHECK_THROWS_AS(loss_probability(params, -0.1), ArgumentError);
}

TEST_CASE("congestion flow worked example") {
    CongestionParams params;
    params.num_states = 2;
    params.num_actions = 2;
    params.c = 10.0;  // no loss
    const auto mask = params.overshoot_mask();
    const LocalPolicy send_all = LocalPolicy::deterministic(2, 2, std::vector<int>{0, 1}, mask);
    const StateDist mu({0.0, 1.0});
    // stage one moves everyone to 0, the refill then spreads half back
    const StateDist next = congestion_flow(params, mu, send_all);
    CHECK_THAT(next[0], Catch::Matchers::WithinAbs(0.5, 1e-15));
    CHECK_THAT(next[1], Catch::Matchers::WithinAbs(0.5, 1e-15));
}

TEST_CASE("congestion flow: idle population does not move") {
    CongestionParams params;
    const auto mask = params.overshoot_mask();
    const LocalPolicy send0 = LocalPolicy::deterministic(3, 3, std::vector<int>{0, 0, 0}, mask);
    const StateDist mu({0.0, 0.4, 0.6});
    const StateDist next = congestion_flow(params, mu, send0);
    CHECK_THAT(dist_state(next, mu), Catch::Matchers::WithinAbs(0.0, 1e-15));
}

TEST_CASE("congestion flow matches the two-stage formula") {
    CongestionParams params;
    const auto mask = params.overshoot_mask();
    Rng rng(42);
    for (int t = 0; t < 100; ++t) {
        const StateDist mu = random_state(3, rng);
        const LocalPolicy h = random_policy(3, 3, rng, mask);

        // independent evaluation of the displayed two-stage formula
        double rate = 0.0;
        for (int x = 0; x < 3; ++x) {
            for (int u = 0; u < 3; ++u) {
                rate += u * h.row(x)[static_cast<std::size_t>(u)] * mu[static_cast<std::size_t>(x)];
            }
        }
        const double p = rate > params.c ? (rate - params.c) / rate : 0.0;
        std::vector<double> stage(3, 0.0);
        for (int x = 0; x < 3; ++x) {
            for (int xp = x; xp < 3; ++xp) {
                const int u = xp - x;
                if (u >= params.num_actions) continue;
                stage[static_cast<std::size_t>(x)] +=
                    mu[static_cast<std::size_t>(xp)] * h.row(xp)[static_cast<std::size_t>(u)] * (1.0 - p);
            }
            stage[static_cast<std::size_t>(x)] += mu[static_cast<std::size_t>(x)] * p;
        }
        std::vector<double> expected(3);
        for (int x = 0; x < 3; ++x) {
            expected[static_cast<std::size_t>(x)] =
                (x == 0 ? 0.0 : stage[static_cast<std::size_t>(x)]) + stage[0] / 3.0;
        }

        const StateDist next = congestion_flow(params, mu, h);
        double total = 0.0;
        for (int x = 0; x < 3; ++x) {
            CHECK_THAT(next[static_cast<std::size_t>(x)],
                       Catch::Matchers::WithinAbs(expected[static_cast<std::size_t>(x)], 1e-13));
            CHECK(next[static_cast<std::size_t>(x)] >= 0.0);
            total += next[static_cast<std::size_t>(x)];
        }
        CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("congestion reward") {
    SECTION("idle empty population earns nothing") {
        CongestionParams params;
        const auto mask = params.overshoot_mask();
        const LocalPolicy send0 = LocalPolicy::deterministic(3, 3, std::vector<int>{0, 0, 0}, mask);
        CHECK(congestion_reward(params, StateDist::delta(3, 0), send0) == 0.0);
    }

    SECTION("no-loss unit-rate example") {
        CongestionParams params;
        params.num_states = 2;
        params.num_actions = 2;
        params.c = 2.0;  // capacity above the rate: no loss
        const auto mask = params.overshoot_mask();
        const LocalPolicy send1 = LocalPolicy::deterministic(2, 2, std::vector<int>{0, 1}, mask);
        // mu = delta_1: F = 1, latency 1 -> 30 - 10 = 20
        CHECK_THAT(congestion_reward(params, StateDist::delta(2, 1), send1),
                   Catch::Matchers::WithinAbs(20.0, 1e-12));
    }

    SECTION("over-capacity case matches an independent recomputation") {
        CongestionParams params;
        const auto mask = params.overshoot_mask();
        Rng rng(43);
        for (int t = 0; t < 50; ++t) {
            const StateDist mu = random_state(3, rng);
            const LocalPolicy h = random_policy(3, 3, rng, mask);
            const double f = mean_send_rate(params, mu, h);
            const double p = f > params.c ? (f - params.c) / f : 0.0;
            const double latency = mu[1] + 2.0 * mu[2];
            const double expected = params.a * f * (1.0 - p) - params.b * latency * latency - params.d * f * p;
            CHECK_THAT(congestion_reward(params, mu, h), Catch::Matchers::WithinAbs(expected, 1e-12));
        }
    }
}

TEST_CASE("mfc simulator is deterministic") {
    const CongestionEnv env(CongestionParams{});
    Rng rng(44);
    const StateDist mu = random_state(3, rng);
    const LocalPolicy h = random_policy(3, 3, rng, env.mask());
    const MfcTransition a = mfc_simulate(env, mu, h);
    const MfcTransition b = mfc_simulate(env, mu, h);
    CHECK(a.next_mu == b.next_mu);
    CHECK(a.reward == b.reward);

    // single-state environment with unit reward
    AgentModel single;
    single.num_states = 1;
    single.num_actions = 1;
    single.reward_bound = 1.0;
    single.transition = [](int, const StateDist&, int, const ActionDist&) { return StateDist::delta(1, 0); };
    single.reward = [](int, const StateDist&, int, const ActionDist&) { return 1.0; };
    const AgentModelEnv env1(single);
    const MfcTransition tr = env1.step(StateDist::delta(1, 0), LocalPolicy({ActionDist({1.0})}));
    CHECK(tr.next_mu == StateDist::delta(1, 0));
    CHECK(tr.reward == 1.0);
}

TEST_CASE("empirical Lipschitz continuity of nu, r and Phi") {
    const CongestionEnv env(CongestionParams{});
    const auto mask = env.mask();
    Rng rng(45);
    double worst_nu = 0.0, worst_r = 0.0, worst_phi = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const StateDist mu1 = random_state(3, rng);
        const StateDist mu2 = random_state(3, rng);
        const LocalPolicy h1 = random_policy(3, 3, rng, mask);
        const LocalPolicy h2 = random_policy(3, 3, rng, mask);
        const double d = dist_lifted({mu1, h1}, {mu2, h2});
        if (d < 1e-9) continue;

        std::vector<double> dn(3, 0.0);
        const ActionDist n1 = action_dist(mu1, h1);
        const ActionDist n2 = action_dist(mu2, h2);
        double nu_l1 = 0.0;
        for (int u = 0; u < 3; ++u) nu_l1 += std::abs(n1[static_cast<std::size_t>(u)] - n2[static_cast<std::size_t>(u)]);
        worst_nu = std::max(worst_nu, nu_l1 / d);

        const MfcTransition t1 = env.step(mu1, h1);
        const MfcTransition t2 = env.step(mu2, h2);
        worst_r = std::max(worst_r, std::abs(t1.reward - t2.reward) / d);
        worst_phi = std::max(worst_phi, dist_state(t1.next_mu, t2.next_mu) / d);
    }
    // nu is 1-Lipschitz exactly; r and Phi have finite environment-dependent
    // constants.
    CHECK(worst_nu <= 1.0 + 1e-9);
    CHECK(worst_r < 200.0);
    CHECK(worst_phi < 50.0);
}

TEST_CASE("reward stays within the declared environment bound") {
    const CongestionEnv env(CongestionParams{});
    const auto mask = env.mask();
    Rng rng(46);
    for (int t = 0; t < 500; ++t) {
        const StateDist mu = random_state(3, rng);
        const LocalPolicy h = random_policy(3, 3, rng, mask);
        CHECK(std::abs(env.step(mu, h).reward) <= env.reward_bound() + 1e-9);
    }
}
