#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "mfcq/kernels.hpp"
#include "mfcq/net.hpp"
#include "mfcq/rng.hpp"
#include "mfcq/types.hpp"

using namespace mfcq;

namespace {

StateDist random_state(int n, Rng& rng) {
    std::vector<double> p(static_cast<std::size_t>(n));
    rng.dirichlet(p);
    return StateDist(std::move(p));
}

LocalPolicy random_policy(int nx, int nu, Rng& rng) {
    std::vector<ActionDist> rows;
    for (int x = 0; x < nx; ++x) {
        std::vector<double> row(static_cast<std::size_t>(nu));
        rng.dirichlet(row);
        rows.emplace_back(std::move(row));
    }
    return LocalPolicy(std::move(rows));
}

KernelSpec spec_of(KernelFamily f, double bw = 0.0, int k = 1) {
    KernelSpec s;
    s.family = f;
    s.bandwidth = bw;
    s.k = k;
    return s;
}

}  // namespace

TEST_CASE("raw affinity formulas") {
    CHECK_THAT(raw_affinity(spec_of(KernelFamily::Triangular, 0.1), 0.0),
               Catch::Matchers::WithinAbs(0.1, 1e-15));
    CHECK(raw_affinity(spec_of(KernelFamily::Constant, 0.1), 0.2) == 0.0);
    CHECK_THAT(raw_affinity(spec_of(KernelFamily::Gaussian, 0.3), 0.3),
               Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-14));
    // inside the bandwidth the Gaussian is exp(-(eps-d)^2)/sqrt(2 pi)
    CHECK_THAT(raw_affinity(spec_of(KernelFamily::Gaussian, 0.3), 0.1),
               Catch::Matchers::WithinAbs(std::exp(-0.04) / std::sqrt(2.0 * std::numbers::pi), 1e-14));
    for (auto f : {KernelFamily::Triangular, KernelFamily::Gaussian, KernelFamily::Constant}) {
        CHECK(raw_affinity(spec_of(f, 0.25), 0.2500001) == 0.0);
    }
    CHECK(raw_affinity(spec_of(KernelFamily::Triangular, 0.25), 0.25) == 0.0);
    CHECK_THROWS_AS(raw_affinity(spec_of(KernelFamily::Triangular, 0.1), -0.5), ArgumentError);
}

TEST_CASE("affinity normalization derived example") {
    // phi values 0.08 and 0.04 normalize to 2/3 and 1/3.
    const auto wv = detail::normalize_affinities({{0, 0.08}, {1, 0.04}});
    REQUIRE(wv.entries.size() == 2);
    CHECK_THAT(wv.entries[0].second, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
    CHECK_THAT(wv.entries[1].second, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
}

TEST_CASE("weights on a two-point support") {
    // |X|=2, |U|=1: the net is the state grid with step 1/3, adjacent points
    // at l1 distance 2/3. A query between two of them has exactly that pair
    // inside bandwidth 0.5.
    const auto net = EpsilonNet::build(2, 1, 0.5);
    REQUIRE(net.grid_m() == 3);
    const LocalPolicy h = net.action_net()[0];

    SECTION("constant kernel gives equal weights at the midpoint") {
        const LiftedPair mid{StateDist({0.5, 0.5}), h};
        const auto wv = kernel_weights(net, mid, spec_of(KernelFamily::Constant, 0.5));
        REQUIRE(wv.entries.size() == 2);
        CHECK(wv.entries[0].second == 0.5);
        CHECK(wv.entries[1].second == 0.5);
    }

    SECTION("triangular weights follow the affinities") {
        // distances 2*(0.45-1/3) and 2*(2/3-0.45) to grid points 1 and 2
        const LiftedPair c{StateDist({0.45, 0.55}), h};
        const auto wv = kernel_weights(net, c, spec_of(KernelFamily::Triangular, 0.5));
        REQUIRE(wv.entries.size() == 2);
        const double phi1 = 0.5 - 2.0 * (0.45 - 1.0 / 3.0);
        const double phi2 = 0.5 - 2.0 * (2.0 / 3.0 - 0.45);
        CHECK(wv.entries[0].first == 1);
        CHECK(wv.entries[1].first == 2);
        CHECK_THAT(wv.entries[0].second, Catch::Matchers::WithinAbs(phi1 / (phi1 + phi2), 1e-13));
        CHECK_THAT(wv.entries[1].second, Catch::Matchers::WithinAbs(phi2 / (phi1 + phi2), 1e-13));
    }

    SECTION("query on a net point with empty remaining support") {
        const auto wv = kernel_weights(net, net.point(1), spec_of(KernelFamily::Triangular, 0.5));
        REQUIRE(wv.entries.size() == 1);
        CHECK(wv.entries[0].first == 1);
        CHECK(wv.entries[0].second == 1.0);
    }
}

TEST_CASE("weight axioms over random queries") {
    const auto net = EpsilonNet::build(2, 2, 0.6);
    Rng rng(5);
    for (auto family : {KernelFamily::Triangular, KernelFamily::Gaussian, KernelFamily::Constant}) {
        const KernelSpec spec = spec_of(family);
        for (int t = 0; t < 300; ++t) {
            const LiftedPair c{random_state(2, rng), random_policy(2, 2, rng)};
            const auto wv = kernel_weights(net, c, spec);
            REQUIRE(!wv.entries.empty());
            double sum = 0.0;
            for (const auto& [i, w] : wv.entries) {
                CHECK(w >= 0.0);
                sum += w;
                // locality: support stays within the bandwidth
                CHECK(dist_lifted(net.point(i), c) < net.epsilon());
            }
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }
}

TEST_CASE("knn weights are one-hot or uniform") {
    const auto net = EpsilonNet::build(2, 2, 0.6);
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const LiftedPair c{random_state(2, rng), random_policy(2, 2, rng)};
        const auto w1 = kernel_weights(net, c, spec_of(KernelFamily::Knn, 0.0, 1));
        REQUIRE(w1.entries.size() == 1);
        CHECK(w1.entries[0].second == 1.0);
        CHECK(w1.entries[0].first == net.nearest(c, 1)[0]);

        const auto w3 = kernel_weights(net, c, spec_of(KernelFamily::Knn, 0.0, 3));
        REQUIRE(w3.entries.size() == 3);
        auto expected = net.nearest(c, 3);
        std::sort(expected.begin(), expected.end());
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(w3.entries[i].first == expected[i]);
            CHECK_THAT(w3.entries[i].second, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
        }
    }
    CHECK_THROWS_AS(
        kernel_weights(net, net.point(0), spec_of(KernelFamily::Knn, 0.0, 1 + static_cast<int>(net.size()))),
        ArgumentError);
}

TEST_CASE("regress basics") {
    const auto net = EpsilonNet::build(2, 2, 0.6);
    Rng rng(8);

    SECTION("constant table regresses to the constant") {
        std::vector<double> q(net.size(), 3.25);
        for (int t = 0; t < 50; ++t) {
            const LiftedPair c{random_state(2, rng), random_policy(2, 2, rng)};
            CHECK_THAT(regress(q, net, c, spec_of(KernelFamily::Triangular)),
                       Catch::Matchers::WithinAbs(3.25, 1e-12));
        }
    }

    SECTION("weighted average matches an independent dot product") {
        std::vector<double> q(net.size());
        for (auto& v : q) v = 2.0 * rng.unit() - 1.0;
        for (int t = 0; t < 100; ++t) {
            const LiftedPair c{random_state(2, rng), random_policy(2, 2, rng)};
            const auto wv = kernel_weights(net, c, spec_of(KernelFamily::Gaussian));
            double expected = 0.0;
            for (const auto& [i, w] : wv.entries) expected += w * q[i];
            CHECK_THAT(regress(q, net, c, spec_of(KernelFamily::Gaussian)),
                       Catch::Matchers::WithinAbs(expected, 1e-14));
        }
    }

    SECTION("missing entries violate the contract") {
        std::vector<double> q(net.size() - 1, 0.0);
        CHECK_THROWS_AS(regress(q, net, net.point(0), spec_of(KernelFamily::Triangular)), ContractError);
    }
}

TEST_CASE("regress two-point example") {
    const auto net = EpsilonNet::build(2, 1, 0.5);
    std::vector<double> q(net.size(), 0.0);
    q[1] = 3.0;
    q[2] = 0.0;
    // weights (2/3, 1/3) on cells 1 and 2 require phi1 = 2 * phi2:
    // 0.5 - d1 = 2 (0.5 - d2) with d1 + d2 = 2/3  =>  d1 = 1/9, d2 = 5/9.
    const double x = 1.0 / 3.0 + 1.0 / 18.0;  // d1 = 2(x - 1/3) = 1/9
    const LiftedPair c{StateDist({x, 1.0 - x}), net.action_net()[0]};
    CHECK_THAT(regress(q, net, c, spec_of(KernelFamily::Triangular, 0.5)),
               Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("shift equivariance and non-expansiveness") {
    const auto net = EpsilonNet::build(2, 2, 0.6);
    Rng rng(9);
    std::vector<double> q1(net.size()), q2(net.size());
    for (auto& v : q1) v = 2.0 * rng.unit() - 1.0;
    for (auto& v : q2) v = 2.0 * rng.unit() - 1.0;
    double qdiff = 0.0;
    for (std::size_t i = 0; i < q1.size(); ++i) qdiff = std::max(qdiff, std::abs(q1[i] - q2[i]));

    std::vector<double> shifted(q1);
    const double kappa = 0.73;
    for (auto& v : shifted) v += kappa;

    for (auto family :
         {KernelFamily::Triangular, KernelFamily::Gaussian, KernelFamily::Constant, KernelFamily::Knn}) {
        const KernelSpec spec = spec_of(family, 0.0, 3);
        for (int t = 0; t < 100; ++t) {
            const LiftedPair c{random_state(2, rng), random_policy(2, 2, rng)};
            const double a = regress(q1, net, c, spec);
            CHECK_THAT(regress(shifted, net, c, spec), Catch::Matchers::WithinAbs(a + kappa, 1e-12));
            CHECK(std::abs(a - regress(q2, net, c, spec)) <= qdiff + 1e-12);
        }
    }
}

TEST_CASE("kernel weights are empirically Lipschitz in the query") {
    const auto net = EpsilonNet::build(2, 2, 0.6);
    Rng rng(10);
    for (auto family : {KernelFamily::Triangular, KernelFamily::Gaussian}) {
        const KernelSpec spec = spec_of(family);
        double worst = 0.0;
        for (int t = 0; t < 400; ++t) {
            const StateDist mu = random_state(2, rng);
            const LocalPolicy h = random_policy(2, 2, rng);
            // a nearby second query
            std::vector<double> p2 = mu.probs();
            const double shift = std::min({0.02 * rng.unit(), p2[0], 1.0 - p2[1]});
            p2[0] -= shift;
            p2[1] += shift;
            const LiftedPair c1{mu, h};
            const LiftedPair c2{StateDist(p2), h};
            const double d = dist_lifted(c1, c2);
            if (d < 1e-9) continue;
            const auto w1 = kernel_weights(net, c1, spec);
            const auto w2 = kernel_weights(net, c2, spec);
            std::vector<double> dense1(net.size(), 0.0), dense2(net.size(), 0.0);
            for (const auto& [i, w] : w1.entries) dense1[i] = w;
            for (const auto& [i, w] : w2.entries) dense2[i] = w;
            for (std::size_t i = 0; i < net.size(); ++i) {
                worst = std::max(worst, std::abs(dense1[i] - dense2[i]) / d);
            }
        }
        INFO("family " << kernel_family_name(family) << " worst ratio " << worst);
        CHECK(worst < 1e4);
        CHECK(std::isfinite(worst));
    }
}

TEST_CASE("euclidean metric option") {
    const auto net = EpsilonNet::build(2, 2, 0.6);
    KernelSpec spec = spec_of(KernelFamily::Triangular);
    spec.metric = KernelMetric::Euclidean;
    spec.bandwidth = 0.4;
    Rng rng(12);
    for (int t = 0; t < 100; ++t) {
        const LiftedPair c{random_state(2, rng), random_policy(2, 2, rng)};
        const auto wv = kernel_weights(net, c, spec);
        double sum = 0.0;
        for (const auto& [i, w] : wv.entries) {
            sum += w;
            // support obeys the euclidean ball when there is any
            if (wv.entries.size() > 1) {
                const auto p = net.point(i);
                double sq = 0.0;
                for (int s = 0; s < 2; ++s) {
                    const double e = p.mu[static_cast<std::size_t>(s)] - c.mu[static_cast<std::size_t>(s)];
                    sq += e * e;
                }
                for (int x = 0; x < 2; ++x) {
                    for (int u = 0; u < 2; ++u) {
                        const double e =
                            p.h.row(x)[static_cast<std::size_t>(u)] - c.h.row(x)[static_cast<std::size_t>(u)];
                        sq += e * e;
                    }
                }
                CHECK(std::sqrt(sq) < spec.bandwidth + 1e-12);
            }
        }
        CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
}
