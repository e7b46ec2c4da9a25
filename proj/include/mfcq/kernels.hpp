#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfcq/errors.hpp"
#include "mfcq/net.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

enum class KernelFamily { Triangular, Gaussian, Constant, Knn };

// Ground metric for kernel support and affinities. The theory works with the
// lifted metric d_C; the experiment formulas are written with the Euclidean
// norm of the concatenated coordinates. Both are exposed, d_C is the default.
enum class KernelMetric { LiftedL1, Euclidean };

struct KernelSpec {
    KernelFamily family = KernelFamily::Triangular;
    double bandwidth = 0.0;  // <= 0 means "resolve to the net's epsilon"
    int k = 1;               // neighbor count for the knn family
    KernelMetric metric = KernelMetric::LiftedL1;

    void validate() const {
        if (family == KernelFamily::Knn) {
            if (k < 1) throw ConfigError("KernelSpec: k must be >= 1");
        }
    }

    double resolved_bandwidth(const EpsilonNet& net) const {
        return bandwidth > 0.0 ? bandwidth : net.epsilon();
    }
};

inline const char* kernel_family_name(KernelFamily f) {
    switch (f) {
        case KernelFamily::Triangular: return "triangular";
        case KernelFamily::Gaussian: return "gaussian";
        case KernelFamily::Constant: return "constant";
        case KernelFamily::Knn: return "knn";
    }
    return "?";
}

inline KernelFamily parse_kernel_family(const std::string& s) {
    if (s == "triangular") return KernelFamily::Triangular;
    if (s == "gaussian") return KernelFamily::Gaussian;
    if (s == "constant") return KernelFamily::Constant;
    if (s == "knn") return KernelFamily::Knn;
    throw ConfigError("unknown kernel family '" + s + "'");
}

// Unnormalized affinity of a bandwidth kernel at distance d. Zero beyond the
// bandwidth; inside it: triangular (eps - d), truncated Gaussian
// exp(-(eps-d)^2)/sqrt(2 pi), constant 1.
inline double raw_affinity(const KernelSpec& spec, double d) {
    if (d < 0.0) throw ArgumentError("raw_affinity: negative distance");
    const double eps = spec.bandwidth;
    if (d > eps) return 0.0;
    switch (spec.family) {
        case KernelFamily::Triangular:
            return eps - d;
        case KernelFamily::Gaussian: {
            const double t = eps - d;
            return std::exp(-t * t) / std::sqrt(2.0 * std::numbers::pi);
        }
        case KernelFamily::Constant:
            return 1.0;
        case KernelFamily::Knn:
            throw ArgumentError("raw_affinity: knn has no pointwise affinity");
    }
    return 0.0;
}

// Sparse normalized weights K(c^i, c) over the net, nonzero only on the
// kernel's support; entries sorted by cell index and summing to one.
struct WeightVector {
    std::vector<std::pair<std::size_t, double>> entries;

    double sum() const {
        double s = 0.0;
        for (const auto& [i, w] : entries) s += w;
        return s;
    }
};

namespace detail {

inline WeightVector normalize_affinities(std::vector<std::pair<std::size_t, double>> affinities) {
    double total = 0.0;
    for (const auto& [i, phi] : affinities) total += phi;
    WeightVector wv;
    wv.entries = std::move(affinities);
    for (auto& [i, phi] : wv.entries) phi /= total;
    return wv;
}

// Candidates with metric distance < bandwidth, ascending cell index.
inline void metric_candidates(const EpsilonNet& net, const LiftedPair& c, double bandwidth,
                              KernelMetric metric,
                              std::vector<std::pair<std::size_t, double>>& out) {
    out.clear();
    if (metric == KernelMetric::LiftedL1) {
        net.neighbors_within(c, bandwidth, out);
        return;
    }
    const std::size_t na = net.num_state_points();
    const std::size_t nb = net.num_action_points();
    std::vector<double> s2(na), a2(nb);
    net.state_sq_dists(c.mu, s2);
    net.action_sq_dists(c.h, a2);
    const double b2 = bandwidth * bandwidth;
    for (std::size_t a = 0; a < na; ++a) {
        if (s2[a] >= b2) continue;
        const double room = b2 - s2[a];
        for (std::size_t b = 0; b < nb; ++b) {
            if (a2[b] < room) out.emplace_back(net.cell_index(a, b), std::sqrt(s2[a] + a2[b]));
        }
    }
}

// Nearest cell under the chosen metric (lowest index on ties).
inline std::size_t metric_nearest(const EpsilonNet& net, const LiftedPair& c, KernelMetric metric) {
    if (metric == KernelMetric::LiftedL1) return net.nearest(c, 1).front();
    const std::size_t na = net.num_state_points();
    const std::size_t nb = net.num_action_points();
    std::vector<double> s2(na), a2(nb);
    net.state_sq_dists(c.mu, s2);
    net.action_sq_dists(c.h, a2);
    std::size_t best_a = 0, best_b = 0;
    for (std::size_t a = 1; a < na; ++a) {
        if (s2[a] < s2[best_a]) best_a = a;
    }
    for (std::size_t b = 1; b < nb; ++b) {
        if (a2[b] < a2[best_b]) best_b = b;
    }
    return net.cell_index(best_a, best_b);
}

inline std::vector<std::size_t> metric_knn(const EpsilonNet& net, const LiftedPair& c, int k,
                                           KernelMetric metric) {
    if (static_cast<std::size_t>(k) > net.size()) {
        throw ArgumentError("knn kernel: k exceeds the net size");
    }
    if (metric == KernelMetric::LiftedL1) return net.nearest(c, static_cast<std::size_t>(k));
    std::vector<double> s2(net.num_state_points()), a2(net.num_action_points());
    net.state_sq_dists(c.mu, s2);
    net.action_sq_dists(c.h, a2);
    // Squared sums order the same as the distances.
    return net.nearest_from_factors(s2, a2, static_cast<std::size_t>(k));
}

}  // namespace detail

// Kernel weights of Gamma_K at an arbitrary lifted pair. Bandwidth kernels
// normalize the affinities over the support; an empty support falls back to
// the single nearest cell with weight one. The knn family returns uniform
// 1/k weights over the k nearest cells.
inline WeightVector kernel_weights(const EpsilonNet& net, const LiftedPair& c, const KernelSpec& spec) {
    if (net.size() == 0) throw ConfigError("kernel_weights: empty net");
    spec.validate();
    if (spec.family == KernelFamily::Knn) {
        auto idx = detail::metric_knn(net, c, spec.k, spec.metric);
        std::sort(idx.begin(), idx.end());
        WeightVector wv;
        const double w = 1.0 / static_cast<double>(idx.size());
        for (std::size_t i : idx) wv.entries.emplace_back(i, w);
        return wv;
    }

    KernelSpec resolved = spec;
    resolved.bandwidth = spec.resolved_bandwidth(net);
    std::vector<std::pair<std::size_t, double>> cand;
    detail::metric_candidates(net, c, resolved.bandwidth, spec.metric, cand);
    double total = 0.0;
    for (auto& [i, d] : cand) {
        d = raw_affinity(resolved, d);
        total += d;
    }
    if (cand.empty() || !(total > 0.0)) {
        WeightVector wv;
        wv.entries.emplace_back(detail::metric_nearest(net, c, spec.metric), 1.0);
        return wv;
    }
    return detail::normalize_affinities(std::move(cand));
}

// Gamma_K q at c: the weighted average of q over the kernel support.
inline double regress(std::span<const double> q, const EpsilonNet& net, const LiftedPair& c,
                      const KernelSpec& spec) {
    if (q.size() != net.size()) {
        throw ContractError("regress: table has " + std::to_string(q.size()) + " entries, net has " +
                            std::to_string(net.size()));
    }
    const WeightVector wv = kernel_weights(net, c, spec);
    double value = 0.0;
    for (const auto& [i, w] : wv.entries) value += w * q[i];
    return value;
}

}  // namespace mfcq
