#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfcq/errors.hpp"

namespace mfcq {

namespace detail {

inline int step_denominator(double step) {
    if (!(step > 0.0) || step > 1.0) {
        throw ConfigError("simplex grid: step must lie in (0, 1], got " + std::to_string(step));
    }
    const double inv = 1.0 / step;
    const double m = std::round(inv);
    if (std::abs(inv - m) > 1e-9 * inv) {
        throw ConfigError("simplex grid: 1/step = " + std::to_string(inv) + " is not an integer");
    }
    return static_cast<int>(m);
}

}  // namespace detail

// Number of grid points: compositions of m into `dim` parts, C(m+dim-1, dim-1).
inline std::uint64_t simplex_grid_size(int dim, int m) {
    if (dim <= 0 || m <= 0) throw ArgumentError("simplex_grid_size: dim and m must be positive");
    // Multiplicative binomial; sizes used here stay far below 2^64.
    std::uint64_t result = 1;
    const int k = dim - 1;
    for (int i = 1; i <= k; ++i) {
        result = result * static_cast<std::uint64_t>(m + i) / static_cast<std::uint64_t>(i);
    }
    return result;
}

// All points of the (dim-1)-simplex whose coordinates are nonnegative
// multiples of `step` summing to 1, in lexicographic order of the
// coordinate vector. step must be 1/m for an integer m.
inline std::vector<std::vector<double>> simplex_grid(int dim, double step) {
    if (dim <= 0) throw ArgumentError("simplex_grid: dim must be positive");
    const int m = detail::step_denominator(step);

    std::vector<std::vector<double>> points;
    points.reserve(static_cast<std::size_t>(simplex_grid_size(dim, m)));
    std::vector<int> k(static_cast<std::size_t>(dim), 0);

    // Lexicographic enumeration of integer compositions of m.
    const auto emit = [&]() {
        std::vector<double> p(static_cast<std::size_t>(dim));
        for (int i = 0; i < dim; ++i) p[static_cast<std::size_t>(i)] = k[static_cast<std::size_t>(i)] * step;
        points.push_back(std::move(p));
    };
    const auto rec = [&](auto&& self, int pos, int remaining) -> void {
        if (pos == dim - 1) {
            k[static_cast<std::size_t>(pos)] = remaining;
            emit();
            return;
        }
        for (int v = 0; v <= remaining; ++v) {
            k[static_cast<std::size_t>(pos)] = v;
            self(self, pos + 1, remaining - v);
        }
    };
    rec(rec, 0, m);
    return points;
}

// Worst-case l1 distance from a point of the (dim-1)-simplex to the step-s
// grid. Rounding each coordinate and repairing the sum gives the exact value
// 2*s*floor(dim/2)*ceil(dim/2)/dim (the adversarial remainders are all equal).
inline double simplex_covering_radius_l1(int dim, double step) {
    if (dim <= 0) throw ArgumentError("simplex_covering_radius_l1: dim must be positive");
    if (dim == 1) return 0.0;
    const double lo = static_cast<double>(dim / 2);
    const double hi = static_cast<double>((dim + 1) / 2);
    return 2.0 * step * lo * hi / static_cast<double>(dim);
}

}  // namespace mfcq
