#pragma once

#include "ppc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

namespace ppc::testing {

// Random values in [-1, 1] with |v| >= 1e-3 and all values distinct, so
// finite differences never straddle a ReLU kink or a pooling tie.
inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v;
    std::set<double> seen;
    while (v.size() < n) {
        const double x = dist(gen);
        if (std::abs(x) < 1e-3) continue;
        bool close = false;
        for (auto it = seen.lower_bound(x - 1e-4); it != seen.end() && *it <= x + 1e-4; ++it) close = true;
        if (close) continue;
        seen.insert(x);
        v.push_back(x);
    }
    return v;
}

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false,
                                    double lo = -1.0, double hi = 1.0)
{
    const auto n = shape_numel(shape);
    return Tensor<double>(std::move(shape), random_values(n, seed, lo, hi), requires_grad);
}

template <typename T>
Tensor<T> random_tensor_as(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(gen));
    return Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

}  // namespace ppc::testing
