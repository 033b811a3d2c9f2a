#pragma once

#include <cmath>
#include <functional>
#include <numeric>

#include "omnirestore/rng.hpp"
#include "omnirestore/tensor.hpp"

namespace omnirestore {

// Central-difference verification of the recorded backward rules, 64-bit only.
// Returns max over checked coordinates of |analytic - fd| / max(1, |analytic|).
// max_coords < 0 checks every coordinate; otherwise a seeded random subset.
inline double grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x0,
                         double eps = 1e-4, long max_coords = -1, std::uint64_t seed = 0) {
    TensorD x = x0.detached();
    x.set_requires_grad(true);
    TensorD y = f(x);
    if (y.numel() != 1) throw ContractError("grad_check: function output must be a scalar");
    y.backward();
    const std::vector<double> analytic = x.has_grad()
                                             ? x.grad()
                                             : std::vector<double>(static_cast<size_t>(x.numel()), 0.0);

    const long n = x.numel();
    std::vector<long> coords(static_cast<size_t>(n));
    std::iota(coords.begin(), coords.end(), 0L);
    if (max_coords > 0 && max_coords < n) {
        Rng rng(seed);
        for (long i = n - 1; i > 0; --i)
            std::swap(coords[static_cast<size_t>(i)],
                      coords[static_cast<size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
        coords.resize(static_cast<size_t>(max_coords));
    }

    double max_rel = 0.0;
    for (long ci : coords) {
        TensorD xp = x.detached();
        xp.mutable_data()[static_cast<size_t>(ci)] += eps;
        TensorD xm = x.detached();
        xm.mutable_data()[static_cast<size_t>(ci)] -= eps;
        const double fd = (f(xp).item() - f(xm).item()) / (2.0 * eps);
        const double a = analytic[static_cast<size_t>(ci)];
        const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace omnirestore
