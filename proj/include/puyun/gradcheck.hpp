#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "puyun/ops.hpp"
#include "puyun/rng.hpp"
#include "puyun/tensor.hpp"

namespace puyun {

// Scalar-valued tensor function; the checks always run in 64-bit.
using ScalarFn = std::function<TensorT<double>(const TensorT<double>&)>;

inline double fd_rel_error(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// Compares the tape gradient of f at x against central differences
// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate, and returns the largest
// relative error. max_coords < 0 checks every coordinate; otherwise a
// deterministic random subset of that size is used.
inline double finite_difference_check(const ScalarFn& f, const TensorT<double>& x, double h,
                                      int max_coords = -1, std::uint64_t sample_seed = 7) {
    std::vector<double> analytic(x.numel(), 0.0);
    {
        TapeT<double> tape;
        TensorT<double> xg = x.clone();
        xg.set_requires_grad(true);
        TensorT<double> loss = f(xg);
        if (loss.numel() != 1) throw UsageError("finite_difference_check: f must return a scalar");
        tape.backward(loss);
        if (xg.has_grad()) analytic = xg.grad();
    }

    std::vector<std::size_t> coords;
    if (max_coords < 0 || static_cast<std::size_t>(max_coords) >= x.numel()) {
        coords.resize(x.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
        Rng rng(Rng::mix(sample_seed, x.numel()));
        std::vector<std::size_t> all(x.numel());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        for (int k = 0; k < max_coords; ++k) {
            std::size_t pick =
                static_cast<std::size_t>(k) +
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(all.size()) - 1 - k));
            std::swap(all[k], all[pick]);
            coords.push_back(all[k]);
        }
    }

    double max_err = 0.0;
    for (std::size_t idx : coords) {
        TensorT<double> xp = x.clone();
        xp.raw_values()[idx] += h;
        double fp = f(xp).item();
        TensorT<double> xm = x.clone();
        xm.raw_values()[idx] -= h;
        double fm = f(xm).item();
        double numeric = (fp - fm) / (2.0 * h);
        max_err = std::max(max_err, fd_rel_error(analytic[idx], numeric));
    }
    return max_err;
}

}  // namespace puyun
