#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "vot/ops.hpp"
#include "vot/rng.hpp"

namespace vot {

// Default probe step: a power of two near 1e-5, so x +/- eps stays exact for
// dyadic inputs and linear functions check out to error 0.
inline constexpr double kGradcheckEps = 0x1.0p-17;

// Compares the reverse-mode gradient of a scalar-valued function against
// centered finite differences. Run in 64-bit mode. Returns the max over
// checked elements of |a - b| / max(|a|, |b|, 1e-8). With max_coords > 0, a
// seeded sample of coordinates is checked instead of every element (required
// for anything model-sized).
template <typename T = double>
double finite_diff_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& f, const Tensor<T>& x,
                         double eps = kGradcheckEps, int max_coords = 0, std::uint64_t seed = 0) {
    Tensor<T> grad;
    {
        Tape<T> tape;
        Var<T> xv = tape.leaf(x, true, "gradcheck_input");
        Var<T> y = f(tape, xv);
        if (y.val().numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
        if (!y.val().all_finite()) throw NumericsError("finite_diff_check: f(x) is not finite");
        tape.backward(y);
        grad = tape.grad(xv);
    }
    auto eval = [&](const Tensor<T>& xt) -> double {
        Tape<T> tape;
        Var<T> xv = tape.leaf(xt, false, "gradcheck_input");
        Var<T> y = f(tape, xv);
        const T v = y.val()[0];
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericsError("finite_diff_check: f(x +/- eps) is not finite");
        return static_cast<double>(v);
    };

    std::vector<std::int64_t> coords;
    const std::int64_t n = x.numel();
    if (max_coords <= 0 || n <= max_coords) {
        coords.resize(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
        Rng rng(splitmix64(seed ^ 0x8d1f3bull));
        std::vector<char> seen(static_cast<size_t>(n), 0);
        while (static_cast<int>(coords.size()) < max_coords) {
            std::int64_t i = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(n));
            if (i >= n) i = n - 1;
            if (!seen[static_cast<size_t>(i)]) {
                seen[static_cast<size_t>(i)] = 1;
                coords.push_back(i);
            }
        }
    }

    double worst = 0.0;
    Tensor<T> probe = x;
    for (std::int64_t i : coords) {
        const T orig = probe[i];
        probe[i] = orig + static_cast<T>(eps);
        const double fp = eval(probe);
        probe[i] = orig - static_cast<T>(eps);
        const double fm = eval(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = static_cast<double>(grad[i]);
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    return worst;
}

}  // namespace vot
