#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "terse/rng.hpp"
#include "terse/tensor.hpp"

namespace terse {

// Central finite differences against analytic gradients. Doubles throughout;
// callers promote their operations to 64-bit for checking.

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), floor);
}

// Perturbs *slot by +-eps around its current value, calling eval() for each
// side, and returns the central difference. *slot is restored.
template <typename Eval>
double central_diff(double* slot, double eps, Eval&& eval) {
    const double orig = *slot;
    *slot = orig + eps;
    const double fp = eval();
    *slot = orig - eps;
    const double fm = eval();
    *slot = orig;
    return (fp - fm) / (2.0 * eps);
}

// Compares an analytic gradient tensor against finite differences on a sample
// of coordinates; returns the worst relative error seen.
template <typename Eval>
double check_grad_tensor(Tensor<double>& values, const Tensor<double>& analytic, Eval&& eval,
                         Rng& rng, int max_coords = 12, double eps = 1e-5, double floor = 1e-6) {
    double worst = 0;
    const std::size_t n = values.size();
    const int coords = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(max_coords), n));
    for (int k = 0; k < coords; ++k) {
        const std::size_t i = n <= static_cast<std::size_t>(max_coords)
                                  ? static_cast<std::size_t>(k)
                                  : rng.below(n);
        const double fd = central_diff(&values[i], eps, eval);
        worst = std::max(worst, rel_err(analytic[i], fd, floor));
    }
    return worst;
}

inline void fill_uniform(Tensor<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
}

struct CheckResult {
    std::string name;
    double max_err = 0;
    double tol = 0;
    bool pass = false;
};

// Full verification suite: every layer backward, the affine partials, the
// compositor chain and the synthesizer-to-target chain. Used by the gradcheck
// CLI subcommand and the acceptance suite.
std::vector<CheckResult> run_gradient_suite();

}  // namespace terse
