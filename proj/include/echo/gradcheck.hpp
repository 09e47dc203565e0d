#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "echo/common.hpp"
#include "echo/tensor.hpp"

namespace echo {

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Fixed random coefficients turn a tensor-valued op into a scalar loss so
/// its gradient can be probed.
inline Tensor scalarize(const Tensor& out, const Tensor& coeffs) {
    return sum(mul(out, coeffs));
}

/// Central finite-difference check of `forward` against the recorded
/// gradients. `forward` must rebuild the graph from the current parameter
/// values and return a scalar. max_probes = 0 probes every element.
///
/// A probe counts as agreeing when |analytic - fd| < atol even if the
/// relative error is large: central differences bottom out near 1e-11 for
/// unit-scale outputs, so a mathematically-zero gradient (e.g. a bias that
/// softmax shift-invariance cancels) would otherwise read as noise/noise.
inline GradCheckResult check_gradient(std::string op_name,
                                      const std::function<Tensor()>& forward,
                                      std::vector<Tensor> params, double h = 1e-5,
                                      double tol = 1e-4, std::size_t max_probes = 0,
                                      Rng* rng = nullptr, double atol = 1e-9) {
    for (auto& p : params) p.zero_grad();
    Tensor loss = forward();
    loss.backward();

    double max_rel = 0.0;
    for (auto& p : params) {
        std::vector<std::size_t> probes;
        const std::size_t n = p.values().size();
        if (max_probes == 0 || n <= max_probes || rng == nullptr) {
            probes.resize(n);
            for (std::size_t i = 0; i < n; ++i) probes[i] = i;
        } else {
            for (std::size_t i = 0; i < max_probes; ++i)
                probes.push_back(static_cast<std::size_t>(
                    rand_int(*rng, 0, static_cast<std::int64_t>(n) - 1)));
        }
        for (std::size_t idx : probes) {
            const double analytic = p.has_grad() ? p.grad()[idx] : 0.0;
            const double orig = p.values()[idx];
            p.values()[idx] = orig + h;
            const double f_plus = forward().item();
            p.values()[idx] = orig - h;
            const double f_minus = forward().item();
            p.values()[idx] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            if (std::abs(analytic - fd) < atol) continue;
            const double rel = std::abs(analytic - fd) / (std::abs(fd) + 1e-8);
            max_rel = std::max(max_rel, rel);
        }
    }
    return {std::move(op_name), max_rel, max_rel < tol};
}

}  // namespace echo
