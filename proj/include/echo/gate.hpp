#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "echo/common.hpp"
#include "echo/tensor.hpp"

namespace echo {

/// Two-layer feed-forward gate producing per-element blending coefficients.
struct GateParams {
    Tensor w1;  // [d, d_h]
    Tensor b1;  // [d_h]
    Tensor w2;  // [d_h, d]
    Tensor b2;  // [d]

    /// Default init: w2 = 0, b2 = +2, so the gate opens at sigmoid(2) ~ 0.88
    /// and the second attention branch starts down-weighted.
    static GateParams init(std::int64_t d, std::int64_t hidden, Rng& rng,
                           double b2_init = 2.0) {
        if (hidden < 1) throw contract_error("gate: hidden width must be >= 1");
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        GateParams p;
        p.w1 = Tensor::randn({d, hidden}, rng, s, true);
        p.b1 = Tensor::zeros({hidden}, true);
        p.w2 = Tensor::zeros({hidden, d}, true);
        p.b2 = Tensor::full({d}, b2_init, true);
        return p;
    }

    std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

/// G = sigmoid(relu(x W1 + b1) W2 + b2), elementwise in (0,1).
inline Tensor gate_coefficients(const Tensor& x, const GateParams& p) {
    Tensor hidden = relu(add_row_bias(matmul(x, p.w1), p.b1));
    return sigmoid(add_row_bias(matmul(hidden, p.w2), p.b2));
}

/// Elementwise convex combination g*o1 + (1-g)*o2.
inline Tensor fuse(const Tensor& o1, const Tensor& o2, const Tensor& g) {
    detail::require_same_shape("fuse", o1, o2);
    detail::require_same_shape("fuse", o1, g);
    return add(mul(g, o1), mul(affine(g, -1.0, 1.0), o2));
}

}  // namespace echo
