#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "echo/common.hpp"
#include "echo/tensor.hpp"

namespace echo {

struct AttentionConfig {
    std::int64_t model_dim = 64;
    std::int64_t num_heads = 4;
    std::int64_t window = 4;       // W_phi for the stage this config serves
    std::int64_t conv_kernel = 4;  // depthwise kernel size
    bool share_qkv_conv = false;   // one conv reused for Q, K, V

    std::int64_t head_dim() const {
        if (num_heads < 1 || model_dim % num_heads != 0) {
            throw contract_error("attention: model_dim " + std::to_string(model_dim) +
                                 " not divisible by num_heads " + std::to_string(num_heads));
        }
        return model_dim / num_heads;
    }
    double scale() const { return 1.0 / std::sqrt(static_cast<double>(head_dim())); }

    void validate() const {
        head_dim();
        if (window < 1) throw contract_error("attention: window must be >= 1");
        if (conv_kernel < 1) throw contract_error("attention: conv_kernel must be >= 1");
    }
};

/// Boolean attend-mask, either per-key [T] or full [T,T]; true = attend.
struct AttentionMask {
    std::vector<std::uint8_t> data;
    std::int64_t rows = 0;  // 0 for the per-key form

    static AttentionMask all(std::int64_t T) {
        AttentionMask m;
        m.data.assign(static_cast<std::size_t>(T), 1);
        return m;
    }
    static AttentionMask keys(std::vector<std::uint8_t> keep) {
        AttentionMask m;
        m.data = std::move(keep);
        return m;
    }
    static AttentionMask full(std::int64_t T, std::vector<std::uint8_t> keep) {
        if (static_cast<std::int64_t>(keep.size()) != T * T) {
            throw shape_error("attention mask: need T*T entries");
        }
        AttentionMask m;
        m.data = std::move(keep);
        m.rows = T;
        return m;
    }

    std::vector<std::uint8_t> expanded(std::int64_t T) const {
        if (rows == 0) {
            if (static_cast<std::int64_t>(data.size()) != T) {
                throw shape_error("attention mask: key mask length " +
                                  std::to_string(data.size()) + " for sequence length " +
                                  std::to_string(T));
            }
            std::vector<std::uint8_t> out(static_cast<std::size_t>(T * T));
            for (std::int64_t r = 0; r < T; ++r)
                for (std::int64_t c = 0; c < T; ++c) out[r * T + c] = data[c];
            return out;
        }
        if (rows != T) {
            throw shape_error("attention mask: full mask for length " + std::to_string(rows) +
                              " applied to sequence length " + std::to_string(T));
        }
        return data;
    }
};

/// Learned projections of one attention branch.
struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;

    static AttentionParams init(std::int64_t d, Rng& rng, double out_scale = 0.5) {
        const double s = 1.0 / std::sqrt(static_cast<double>(d));
        AttentionParams p;
        p.wq = Tensor::randn({d, d}, rng, s, true);
        p.bq = Tensor::zeros({d}, true);
        p.wk = Tensor::randn({d, d}, rng, s, true);
        p.bk = Tensor::zeros({d}, true);
        p.wv = Tensor::randn({d, d}, rng, s, true);
        p.bv = Tensor::zeros({d}, true);
        p.wo = Tensor::randn({d, d}, rng, s * out_scale, true);
        p.bo = Tensor::zeros({d}, true);
        return p;
    }

    std::vector<Tensor> parameters() const { return {wq, bq, wk, bk, wv, bv, wo, bo}; }
};

struct SeparableConvParams {
    Tensor depthwise;  // [k,d]
    Tensor pointwise;  // [d,d]

    /// k=1 all-ones depthwise with identity pointwise: conv(x) == x.
    static SeparableConvParams identity(std::int64_t d, bool requires_grad = false) {
        SeparableConvParams p;
        p.depthwise = Tensor::full({1, d}, 1.0, requires_grad);
        p.pointwise = Tensor::identity(d, requires_grad);
        return p;
    }

    /// Identity plus small noise, so the echo branch starts close to plain
    /// windowed attention.
    static SeparableConvParams init(std::int64_t k, std::int64_t d, Rng& rng,
                                    double noise = 0.05) {
        SeparableConvParams p;
        p.depthwise = Tensor::randn({k, d}, rng, noise, true);
        const std::int64_t center = detail::conv_pad_left(k);
        for (std::int64_t c = 0; c < d; ++c) p.depthwise.values()[center * d + c] += 1.0;
        p.pointwise = Tensor::randn({d, d}, rng, noise / std::sqrt(static_cast<double>(d)), true);
        for (std::int64_t c = 0; c < d; ++c) p.pointwise.values()[c * d + c] += 1.0;
        return p;
    }

    std::vector<Tensor> parameters() const { return {depthwise, pointwise}; }
};

/// Echo branch: shared-shape projections plus one separable conv per stream.
struct EchoParams {
    AttentionParams proj;
    SeparableConvParams conv_q, conv_k, conv_v;

    static EchoParams init(std::int64_t d, std::int64_t kernel, Rng& rng,
                           double out_scale = 0.5) {
        EchoParams p;
        p.proj = AttentionParams::init(d, rng, out_scale);
        p.conv_q = SeparableConvParams::init(kernel, d, rng);
        p.conv_k = SeparableConvParams::init(kernel, d, rng);
        p.conv_v = SeparableConvParams::init(kernel, d, rng);
        return p;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out = proj.parameters();
        for (const auto& c : {conv_q, conv_k, conv_v}) {
            out.push_back(c.depthwise);
            out.push_back(c.pointwise);
        }
        return out;
    }
};

struct AttentionOutput {
    Tensor output;   // [T,d]
    Tensor weights;  // [h,T,T] full, [h,T,W_eff] windowed; plain data, no grad
};

/// MAC breakdown of one attention call; core covers score and value
/// aggregation only, so full vs windowed cost can be compared without the
/// projections both modes share.
struct AttentionCost {
    std::uint64_t projection = 0;
    std::uint64_t conv = 0;
    std::uint64_t core = 0;
    std::uint64_t total() const { return projection + conv + core; }
};

/// Inclusive attendable range for 1-based query position tau, clamped to [1,T].
inline std::pair<std::int64_t, std::int64_t> effective_window(std::int64_t tau, std::int64_t T,
                                                              std::int64_t window) {
    if (tau < 1 || tau > T) {
        throw contract_error("effective_window: position " + std::to_string(tau) +
                             " outside [1," + std::to_string(T) + "]");
    }
    if (window < 1) throw contract_error("effective_window: window must be >= 1");
    const std::int64_t half = window / 2;
    return {std::max<std::int64_t>(1, tau - half), std::min(T, tau + half)};
}

/// Widest row width a windowed weight matrix can need.
inline std::int64_t effective_window_width(std::int64_t T, std::int64_t window) {
    return std::min(T, 2 * (window / 2) + 1);
}

/// Windowed scaled-dot-product core for one head: every query row attends only
/// to keys inside its effective window, gathered explicitly. If `row_weights`
/// is given it receives the [T, W_eff] softmax rows (zero-padded on the right).
inline Tensor window_attend(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::int64_t window, double scale,
                            std::vector<double>* row_weights = nullptr) {
    detail::require_same_shape("window_attend", q, k);
    detail::require_same_shape("window_attend", k, v);
    if (q.rank() != 2) throw shape_error("window_attend: needs [T,dh] operands");
    const std::int64_t T = q.dim(0), dh = q.dim(1);
    const std::int64_t half = window / 2;
    const std::int64_t weff = effective_window_width(T, window);

    std::vector<double> out(static_cast<std::size_t>(T * dh), 0.0);
    std::vector<double> weights(static_cast<std::size_t>(T * weff), 0.0);
    std::vector<std::int64_t> los(static_cast<std::size_t>(T));
    std::uint64_t macs = 0;
    for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t lo = std::max<std::int64_t>(0, t - half);
        const std::int64_t hi = std::min(T - 1, t + half);
        const std::int64_t w = hi - lo + 1;
        los[t] = lo;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < w; ++j) {
            double s = 0.0;
            for (std::int64_t c = 0; c < dh; ++c)
                s += q.values()[t * dh + c] * k.values()[(lo + j) * dh + c];
            s *= scale;
            weights[t * weff + j] = s;
            mx = std::max(mx, s);
        }
        double total = 0.0;
        for (std::int64_t j = 0; j < w; ++j) {
            const double e = std::exp(weights[t * weff + j] - mx);
            weights[t * weff + j] = e;
            total += e;
        }
        for (std::int64_t j = 0; j < w; ++j) {
            weights[t * weff + j] /= total;
            const double a = weights[t * weff + j];
            for (std::int64_t c = 0; c < dh; ++c) out[t * dh + c] += a * v.values()[(lo + j) * dh + c];
        }
        macs += static_cast<std::uint64_t>(2 * w * dh);
    }
    mac::add(macs);
    if (row_weights) *row_weights = weights;

    Tensor tq = q, tk = k, tv = v;
    return make_op(q.shape(), std::move(out), {q, k, v},
                   [tq, tk, tv, T, dh, half, weff, scale, weights = std::move(weights),
                    los = std::move(los)](detail::Node& self) mutable {
                       auto& gq = tq.grad_buffer();
                       auto& gk = tk.grad_buffer();
                       auto& gv = tv.grad_buffer();
                       std::vector<double> ga(static_cast<std::size_t>(weff));
                       for (std::int64_t t = 0; t < T; ++t) {
                           const std::int64_t lo = los[t];
                           const std::int64_t hi = std::min(T - 1, t + half);
                           const std::int64_t w = hi - lo + 1;
                           // d a_j = dOut . v_j ; softmax jacobian ; then q,k chains
                           double dot = 0.0;
                           for (std::int64_t j = 0; j < w; ++j) {
                               double s = 0.0;
                               for (std::int64_t c = 0; c < dh; ++c)
                                   s += self.grad[t * dh + c] * tv.values()[(lo + j) * dh + c];
                               ga[j] = s;
                               dot += s * weights[t * weff + j];
                           }
                           for (std::int64_t j = 0; j < w; ++j) {
                               const double a = weights[t * weff + j];
                               const double gs = a * (ga[j] - dot) * scale;
                               for (std::int64_t c = 0; c < dh; ++c) {
                                   gq[t * dh + c] += gs * tk.values()[(lo + j) * dh + c];
                                   gk[(lo + j) * dh + c] += gs * tq.values()[t * dh + c];
                                   gv[(lo + j) * dh + c] += a * self.grad[t * dh + c];
                               }
                           }
                       }
                   });
}

namespace detail {

struct ProjectedQkv {
    Tensor q, k, v;
};

inline ProjectedQkv project_qkv(const Tensor& x, const AttentionParams& p) {
    return {add_row_bias(matmul(x, p.wq), p.bq), add_row_bias(matmul(x, p.wk), p.bk),
            add_row_bias(matmul(x, p.wv), p.bv)};
}

}  // namespace detail

/// Standard multi-head scaled-dot-product self-attention with learned
/// projections. Masked-out key positions receive exactly zero weight.
inline AttentionOutput msa(const Tensor& x, const AttentionMask& mask, const AttentionParams& p,
                           std::int64_t num_heads, AttentionCost* cost = nullptr) {
    if (x.rank() != 2) throw shape_error("msa: input must be [T,d]");
    const std::int64_t T = x.dim(0), d = x.dim(1);
    if (T < 1) throw contract_error("msa: empty sequence");
    if (num_heads < 1 || d % num_heads != 0) {
        throw contract_error("msa: head count " + std::to_string(num_heads) +
                             " does not divide model dim " + std::to_string(d));
    }
    const std::int64_t dh = d / num_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto keep = mask.expanded(T);

    const std::uint64_t m0 = mac::now();
    auto qkv = detail::project_qkv(x, p);
    const std::uint64_t m1 = mac::now();

    std::vector<Tensor> heads;
    std::vector<double> weight_data(static_cast<std::size_t>(num_heads * T * T));
    for (std::int64_t h = 0; h < num_heads; ++h) {
        Tensor qh = slice_cols(qkv.q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(qkv.k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(qkv.v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), sc);
        Tensor attn = masked_softmax_rows(scores, keep);
        std::copy(attn.values().begin(), attn.values().end(),
                  weight_data.begin() + static_cast<std::size_t>(h * T * T));
        heads.push_back(matmul(attn, vh));
    }
    const std::uint64_t m2 = mac::now();

    Tensor merged = concat_cols(heads);
    Tensor out = add_row_bias(matmul(merged, p.wo), p.bo);
    const std::uint64_t m3 = mac::now();
    if (cost) {
        cost->projection += (m1 - m0) + (m3 - m2);
        cost->core += m2 - m1;
    }
    return {out, Tensor::from_data({num_heads, T, T}, std::move(weight_data))};
}

namespace detail {

inline Tensor echo_msa_impl(const Tensor& x, const EchoParams& p, const AttentionConfig& cfg,
                            AttentionCost* cost, Tensor* weights_out) {
    if (x.rank() != 2) throw shape_error("echo_msa: input must be [T,d]");
    cfg.validate();
    const std::int64_t T = x.dim(0), d = x.dim(1);
    if (d != cfg.model_dim) {
        throw shape_error("echo_msa: input " + shape_str(x.shape()) + " vs model_dim " +
                          std::to_string(cfg.model_dim));
    }
    const std::int64_t heads = cfg.num_heads;
    const std::int64_t dh = cfg.head_dim();

    const std::uint64_t m0 = mac::now();
    auto qkv = project_qkv(x, p.proj);
    const std::uint64_t m1 = mac::now();

    const SeparableConvParams& ck = cfg.share_qkv_conv ? p.conv_q : p.conv_k;
    const SeparableConvParams& cv = cfg.share_qkv_conv ? p.conv_q : p.conv_v;
    Tensor qc = depthwise_separable_conv1d(qkv.q, p.conv_q.depthwise, p.conv_q.pointwise);
    Tensor kc = depthwise_separable_conv1d(qkv.k, ck.depthwise, ck.pointwise);
    Tensor vc = depthwise_separable_conv1d(qkv.v, cv.depthwise, cv.pointwise);
    const std::uint64_t m2 = mac::now();

    const std::int64_t weff = effective_window_width(T, cfg.window);
    std::vector<double> weight_data;
    if (weights_out) weight_data.assign(static_cast<std::size_t>(heads * T * weff), 0.0);
    std::vector<Tensor> head_outs;
    std::vector<double> row_weights;
    for (std::int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(qc, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(kc, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(vc, h * dh, (h + 1) * dh);
        head_outs.push_back(window_attend(qh, kh, vh, cfg.window, cfg.scale(),
                                          weights_out ? &row_weights : nullptr));
        if (weights_out) {
            std::copy(row_weights.begin(), row_weights.end(),
                      weight_data.begin() + static_cast<std::size_t>(h * T * weff));
        }
    }
    const std::uint64_t m3 = mac::now();

    Tensor merged = concat_cols(head_outs);
    Tensor out = add_row_bias(matmul(merged, p.proj.wo), p.proj.bo);
    const std::uint64_t m4 = mac::now();

    if (cost) {
        cost->projection += (m1 - m0) + (m4 - m3);
        cost->conv += m2 - m1;
        cost->core += m3 - m2;
    }
    if (weights_out) {
        *weights_out = Tensor::from_data({heads, T, weff}, std::move(weight_data));
    }
    return out;
}

}  // namespace detail

/// Echo-MSA: project Q/K/V, run each through its depthwise-separable conv,
/// then attend within the per-position effective window only.
inline Tensor echo_msa(const Tensor& x, const EchoParams& p, const AttentionConfig& cfg,
                       AttentionCost* cost = nullptr) {
    return detail::echo_msa_impl(x, p, cfg, cost, nullptr);
}

/// Same computation, also exposing the [h,T,W_eff] attention weights
/// (rows left-aligned at each position's window start, zero padded).
inline AttentionOutput echo_msa_with_weights(const Tensor& x, const EchoParams& p,
                                             const AttentionConfig& cfg) {
    Tensor weights;
    Tensor out = detail::echo_msa_impl(x, p, cfg, nullptr, &weights);
    return {out, weights};
}

/// Reference path for equivalence tests: the same windowed attention expressed
/// as full T x T attention under a band mask, sharing EchoParams. Quadratic
/// cost; not used by the model.
inline Tensor echo_msa_masked_reference(const Tensor& x, const EchoParams& p,
                                        const AttentionConfig& cfg) {
    if (x.rank() != 2) throw shape_error("echo_msa: input must be [T,d]");
    cfg.validate();
    const std::int64_t T = x.dim(0);
    const std::int64_t heads = cfg.num_heads;
    const std::int64_t dh = cfg.head_dim();
    auto qkv = detail::project_qkv(x, p.proj);
    const SeparableConvParams& ck = cfg.share_qkv_conv ? p.conv_q : p.conv_k;
    const SeparableConvParams& cv = cfg.share_qkv_conv ? p.conv_q : p.conv_v;
    Tensor qc = depthwise_separable_conv1d(qkv.q, p.conv_q.depthwise, p.conv_q.pointwise);
    Tensor kc = depthwise_separable_conv1d(qkv.k, ck.depthwise, ck.pointwise);
    Tensor vc = depthwise_separable_conv1d(qkv.v, cv.depthwise, cv.pointwise);

    std::vector<std::uint8_t> band(static_cast<std::size_t>(T * T), 0);
    for (std::int64_t t = 1; t <= T; ++t) {
        auto [lo, hi] = effective_window(t, T, cfg.window);
        for (std::int64_t j = lo; j <= hi; ++j) band[(t - 1) * T + (j - 1)] = 1;
    }
    std::vector<Tensor> head_outs;
    for (std::int64_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(qc, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(kc, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(vc, h * dh, (h + 1) * dh);
        Tensor attn = masked_softmax_rows(scale(matmul(qh, transpose(kh)), cfg.scale()), band);
        head_outs.push_back(matmul(attn, vh));
    }
    return add_row_bias(matmul(concat_cols(head_outs), p.proj.wo), p.proj.bo);
}

}  // namespace echo
