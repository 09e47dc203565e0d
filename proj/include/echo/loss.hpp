#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "echo/common.hpp"
#include "echo/tensor.hpp"

namespace echo {

/// Target symbol sequence for CTC. Blank is index 0 and never appears in
/// `symbols`; real symbols live in [1, vocab_size-1].
struct LabelSequence {
    std::vector<std::int64_t> symbols;
    std::int64_t vocab_size = 0;

    static constexpr std::int64_t kBlank = 0;

    void validate() const {
        if (vocab_size < 2) throw contract_error("label sequence: vocab must include blank + 1");
        for (auto s : symbols) {
            if (s < 1 || s >= vocab_size) {
                throw contract_error("label sequence: symbol " + std::to_string(s) +
                                     " outside [1," + std::to_string(vocab_size - 1) + "]");
            }
        }
    }

    std::int64_t adjacent_repeats() const {
        std::int64_t n = 0;
        for (std::size_t i = 1; i < symbols.size(); ++i)
            if (symbols[i] == symbols[i - 1]) ++n;
        return n;
    }

    /// Shortest frame count that admits any alignment.
    std::int64_t min_frames() const {
        return static_cast<std::int64_t>(symbols.size()) + adjacent_repeats();
    }
};

inline bool ctc_feasible(std::int64_t frames, const LabelSequence& y) {
    return frames >= y.min_frames();
}

struct LossConfig {
    double lambda = 0.5;  // CTC vs focal blend
    double alpha = 0.25;  // focal balance
    double gamma = 2.0;   // focal exponent
    std::vector<double> sample_weights;  // empty = all ones

    void validate() const {
        if (lambda < 0.0 || lambda > 1.0) throw contract_error("loss: lambda outside [0,1]");
        if (alpha <= 0.0) throw contract_error("loss: alpha must be > 0");
        if (gamma < 0.0) throw contract_error("loss: gamma must be >= 0");
        for (double w : sample_weights)
            if (w < 0.0) throw contract_error("loss: negative sample weight");
    }
};

namespace detail {

inline double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

// Extended label with interleaved blanks: blank y0 blank y1 ... blank.
inline std::vector<std::int64_t> extend_labels(const LabelSequence& y) {
    std::vector<std::int64_t> ext(2 * y.symbols.size() + 1, LabelSequence::kBlank);
    for (std::size_t i = 0; i < y.symbols.size(); ++i) ext[2 * i + 1] = y.symbols[i];
    return ext;
}

}  // namespace detail

/// CTC negative log-likelihood of `y` under per-frame log distributions
/// log_probs[T,V], summing over all blank-augmented alignments with the
/// forward algorithm in log space. Differentiable w.r.t. log_probs via the
/// forward-backward recursions. An infeasible pair (T too short) yields +inf
/// with a zero gradient.
inline Tensor ctc_loss(const Tensor& log_probs, const LabelSequence& y) {
    if (log_probs.rank() != 2) throw shape_error("ctc_loss: log_probs must be [T,V]");
    y.validate();
    const std::int64_t T = log_probs.dim(0), V = log_probs.dim(1);
    if (V != y.vocab_size) {
        throw shape_error("ctc_loss: log_probs vocab " + std::to_string(V) +
                          " vs label vocab " + std::to_string(y.vocab_size));
    }
    const double kNegInf = -std::numeric_limits<double>::infinity();
    Tensor lp = log_probs;

    if (!ctc_feasible(T, y)) {
        return make_op({1}, {std::numeric_limits<double>::infinity()}, {log_probs},
                       [lp](detail::Node&) mutable { lp.grad_buffer(); });
    }

    const auto ext = detail::extend_labels(y);
    const std::int64_t S = static_cast<std::int64_t>(ext.size());
    const auto& pv = log_probs.values();
    auto at = [&](std::int64_t t, std::int64_t k) { return pv[t * V + k]; };

    // Forward variables, emission included.
    std::vector<double> alpha(static_cast<std::size_t>(T * S), kNegInf);
    alpha[0] = at(0, ext[0]);
    if (S > 1) alpha[1] = at(0, ext[1]);
    for (std::int64_t t = 1; t < T; ++t) {
        for (std::int64_t s = 0; s < S; ++s) {
            double acc = alpha[(t - 1) * S + s];
            if (s >= 1) acc = detail::log_add(acc, alpha[(t - 1) * S + s - 1]);
            if (s >= 2 && ext[s] != LabelSequence::kBlank && ext[s] != ext[s - 2]) {
                acc = detail::log_add(acc, alpha[(t - 1) * S + s - 2]);
            }
            alpha[t * S + s] = acc == kNegInf ? kNegInf : acc + at(t, ext[s]);
        }
    }
    double log_p = alpha[(T - 1) * S + S - 1];
    if (S > 1) log_p = detail::log_add(log_p, alpha[(T - 1) * S + S - 2]);

    if (!std::isfinite(log_p)) {
        return make_op({1}, {std::numeric_limits<double>::infinity()}, {log_probs},
                       [lp](detail::Node&) mutable { lp.grad_buffer(); });
    }

    // Backward variables, emission included.
    std::vector<double> beta(static_cast<std::size_t>(T * S), kNegInf);
    beta[(T - 1) * S + S - 1] = at(T - 1, ext[S - 1]);
    if (S > 1) beta[(T - 1) * S + S - 2] = at(T - 1, ext[S - 2]);
    for (std::int64_t t = T - 2; t >= 0; --t) {
        for (std::int64_t s = S - 1; s >= 0; --s) {
            double acc = beta[(t + 1) * S + s];
            if (s + 1 < S) acc = detail::log_add(acc, beta[(t + 1) * S + s + 1]);
            if (s + 2 < S && ext[s + 2] != LabelSequence::kBlank && ext[s + 2] != ext[s]) {
                acc = detail::log_add(acc, beta[(t + 1) * S + s + 2]);
            }
            beta[t * S + s] = acc == kNegInf ? kNegInf : acc + at(t, ext[s]);
        }
    }

    // d(-logP)/d(log p_t(k)) = -exp(lse_{s: ext_s = k}(alpha + beta - lp_t(k)) - logP)
    std::vector<double> dlp(static_cast<std::size_t>(T * V), 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        std::vector<double> acc(static_cast<std::size_t>(V), kNegInf);
        for (std::int64_t s = 0; s < S; ++s) {
            const double ab = alpha[t * S + s] + beta[t * S + s];
            if (ab == kNegInf) continue;
            acc[ext[s]] = detail::log_add(acc[ext[s]], ab);
        }
        for (std::int64_t k = 0; k < V; ++k) {
            if (acc[k] == kNegInf) continue;
            dlp[t * V + k] = -std::exp(acc[k] - at(t, k) - log_p);
        }
    }

    return make_op({1}, {-log_p}, {log_probs},
                   [lp, dlp = std::move(dlp)](detail::Node& self) mutable {
                       detail::axpy(lp.grad_buffer(), self.grad[0], dlp);
                   });
}

/// Independent check: enumerate every V^T frame labeling, collapse it through
/// the CTC mapping (merge repeats, drop blanks), and sum the probability of
/// those that equal y. Only usable at tiny sizes.
inline double ctc_loss_bruteforce(const Tensor& log_probs, const LabelSequence& y) {
    if (log_probs.rank() != 2) throw shape_error("ctc_loss_bruteforce: log_probs must be [T,V]");
    y.validate();
    const std::int64_t T = log_probs.dim(0), V = log_probs.dim(1);
    long double total = 0.0L;
    std::vector<std::int64_t> path(static_cast<std::size_t>(T), 0);
    while (true) {
        long double lp = 0.0L;
        for (std::int64_t t = 0; t < T; ++t) lp += log_probs.values()[t * V + path[t]];
        std::vector<std::int64_t> collapsed;
        for (std::int64_t t = 0; t < T; ++t) {
            if (t > 0 && path[t] == path[t - 1]) continue;
            if (path[t] != LabelSequence::kBlank) collapsed.push_back(path[t]);
        }
        if (collapsed == y.symbols) total += std::exp(lp);
        // next path in lexicographic order
        std::int64_t i = T - 1;
        while (i >= 0 && path[i] == V - 1) path[i--] = 0;
        if (i < 0) break;
        ++path[i];
    }
    if (total <= 0.0L) return std::numeric_limits<double>::infinity();
    return static_cast<double>(-std::log(total));
}

/// Mean of weighted per-sample losses: (1/N) sum w_i * L_i.
inline Tensor weighted_ctc(std::span<const Tensor> losses, std::span<const double> weights) {
    if (losses.empty()) throw contract_error("weighted_ctc: empty batch");
    if (losses.size() != weights.size()) {
        throw contract_error("weighted_ctc: " + std::to_string(losses.size()) + " losses vs " +
                             std::to_string(weights.size()) + " weights");
    }
    for (double w : weights)
        if (w < 0.0) throw contract_error("weighted_ctc: negative weight");
    Tensor stacked = stack_scalars(losses);
    Tensor w = Tensor::from_data({static_cast<std::int64_t>(weights.size())},
                                 {weights.begin(), weights.end()});
    return scale(sum(mul(stacked, w)), 1.0 / static_cast<double>(losses.size()));
}

/// Focal modulation alpha * sum_i (1 - e^{-x_i})^gamma * x_i over nonnegative
/// per-sample negative log-likelihoods. With p = e^{-x} this is the standard
/// focal loss alpha (1-p)^gamma (-log p).
inline Tensor focal_term(const Tensor& x, double alpha, double gamma) {
    if (alpha <= 0.0) throw contract_error("focal_term: alpha must be > 0");
    if (gamma < 0.0) throw contract_error("focal_term: gamma must be >= 0");
    for (double v : x.values()) {
        if (v < 0.0) {
            throw contract_error("focal_term: negative input " + std::to_string(v) +
                                 "; inputs are negative log-probabilities");
        }
    }
    double total = 0.0;
    std::vector<double> dx(x.values().size(), 0.0);
    for (std::size_t i = 0; i < x.values().size(); ++i) {
        const double xi = x.values()[i];
        const double em = std::exp(-xi);
        const double base = 1.0 - em;
        const double mod = gamma == 0.0 ? 1.0 : std::pow(base, gamma);
        total += mod * xi;
        double deriv = mod;
        if (gamma > 0.0 && xi > 0.0) deriv += gamma * xi * std::pow(base, gamma - 1.0) * em;
        dx[i] = alpha * deriv;
    }
    Tensor tx = x;
    return make_op({1}, {alpha * total}, {x}, [tx, dx = std::move(dx)](detail::Node& self) mutable {
        detail::axpy(tx.grad_buffer(), self.grad[0], dx);
    });
}

namespace detail {

inline std::vector<double> resolve_weights(const LossConfig& cfg, std::size_t n) {
    if (cfg.sample_weights.empty()) return std::vector<double>(n, 1.0);
    if (cfg.sample_weights.size() != n) {
        throw contract_error("loss: " + std::to_string(cfg.sample_weights.size()) +
                             " sample weights for batch of " + std::to_string(n));
    }
    return cfg.sample_weights;
}

}  // namespace detail

/// Compound loss lambda * weighted-CTC + (1-lambda) * focal, with the focal
/// vector taken from the same batch's per-sample CTC negative log-likelihoods.
inline Tensor e_ctc_loss(std::span<const Tensor> batch_log_probs,
                         std::span<const LabelSequence> labels, const LossConfig& cfg) {
    cfg.validate();
    if (batch_log_probs.empty() || batch_log_probs.size() != labels.size()) {
        throw contract_error("e_ctc_loss: batch size mismatch");
    }
    std::vector<Tensor> losses;
    losses.reserve(batch_log_probs.size());
    for (std::size_t i = 0; i < batch_log_probs.size(); ++i) {
        losses.push_back(ctc_loss(batch_log_probs[i], labels[i]));
    }
    const auto weights = detail::resolve_weights(cfg, losses.size());
    Tensor wctc = weighted_ctc(losses, weights);
    // relu guards against log-sum-exp rounding a perfect fit to -0-epsilon.
    Tensor focal = focal_term(relu(stack_scalars(losses)), cfg.alpha, cfg.gamma);
    return add(scale(wctc, cfg.lambda), scale(focal, 1.0 - cfg.lambda));
}

/// Per-frame argmax, merge repeats, drop blanks.
inline std::vector<std::int64_t> greedy_decode(const Tensor& log_probs) {
    if (log_probs.rank() != 2) throw shape_error("greedy_decode: log_probs must be [T,V]");
    const std::int64_t T = log_probs.dim(0), V = log_probs.dim(1);
    std::vector<std::int64_t> out;
    std::int64_t prev = -1;
    for (std::int64_t t = 0; t < T; ++t) {
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < V; ++k)
            if (log_probs.values()[t * V + k] > log_probs.values()[t * V + best]) best = k;
        if (best != prev && best != LabelSequence::kBlank) out.push_back(best);
        prev = best;
    }
    return out;
}

}  // namespace echo
