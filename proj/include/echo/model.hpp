#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "echo/attention.hpp"
#include "echo/common.hpp"
#include "echo/config.hpp"
#include "echo/gate.hpp"
#include "echo/tensor.hpp"

namespace echo {

struct StageConfig {
    std::int64_t num_blocks = 1;
    std::int64_t window = 4;
    std::int64_t conv_kernel = 4;
};

struct ModelConfig {
    std::array<StageConfig, 4> stages{StageConfig{2, 4}, StageConfig{2, 16}, StageConfig{4, 64},
                                      StageConfig{4, 256}};
    std::int64_t model_dim = 64;
    std::int64_t num_heads = 4;
    std::int64_t vocab_size = 0;
    std::int64_t frame_stride = 320;  // 20 ms at 16 kHz -> 50 Hz frame rate
    std::int64_t gate_hidden = 0;     // 0 = model_dim
    std::int64_t ffn_hidden = 0;      // 0 = 2 * model_dim
    double gate_bias_init = 2.0;

    static ModelConfig echo_s(std::int64_t vocab, std::int64_t dim = 64,
                              std::int64_t heads = 4) {
        ModelConfig c;
        c.stages = {StageConfig{2, 4}, StageConfig{2, 16}, StageConfig{4, 64},
                    StageConfig{4, 256}};
        c.model_dim = dim;
        c.num_heads = heads;
        c.vocab_size = vocab;
        return c;
    }

    static ModelConfig echo_b(std::int64_t vocab, std::int64_t dim = 64,
                              std::int64_t heads = 4) {
        ModelConfig c = echo_s(vocab, dim, heads);
        c.stages[0].num_blocks = 4;
        c.stages[1].num_blocks = 4;
        c.stages[2].num_blocks = 8;
        c.stages[3].num_blocks = 8;
        return c;
    }

    std::int64_t gate_hidden_dim() const { return gate_hidden > 0 ? gate_hidden : model_dim; }
    std::int64_t ffn_hidden_dim() const { return ffn_hidden > 0 ? ffn_hidden : 2 * model_dim; }

    std::int64_t total_blocks() const {
        std::int64_t n = 0;
        for (const auto& s : stages) n += s.num_blocks;
        return n;
    }

    /// Per-block windows in execution order: block j of stage i uses W_phi(i).
    std::vector<std::int64_t> block_windows() const {
        std::vector<std::int64_t> out;
        for (const auto& s : stages)
            for (std::int64_t b = 0; b < s.num_blocks; ++b) out.push_back(s.window);
        return out;
    }

    std::vector<std::int64_t> block_kernels() const {
        std::vector<std::int64_t> out;
        for (const auto& s : stages)
            for (std::int64_t b = 0; b < s.num_blocks; ++b) out.push_back(s.conv_kernel);
        return out;
    }

    void validate() const {
        if (model_dim < 1 || num_heads < 1 || model_dim % num_heads != 0) {
            throw contract_error("model: dim " + std::to_string(model_dim) +
                                 " not divisible by heads " + std::to_string(num_heads));
        }
        if (vocab_size < 2) throw contract_error("model: vocab must include blank + 1 symbol");
        if (frame_stride < 1) throw contract_error("model: frame_stride must be >= 1");
        for (const auto& s : stages) {
            if (s.num_blocks < 1) throw contract_error("model: stage needs >= 1 block");
            if (s.window < 1) throw contract_error("model: window must be >= 1");
            if (s.conv_kernel < 1) throw contract_error("model: conv kernel must be >= 1");
        }
    }

    /// Closed-form parameter count; asserted against the live model in tests.
    std::int64_t parameter_count() const {
        const std::int64_t d = model_dim, gh = gate_hidden_dim(), fh = ffn_hidden_dim();
        std::int64_t total = frame_stride * d;  // frame projection
        for (const auto& s : stages) {
            const std::int64_t k = s.conv_kernel;
            const std::int64_t block = 4 * (d * d + d)            // msa projections
                                       + 4 * (d * d + d)          // echo projections
                                       + 3 * (k * d + d * d)      // echo convs
                                       + (d * gh + gh + gh * d + d)  // gate
                                       + (d * fh + fh + fh * d + d)  // ffn
                                       + 4 * d;                   // two layer norms
            total += s.num_blocks * block;
        }
        total += 2 * d;                    // final norm
        total += d * vocab_size + vocab_size;  // head
        return total;
    }

    Config to_config() const {
        Config c;
        c.set_i64("model.dim", model_dim);
        c.set_i64("model.heads", num_heads);
        c.set_i64("model.vocab", vocab_size);
        c.set_i64("model.frame_stride", frame_stride);
        c.set_i64("model.gate_hidden", gate_hidden);
        c.set_i64("model.ffn_hidden", ffn_hidden);
        c.set_f64("model.gate_bias_init", gate_bias_init);
        auto join = [](auto get) {
            std::string s;
            for (int i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(get(i));
            return s;
        };
        c.set("model.stage_blocks", join([&](int i) { return stages[i].num_blocks; }));
        c.set("model.stage_windows", join([&](int i) { return stages[i].window; }));
        c.set("model.stage_kernels", join([&](int i) { return stages[i].conv_kernel; }));
        return c;
    }

    static ModelConfig from_config(const Config& c) {
        ModelConfig m;
        const std::string preset = c.get_str("model.preset", "");
        if (preset == "echo-b") {
            m = echo_b(0);
        } else if (preset == "echo-s" || preset.empty()) {
            m = echo_s(0);
        } else {
            throw contract_error("model: unknown preset '" + preset + "'");
        }
        m.model_dim = c.get_i64("model.dim", m.model_dim);
        m.num_heads = c.get_i64("model.heads", m.num_heads);
        m.vocab_size = c.get_i64("model.vocab", m.vocab_size);
        m.frame_stride = c.get_i64("model.frame_stride", m.frame_stride);
        m.gate_hidden = c.get_i64("model.gate_hidden", m.gate_hidden);
        m.ffn_hidden = c.get_i64("model.ffn_hidden", m.ffn_hidden);
        m.gate_bias_init = c.get_f64("model.gate_bias_init", m.gate_bias_init);
        auto blocks = c.get_i64_list("model.stage_blocks", m.block_counts());
        auto windows = c.get_i64_list("model.stage_windows", m.window_list());
        auto kernels = c.get_i64_list("model.stage_kernels", m.kernel_list());
        if (blocks.size() != 4 || windows.size() != 4 || kernels.size() != 4) {
            throw contract_error("model: stage lists need exactly 4 entries");
        }
        for (int i = 0; i < 4; ++i) {
            m.stages[i] = StageConfig{blocks[i], windows[i], kernels[i]};
        }
        return m;
    }

    std::vector<std::int64_t> block_counts() const {
        return {stages[0].num_blocks, stages[1].num_blocks, stages[2].num_blocks,
                stages[3].num_blocks};
    }
    std::vector<std::int64_t> window_list() const {
        return {stages[0].window, stages[1].window, stages[2].window, stages[3].window};
    }
    std::vector<std::int64_t> kernel_list() const {
        return {stages[0].conv_kernel, stages[1].conv_kernel, stages[2].conv_kernel,
                stages[3].conv_kernel};
    }
};

struct FeedForwardParams {
    Tensor w1, b1, w2, b2;

    static FeedForwardParams init(std::int64_t d, std::int64_t hidden, Rng& rng,
                                  double out_scale = 0.5) {
        FeedForwardParams p;
        p.w1 = Tensor::randn({d, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(d)), true);
        p.b1 = Tensor::zeros({hidden}, true);
        p.w2 = Tensor::randn({hidden, d}, rng,
                             out_scale / std::sqrt(static_cast<double>(hidden)), true);
        p.b2 = Tensor::zeros({d}, true);
        return p;
    }

    std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

struct NormParams {
    Tensor gain, bias;

    static NormParams init(std::int64_t d) {
        NormParams p;
        p.gain = Tensor::full({d}, 1.0, true);
        p.bias = Tensor::zeros({d}, true);
        return p;
    }

    std::vector<Tensor> parameters() const { return {gain, bias}; }
};

struct EchoBlock {
    AttentionParams msa_params;
    EchoParams echo_params;
    GateParams gate_params;
    FeedForwardParams ffn;
    NormParams norm_attn, norm_ffn;

    static EchoBlock init(const ModelConfig& cfg, std::int64_t conv_kernel, Rng& rng) {
        EchoBlock b;
        b.msa_params = AttentionParams::init(cfg.model_dim, rng);
        b.echo_params = EchoParams::init(cfg.model_dim, conv_kernel, rng);
        b.gate_params =
            GateParams::init(cfg.model_dim, cfg.gate_hidden_dim(), rng, cfg.gate_bias_init);
        b.ffn = FeedForwardParams::init(cfg.model_dim, cfg.ffn_hidden_dim(), rng);
        b.norm_attn = NormParams::init(cfg.model_dim);
        b.norm_ffn = NormParams::init(cfg.model_dim);
        return b;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out = msa_params.parameters();
        auto append = [&out](std::vector<Tensor> v) {
            out.insert(out.end(), v.begin(), v.end());
        };
        append(echo_params.parameters());
        append(gate_params.parameters());
        append(ffn.parameters());
        append(norm_attn.parameters());
        append(norm_ffn.parameters());
        return out;
    }
};

/// Stage-structured encoder: frame projection, four stages of blocks sharing
/// per-stage windows, final norm and a log-softmax vocabulary head.
struct Model {
    ModelConfig config;
    Tensor frame_proj;  // [frame_stride, d], bias-free
    std::vector<EchoBlock> blocks;
    NormParams final_norm;
    Tensor head_w, head_b;

    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Rng rng(seed);
        Model m;
        m.config = cfg;
        const std::int64_t d = cfg.model_dim;
        m.frame_proj = Tensor::randn({cfg.frame_stride, d}, rng,
                                     1.0 / std::sqrt(static_cast<double>(cfg.frame_stride)),
                                     true);
        const auto kernels = cfg.block_kernels();
        for (std::int64_t i = 0; i < cfg.total_blocks(); ++i) {
            m.blocks.push_back(EchoBlock::init(cfg, kernels[i], rng));
        }
        m.final_norm = NormParams::init(d);
        m.head_w = Tensor::randn({d, cfg.vocab_size}, rng,
                                 1.0 / std::sqrt(static_cast<double>(d)), true);
        m.head_b = Tensor::zeros({cfg.vocab_size}, true);
        return m;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("frame_proj", frame_proj);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "blocks." + std::to_string(i) + ".";
            const EchoBlock& b = blocks[i];
            const char* msa_names[] = {"msa.wq", "msa.bq", "msa.wk", "msa.bk",
                                       "msa.wv", "msa.bv", "msa.wo", "msa.bo"};
            auto msa_tensors = b.msa_params.parameters();
            for (int j = 0; j < 8; ++j) out.emplace_back(p + msa_names[j], msa_tensors[j]);
            const char* echo_names[] = {"echo.wq", "echo.bq", "echo.wk", "echo.bk",
                                        "echo.wv", "echo.bv", "echo.wo", "echo.bo",
                                        "echo.conv_q.depthwise", "echo.conv_q.pointwise",
                                        "echo.conv_k.depthwise", "echo.conv_k.pointwise",
                                        "echo.conv_v.depthwise", "echo.conv_v.pointwise"};
            auto echo_tensors = b.echo_params.parameters();
            for (int j = 0; j < 14; ++j) out.emplace_back(p + echo_names[j], echo_tensors[j]);
            out.emplace_back(p + "gate.w1", b.gate_params.w1);
            out.emplace_back(p + "gate.b1", b.gate_params.b1);
            out.emplace_back(p + "gate.w2", b.gate_params.w2);
            out.emplace_back(p + "gate.b2", b.gate_params.b2);
            out.emplace_back(p + "ffn.w1", b.ffn.w1);
            out.emplace_back(p + "ffn.b1", b.ffn.b1);
            out.emplace_back(p + "ffn.w2", b.ffn.w2);
            out.emplace_back(p + "ffn.b2", b.ffn.b2);
            out.emplace_back(p + "norm_attn.gain", b.norm_attn.gain);
            out.emplace_back(p + "norm_attn.bias", b.norm_attn.bias);
            out.emplace_back(p + "norm_ffn.gain", b.norm_ffn.gain);
            out.emplace_back(p + "norm_ffn.bias", b.norm_ffn.bias);
        }
        out.emplace_back("final_norm.gain", final_norm.gain);
        out.emplace_back("final_norm.bias", final_norm.bias);
        out.emplace_back("head.w", head_w);
        out.emplace_back("head.b", head_b);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& t : parameters()) n += t.numel();
        return n;
    }
};

/// Normalize the waveform to zero mean / unit variance (variance floor for
/// silent input), cut non-overlapping 20 ms frames, project linearly to d.
inline Tensor feature_encode(std::span<const double> waveform, const Model& m) {
    const std::int64_t stride = m.config.frame_stride;
    const std::int64_t T = static_cast<std::int64_t>(waveform.size()) / stride;
    if (waveform.empty() || T < 1) {
        throw contract_error("feature_encode: waveform shorter than one frame (" +
                             std::to_string(waveform.size()) + " samples, stride " +
                             std::to_string(stride) + ")");
    }
    for (double v : waveform)
        if (!std::isfinite(v)) throw numeric_error("feature_encode: non-finite sample");

    double mean = 0.0;
    for (double v : waveform) mean += v;
    mean /= static_cast<double>(waveform.size());
    double var = 0.0;
    for (double v : waveform) var += (v - mean) * (v - mean);
    var /= static_cast<double>(waveform.size());

    constexpr double kVarFloor = 1e-10;
    std::vector<double> frames(static_cast<std::size_t>(T * stride), 0.0);
    if (var >= kVarFloor) {
        const double inv = 1.0 / std::sqrt(var);
        for (std::int64_t i = 0; i < T * stride; ++i) frames[i] = (waveform[i] - mean) * inv;
    }
    return matmul(Tensor::from_data({T, stride}, std::move(frames)), m.frame_proj);
}

/// Pre-norm block: gated fusion of the two attention branches with residual,
/// then a feed-forward residual.
inline Tensor block_forward(const Tensor& x, const EchoBlock& block, const AttentionConfig& cfg,
                            const AttentionMask& mask, AttentionCost* cost = nullptr) {
    Tensor x1 = layer_norm(x, block.norm_attn.gain, block.norm_attn.bias);
    Tensor o1 = msa(x1, mask, block.msa_params, cfg.num_heads, cost).output;
    Tensor o2 = echo_msa(x1, block.echo_params, cfg, cost);
    Tensor g = gate_coefficients(x1, block.gate_params);
    Tensor attended = add(x, fuse(o1, o2, g));
    Tensor f1 = layer_norm(attended, block.norm_ffn.gain, block.norm_ffn.bias);
    Tensor f2 = add_row_bias(matmul(relu(add_row_bias(matmul(f1, block.ffn.w1), block.ffn.b1)),
                                    block.ffn.w2),
                             block.ffn.b2);
    return add(attended, f2);
}

/// Encoder forward over already-encoded features [T,d] -> log-probs [T,V].
inline Tensor model_forward_features(const Model& m, const Tensor& features,
                                     const AttentionMask& mask, AttentionCost* cost = nullptr) {
    const auto windows = m.config.block_windows();
    const auto kernels = m.config.block_kernels();
    Tensor x = features;
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        AttentionConfig cfg{.model_dim = m.config.model_dim,
                            .num_heads = m.config.num_heads,
                            .window = windows[i],
                            .conv_kernel = kernels[i]};
        x = block_forward(x, m.blocks[i], cfg, mask, cost);
    }
    x = layer_norm(x, m.final_norm.gain, m.final_norm.bias);
    return log_softmax_rows(add_row_bias(matmul(x, m.head_w), m.head_b));
}

inline Tensor model_forward(const Model& m, std::span<const double> waveform,
                            AttentionCost* cost = nullptr) {
    Tensor features = feature_encode(waveform, m);
    return model_forward_features(m, features, AttentionMask::all(features.dim(0)), cost);
}

}  // namespace echo
