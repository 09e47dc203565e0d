#pragma once

#include <functional>
#include <string>
#include <vector>

#include "echo/attention.hpp"
#include "echo/gate.hpp"
#include "echo/gradcheck.hpp"
#include "echo/loss.hpp"
#include "echo/model.hpp"

namespace echo {

/// Finite-difference sweep over each module's differentiable surface at desk
/// sizes. Scopes: numerics, attention, gate, loss, model, all.
inline std::vector<GradCheckResult> run_gradcheck(const std::string& scope, std::uint64_t seed) {
    const bool all = scope == "all";
    if (!all && scope != "numerics" && scope != "attention" && scope != "gate" &&
        scope != "loss" && scope != "model") {
        throw contract_error("gradcheck: unknown scope '" + scope + "'");
    }
    Rng rng(seed);
    std::vector<GradCheckResult> results;
    auto record = [&](const char* name, const std::function<Tensor()>& fwd,
                      std::vector<Tensor> params) {
        results.push_back(check_gradient(name, fwd, std::move(params)));
    };

    if (all || scope == "numerics") {
        Tensor a = Tensor::uniform({3, 4}, rng, -2, 2, true);
        Tensor b = Tensor::uniform({4, 3}, rng, -2, 2, true);
        Tensor cm = Tensor::uniform({3, 3}, rng, -1, 1);
        record("matmul", [&] { return scalarize(matmul(a, b), cm); }, {a, b});

        Tensor x = Tensor::uniform({3, 5}, rng, -2, 2, true);
        Tensor cx = Tensor::uniform({3, 5}, rng, -1, 1);
        record("softmax", [&] { return scalarize(softmax(x, 1), cx); }, {x});
        record("sigmoid", [&] { return scalarize(sigmoid(x), cx); }, {x});

        Tensor xr = Tensor::from_data({5}, {-1.6, -0.7, 0.4, 1.2, 1.9}, true);
        Tensor cr = Tensor::uniform({5}, rng, -1, 1);
        record("relu", [&] { return scalarize(relu(xr), cr); }, {xr});

        Tensor xc = Tensor::uniform({6, 4}, rng, -2, 2, true);
        Tensor dw = Tensor::uniform({3, 4}, rng, -1, 1, true);
        Tensor pw = Tensor::uniform({4, 4}, rng, -1, 1, true);
        Tensor cc = Tensor::uniform({6, 4}, rng, -1, 1);
        record("depthwise_separable_conv1d",
               [&] { return scalarize(depthwise_separable_conv1d(xc, dw, pw), cc); },
               {xc, dw, pw});

        Tensor gain = Tensor::uniform({4}, rng, 0.5, 1.5, true);
        Tensor bias = Tensor::uniform({4}, rng, -0.5, 0.5, true);
        record("layer_norm", [&] { return scalarize(layer_norm(xc, gain, bias), cc); },
               {xc, gain, bias});
    }

    if (all || scope == "attention") {
        const std::int64_t T = 5, d = 6, heads = 2;
        auto p = AttentionParams::init(d, rng);
        Tensor x = Tensor::uniform({T, d}, rng, -1, 1, true);
        Tensor c = Tensor::uniform({T, d}, rng, -1, 1);
        auto params = p.parameters();
        params.push_back(x);
        record("msa",
               [&, p] { return scalarize(msa(x, AttentionMask::all(T), p, heads).output, c); },
               params);

        auto e = EchoParams::init(d, 3, rng);
        AttentionConfig cfg{.model_dim = d, .num_heads = heads, .window = 2, .conv_kernel = 3};
        auto eparams = e.parameters();
        eparams.push_back(x);
        record("echo_msa", [&, e, cfg] { return scalarize(echo_msa(x, e, cfg), c); }, eparams);
    }

    if (all || scope == "gate") {
        const std::int64_t T = 4, d = 5;
        GateParams p = GateParams::init(d, d, rng);
        // randomize w2/b2 so the check probes a generic gate, not the init point
        p.w2 = Tensor::uniform({d, d}, rng, -1, 1, true);
        p.b2 = Tensor::uniform({d}, rng, -1, 1, true);
        Tensor x = Tensor::uniform({T, d}, rng, -1.5, 1.5, true);
        Tensor o1 = Tensor::uniform({T, d}, rng, -1.5, 1.5, true);
        Tensor o2 = Tensor::uniform({T, d}, rng, -1.5, 1.5, true);
        Tensor c = Tensor::uniform({T, d}, rng, -1, 1);
        auto params = p.parameters();
        params.insert(params.end(), {x, o1, o2});
        record("gate_fuse",
               [&, p] { return scalarize(fuse(o1, o2, gate_coefficients(x, p)), c); }, params);
    }

    if (all || scope == "loss") {
        const std::int64_t T = 5, V = 3;
        Tensor lp = Tensor::from_data(
            {T, V}, log_softmax_rows(Tensor::uniform({T, V}, rng, -2, 2)).values(), true);
        LabelSequence y{{1, 2}, V};
        record("ctc_loss", [&] { return ctc_loss(lp, y); }, {lp});

        Tensor fx = Tensor::uniform({6}, rng, 0.05, 3.0, true);
        record("focal_term", [&] { return focal_term(fx, 0.25, 2.0); }, {fx});

        Tensor lp2 = Tensor::from_data(
            {4, V}, log_softmax_rows(Tensor::uniform({4, V}, rng, -2, 2)).values(), true);
        std::vector<Tensor> batch{lp, lp2};
        std::vector<LabelSequence> labels{y, LabelSequence{{2}, V}};
        LossConfig cfg;
        record("e_ctc_loss", [&] { return e_ctc_loss(batch, labels, cfg); }, {lp, lp2});
    }

    if (all || scope == "model") {
        ModelConfig cfg;
        cfg.stages = {StageConfig{1, 2, 2}, StageConfig{1, 4, 2}, StageConfig{1, 8, 2},
                      StageConfig{1, 16, 2}};
        cfg.model_dim = 6;
        cfg.num_heads = 2;
        cfg.vocab_size = 3;
        cfg.frame_stride = 8;
        Model m = Model::init(cfg, seed);
        const std::int64_t T = 5;
        Tensor x = Tensor::uniform({T, 6}, rng, -1, 1, true);
        Tensor c = Tensor::uniform({T, 6}, rng, -1, 1);
        AttentionConfig acfg{.model_dim = 6, .num_heads = 2, .window = 2, .conv_kernel = 2};
        auto params = m.blocks[0].parameters();
        params.push_back(x);
        record("block_forward",
               [&] {
                   return scalarize(block_forward(x, m.blocks[0], acfg, AttentionMask::all(T)),
                                    c);
               },
               params);
    }

    return results;
}

}  // namespace echo
