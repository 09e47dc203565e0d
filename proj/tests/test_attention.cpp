#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "echo/attention.hpp"
#include "echo/gradcheck.hpp"
#include "oracles.hpp"

using namespace echo;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

oracle::AttentionWeights as_oracle(const AttentionParams& p) {
    return {p.wq.values(), p.bq.values(), p.wk.values(), p.bk.values(),
            p.wv.values(), p.bv.values(), p.wo.values(), p.bo.values()};
}

EchoParams with_identity_conv(const AttentionParams& proj, std::int64_t d) {
    EchoParams e;
    e.proj = proj;
    e.conv_q = SeparableConvParams::identity(d);
    e.conv_k = SeparableConvParams::identity(d);
    e.conv_v = SeparableConvParams::identity(d);
    return e;
}

}  // namespace

TEST_CASE("effective window arithmetic") {
    CHECK(effective_window(1, 100, 4) == std::pair<std::int64_t, std::int64_t>{1, 3});
    CHECK(effective_window(50, 100, 4) == std::pair<std::int64_t, std::int64_t>{48, 52});
    CHECK(effective_window(100, 100, 256) == std::pair<std::int64_t, std::int64_t>{1, 100});
    CHECK_THROWS_AS(effective_window(0, 10, 4), contract_error);
    CHECK_THROWS_AS(effective_window(11, 10, 4), contract_error);
    // lo <= tau <= hi holds across the grid
    for (std::int64_t T : {1, 5, 17})
        for (std::int64_t w : {1, 2, 3, 4, 16})
            for (std::int64_t tau = 1; tau <= T; ++tau) {
                auto [lo, hi] = effective_window(tau, T, w);
                CHECK(lo >= 1);
                CHECK(hi <= T);
                CHECK(lo <= tau);
                CHECK(tau <= hi);
            }
}

TEST_CASE("msa single token puts full weight on itself") {
    Rng rng(1);
    const std::int64_t d = 6;
    auto p = AttentionParams::init(d, rng);
    Tensor x = Tensor::randn({1, d}, rng);
    auto out = msa(x, AttentionMask::all(1), p, 2);
    CHECK(out.weights.values() == std::vector<double>{1.0, 1.0});

    Tensor expected = add_row_bias(matmul(add_row_bias(matmul(x, p.wv), p.bv), p.wo), p.bo);
    CHECK(max_abs_diff(out.output.values(), expected.values()) <= 1e-12);
}

TEST_CASE("msa over identical tokens is uniform") {
    Rng rng(2);
    const std::int64_t T = 7, d = 8;
    auto p = AttentionParams::init(d, rng);
    std::vector<double> row(d);
    for (auto& v : row) v = rand_uniform(rng, -1, 1);
    std::vector<double> data;
    for (std::int64_t t = 0; t < T; ++t) data.insert(data.end(), row.begin(), row.end());
    auto out = msa(Tensor::from_data({T, d}, data), AttentionMask::all(T), p, 2);
    for (double w : out.weights.values()) CHECK(w == Catch::Approx(1.0 / T).margin(1e-12));
}

TEST_CASE("msa matches per-head loop oracle") {
    Rng rng(3);
    const std::int64_t T = 5, d = 8, heads = 2;
    auto p = AttentionParams::init(d, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    auto out = msa(x, AttentionMask::all(T), p, heads);
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(T * T), 1);
    auto expected = oracle::msa(x.values(), T, d, heads, as_oracle(p), keep);
    CHECK(max_abs_diff(out.output.values(), expected) <= 1e-10);
}

TEST_CASE("masked keys get zero weight; empty rows are rejected") {
    Rng rng(4);
    const std::int64_t T = 4, d = 4;
    auto p = AttentionParams::init(d, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    auto mask = AttentionMask::keys({1, 0, 1, 1});
    auto out = msa(x, mask, p, 2);
    for (std::int64_t h = 0; h < 2; ++h)
        for (std::int64_t r = 0; r < T; ++r) {
            CHECK(out.weights.values()[(h * T + r) * T + 1] == 0.0);
            double s = 0.0;
            for (std::int64_t c = 0; c < T; ++c) s += out.weights.values()[(h * T + r) * T + c];
            CHECK(s == Catch::Approx(1.0).margin(1e-9));
        }

    std::vector<std::uint8_t> dead(static_cast<std::size_t>(T * T), 1);
    for (std::int64_t c = 0; c < T; ++c) dead[2 * T + c] = 0;  // row 2 attends nothing
    CHECK_THROWS_AS(msa(x, AttentionMask::full(T, dead), p, 2), contract_error);
}

TEST_CASE("echo degenerates to full attention when window covers the sequence") {
    Rng rng(5);
    for (std::int64_t T : {1, 5, 17}) {
        const std::int64_t d = 8;
        auto p = AttentionParams::init(d, rng);
        auto e = with_identity_conv(p, d);
        Tensor x = Tensor::randn({T, d}, rng);
        AttentionConfig cfg{.model_dim = d, .num_heads = 2, .window = 2 * T, .conv_kernel = 1};
        Tensor echoed = echo_msa(x, e, cfg);
        auto full = msa(x, AttentionMask::all(T), p, 2);
        CHECK(max_abs_diff(echoed.values(), full.output.values()) <= 1e-10);
    }
}

TEST_CASE("window of one attends only to itself") {
    Rng rng(6);
    const std::int64_t T = 5, d = 4;
    auto e = EchoParams::init(d, 3, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    AttentionConfig cfg{.model_dim = d, .num_heads = 2, .window = 1, .conv_kernel = 3};
    auto out = echo_msa_with_weights(x, e, cfg);
    CHECK(out.weights.shape() == Shape{2, T, 1});
    for (double w : out.weights.values()) CHECK(w == 1.0);
}

TEST_CASE("echo matches explicit-slice oracle at T=6 W=2") {
    Rng rng(7);
    const std::int64_t T = 6, d = 8, heads = 2, dh = d / heads;
    auto e = EchoParams::init(d, 4, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    AttentionConfig cfg{.model_dim = d, .num_heads = heads, .window = 2, .conv_kernel = 4};
    Tensor out = echo_msa(x, e, cfg);

    // oracle route: project, conv, then slice [tau-1, tau+1] per position
    auto project = [&](const Tensor& w, const Tensor& b) {
        return add_row_bias(matmul(x, w), b).values();
    };
    auto conv = [&](std::vector<double> v, const SeparableConvParams& c) {
        return oracle::separable_conv1d(v, c.depthwise.values(), c.pointwise.values(), T, d, 4);
    };
    auto q = conv(project(e.proj.wq, e.proj.bq), e.conv_q);
    auto k = conv(project(e.proj.wk, e.proj.bk), e.conv_k);
    auto v = conv(project(e.proj.wv, e.proj.bv), e.conv_v);
    std::vector<double> merged(static_cast<std::size_t>(T * d), 0.0);
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::int64_t h = 0; h < heads; ++h) {
        std::vector<double> qh(T * dh), kh(T * dh), vh(T * dh);
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t c = 0; c < dh; ++c) {
                qh[t * dh + c] = q[t * d + h * dh + c];
                kh[t * dh + c] = k[t * d + h * dh + c];
                vh[t * dh + c] = v[t * d + h * dh + c];
            }
        auto core = oracle::windowed_core(qh, kh, vh, T, dh, 2, sc);
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t c = 0; c < dh; ++c) merged[t * d + h * dh + c] = core[t * dh + c];
    }
    auto expected = oracle::matmul(merged, e.proj.wo.values(), T, d, d);
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t c = 0; c < d; ++c) expected[t * d + c] += e.proj.bo.values()[c];
    CHECK(max_abs_diff(out.values(), expected) <= 1e-10);
}

TEST_CASE("gathered window path agrees with masked reference path") {
    Rng rng(8);
    const std::int64_t T = 9, d = 8;
    auto e = EchoParams::init(d, 4, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    for (std::int64_t w : {1, 2, 4, 7}) {
        AttentionConfig cfg{.model_dim = d, .num_heads = 2, .window = w, .conv_kernel = 4};
        CHECK(max_abs_diff(echo_msa(x, e, cfg).values(),
                           echo_msa_masked_reference(x, e, cfg).values()) <= 1e-10);
    }
}

TEST_CASE("windowed weight rows are normalized") {
    Rng rng(9);
    const std::int64_t T = 11, d = 8;
    auto e = EchoParams::init(d, 4, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    AttentionConfig cfg{.model_dim = d, .num_heads = 4, .window = 4, .conv_kernel = 4};
    auto out = echo_msa_with_weights(x, e, cfg);
    const std::int64_t weff = out.weights.dim(2);
    for (std::int64_t h = 0; h < 4; ++h)
        for (std::int64_t t = 0; t < T; ++t) {
            double s = 0.0;
            for (std::int64_t j = 0; j < weff; ++j)
                s += out.weights.values()[(h * T + t) * weff + j];
            CHECK(s == Catch::Approx(1.0).margin(1e-9));
        }
}

TEST_CASE("perturbations stay inside the window plus conv halo") {
    Rng rng(10);
    const std::int64_t T = 12, d = 6, window = 4;
    for (std::int64_t kernel : {1, 4}) {
        auto e = EchoParams::init(d, kernel, rng);
        AttentionConfig cfg{.model_dim = d,
                            .num_heads = 2,
                            .window = window,
                            .conv_kernel = kernel};
        Tensor x = Tensor::randn({T, d}, rng);
        auto base = echo_msa(x, e, cfg).values();
        const std::int64_t reach = window / 2 + (kernel - 1);
        for (std::int64_t j = 0; j < T; ++j) {
            Tensor xp = Tensor::from_data({T, d}, x.values());
            xp.values()[j * d] += 0.37;
            auto bumped = echo_msa(xp, e, cfg).values();
            for (std::int64_t t = 0; t < T; ++t) {
                double diff = 0.0;
                for (std::int64_t c = 0; c < d; ++c)
                    diff = std::max(diff, std::abs(bumped[t * d + c] - base[t * d + c]));
                if (std::abs(j - t) > reach) {
                    INFO("kernel " << kernel << " perturb " << j << " row " << t);
                    CHECK(diff == 0.0);
                }
            }
        }
    }
}

TEST_CASE("full msa is permutation-equivariant, echo is not") {
    Rng rng(11);
    const std::int64_t T = 6, d = 8;
    auto p = AttentionParams::init(d, rng);
    auto e = EchoParams::init(d, 4, rng);
    Tensor x = Tensor::randn({T, d}, rng);
    std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};

    auto permute_rows = [&](const std::vector<double>& v) {
        std::vector<double> out(v.size());
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t c = 0; c < d; ++c) out[t * d + c] = v[perm[t] * d + c];
        return out;
    };

    Tensor xp = Tensor::from_data({T, d}, permute_rows(x.values()));
    auto full_base = msa(x, AttentionMask::all(T), p, 2).output.values();
    auto full_perm = msa(xp, AttentionMask::all(T), p, 2).output.values();
    CHECK(max_abs_diff(full_perm, permute_rows(full_base)) <= 1e-10);

    AttentionConfig cfg{.model_dim = d, .num_heads = 2, .window = 2, .conv_kernel = 4};
    auto echo_base = echo_msa(x, e, cfg).values();
    auto echo_perm = echo_msa(xp, e, cfg).values();
    CHECK(max_abs_diff(echo_perm, permute_rows(echo_base)) > 1e-3);
}

TEST_CASE("counted MACs match the closed-form cost model") {
    Rng rng(12);
    const std::int64_t d = 8, heads = 2, dh = d / heads;
    auto p = AttentionParams::init(d, rng);
    auto e = EchoParams::init(d, 4, rng);

    for (std::int64_t T : {6, 13}) {
        Tensor x = Tensor::randn({T, d}, rng);
        AttentionCost full_cost;
        msa(x, AttentionMask::all(T), p, heads, &full_cost);
        CHECK(full_cost.core == static_cast<std::uint64_t>(2 * T * T * dh * heads));
        CHECK(full_cost.projection == static_cast<std::uint64_t>(4 * T * d * d));
        CHECK(full_cost.conv == 0);

        const std::int64_t w = 4, k = 4;
        AttentionConfig cfg{.model_dim = d, .num_heads = heads, .window = w, .conv_kernel = k};
        AttentionCost echo_cost;
        echo_msa(x, e, cfg, &echo_cost);
        std::uint64_t core = 0;
        for (std::int64_t tau = 1; tau <= T; ++tau) {
            auto [lo, hi] = effective_window(tau, T, w);
            core += static_cast<std::uint64_t>(2 * (hi - lo + 1) * dh * heads);
        }
        CHECK(echo_cost.core == core);
        CHECK(echo_cost.conv == static_cast<std::uint64_t>(3 * (T * k * d + T * d * d)));
        CHECK(echo_cost.projection == static_cast<std::uint64_t>(4 * T * d * d));
    }
}

TEST_CASE("attention gradients pass finite differences") {
    Rng rng(13);
    const std::int64_t T = 5, d = 6, heads = 2;
    auto p = AttentionParams::init(d, rng);
    auto e = EchoParams::init(d, 3, rng);
    Tensor x = Tensor::uniform({T, d}, rng, -1.0, 1.0, true);
    Tensor c = Tensor::uniform({T, d}, rng, -1.0, 1.0);

    auto msa_params = p.parameters();
    msa_params.push_back(x);
    auto res = check_gradient(
        "msa", [&] { return scalarize(msa(x, AttentionMask::all(T), p, heads).output, c); },
        msa_params);
    INFO("msa max rel err " << res.max_rel_err);
    CHECK(res.pass);

    AttentionConfig cfg{.model_dim = d, .num_heads = heads, .window = 2, .conv_kernel = 3};
    auto echo_params = e.parameters();
    echo_params.push_back(x);
    auto res2 = check_gradient("echo_msa", [&] { return scalarize(echo_msa(x, e, cfg), c); },
                               echo_params);
    INFO("echo max rel err " << res2.max_rel_err);
    CHECK(res2.pass);
}
