#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "echo/attention.hpp"
#include "echo/common.hpp"
#include "echo/config.hpp"

namespace echo {

struct BenchSpec {
    std::int64_t model_dim = 64;
    std::int64_t num_heads = 4;
    std::vector<std::int64_t> seq_lens{64, 128, 256};
    std::vector<std::int64_t> windows{64};
    std::vector<std::int64_t> kernels{4};
    std::int64_t repeats = 3;

    void validate() const {
        if (model_dim < 1 || num_heads < 1 || model_dim % num_heads != 0) {
            throw contract_error("bench: dim not divisible by heads");
        }
        if (seq_lens.empty() || windows.empty() || kernels.empty() || repeats < 1) {
            throw contract_error("bench: empty grid");
        }
    }

    static BenchSpec from_config(const Config& c) {
        BenchSpec s;
        s.model_dim = c.get_i64("bench.dim", s.model_dim);
        s.num_heads = c.get_i64("bench.heads", s.num_heads);
        s.seq_lens = c.get_i64_list("bench.T", s.seq_lens);
        s.windows = c.get_i64_list("bench.W", s.windows);
        s.kernels = c.get_i64_list("bench.k", s.kernels);
        s.repeats = c.get_i64("bench.repeats", s.repeats);
        return s;
    }
};

/// One grid point. MACs cover the attention mechanism itself: score and value
/// aggregation for both modes, plus the separable-conv preprocessing for the
/// echo mode. The Q/K/V/output projections are identical linear-in-T work in
/// both modes and are excluded so the quadratic-vs-linear core comparison is
/// not diluted. Full-attention rows carry W = 0, k = 0.
struct BenchRow {
    std::string mode;  // "full" | "echo"
    std::int64_t seq_len = 0;
    std::int64_t window = 0;
    std::int64_t kernel = 0;
    std::uint64_t macs = 0;
    double seconds = 0.0;
};

namespace detail {

inline void strip_grad(std::vector<Tensor> tensors) {
    for (auto& t : tensors) t.set_requires_grad(false);
}

template <typename Fn>
double median_seconds(Fn&& fn, std::int64_t repeats) {
    std::vector<double> times;
    for (std::int64_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        times.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

}  // namespace detail

inline std::vector<BenchRow> run_bench(const BenchSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::vector<BenchRow> rows;
    for (std::int64_t T : spec.seq_lens) {
        Tensor x = Tensor::randn({T, spec.model_dim}, rng);
        auto full_params = AttentionParams::init(spec.model_dim, rng);
        detail::strip_grad(full_params.parameters());
        const auto mask = AttentionMask::all(T);

        AttentionCost cost;
        msa(x, mask, full_params, spec.num_heads, &cost);
        BenchRow full{"full", T, 0, 0, cost.core, 0.0};
        full.seconds = detail::median_seconds(
            [&] { msa(x, mask, full_params, spec.num_heads); }, spec.repeats);
        rows.push_back(full);

        for (std::int64_t w : spec.windows) {
            for (std::int64_t k : spec.kernels) {
                auto echo_params = EchoParams::init(spec.model_dim, k, rng);
                detail::strip_grad(echo_params.parameters());
                AttentionConfig cfg{.model_dim = spec.model_dim,
                                    .num_heads = spec.num_heads,
                                    .window = w,
                                    .conv_kernel = k};
                AttentionCost ecost;
                echo_msa(x, echo_params, cfg, &ecost);
                BenchRow row{"echo", T, w, k, ecost.conv + ecost.core, 0.0};
                row.seconds = detail::median_seconds([&] { echo_msa(x, echo_params, cfg); },
                                                     spec.repeats);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os.precision(9);
    os << "mode,T,W,k,macs,seconds\n";
    for (const auto& r : rows) {
        os << r.mode << ',' << r.seq_len << ',' << r.window << ',' << r.kernel << ',' << r.macs
           << ',' << r.seconds << '\n';
    }
    return os.str();
}

}  // namespace echo
