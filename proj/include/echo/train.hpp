#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "echo/common.hpp"
#include "echo/config.hpp"
#include "echo/data.hpp"
#include "echo/loss.hpp"
#include "echo/model.hpp"
#include "echo/schedule.hpp"

namespace echo {

struct TrainConfig {
    std::int64_t steps = 300;
    std::int64_t batch_size = 0;  // 0 = full batch
    std::int64_t log_every = 50;
    double momentum = 0.0;
    bool shuffle = true;               // deterministic per-epoch reshuffle
    std::uint64_t shuffle_seed = 1;
    ScheduleConfig schedule = ScheduleConfig::for_total_steps(300);
    LossConfig loss;
    std::string loss_mode = "ectc";        // ectc | wctc
    std::vector<double> class_weights;     // optional, vocab-1 entries

    void validate(std::int64_t vocab_size) const {
        if (steps < 1) throw contract_error("train: steps must be >= 1");
        if (batch_size < 0) throw contract_error("train: negative batch size");
        if (momentum < 0.0 || momentum >= 1.0) throw contract_error("train: momentum in [0,1)");
        if (loss_mode != "ectc" && loss_mode != "wctc") {
            throw contract_error("train: loss mode must be ectc or wctc");
        }
        if (!class_weights.empty() &&
            static_cast<std::int64_t>(class_weights.size()) != vocab_size - 1) {
            throw contract_error("train: class_weights needs vocab-1 entries");
        }
        for (double w : class_weights)
            if (w < 0.0) throw contract_error("train: negative class weight");
        schedule.validate();
        loss.validate();
    }

    static TrainConfig from_config(const Config& c) {
        TrainConfig t;
        t.steps = c.get_i64("train.steps", t.steps);
        t.batch_size = c.get_i64("train.batch_size", t.batch_size);
        t.log_every = c.get_i64("train.log_every", t.log_every);
        t.momentum = c.get_f64("train.momentum", t.momentum);

        auto rates = c.get_f64_list("schedule.rates", {6e-5, 6e-6, 6e-7});
        if (rates.size() != 3) throw contract_error("schedule.rates needs 3 entries");
        const double decay = c.get_f64("schedule.weight_decay", 0.0005);
        t.schedule =
            ScheduleConfig::for_total_steps(t.steps, {rates[0], rates[1], rates[2]}, decay);
        if (c.has("schedule.boundaries")) {
            auto b = c.get_i64_list("schedule.boundaries", {});
            if (b.size() != 3) throw contract_error("schedule.boundaries needs 3 entries");
            t.schedule.stage_boundaries = {b[0], b[1], b[2]};
        }

        t.loss.lambda = c.get_f64("loss.lambda", t.loss.lambda);
        t.loss.alpha = c.get_f64("loss.alpha", t.loss.alpha);
        t.loss.gamma = c.get_f64("loss.gamma", t.loss.gamma);
        t.loss_mode = c.get_str("loss.mode", t.loss_mode);
        t.class_weights = c.get_f64_list("loss.class_weights", {});
        return t;
    }
};

struct EvalResult {
    double exact_match = 0.0;
    double mean_edit_distance = 0.0;
};

struct RunReport {
    std::int64_t steps = 0;
    std::vector<double> step_losses;
    std::vector<double> step_rates;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    EvalResult eval;
    double wall_seconds = 0.0;
    std::uint64_t macs = 0;
    LossConfig loss_used;

    /// Byte-stable trace: seed-determined runs serialize identically.
    std::string to_trace_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "step,loss,lr\n";
        for (std::size_t i = 0; i < step_losses.size(); ++i) {
            os << i << ',' << step_losses[i] << ',' << step_rates[i] << '\n';
        }
        return os.str();
    }

    /// Human-readable summary; contains wall clock, so not byte-stable.
    std::string to_report_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "run.steps = " << steps << "\n";
        os << "run.initial_loss = " << initial_loss << "\n";
        os << "run.final_loss = " << final_loss << "\n";
        os << "run.exact_match = " << eval.exact_match << "\n";
        os << "run.mean_edit_distance = " << eval.mean_edit_distance << "\n";
        os << "run.lambda = " << loss_used.lambda << "\n";
        os << "run.alpha = " << loss_used.alpha << "\n";
        os << "run.gamma = " << loss_used.gamma << "\n";
        os << "run.macs = " << macs << "\n";
        os << "run.wall_seconds = " << wall_seconds << "\n";
        return os.str();
    }
};

inline double sample_weight_for(const LabelSequence& y,
                                const std::vector<double>& class_weights) {
    if (class_weights.empty()) return 1.0;
    double acc = 0.0;
    for (auto s : y.symbols) acc += class_weights[static_cast<std::size_t>(s - 1)];
    return acc / static_cast<double>(y.symbols.size());
}

/// Greedy-decode exact match and mean edit distance over a dataset.
inline EvalResult evaluate(const Model& model, const Dataset& data) {
    EvalResult r;
    for (const auto& u : data.utterances) {
        const auto decoded = greedy_decode(model_forward(model, u.waveform));
        if (decoded == u.label.symbols) r.exact_match += 1.0;
        r.mean_edit_distance += static_cast<double>(edit_distance(decoded, u.label.symbols));
    }
    const double n = static_cast<double>(data.utterances.size());
    r.exact_match /= n;
    r.mean_edit_distance /= n;
    return r;
}

namespace detail {

inline std::string tensor_range_dump(const Model& model) {
    std::ostringstream os;
    os.precision(6);
    for (const auto& [name, t] : model.named_parameters()) {
        double lo = 1e300, hi = -1e300, glo = 0.0, ghi = 0.0;
        for (double v : t.values()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (t.has_grad()) {
            glo = 1e300;
            ghi = -1e300;
            for (double g : t.grad()) {
                glo = std::min(glo, g);
                ghi = std::max(ghi, g);
            }
        }
        os << "  " << name << " value [" << lo << ", " << hi << "] grad [" << glo << ", " << ghi
           << "]\n";
    }
    return os.str();
}

}  // namespace detail

/// Gradient descent with decoupled weight decay (multiplicative shrink) under
/// the cosine stage schedule; throws numeric_error with a parameter range
/// dump if the loss goes non-finite. Deterministic: batches rotate through
/// the dataset in order and gradients reduce in graph order.
inline RunReport train(Model& model, const Dataset& data, const TrainConfig& cfg) {
    model.config.validate();
    cfg.validate(model.config.vocab_size);
    if (data.utterances.empty()) throw contract_error("train: empty dataset");
    for (const auto& u : data.utterances) {
        if (u.label.vocab_size != model.config.vocab_size) {
            throw contract_error("train: dataset vocab differs from model vocab");
        }
    }

    const std::int64_t n = static_cast<std::int64_t>(data.utterances.size());
    const std::int64_t batch =
        cfg.batch_size == 0 ? n : std::min<std::int64_t>(cfg.batch_size, n);

    auto params = model.parameters();
    std::vector<std::vector<double>> velocity;
    if (cfg.momentum > 0.0) {
        for (const auto& p : params) velocity.emplace_back(p.values().size(), 0.0);
    }

    RunReport report;
    report.steps = cfg.steps;
    report.loss_used = cfg.loss;
    const std::uint64_t mac_start = mac::now();
    const auto t0 = std::chrono::steady_clock::now();

    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        const double lr = lr_at(step, cfg.schedule);

        std::vector<Tensor> log_probs;
        std::vector<LabelSequence> labels;
        LossConfig step_loss = cfg.loss;
        step_loss.sample_weights.clear();
        Tensor loss;
        try {
            for (std::int64_t i = 0; i < batch; ++i) {
                const auto& u =
                    data.utterances[static_cast<std::size_t>((step * batch + i) % n)];
                log_probs.push_back(model_forward(model, u.waveform));
                labels.push_back(u.label);
                step_loss.sample_weights.push_back(
                    sample_weight_for(u.label, cfg.class_weights));
            }
            if (cfg.loss_mode == "wctc") {
                std::vector<Tensor> per_sample;
                for (std::size_t i = 0; i < log_probs.size(); ++i) {
                    per_sample.push_back(ctc_loss(log_probs[i], labels[i]));
                }
                loss = weighted_ctc(per_sample, step_loss.sample_weights);
            } else {
                loss = e_ctc_loss(log_probs, labels, step_loss);
            }
        } catch (const numeric_error& e) {
            // parameters went non-finite mid-forward; same abort contract
            std::cerr << "train: numeric failure at step " << step << ": " << e.what() << "\n"
                      << detail::tensor_range_dump(model);
            throw numeric_error("train: numeric failure at step " + std::to_string(step) + ": " +
                                e.what());
        }

        const double loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            std::cerr << "train: non-finite loss " << loss_value << " at step " << step << "\n"
                      << detail::tensor_range_dump(model);
            throw numeric_error("train: non-finite loss at step " + std::to_string(step));
        }

        loss.backward();
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Tensor& p = params[pi];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& v = p.values();
            const double shrink = 1.0 - lr * cfg.schedule.weight_decay;
            if (cfg.momentum > 0.0) {
                auto& vel = velocity[pi];
                for (std::size_t i = 0; i < v.size(); ++i) {
                    vel[i] = cfg.momentum * vel[i] + g[i];
                    v[i] = v[i] * shrink - lr * vel[i];
                }
            } else {
                for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] * shrink - lr * g[i];
            }
            p.zero_grad();
        }

        report.step_losses.push_back(loss_value);
        report.step_rates.push_back(lr);
        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps - 1)) {
            std::cerr << "step " << step << " loss " << loss_value << " lr " << lr << "\n";
        }
    }

    report.initial_loss = report.step_losses.front();
    report.final_loss = report.step_losses.back();
    report.macs = mac::now() - mac_start;
    report.eval = evaluate(model, data);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace echo
