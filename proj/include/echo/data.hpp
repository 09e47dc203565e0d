#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "echo/common.hpp"
#include "echo/config.hpp"
#include "echo/loss.hpp"

namespace echo {

// ---------------------------------------------------------------------------
// WAV I/O: mono 16-bit PCM RIFF, little-endian
// ---------------------------------------------------------------------------

struct WavData {
    std::int64_t sample_rate = 16000;
    std::vector<double> samples;  // in [-1, 1]
};

namespace detail {

template <typename T>
void wav_write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T wav_read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw contract_error("wav: truncated file");
    return v;
}

}  // namespace detail

inline void write_wav16_mono(const std::filesystem::path& path,
                             const std::vector<double>& samples,
                             std::int64_t sample_rate = 16000) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw contract_error("wav: cannot write " + path.string());
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    detail::wav_write_pod<std::uint32_t>(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    detail::wav_write_pod<std::uint32_t>(out, 16);
    detail::wav_write_pod<std::uint16_t>(out, 1);  // PCM
    detail::wav_write_pod<std::uint16_t>(out, 1);  // mono
    detail::wav_write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
    detail::wav_write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate * 2));
    detail::wav_write_pod<std::uint16_t>(out, 2);   // block align
    detail::wav_write_pod<std::uint16_t>(out, 16);  // bits
    out.write("data", 4);
    detail::wav_write_pod<std::uint32_t>(out, data_bytes);
    for (double v : samples) {
        const long q = std::clamp<long>(std::lround(v * 32768.0), -32768, 32767);
        detail::wav_write_pod<std::int16_t>(out, static_cast<std::int16_t>(q));
    }
}

inline WavData read_wav16_mono(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw contract_error("wav: cannot open " + path.string());
    char tag[4];
    in.read(tag, 4);
    if (!in || std::string(tag, 4) != "RIFF") throw contract_error("wav: not RIFF: " + path.string());
    detail::wav_read_pod<std::uint32_t>(in);
    in.read(tag, 4);
    if (!in || std::string(tag, 4) != "WAVE") throw contract_error("wav: not WAVE: " + path.string());

    WavData wav;
    bool got_fmt = false;
    while (in.read(tag, 4)) {
        const auto size = detail::wav_read_pod<std::uint32_t>(in);
        const std::string chunk(tag, 4);
        if (chunk == "fmt ") {
            const auto format = detail::wav_read_pod<std::uint16_t>(in);
            const auto channels = detail::wav_read_pod<std::uint16_t>(in);
            const auto rate = detail::wav_read_pod<std::uint32_t>(in);
            detail::wav_read_pod<std::uint32_t>(in);
            detail::wav_read_pod<std::uint16_t>(in);
            const auto bits = detail::wav_read_pod<std::uint16_t>(in);
            if (format != 1 || channels != 1 || bits != 16) {
                throw contract_error("wav: need mono 16-bit PCM: " + path.string());
            }
            wav.sample_rate = rate;
            in.ignore(size > 16 ? size - 16 : 0);
            got_fmt = true;
        } else if (chunk == "data") {
            if (!got_fmt) throw contract_error("wav: data before fmt: " + path.string());
            const std::size_t n = size / 2;
            wav.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                wav.samples[i] = detail::wav_read_pod<std::int16_t>(in) / 32768.0;
            }
            return wav;
        } else {
            in.ignore(size + (size % 2));
        }
    }
    throw contract_error("wav: no data chunk: " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

/// Each label symbol renders as a pure tone whose frequency is a multiple of
/// the frame rate, so every frame of a segment carries the same waveform and
/// the frame projection can separate symbols linearly. Gaps of near-silence
/// separate segments.
struct DatasetSpec {
    std::string mode = "synthetic";  // synthetic | file
    std::int64_t num_samples = 20;
    std::int64_t vocab_size = 4;  // includes blank
    std::int64_t min_label_len = 2;
    std::int64_t max_label_len = 4;
    std::int64_t min_segment_frames = 3;
    std::int64_t max_segment_frames = 5;
    std::int64_t gap_frames = 2;
    double noise_level = 0.02;
    std::int64_t sample_rate = 16000;
    std::int64_t frame_stride = 320;
    std::string dir;  // file mode: directory with labels.tsv + WAVs

    void validate() const {
        if (mode != "synthetic" && mode != "file") {
            throw contract_error("dataset: mode must be synthetic or file");
        }
        if (num_samples < 1) throw contract_error("dataset: num_samples must be >= 1");
        if (vocab_size < 2) throw contract_error("dataset: vocab must include blank + 1 symbol");
        if (min_label_len < 1 || max_label_len < min_label_len) {
            throw contract_error("dataset: bad label length range");
        }
        if (min_segment_frames < 1 || max_segment_frames < min_segment_frames) {
            throw contract_error("dataset: bad segment frame range");
        }
        if (gap_frames < 1) throw contract_error("dataset: gap_frames must be >= 1");
        if (noise_level < 0.0) throw contract_error("dataset: negative noise level");
        if (sample_rate < 1 || frame_stride < 1 || frame_stride > sample_rate) {
            throw contract_error("dataset: bad rate/stride");
        }
        if (mode == "file" && dir.empty()) throw contract_error("dataset: file mode needs dir");
    }

    static DatasetSpec from_config(const Config& c) {
        DatasetSpec s;
        s.mode = c.get_str("data.mode", s.mode);
        s.num_samples = c.get_i64("data.num_samples", s.num_samples);
        s.vocab_size = c.get_i64("data.vocab", s.vocab_size);
        s.min_label_len = c.get_i64("data.min_label_len", s.min_label_len);
        s.max_label_len = c.get_i64("data.max_label_len", s.max_label_len);
        s.min_segment_frames = c.get_i64("data.min_segment_frames", s.min_segment_frames);
        s.max_segment_frames = c.get_i64("data.max_segment_frames", s.max_segment_frames);
        s.gap_frames = c.get_i64("data.gap_frames", s.gap_frames);
        s.noise_level = c.get_f64("data.noise_level", s.noise_level);
        s.sample_rate = c.get_i64("data.sample_rate", s.sample_rate);
        s.frame_stride = c.get_i64("data.frame_stride", s.frame_stride);
        s.dir = c.get_str("data.dir", s.dir);
        return s;
    }
};

struct Utterance {
    std::vector<double> waveform;
    LabelSequence label;

    std::int64_t frames(std::int64_t stride) const {
        return static_cast<std::int64_t>(waveform.size()) / stride;
    }
};

struct Dataset {
    DatasetSpec spec;
    std::vector<Utterance> utterances;
};

inline double symbol_tone_hz(std::int64_t symbol, const DatasetSpec& spec) {
    // multiples of the frame rate keep each frame of a segment identical
    const double frame_rate =
        static_cast<double>(spec.sample_rate) / static_cast<double>(spec.frame_stride);
    return frame_rate * 4.0 * static_cast<double>(symbol);
}

/// Render one utterance for a given label: gap, then per symbol a tone
/// segment followed by a gap.
inline Utterance render_utterance(const LabelSequence& label, const DatasetSpec& spec,
                                  Rng& rng) {
    label.validate();
    Utterance u;
    u.label = label;

    auto push_frames = [&](std::int64_t frames, double hz) {
        const std::int64_t n = frames * spec.frame_stride;
        const std::size_t base = u.waveform.size();
        u.waveform.resize(base + n);
        for (std::int64_t s = 0; s < n; ++s) {
            double v = rand_uniform(rng, -spec.noise_level, spec.noise_level);
            if (hz > 0.0) {
                v += 0.5 * std::sin(2.0 * M_PI * hz * static_cast<double>(s) /
                                    static_cast<double>(spec.sample_rate));
            }
            u.waveform[base + s] = v;
        }
    };

    push_frames(spec.gap_frames, 0.0);
    for (std::int64_t sym : label.symbols) {
        push_frames(rand_int(rng, spec.min_segment_frames, spec.max_segment_frames),
                    symbol_tone_hz(sym, spec));
        push_frames(spec.gap_frames, 0.0);
    }
    return u;
}

inline Dataset synth_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (spec.mode != "synthetic") throw contract_error("synth_dataset: spec mode is not synthetic");
    const double max_hz = symbol_tone_hz(spec.vocab_size - 1, spec);
    if (2.0 * max_hz >= static_cast<double>(spec.sample_rate)) {
        throw contract_error("dataset: vocab too large for the sample rate (top tone " +
                             std::to_string(max_hz) + " Hz)");
    }
    Rng rng(seed);
    Dataset ds;
    ds.spec = spec;
    for (std::int64_t i = 0; i < spec.num_samples; ++i) {
        LabelSequence label;
        label.vocab_size = spec.vocab_size;
        const std::int64_t len = rand_int(rng, spec.min_label_len, spec.max_label_len);
        for (std::int64_t j = 0; j < len; ++j) {
            label.symbols.push_back(rand_int(rng, 1, spec.vocab_size - 1));
        }
        Utterance u = render_utterance(label, spec, rng);
        if (!ctc_feasible(u.frames(spec.frame_stride), u.label)) {
            throw contract_error("dataset: generated infeasible utterance");  // unreachable guard
        }
        ds.utterances.push_back(std::move(u));
    }
    return ds;
}

/// Write WAVs plus labels.tsv (file \t space-separated symbols).
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    std::ofstream tsv(dir / "labels.tsv");
    if (!tsv) throw contract_error("dataset: cannot write labels.tsv in " + dir.string());
    for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
        std::ostringstream name;
        name << "utt_" << i << ".wav";
        write_wav16_mono(dir / name.str(), ds.utterances[i].waveform, ds.spec.sample_rate);
        tsv << name.str();
        tsv << '\t';
        const auto& syms = ds.utterances[i].label.symbols;
        for (std::size_t j = 0; j < syms.size(); ++j) tsv << (j ? " " : "") << syms[j];
        tsv << '\n';
    }
}

/// Load a labels.tsv + WAV directory written by write_dataset (or compatible).
inline Dataset load_dataset_dir(const DatasetSpec& spec) {
    spec.validate();
    const std::filesystem::path dir = spec.dir;
    std::ifstream tsv(dir / "labels.tsv");
    if (!tsv) throw contract_error("dataset: cannot open " + (dir / "labels.tsv").string());
    Dataset ds;
    ds.spec = spec;
    std::string line;
    while (std::getline(tsv, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw contract_error("dataset: labels.tsv line lacks a tab");
        Utterance u;
        u.label.vocab_size = spec.vocab_size;
        std::istringstream syms(line.substr(tab + 1));
        std::int64_t s;
        while (syms >> s) u.label.symbols.push_back(s);
        u.label.validate();
        WavData wav = read_wav16_mono(dir / line.substr(0, tab));
        if (wav.sample_rate != spec.sample_rate) {
            throw contract_error("dataset: " + line.substr(0, tab) + " has sample rate " +
                                 std::to_string(wav.sample_rate) + ", expected " +
                                 std::to_string(spec.sample_rate));
        }
        u.waveform = std::move(wav.samples);
        ds.utterances.push_back(std::move(u));
    }
    if (ds.utterances.empty()) throw contract_error("dataset: labels.tsv is empty");
    return ds;
}

inline Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    return spec.mode == "synthetic" ? synth_dataset(spec, seed) : load_dataset_dir(spec);
}

/// Levenshtein distance between symbol sequences, for toy eval reporting.
inline std::int64_t edit_distance(const std::vector<std::int64_t>& a,
                                  const std::vector<std::int64_t>& b) {
    std::vector<std::int64_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<std::int64_t>(i);
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::int64_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace echo
