#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "echo/common.hpp"
#include "echo/model.hpp"

namespace echo {

// Checkpoint container, little-endian throughout:
//
//   bytes 0..4   magic "ECHO1"
//   u32          format version (1)
//   u32          config text length, then that many bytes of flat
//                `model.* = value` UTF-8 text
//   u32          parameter count
//   per parameter, in named_parameters() order:
//     u32        name length, then the name bytes
//     u32        rank, then rank i64 dims
//     numel f64  row-major values
//
// Config text keys are sorted, so identical models serialize byte-identically.

namespace detail {

inline constexpr char kCheckpointMagic[5] = {'E', 'C', 'H', 'O', '1'};

template <typename T>
void write_pod(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw contract_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw contract_error("checkpoint: cannot write " + path.string());
    out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod<std::uint32_t>(out, 1);

    const std::string cfg = model.config.to_config().to_text();
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    const auto named = model.named_parameters();
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (auto dim : tensor.shape()) detail::write_pod<std::int64_t>(out, dim);
        out.write(reinterpret_cast<const char*>(tensor.values().data()),
                  static_cast<std::streamsize>(tensor.values().size() * sizeof(double)));
    }
    if (!out) throw contract_error("checkpoint: write failed for " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw contract_error("checkpoint: cannot open " + path.string());
    char magic[sizeof(detail::kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
        throw contract_error("checkpoint: bad magic in " + path.string());
    }
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != 1) {
        throw contract_error("checkpoint: unsupported version " + std::to_string(version));
    }

    const auto cfg_len = detail::read_pod<std::uint32_t>(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    if (!in) throw contract_error("checkpoint: truncated config block");
    Model model = Model::init(ModelConfig::from_config(Config::parse(cfg_text)), 0);

    const auto count = detail::read_pod<std::uint32_t>(in);
    auto named = model.named_parameters();
    if (count != named.size()) {
        throw contract_error("checkpoint: " + std::to_string(count) + " parameters, expected " +
                             std::to_string(named.size()));
    }
    for (auto& [expected_name, tensor] : named) {
        const auto name_len = detail::read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in || name != expected_name) {
            throw contract_error("checkpoint: parameter '" + name + "', expected '" +
                                 expected_name + "'");
        }
        const auto rank = detail::read_pod<std::uint32_t>(in);
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_pod<std::int64_t>(in);
        if (shape != tensor.shape()) {
            throw contract_error("checkpoint: parameter '" + name + "' has shape " +
                                 shape_str(shape) + ", expected " + shape_str(tensor.shape()));
        }
        in.read(reinterpret_cast<char*>(tensor.values().data()),
                static_cast<std::streamsize>(tensor.values().size() * sizeof(double)));
        if (!in) throw contract_error("checkpoint: truncated values for '" + name + "'");
    }
    return model;
}

}  // namespace echo
