#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "echo/common.hpp"

namespace echo {

/// Flat `section.key = value` UTF-8 config. '#' starts a comment, blank lines
/// are skipped, keys must be dotted. Serialization emits keys sorted, so a
/// round-tripped config is byte-stable.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw contract_error("config line " + std::to_string(lineno) +
                                     ": expected key = value");
            }
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty() || key.find('.') == std::string::npos ||
                key.find(' ') != std::string::npos) {
                throw contract_error("config line " + std::to_string(lineno) + ": bad key '" +
                                     key + "' (want section.key)");
            }
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw contract_error("config: cannot open " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    std::int64_t get_i64(const std::string& key, std::int64_t fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return parse_i64(key, it->second);
    }

    double get_f64(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        return parse_f64(key, it->second);
    }

    std::vector<std::int64_t> get_i64_list(const std::string& key,
                                           std::vector<std::int64_t> fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<std::int64_t> out;
        for (const auto& item : split_csv(it->second)) out.push_back(parse_i64(key, item));
        return out;
    }

    std::vector<double> get_f64_list(const std::string& key, std::vector<double> fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<double> out;
        for (const auto& item : split_csv(it->second)) out.push_back(parse_f64(key, item));
        return out;
    }

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void set_i64(const std::string& key, std::int64_t v) { kv_[key] = std::to_string(v); }
    void set_f64(const std::string& key, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        kv_[key] = os.str();
    }

    std::string to_text() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
        return os.str();
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

    /// Reject typos: every present key must be in `known`.
    void require_known_keys(const std::vector<std::string>& known) const {
        for (const auto& [k, _] : kv_) {
            bool ok = false;
            for (const auto& cand : known) ok = ok || cand == k;
            if (!ok) throw contract_error("config: unknown key '" + k + "'");
        }
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split_csv(const std::string& s) {
        std::vector<std::string> out;
        std::string item;
        std::istringstream in(s);
        while (std::getline(in, item, ',')) out.push_back(trim(item));
        return out;
    }

    static std::int64_t parse_i64(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const std::int64_t x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw contract_error("config: key '" + key + "' has non-integer value '" + v + "'");
        }
    }

    static double parse_f64(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw contract_error("config: key '" + key + "' has non-numeric value '" + v + "'");
        }
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace echo
