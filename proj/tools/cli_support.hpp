#pragma once

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepstiff::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum ExitCode : int { kPass = 0, kAssertion = 1, kConfig = 2, kArtifact = 3 };

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Parses a config document; syntax errors carry line and column.
inline json parse_config_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') ++line, col = 1;
            else ++col;
        }
        throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

inline json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

/// Typed, path-aware view over a JSON object; `finish` rejects keys never asked for.
class Fields {
public:
    Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(where("") + "expected an object");
    }

    bool has(const std::string& key) {
        known_.insert(key);
        return obj_.contains(key);
    }

    double number(const std::string& key, double fallback) { return has(key) ? number_at(key) : fallback; }
    double number(const std::string& key) {
        require(key);
        return number_at(key);
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t lo = 0) {
        if (!has(key)) return fallback;
        return integer_at(obj_.at(key), key, lo);
    }
    std::int64_t integer(const std::string& key) {
        require(key);
        return integer_at(obj_.at(key), key, 0);
    }

    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        if (!obj_.at(key).is_string()) throw ConfigError(where(key) + "expected a string");
        return obj_.at(key).get<std::string>();
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        if (!obj_.at(key).is_boolean()) throw ConfigError(where(key) + "expected true or false");
        return obj_.at(key).get<bool>();
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
        if (!has(key)) return fallback;
        const json& a = obj_.at(key);
        if (!a.is_array() || a.empty()) throw ConfigError(where(key) + "expected a non-empty array of numbers");
        std::vector<double> out;
        for (const auto& v : a) {
            if (!v.is_number()) throw ConfigError(where(key) + "expected a non-empty array of numbers");
            out.push_back(v.get<double>());
        }
        return out;
    }

    std::vector<std::int64_t> integers(const std::string& key, const std::vector<std::int64_t>& fallback,
                                       std::int64_t lo = 1) {
        if (!has(key)) return fallback;
        const json& a = obj_.at(key);
        if (!a.is_array() || a.empty()) throw ConfigError(where(key) + "expected a non-empty array of integers");
        std::vector<std::int64_t> out;
        for (const auto& v : a) out.push_back(integer_at(v, key, lo));
        return out;
    }

    Fields object(const std::string& key) {
        require(key);
        return Fields(obj_.at(key), join(key));
    }

    const json& raw(const std::string& key) {
        require(key);
        return obj_.at(key);
    }

    std::string where(const std::string& key) const {
        return "field '" + (key.empty() ? path_ : join(key)) + "': ";
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items())
            if (!known_.count(k)) throw ConfigError(where(k) + "unknown key");
    }

private:
    void require(const std::string& key) {
        if (!has(key)) throw ConfigError(where(key) + "required key is missing");
    }
    double number_at(const std::string& key) const {
        const json& v = obj_.at(key);
        if (!v.is_number()) throw ConfigError(where(key) + "expected a number");
        return v.get<double>();
    }
    std::int64_t integer_at(const json& v, const std::string& key, std::int64_t lo) const {
        if (!v.is_number_integer()) throw ConfigError(where(key) + "expected an integer");
        const auto x = v.get<std::int64_t>();
        if (x < lo) throw ConfigError(where(key) + "must be >= " + std::to_string(lo));
        return x;
    }
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& obj_;
    std::string path_;
    std::set<std::string> known_;
};

/// 17 significant digits, locale independent.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string fmt(long double v) { return fmt(static_cast<double>(v)); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(unsigned v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }
inline std::string fmt(const std::string& v) { return v; }
inline std::string fmt(const char* v) { return v; }

/// Columns whose values depend on timing and are skipped by verify.
inline bool is_timing_column(const std::string& name) {
    return name.size() >= 3 && name.compare(name.size() - 3, 3, "_ms") == 0;
}

struct Table {
    std::string file;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    template <class... T>
    void add(const T&... v) {
        std::vector<std::string> r{fmt(v)...};
        if (r.size() != header.size()) throw std::logic_error(file + ": row width does not match header");
        rows.push_back(std::move(r));
    }
};

inline void write_table(const fs::path& dir, const Table& t) {
    std::ofstream out(dir / t.file);
    if (!out) throw ArtifactError("cannot write " + (dir / t.file).string());
    for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
    out << "\n";
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
        out << "\n";
    }
}

inline Table read_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("missing artifact " + path.string());
    Table t;
    t.file = path.filename().string();
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        if (!s.empty() && s.back() == ',') out.emplace_back();
        return out;
    };
    if (!std::getline(in, line)) throw ArtifactError("empty artifact " + path.string());
    t.header = split(line);
    while (std::getline(in, line)) t.rows.push_back(split(line));
    return t;
}

/// Differences in deterministic columns, one message per diverging row.
inline std::vector<std::string> compare_tables(const Table& want, const Table& got) {
    std::vector<std::string> out;
    if (want.header != got.header) {
        out.push_back(want.file + ": header differs");
        return out;
    }
    if (want.rows.size() != got.rows.size())
        out.push_back(want.file + ": " + std::to_string(want.rows.size()) + " rows recorded, " +
                      std::to_string(got.rows.size()) + " reproduced");
    const std::size_t n = std::min(want.rows.size(), got.rows.size());
    for (std::size_t r = 0; r < n; ++r) {
        std::string diff;
        for (std::size_t c = 0; c < want.header.size(); ++c) {
            if (is_timing_column(want.header[c])) continue;
            const std::string& a = c < want.rows[r].size() ? want.rows[r][c] : std::string();
            const std::string& b = c < got.rows[r].size() ? got.rows[r][c] : std::string();
            if (a != b) diff += " " + want.header[c] + ": " + a + " vs " + b + ";";
        }
        if (!diff.empty()) out.push_back(want.file + " row " + std::to_string(r + 1) + ":" + diff);
    }
    return out;
}

}  // namespace deepstiff::cli
