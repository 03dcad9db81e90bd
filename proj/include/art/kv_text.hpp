#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "art/error.hpp"

namespace art {

// Flat `key=value` text: one pair per line, `#` starts a comment, blank
// lines ignored. Key order is preserved for stable serialization.
class KeyValueText {
public:
    static KeyValueText parse(const std::string& text, const std::string& origin = "config") {
        KeyValueText kv;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
            std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (kv.has(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            kv.set(key, trim(line.substr(eq + 1)));
        }
        return kv;
    }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    void set(const std::string& key, std::string value) {
        if (auto it = index_.find(key); it != index_.end()) {
            entries_[it->second].second = std::move(value);
            return;
        }
        index_[key] = entries_.size();
        entries_.emplace_back(key, std::move(value));
    }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("missing key '" + key + "'");
        return entries_[it->second].second;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
        return out;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, std::size_t> index_;
};

inline long long parse_int(const std::string& key, const std::string& value) {
    long long out = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end)
        throw ConfigError("key '" + key + "': expected integer, got '" + value + "'");
    return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double out = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size())
        throw ConfigError("key '" + key + "': expected number, got '" + value + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("key '" + key + "': expected boolean, got '" + value + "'");
}

inline std::vector<long long> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<long long> out;
    if (KeyValueText::trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, KeyValueText::trim(item)));
    return out;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

template <typename Int>
std::string join_ints(const std::vector<Int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

} // namespace art
