#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ptransfer {

// Shortest decimal form that parses back to the exact same double. All
// numeric text output goes through this so files round-trip bit-exactly.
inline std::string dstr(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument("bad real number '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument("bad integer '" + std::string(s) + "'");
    return v;
}

inline std::size_t parse_size(std::string_view s) {
    return static_cast<std::size_t>(parse_u64(s));
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

// "key = value" with '#' comments; returns false for blank/comment lines.
inline bool parse_kv_line(std::string_view line, std::string& key, std::string& value) {
    std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') return false;
    const std::size_t eq = t.find('=');
    if (eq == std::string_view::npos)
        throw std::invalid_argument("expected 'key = value', got '" + std::string(t) + "'");
    key = std::string(trim(t.substr(0, eq)));
    value = std::string(trim(t.substr(eq + 1)));
    if (key.empty()) throw std::invalid_argument("empty key in '" + std::string(t) + "'");
    return true;
}

}  // namespace ptransfer
