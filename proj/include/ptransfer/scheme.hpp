#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ptransfer {

// Indices into an LrZoo, one per parameterized backbone layer.
struct SchemeVector {
    std::vector<std::size_t> entries;

    std::size_t length() const { return entries.size(); }
    bool operator==(const SchemeVector& o) const { return entries == o.entries; }
    bool operator<(const SchemeVector& o) const { return entries < o.entries; }
};

// The m candidate per-layer learning rates. rates[0] is exactly 0 (frozen);
// the rest strictly increase.
struct LrZoo {
    std::vector<double> rates;

    std::size_t size() const { return rates.size(); }
    bool operator==(const LrZoo& o) const { return rates == o.rates; }
};

LrZoo make_zoo(std::vector<double> rates);
LrZoo parse_zoo(const std::string& csv);
std::string format_zoo(const LrZoo& zoo);

// Per-layer learning rates for a scheme; throws on out-of-range indices or
// length mismatch against expected_length (pass 0 to skip that check).
std::vector<double> scheme_rates(const SchemeVector& s, const LrZoo& zoo,
                                 std::size_t expected_length = 0);

SchemeVector parse_scheme_entries(const std::string& csv);
std::string format_scheme_entries(const SchemeVector& s);

std::size_t nonzero_count(const SchemeVector& s);

// Built-in baselines. The "uniform" rate is 0.01 when the zoo contains it,
// else the smallest nonzero entry.
std::size_t uniform_rate_index(const LrZoo& zoo);
SchemeVector fixed_scheme(std::size_t L);
SchemeVector uniform_scheme(std::size_t L, const LrZoo& zoo);
SchemeVector manual_scheme(std::size_t L, const LrZoo& zoo);

// Scheme file: key = value lines (label, zoo, entries).
struct SchemeFile {
    std::string label;
    LrZoo zoo;
    SchemeVector scheme;
};

std::string format_scheme_file(const SchemeFile& f);
SchemeFile parse_scheme_file_text(const std::string& text);
SchemeFile read_scheme_file(const std::string& path);
void write_scheme_file(const std::string& path, const SchemeFile& f);

}  // namespace ptransfer
