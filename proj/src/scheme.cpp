#include "ptransfer/scheme.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ptransfer/text.hpp"

namespace ptransfer {

LrZoo make_zoo(std::vector<double> rates) {
    if (rates.size() < 2)
        throw std::invalid_argument("learning-rate zoo needs at least 2 entries");
    if (rates[0] != 0.0)
        throw std::invalid_argument("zoo entry 0 must be exactly 0 (frozen)");
    for (std::size_t i = 1; i < rates.size(); ++i)
        if (rates[i] <= rates[i - 1])
            throw std::invalid_argument("zoo rates must be strictly increasing; entry " +
                                        std::to_string(i) + " is " + dstr(rates[i]) +
                                        " after " + dstr(rates[i - 1]));
    LrZoo z;
    z.rates = std::move(rates);
    return z;
}

LrZoo parse_zoo(const std::string& csv) {
    std::vector<double> rates;
    for (const std::string& f : split(csv, ',')) rates.push_back(parse_double(trim(f)));
    return make_zoo(std::move(rates));
}

std::string format_zoo(const LrZoo& zoo) {
    std::string out;
    for (std::size_t i = 0; i < zoo.rates.size(); ++i) {
        if (i) out += ",";
        out += dstr(zoo.rates[i]);
    }
    return out;
}

std::vector<double> scheme_rates(const SchemeVector& s, const LrZoo& zoo,
                                 std::size_t expected_length) {
    if (expected_length != 0 && s.length() != expected_length)
        throw std::invalid_argument("scheme has " + std::to_string(s.length()) +
                                    " entries, network has " +
                                    std::to_string(expected_length) +
                                    " parameterized layers");
    std::vector<double> rates;
    rates.reserve(s.entries.size());
    for (std::size_t e : s.entries) {
        if (e >= zoo.size())
            throw std::out_of_range("scheme entry " + std::to_string(e) +
                                    " outside zoo of size " + std::to_string(zoo.size()));
        rates.push_back(zoo.rates[e]);
    }
    return rates;
}

SchemeVector parse_scheme_entries(const std::string& csv) {
    SchemeVector s;
    for (const std::string& f : split(csv, ','))
        s.entries.push_back(parse_size(trim(f)));
    if (s.entries.empty()) throw std::invalid_argument("empty scheme");
    return s;
}

std::string format_scheme_entries(const SchemeVector& s) {
    std::string out;
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s.entries[i]);
    }
    return out;
}

std::size_t nonzero_count(const SchemeVector& s) {
    std::size_t n = 0;
    for (std::size_t e : s.entries) n += e != 0;
    return n;
}

std::size_t uniform_rate_index(const LrZoo& zoo) {
    for (std::size_t i = 1; i < zoo.size(); ++i)
        if (zoo.rates[i] == 0.01) return i;
    return 1;
}

SchemeVector fixed_scheme(std::size_t L) {
    SchemeVector s;
    s.entries.assign(L, 0);
    return s;
}

SchemeVector uniform_scheme(std::size_t L, const LrZoo& zoo) {
    SchemeVector s;
    s.entries.assign(L, uniform_rate_index(zoo));
    return s;
}

SchemeVector manual_scheme(std::size_t L, const LrZoo& zoo) {
    SchemeVector s = fixed_scheme(L);
    s.entries.back() = uniform_rate_index(zoo);
    return s;
}

std::string format_scheme_file(const SchemeFile& f) {
    std::ostringstream os;
    os << "label = " << f.label << "\n";
    os << "zoo = " << format_zoo(f.zoo) << "\n";
    os << "entries = " << format_scheme_entries(f.scheme) << "\n";
    return os.str();
}

SchemeFile parse_scheme_file_text(const std::string& text) {
    SchemeFile f;
    bool have_zoo = false, have_entries = false;
    std::istringstream is(text);
    std::string line, key, value;
    while (std::getline(is, line)) {
        if (!parse_kv_line(line, key, value)) continue;
        if (key == "label") {
            f.label = value;
        } else if (key == "zoo") {
            f.zoo = parse_zoo(value);
            have_zoo = true;
        } else if (key == "entries") {
            f.scheme = parse_scheme_entries(value);
            have_entries = true;
        } else {
            throw std::invalid_argument("unknown scheme file key '" + key + "'");
        }
    }
    if (!have_zoo || !have_entries)
        throw std::invalid_argument("scheme file needs both 'zoo' and 'entries'");
    scheme_rates(f.scheme, f.zoo);
    return f;
}

SchemeFile read_scheme_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open scheme file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scheme_file_text(buf.str());
}

void write_scheme_file(const std::string& path, const SchemeFile& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write scheme file '" + path + "'");
    out << format_scheme_file(f);
}

}  // namespace ptransfer
