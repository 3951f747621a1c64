#pragma once

#include <string>
#include <vector>

#include "ptransfer/evo.hpp"
#include "ptransfer/finetune.hpp"
#include "ptransfer/network.hpp"
#include "ptransfer/scheme.hpp"

namespace ptransfer {

// Names for the parameterized layers, kind plus ordinal: dense0, conv1, ...
std::vector<std::string> scheme_layer_names(const std::vector<LayerSpec>& specs);

// Per-layer cell grid; frozen layers render as "frozen", the rest as
// "lr=<rate>". Parsing the grid recovers the exact scheme.
std::string render_scheme_grid(const std::vector<std::string>& layer_names,
                               const SchemeVector& scheme, const LrZoo& zoo);
SchemeVector parse_scheme_grid(const std::string& grid, const LrZoo& zoo);

// Percent scale with two decimals, e.g. "64.21±0.77".
std::string format_percent_ci(double mean, double halfwidth);

struct ResultRow {
    std::string label;
    std::size_t n_way = 0, k_shot = 0;
    double mean = 0.0, halfwidth = 0.0;
};

// One row per scheme label, one column per (N,K) shape; rows ordered
// Fixed, Manual, Searched, then the rest alphabetically.
std::string comparison_table(std::vector<ResultRow> rows);

// "label,gen0,...,genN" header plus one row of per-generation best fitness.
std::string convergence_csv(const SearchTrace& t, const std::string& label);

// Self-contained evaluation result: full run config, input hashes, and the
// eval record, so any report is reproducible from this file alone.
struct ReportFile {
    std::string label;
    std::size_t n_way = 0, k_shot = 0;
    std::string checkpoint_hash;
    std::string dataset_hash;
    std::string config_text;
    EvalReport report;
};

std::string format_report_file(const ReportFile& f);
ReportFile parse_report_file(const std::string& text);

}  // namespace ptransfer
