#include "ptransfer/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ptransfer/text.hpp"

namespace ptransfer {

std::vector<std::string> scheme_layer_names(const std::vector<LayerSpec>& specs) {
    std::vector<std::string> names;
    std::size_t i = 0;
    for (const LayerSpec& s : specs) {
        if (!s.parameterized()) continue;
        names.push_back(to_string(s.kind) + std::to_string(i));
        ++i;
    }
    return names;
}

namespace {

std::string grid_cell(std::size_t entry, const LrZoo& zoo) {
    return entry == 0 ? "frozen" : "lr=" + dstr(zoo.rates[entry]);
}

std::string padded(const std::string& s, std::size_t width) {
    std::string out = " " + s;
    out.resize(width + 2, ' ');
    return out;
}

}  // namespace

std::string render_scheme_grid(const std::vector<std::string>& layer_names,
                               const SchemeVector& scheme, const LrZoo& zoo) {
    if (layer_names.size() != scheme.length())
        throw std::invalid_argument("grid needs " + std::to_string(scheme.length()) +
                                    " layer names, got " +
                                    std::to_string(layer_names.size()));
    scheme_rates(scheme, zoo);
    std::vector<std::string> cells;
    std::vector<std::size_t> widths;
    for (std::size_t i = 0; i < scheme.length(); ++i) {
        cells.push_back(grid_cell(scheme.entries[i], zoo));
        widths.push_back(std::max(layer_names[i].size(), cells[i].size()));
    }
    std::ostringstream os;
    os << "scheme-grid-v1\n|";
    for (std::size_t i = 0; i < scheme.length(); ++i) os << padded(layer_names[i], widths[i]) << "|";
    os << "\n|";
    for (std::size_t i = 0; i < scheme.length(); ++i) os << padded(cells[i], widths[i]) << "|";
    os << "\n";
    return os.str();
}

SchemeVector parse_scheme_grid(const std::string& grid, const LrZoo& zoo) {
    std::istringstream is(grid);
    std::string line;
    std::vector<std::string> rows;
    bool saw_header = false;
    while (std::getline(is, line)) {
        const std::string t(trim(line));
        if (t.empty()) continue;
        if (!saw_header) {
            if (t != "scheme-grid-v1")
                throw std::invalid_argument("unsupported grid header '" + t + "'");
            saw_header = true;
            continue;
        }
        if (t.front() == '|') rows.push_back(t);
    }
    if (rows.size() != 2)
        throw std::invalid_argument("grid needs a name row and a cell row, got " +
                                    std::to_string(rows.size()) + " rows");
    const auto fields = split(rows[1], '|');
    SchemeVector s;
    for (const std::string& f : fields) {
        const std::string cell(trim(f));
        if (cell.empty()) continue;
        if (cell == "frozen") {
            s.entries.push_back(0);
            continue;
        }
        if (cell.rfind("lr=", 0) != 0)
            throw std::invalid_argument("bad grid cell '" + cell + "'");
        const std::string rate = cell.substr(3);
        std::size_t idx = zoo.size();
        for (std::size_t i = 1; i < zoo.size(); ++i)
            if (dstr(zoo.rates[i]) == rate) {
                idx = i;
                break;
            }
        if (idx == zoo.size())
            throw std::invalid_argument("grid rate '" + rate + "' not in zoo " +
                                        format_zoo(zoo));
        s.entries.push_back(idx);
    }
    if (s.entries.empty()) throw std::invalid_argument("grid has no cells");
    return s;
}

std::string format_percent_ci(double mean, double halfwidth) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * mean, 100.0 * halfwidth);
    return buf;
}

namespace {

int label_rank(const std::string& label) {
    if (label == "Fixed") return 0;
    if (label == "Manual") return 1;
    if (label == "Searched") return 2;
    return 3;
}

// Code-point count, so multi-byte glyphs do not skew column alignment.
std::size_t display_len(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
}

std::string pad_cell(const std::string& s, std::size_t width) {
    return s + std::string(width - std::min(width, display_len(s)) + 2, ' ');
}

std::string shape_name(std::size_t n_way, std::size_t k_shot) {
    return std::to_string(n_way) + "-way " + std::to_string(k_shot) + "-shot";
}

}  // namespace

std::string comparison_table(std::vector<ResultRow> rows) {
    if (rows.empty()) throw std::invalid_argument("no result rows");
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::vector<std::string> labels;
    for (const ResultRow& r : rows) {
        const auto sh = std::make_pair(r.n_way, r.k_shot);
        if (std::find(shapes.begin(), shapes.end(), sh) == shapes.end()) shapes.push_back(sh);
        if (std::find(labels.begin(), labels.end(), r.label) == labels.end())
            labels.push_back(r.label);
    }
    std::sort(shapes.begin(), shapes.end());
    std::sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
        const int ra = label_rank(a), rb = label_rank(b);
        return ra != rb ? ra < rb : a < b;
    });
    // later rows win on duplicate (label, shape) keys
    std::map<std::pair<std::string, std::pair<std::size_t, std::size_t>>, std::string> cells;
    for (const ResultRow& r : rows)
        cells[{r.label, {r.n_way, r.k_shot}}] = format_percent_ci(r.mean, r.halfwidth);

    std::size_t label_w = std::string("scheme").size();
    for (const auto& l : labels) label_w = std::max(label_w, display_len(l));
    std::vector<std::size_t> col_w;
    for (const auto& sh : shapes) {
        std::size_t w = display_len(shape_name(sh.first, sh.second));
        for (const auto& l : labels) {
            auto it = cells.find({l, sh});
            if (it != cells.end()) w = std::max(w, display_len(it->second));
        }
        col_w.push_back(w);
    }

    std::ostringstream os;
    os << pad_cell("scheme", label_w);
    for (std::size_t j = 0; j < shapes.size(); ++j)
        os << pad_cell(shape_name(shapes[j].first, shapes[j].second), col_w[j]);
    os << "\n";
    for (const auto& l : labels) {
        os << pad_cell(l, label_w);
        for (std::size_t j = 0; j < shapes.size(); ++j) {
            auto it = cells.find({l, shapes[j]});
            os << pad_cell(it == cells.end() ? "-" : it->second, col_w[j]);
        }
        os << "\n";
    }
    return os.str();
}

std::string convergence_csv(const SearchTrace& t, const std::string& label) {
    if (t.generations.empty()) throw std::invalid_argument("trace has no generations");
    std::ostringstream head, row;
    head << "run";
    row << label;
    for (const GenerationRecord& g : t.generations) {
        head << ",gen" << g.generation;
        row << "," << dstr(g.best_fitness);
    }
    return head.str() + "\n" + row.str() + "\n";
}

std::string format_report_file(const ReportFile& f) {
    std::ostringstream os;
    os << "report-v1\n";
    os << "label = " << f.label << "\n";
    os << "n_way = " << f.n_way << "\n";
    os << "k_shot = " << f.k_shot << "\n";
    os << "checkpoint_hash = " << f.checkpoint_hash << "\n";
    os << "dataset_hash = " << f.dataset_hash << "\n";
    os << "summary = " << format_percent_ci(f.report.mean_accuracy, f.report.ci95_halfwidth)
       << "\n";
    os << "record = " << eval_record_line(f.report) << "\n";
    os << "config.begin\n" << f.config_text;
    if (!f.config_text.empty() && f.config_text.back() != '\n') os << "\n";
    os << "config.end\n";
    return os.str();
}

ReportFile parse_report_file(const std::string& text) {
    ReportFile f;
    std::istringstream is(text);
    std::string line;
    bool saw_header = false, in_config = false, saw_record = false;
    std::ostringstream config;
    while (std::getline(is, line)) {
        if (!saw_header) {
            if (std::string(trim(line)) != "report-v1")
                throw std::invalid_argument("unsupported report header");
            saw_header = true;
            continue;
        }
        if (in_config) {
            if (std::string(trim(line)) == "config.end") {
                in_config = false;
                continue;
            }
            config << line << "\n";
            continue;
        }
        const std::string t(trim(line));
        if (t.empty()) continue;
        if (t == "config.begin") {
            in_config = true;
            continue;
        }
        std::string key, value;
        if (!parse_kv_line(t, key, value)) continue;
        if (key == "label") f.label = value;
        else if (key == "n_way") f.n_way = parse_size(value);
        else if (key == "k_shot") f.k_shot = parse_size(value);
        else if (key == "checkpoint_hash") f.checkpoint_hash = value;
        else if (key == "dataset_hash") f.dataset_hash = value;
        else if (key == "summary") {}  // derived from the record
        else if (key == "record") {
            f.report = parse_eval_record(value);
            saw_record = true;
        } else throw std::invalid_argument("unknown report key '" + key + "'");
    }
    if (in_config) throw std::invalid_argument("report config block not closed");
    if (!saw_record) throw std::invalid_argument("report missing record line");
    f.config_text = config.str();
    return f;
}

}  // namespace ptransfer
