#include "ptransfer/dataset.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ptransfer/checkpoint.hpp"
#include "ptransfer/text.hpp"

namespace ptransfer {

namespace {

// Stage tag for the shift stream, distinct from the generation stream so a
// shifted and an unshifted dataset share every untouched point bit-for-bit.
constexpr std::uint64_t kShiftStage = 0xD0517;

}  // namespace

std::string to_string(Split s) {
    switch (s) {
        case Split::Base: return "base";
        case Split::Validation: return "validation";
        case Split::Novel: return "novel";
    }
    return "?";
}

Split parse_split(const std::string& text) {
    if (text == "base") return Split::Base;
    if (text == "validation") return Split::Validation;
    if (text == "novel") return Split::Novel;
    throw std::invalid_argument("unknown split '" + text + "'");
}

std::vector<std::size_t> LabeledDataset::classes_in(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < class_split.size(); ++c)
        if (class_split[c] == split) out.push_back(c);
    return out;
}

namespace {

std::vector<std::vector<double>> orthonormal_basis(std::size_t rank, std::size_t dim,
                                                   Rng& rng) {
    std::vector<std::vector<double>> basis;
    while (basis.size() < rank) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        for (const auto& b : basis) {
            double d = 0.0;
            for (std::size_t i = 0; i < dim; ++i) d += v[i] * b[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= d * b[i];
        }
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        const double n = std::sqrt(n2);
        if (n < 1e-8) continue;  // resample a vector that collapsed under projection
        for (double& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    return basis;
}

void apply_shift(double* x, std::size_t dim, const DomainShift& sh,
                 const std::vector<double>& translation, Rng& noise_rng) {
    const double c = std::cos(sh.rotate), s = std::sin(sh.rotate);
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
        const double a = x[i], b = x[i + 1];
        x[i] = c * a - s * b;
        x[i + 1] = s * a + c * b;
    }
    for (std::size_t i = 0; i < dim; ++i)
        x[i] = sh.scale * x[i] + translation[i] + sh.noise * noise_rng.normal();
}

}  // namespace

LabeledDataset generate_dataset(std::uint64_t seed, const DatasetParams& p) {
    if (p.n_base == 0 || p.n_val == 0 || p.n_novel == 0)
        throw std::invalid_argument("all three class splits need at least one class");
    if (p.per_class == 0) throw std::invalid_argument("per_class must be positive");
    if (p.dim == 0) throw std::invalid_argument("dim must be positive");
    if (p.subspace_rank == 0 || p.subspace_rank > p.dim)
        throw std::invalid_argument("subspace_rank must be in [1, dim]");

    LabeledDataset ds;
    ds.generator_seed = seed;
    ds.params = p;
    const std::size_t n_classes = p.n_classes();
    ds.class_split.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c)
        ds.class_split[c] = c < p.n_base                ? Split::Base
                            : c < p.n_base + p.n_val    ? Split::Validation
                                                        : Split::Novel;

    Rng rng(seed);
    const auto basis = orthonormal_basis(p.subspace_rank, p.dim, rng);

    std::vector<std::vector<double>> means(n_classes, std::vector<double>(p.dim, 0.0));
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t r = 0; r < p.subspace_rank; ++r) {
            const double a = rng.normal();
            for (std::size_t i = 0; i < p.dim; ++i) means[c][i] += a * basis[r][i];
        }
        for (std::size_t i = 0; i < p.dim; ++i) means[c][i] += p.offset_scale * rng.normal();
    }

    const std::size_t n = n_classes * p.per_class;
    ds.points = Tensor({n, p.dim});
    ds.labels.resize(n);
    ds.examples_by_class.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t k = 0; k < p.per_class; ++k) {
            const std::size_t e = c * p.per_class + k;
            ds.labels[e] = c;
            ds.examples_by_class[c].push_back(e);
            double* x = ds.points.data.data() + e * p.dim;
            for (std::size_t i = 0; i < p.dim; ++i)
                x[i] = means[c][i] + p.cluster_spread * rng.normal();
        }
    }

    if (p.shift.enabled) {
        Rng shift_rng(derive_seed(seed, kShiftStage));
        std::vector<double> dir(p.dim);
        double n2 = 0.0;
        for (double& x : dir) {
            x = shift_rng.normal();
            n2 += x * x;
        }
        const double dn = std::sqrt(n2);
        for (double& x : dir) x = p.shift.translate * x / dn;
        for (std::size_t e = 0; e < n; ++e) {
            const Split sp = ds.class_split[ds.labels[e]];
            const bool shifted = sp == Split::Novel ||
                                 (sp == Split::Validation && p.shift.include_validation);
            if (!shifted) continue;
            apply_shift(ds.points.data.data() + e * p.dim, p.dim, p.shift, dir, shift_rng);
        }
    }
    return ds;
}

Episode sample_episode(const LabeledDataset& ds, Split split, std::size_t n_way,
                       std::size_t k_shot, std::size_t n_query, Rng& rng) {
    if (n_way == 0 || k_shot == 0 || n_query == 0)
        throw std::invalid_argument("episode shape must be positive");
    const auto eligible = ds.classes_in(split);
    if (eligible.size() < n_way)
        throw std::invalid_argument("split " + to_string(split) + " has " +
                                    std::to_string(eligible.size()) +
                                    " classes, episode needs " + std::to_string(n_way));
    Episode ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.n_query = n_query;
    ep.support_points = Tensor({n_way * k_shot, ds.dim()});
    ep.query_points = Tensor({n_way * n_query, ds.dim()});

    const auto picks = rng.sample_without_replacement(eligible.size(), n_way);
    for (std::size_t i = 0; i < n_way; ++i) {
        const std::size_t cls = eligible[picks[i]];
        ep.class_map.push_back(cls);
        const auto& pool = ds.examples_by_class[cls];
        const std::size_t need = k_shot + n_query;
        if (pool.size() < need)
            throw std::invalid_argument("class " + std::to_string(cls) + " has " +
                                        std::to_string(pool.size()) +
                                        " examples, episode needs " + std::to_string(need));
        const auto chosen = rng.sample_without_replacement(pool.size(), need);
        for (std::size_t j = 0; j < need; ++j) {
            const std::size_t e = pool[chosen[j]];
            const double* src = ds.point(e);
            if (j < k_shot) {
                const std::size_t row = i * k_shot + j;
                std::copy(src, src + ds.dim(),
                          ep.support_points.data.data() + row * ds.dim());
                ep.support_labels.push_back(i);
                ep.support_indices.push_back(e);
            } else {
                const std::size_t row = i * n_query + (j - k_shot);
                std::copy(src, src + ds.dim(),
                          ep.query_points.data.data() + row * ds.dim());
                ep.query_labels.push_back(i);
                ep.query_indices.push_back(e);
            }
        }
    }
    return ep;
}

std::string export_dataset(const LabeledDataset& ds) {
    const DatasetParams& p = ds.params;
    std::ostringstream os;
    os << "format = fewshot-dataset-v1\n";
    os << "seed = " << ds.generator_seed << "\n";
    os << "dim = " << p.dim << "\n";
    os << "n_base = " << p.n_base << "\n";
    os << "n_val = " << p.n_val << "\n";
    os << "n_novel = " << p.n_novel << "\n";
    os << "per_class = " << p.per_class << "\n";
    os << "cluster_spread = " << dstr(p.cluster_spread) << "\n";
    os << "subspace_rank = " << p.subspace_rank << "\n";
    os << "offset_scale = " << dstr(p.offset_scale) << "\n";
    os << "shift.enabled = " << (p.shift.enabled ? 1 : 0) << "\n";
    os << "shift.rotate = " << dstr(p.shift.rotate) << "\n";
    os << "shift.scale = " << dstr(p.shift.scale) << "\n";
    os << "shift.translate = " << dstr(p.shift.translate) << "\n";
    os << "shift.noise = " << dstr(p.shift.noise) << "\n";
    os << "shift.validation = " << (p.shift.include_validation ? 1 : 0) << "\n";
    os << "examples = " << ds.n_examples() << "\n";
    for (std::size_t e = 0; e < ds.n_examples(); ++e) {
        os << "x = " << ds.labels[e] << " " << to_string(ds.class_split[ds.labels[e]]);
        const double* x = ds.point(e);
        for (std::size_t i = 0; i < ds.dim(); ++i) os << " " << dstr(x[i]);
        os << "\n";
    }
    return os.str();
}

LabeledDataset import_dataset(const std::string& text) {
    DatasetParams p;
    std::uint64_t seed = 0;
    std::size_t declared_examples = 0;
    std::vector<std::string> example_lines;
    bool saw_format = false;

    std::istringstream is(text);
    std::string line, key, value;
    while (std::getline(is, line)) {
        if (!parse_kv_line(line, key, value)) continue;
        if (key == "format") {
            if (value != "fewshot-dataset-v1")
                throw std::invalid_argument("unsupported dataset format '" + value + "'");
            saw_format = true;
        } else if (key == "seed") seed = parse_u64(value);
        else if (key == "dim") p.dim = parse_size(value);
        else if (key == "n_base") p.n_base = parse_size(value);
        else if (key == "n_val") p.n_val = parse_size(value);
        else if (key == "n_novel") p.n_novel = parse_size(value);
        else if (key == "per_class") p.per_class = parse_size(value);
        else if (key == "cluster_spread") p.cluster_spread = parse_double(value);
        else if (key == "subspace_rank") p.subspace_rank = parse_size(value);
        else if (key == "offset_scale") p.offset_scale = parse_double(value);
        else if (key == "shift.enabled") p.shift.enabled = parse_u64(value) != 0;
        else if (key == "shift.rotate") p.shift.rotate = parse_double(value);
        else if (key == "shift.scale") p.shift.scale = parse_double(value);
        else if (key == "shift.translate") p.shift.translate = parse_double(value);
        else if (key == "shift.noise") p.shift.noise = parse_double(value);
        else if (key == "shift.validation") p.shift.include_validation = parse_u64(value) != 0;
        else if (key == "examples") declared_examples = parse_size(value);
        else if (key == "x") example_lines.push_back(value);
        else throw std::invalid_argument("unknown dataset file key '" + key + "'");
    }
    if (!saw_format) throw std::invalid_argument("missing dataset format line");
    if (example_lines.size() != declared_examples)
        throw std::invalid_argument("dataset declares " + std::to_string(declared_examples) +
                                    " examples but has " +
                                    std::to_string(example_lines.size()));

    LabeledDataset ds;
    ds.generator_seed = seed;
    ds.params = p;
    const std::size_t n_classes = p.n_classes();
    ds.class_split.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c)
        ds.class_split[c] = c < p.n_base             ? Split::Base
                            : c < p.n_base + p.n_val ? Split::Validation
                                                     : Split::Novel;
    const std::size_t n = example_lines.size();
    ds.points = Tensor({n, p.dim});
    ds.labels.resize(n);
    ds.examples_by_class.resize(n_classes);
    for (std::size_t e = 0; e < n; ++e) {
        const auto fields = split(example_lines[e], ' ');
        if (fields.size() != 2 + p.dim)
            throw std::invalid_argument("example " + std::to_string(e) + " has " +
                                        std::to_string(fields.size()) + " fields, expected " +
                                        std::to_string(2 + p.dim));
        const std::size_t cls = parse_size(fields[0]);
        if (cls >= n_classes)
            throw std::invalid_argument("example class " + fields[0] + " out of range");
        if (parse_split(fields[1]) != ds.class_split[cls])
            throw std::invalid_argument("example " + std::to_string(e) +
                                        " split tag disagrees with class " + fields[0]);
        ds.labels[e] = cls;
        ds.examples_by_class[cls].push_back(e);
        double* x = ds.points.data.data() + e * p.dim;
        for (std::size_t i = 0; i < p.dim; ++i) x[i] = parse_double(fields[2 + i]);
    }
    return ds;
}

std::string dataset_hash(const LabeledDataset& ds) {
    return git_blob_sha1(export_dataset(ds));
}

}  // namespace ptransfer
