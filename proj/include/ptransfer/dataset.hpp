#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptransfer/rng.hpp"
#include "ptransfer/tensor.hpp"

namespace ptransfer {

enum class Split { Base, Validation, Novel };

std::string to_string(Split s);
Split parse_split(const std::string& text);

// Affine transform plus per-dimension noise applied to novel-split points
// (and, when include_validation is set, validation points) after generation.
// Base points are never touched.
struct DomainShift {
    bool enabled = false;
    double rotate = 0.7;    // Givens angle (radians) on planes (0,1),(2,3),...
    double scale = 1.15;
    double translate = 1.0; // magnitude along a seeded random direction
    double noise = 0.1;     // additive per-dimension noise amplitude
    bool include_validation = false;

    bool operator==(const DomainShift& o) const = default;
};

struct DatasetParams {
    std::size_t n_base = 64;
    std::size_t n_val = 16;
    std::size_t n_novel = 20;
    std::size_t per_class = 40;
    std::size_t dim = 16;
    double cluster_spread = 0.35;
    std::size_t subspace_rank = 4;
    double offset_scale = 0.3;
    DomainShift shift;

    std::size_t n_classes() const { return n_base + n_val + n_novel; }
    bool operator==(const DatasetParams& o) const = default;
};

// Immutable after generation. Points are class-major: example c*per_class+k
// belongs to class c. Class means share a low-rank subspace plus class
// offsets, so base-class training learns structure that transfers.
struct LabeledDataset {
    std::uint64_t generator_seed = 0;
    DatasetParams params;
    Tensor points;                                     // [n, dim]
    std::vector<std::size_t> labels;                   // original class ids
    std::vector<Split> class_split;                    // tag per class id
    std::vector<std::vector<std::size_t>> examples_by_class;

    std::size_t dim() const { return params.dim; }
    std::size_t n_examples() const { return labels.size(); }
    std::size_t n_classes() const { return class_split.size(); }
    std::vector<std::size_t> classes_in(Split split) const;
    const double* point(std::size_t example) const {
        return points.data.data() + example * params.dim;
    }
};

LabeledDataset generate_dataset(std::uint64_t seed, const DatasetParams& p);

// One few-shot task: N classes relabeled 0..N-1 in draw order, K support and
// Q query examples per class, support and query disjoint.
struct Episode {
    std::size_t n_way = 0, k_shot = 0, n_query = 0;
    Tensor support_points;                  // [N*K, dim]
    std::vector<std::size_t> support_labels;
    Tensor query_points;                    // [N*Q, dim]
    std::vector<std::size_t> query_labels;
    std::vector<std::size_t> class_map;     // relabeled -> original class id
    std::vector<std::size_t> support_indices, query_indices;  // into the dataset
};

Episode sample_episode(const LabeledDataset& ds, Split split, std::size_t n_way,
                       std::size_t k_shot, std::size_t n_query, Rng& rng);

// Text form: header (seed, sizes, shift parameters) then one record per
// example; round-trips bit-exactly through shortest-decimal encoding.
std::string export_dataset(const LabeledDataset& ds);
LabeledDataset import_dataset(const std::string& text);
std::string dataset_hash(const LabeledDataset& ds);

}  // namespace ptransfer
