#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptransfer/dataset.hpp"
#include "ptransfer/evo.hpp"
#include "ptransfer/finetune.hpp"
#include "ptransfer/network.hpp"
#include "ptransfer/scheme.hpp"

namespace ptransfer {

// Invalid configuration or usage; maps to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every pipeline stage draws from its own stream derived from the single
// master seed, so overriding --seed re-seeds the whole run coherently.
enum class Stage : std::uint64_t {
    Data = 1,
    NetInit = 2,
    HeadInit = 3,
    Pretrain = 4,
    Corrupt = 5,
    Search = 6,
    Eval = 7,
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "runs";
    std::size_t workers = 1;
    bool export_dataset_file = false;

    DatasetParams data;

    std::string layers = "dense:16:32,relu,dense:32:32,relu,dense:32:16";
    HeadKind head = HeadKind::Cosine;
    double cosine_scale = 10.0;

    std::size_t pretrain_epochs = 400;
    std::size_t pretrain_batch = 16;
    double pretrain_adam_lr = 0.001;
    // > 0 replaces the last backbone layer's weights with a seeded rank-1
    // matrix after pre-training, making frozen transfer fail on purpose.
    double corrupt_scale = 0.0;

    LrZoo zoo = make_zoo({0.0, 0.01, 0.1, 1.0});

    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t n_query = 15;
    FinetuneBudget budget;

    std::size_t search_population = 20;
    std::size_t search_iterations = 20;
    std::size_t search_random = 50;
    std::size_t search_mutation = 50;
    std::size_t search_crossover = 50;
    double search_mutation_prob = 0.1;
    std::size_t search_val_episodes = 20;

    std::size_t eval_episodes = 600;

    std::uint64_t stage_seed(Stage st) const {
        return derive_seed(seed, static_cast<std::uint64_t>(st));
    }
    std::vector<LayerSpec> layer_specs() const;
    SearchConfig search_config(std::size_t scheme_length) const;

    bool operator==(const RunConfig& o) const = default;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Emits every key with its current value; parse_config_text round-trips it.
std::string serialize_config(const RunConfig& cfg);

}  // namespace ptransfer
