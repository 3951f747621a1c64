#include "ptransfer/config.hpp"

#include <sstream>

#include "ptransfer/checkpoint.hpp"
#include "ptransfer/text.hpp"

namespace ptransfer {

std::vector<LayerSpec> RunConfig::layer_specs() const {
    return resolve_layer_chain(parse_layer_list(layers));
}

SearchConfig RunConfig::search_config(std::size_t scheme_length) const {
    SearchConfig sc;
    sc.population = search_population;
    sc.iterations = search_iterations;
    sc.n_random = search_random;
    sc.n_mutation = search_mutation;
    sc.n_crossover = search_crossover;
    sc.mutation_prob = search_mutation_prob;
    sc.zoo = zoo;
    sc.n_val_episodes = search_val_episodes;
    sc.seed = stage_seed(Stage::Search);
    sc.scheme_length = scheme_length;
    return sc;
}

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(key + " must be true/false, got '" + value + "'");
}

std::size_t positive_size(const std::string& key, const std::string& value) {
    std::size_t v;
    try {
        v = parse_size(value);
    } catch (const std::exception&) {
        throw ConfigError(key + " must be a non-negative integer, got '" + value + "'");
    }
    if (v == 0) throw ConfigError(key + " must be positive");
    return v;
}

double real_value(const std::string& key, const std::string& value) {
    try {
        return parse_double(value);
    } catch (const std::exception&) {
        throw ConfigError(key + " must be a real number, got '" + value + "'");
    }
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "run.seed") {
        try {
            cfg.seed = parse_u64(value);
        } catch (const std::exception&) {
            throw ConfigError("run.seed must be an unsigned integer, got '" + value + "'");
        }
    } else if (key == "run.out_dir") cfg.out_dir = value;
    else if (key == "run.workers") cfg.workers = positive_size(key, value);
    else if (key == "run.export_dataset") cfg.export_dataset_file = parse_bool(key, value);
    else if (key == "data.n_base") cfg.data.n_base = positive_size(key, value);
    else if (key == "data.n_val") cfg.data.n_val = positive_size(key, value);
    else if (key == "data.n_novel") cfg.data.n_novel = positive_size(key, value);
    else if (key == "data.per_class") cfg.data.per_class = positive_size(key, value);
    else if (key == "data.dim") cfg.data.dim = positive_size(key, value);
    else if (key == "data.cluster_spread") cfg.data.cluster_spread = real_value(key, value);
    else if (key == "data.subspace_rank") cfg.data.subspace_rank = positive_size(key, value);
    else if (key == "data.offset_scale") cfg.data.offset_scale = real_value(key, value);
    else if (key == "data.shift.enabled") cfg.data.shift.enabled = parse_bool(key, value);
    else if (key == "data.shift.rotate") cfg.data.shift.rotate = real_value(key, value);
    else if (key == "data.shift.scale") cfg.data.shift.scale = real_value(key, value);
    else if (key == "data.shift.translate") cfg.data.shift.translate = real_value(key, value);
    else if (key == "data.shift.noise") cfg.data.shift.noise = real_value(key, value);
    else if (key == "data.shift.validation")
        cfg.data.shift.include_validation = parse_bool(key, value);
    else if (key == "net.layers") cfg.layers = value;
    else if (key == "net.head") {
        try {
            cfg.head = parse_head_kind(value);
        } catch (const std::exception&) {
            throw ConfigError("net.head must be cosine or prototype, got '" + value + "'");
        }
    } else if (key == "net.cosine_scale") cfg.cosine_scale = real_value(key, value);
    else if (key == "pretrain.epochs") {
        try {
            cfg.pretrain_epochs = parse_size(value);
        } catch (const std::exception&) {
            throw ConfigError("pretrain.epochs must be a non-negative integer, got '" +
                              value + "'");
        }
    } else if (key == "pretrain.batch") cfg.pretrain_batch = positive_size(key, value);
    else if (key == "pretrain.adam_lr") cfg.pretrain_adam_lr = real_value(key, value);
    else if (key == "pretrain.corrupt_scale") cfg.corrupt_scale = real_value(key, value);
    else if (key == "zoo.rates") {
        try {
            cfg.zoo = parse_zoo(value);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("zoo.rates: ") + e.what());
        }
    } else if (key == "episode.n_way") cfg.n_way = positive_size(key, value);
    else if (key == "episode.k_shot") cfg.k_shot = positive_size(key, value);
    else if (key == "episode.n_query") cfg.n_query = positive_size(key, value);
    else if (key == "finetune.iterations") {
        try {
            cfg.budget.iterations = parse_size(value);
        } catch (const std::exception&) {
            throw ConfigError("finetune.iterations must be a non-negative integer, got '" +
                              value + "'");
        }
    } else if (key == "finetune.head_lr") cfg.budget.head_lr = real_value(key, value);
    else if (key == "search.population") cfg.search_population = positive_size(key, value);
    else if (key == "search.iterations") cfg.search_iterations = positive_size(key, value);
    else if (key == "search.random") cfg.search_random = positive_size(key, value);
    else if (key == "search.mutation") cfg.search_mutation = positive_size(key, value);
    else if (key == "search.crossover") cfg.search_crossover = positive_size(key, value);
    else if (key == "search.mutation_prob")
        cfg.search_mutation_prob = real_value(key, value);
    else if (key == "search.val_episodes")
        cfg.search_val_episodes = positive_size(key, value);
    else if (key == "eval.episodes") cfg.eval_episodes = positive_size(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

void validate(const RunConfig& cfg) {
    if (cfg.head != HeadKind::Cosine && cfg.head != HeadKind::Prototype)
        throw ConfigError("net.head must be cosine or prototype");
    if (cfg.cosine_scale <= 0.0) throw ConfigError("net.cosine_scale must be positive");
    if (cfg.pretrain_adam_lr <= 0.0) throw ConfigError("pretrain.adam_lr must be positive");
    if (cfg.corrupt_scale < 0.0)
        throw ConfigError("pretrain.corrupt_scale must be non-negative");
    if (cfg.budget.head_lr < 0.0) throw ConfigError("finetune.head_lr must be non-negative");
    if (!(cfg.search_mutation_prob > 0.0) || cfg.search_mutation_prob > 1.0)
        throw ConfigError("search.mutation_prob must be in (0, 1]");
    if (cfg.search_random < cfg.search_population)
        throw ConfigError("search.random must be at least search.population");
    if (cfg.search_population < 2) throw ConfigError("search.population must be at least 2");
    if (cfg.data.subspace_rank > cfg.data.dim)
        throw ConfigError("data.subspace_rank must not exceed data.dim");
    if (cfg.data.cluster_spread < 0.0)
        throw ConfigError("data.cluster_spread must be non-negative");
    if (cfg.data.per_class < cfg.k_shot + cfg.n_query)
        throw ConfigError("data.per_class must be at least episode.k_shot + episode.n_query");
    std::vector<LayerSpec> specs;
    try {
        specs = cfg.layer_specs();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("net.layers: ") + e.what());
    }
    if (Tensor::count(specs.front().in_shape) != cfg.data.dim)
        throw ConfigError("net.layers input size " +
                          std::to_string(Tensor::count(specs.front().in_shape)) +
                          " does not match data.dim " + std::to_string(cfg.data.dim));
    std::size_t L = 0;
    for (const LayerSpec& s : specs) L += s.parameterized();
    if (L == 0) throw ConfigError("net.layers needs at least one parameterized layer");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, key, value;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        bool has_kv;
        try {
            has_kv = parse_kv_line(line, key, value);
        } catch (const std::exception& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!has_kv) continue;
        apply_key(cfg, key, value);
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return parse_config_text(text);
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "run.seed = " << cfg.seed << "\n";
    os << "run.out_dir = " << cfg.out_dir << "\n";
    os << "run.workers = " << cfg.workers << "\n";
    os << "run.export_dataset = " << (cfg.export_dataset_file ? "true" : "false") << "\n";
    os << "data.n_base = " << cfg.data.n_base << "\n";
    os << "data.n_val = " << cfg.data.n_val << "\n";
    os << "data.n_novel = " << cfg.data.n_novel << "\n";
    os << "data.per_class = " << cfg.data.per_class << "\n";
    os << "data.dim = " << cfg.data.dim << "\n";
    os << "data.cluster_spread = " << dstr(cfg.data.cluster_spread) << "\n";
    os << "data.subspace_rank = " << cfg.data.subspace_rank << "\n";
    os << "data.offset_scale = " << dstr(cfg.data.offset_scale) << "\n";
    os << "data.shift.enabled = " << (cfg.data.shift.enabled ? "true" : "false") << "\n";
    os << "data.shift.rotate = " << dstr(cfg.data.shift.rotate) << "\n";
    os << "data.shift.scale = " << dstr(cfg.data.shift.scale) << "\n";
    os << "data.shift.translate = " << dstr(cfg.data.shift.translate) << "\n";
    os << "data.shift.noise = " << dstr(cfg.data.shift.noise) << "\n";
    os << "data.shift.validation = "
       << (cfg.data.shift.include_validation ? "true" : "false") << "\n";
    os << "net.layers = " << cfg.layers << "\n";
    os << "net.head = " << to_string(cfg.head) << "\n";
    os << "net.cosine_scale = " << dstr(cfg.cosine_scale) << "\n";
    os << "pretrain.epochs = " << cfg.pretrain_epochs << "\n";
    os << "pretrain.batch = " << cfg.pretrain_batch << "\n";
    os << "pretrain.adam_lr = " << dstr(cfg.pretrain_adam_lr) << "\n";
    os << "pretrain.corrupt_scale = " << dstr(cfg.corrupt_scale) << "\n";
    os << "zoo.rates = " << format_zoo(cfg.zoo) << "\n";
    os << "episode.n_way = " << cfg.n_way << "\n";
    os << "episode.k_shot = " << cfg.k_shot << "\n";
    os << "episode.n_query = " << cfg.n_query << "\n";
    os << "finetune.iterations = " << cfg.budget.iterations << "\n";
    os << "finetune.head_lr = " << dstr(cfg.budget.head_lr) << "\n";
    os << "search.population = " << cfg.search_population << "\n";
    os << "search.iterations = " << cfg.search_iterations << "\n";
    os << "search.random = " << cfg.search_random << "\n";
    os << "search.mutation = " << cfg.search_mutation << "\n";
    os << "search.crossover = " << cfg.search_crossover << "\n";
    os << "search.mutation_prob = " << dstr(cfg.search_mutation_prob) << "\n";
    os << "search.val_episodes = " << cfg.search_val_episodes << "\n";
    os << "eval.episodes = " << cfg.eval_episodes << "\n";
    return os.str();
}

}  // namespace ptransfer
