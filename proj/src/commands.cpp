#include "ptransfer/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ptransfer/checkpoint.hpp"
#include "ptransfer/config.hpp"
#include "ptransfer/report.hpp"
#include "ptransfer/text.hpp"

namespace fs = std::filesystem;

namespace ptransfer {

namespace {

RunConfig load_with_overrides(const CmdOptions& opts) {
    if (opts.config_path.empty()) throw ConfigError("missing --config PATH");
    RunConfig cfg = load_config(opts.config_path);
    if (opts.seed_override) cfg.seed = *opts.seed_override;
    if (opts.workers_override) {
        if (*opts.workers_override == 0) throw ConfigError("--workers must be positive");
        cfg.workers = *opts.workers_override;
    }
    if (opts.out_override) cfg.out_dir = *opts.out_override;
    return cfg;
}

LoadedCheckpoint load_matching_checkpoint(const RunConfig& cfg, const CmdOptions& opts) {
    if (opts.checkpoint_path.empty()) throw ConfigError("missing --checkpoint PATH");
    LoadedCheckpoint lc = load_checkpoint(opts.checkpoint_path);
    const std::vector<LayerSpec> expect = cfg.layer_specs();
    std::string diffs;
    const std::size_t n = std::max(expect.size(), lc.net.layers.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::string a = i < expect.size() ? to_string(expect[i]) : "(none)";
        const std::string b = i < lc.net.layers.size() ? to_string(lc.net.layers[i]) : "(none)";
        if (a != b) diffs += "\n  layer " + std::to_string(i) + ": config " + a +
                             ", checkpoint " + b;
    }
    if (!diffs.empty())
        throw ConfigError("checkpoint layers do not match net.layers:" + diffs);
    return lc;
}

// Artifact bytes must depend only on the experiment definition, so output
// placement and thread-count knobs are normalized away before embedding.
std::string experiment_config_text(RunConfig cfg) {
    cfg.out_dir = "runs";
    cfg.workers = 1;
    cfg.export_dataset_file = false;
    return serialize_config(cfg);
}

void write_run_log(const std::string& dir, const std::string& command,
                   const RunConfig& cfg, const std::vector<std::string>& facts,
                   const std::string& extra = "") {
    std::ostringstream os;
    os << "command = " << command << "\n";
    for (const std::string& f : facts) os << f << "\n";
    os << "config.begin\n" << serialize_config(cfg) << "config.end\n";
    if (!extra.empty()) os << extra;
    write_text_file(dir + "/run.log", os.str());
}

struct SchemeChoice {
    SchemeVector scheme;
    std::string label;
};

SchemeChoice resolve_scheme_arg(const std::string& arg, std::size_t L, const LrZoo& zoo) {
    if (arg.empty()) throw ConfigError("missing --scheme (path, fixed, uniform, or manual)");
    if (arg == "fixed") return {fixed_scheme(L), "Fixed"};
    if (arg == "uniform") return {uniform_scheme(L, zoo), "Uniform"};
    if (arg == "manual") return {manual_scheme(L, zoo), "Manual"};
    SchemeFile f;
    try {
        f = read_scheme_file(arg);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("--scheme: ") + e.what());
    }
    if (!(f.zoo == zoo))
        throw ConfigError("scheme file zoo (" + format_zoo(f.zoo) +
                          ") differs from zoo.rates (" + format_zoo(zoo) + ")");
    if (f.scheme.length() != L)
        throw ConfigError("scheme file has " + std::to_string(f.scheme.length()) +
                          " entries, network has " + std::to_string(L) + " layers");
    return {f.scheme, f.label.empty() ? "Scheme" : f.label};
}

}  // namespace

std::string make_run_dir(const std::string& base, const std::string& name) {
    fs::create_directories(base);
    fs::path candidate = fs::path(base) / name;
    for (std::size_t i = 2; fs::exists(candidate); ++i)
        candidate = fs::path(base) / (name + "-" + std::to_string(i));
    fs::create_directory(candidate);
    return candidate.string();
}

int cmd_pretrain(const CmdOptions& opts, std::ostream& out) {
    const RunConfig cfg = load_with_overrides(opts);
    const LabeledDataset ds = generate_dataset(cfg.stage_seed(Stage::Data), cfg.data);
    const std::string ds_hash = dataset_hash(ds);

    Network net = make_network(cfg.layer_specs(), cfg.stage_seed(Stage::NetInit));
    attach_softmax_head(net, cfg.data.n_base, cfg.stage_seed(Stage::HeadInit));
    std::ostringstream train_log;
    net = pretrain_base(std::move(net), ds, cfg.pretrain_epochs, cfg.pretrain_batch,
                        cfg.pretrain_adam_lr, cfg.stage_seed(Stage::Pretrain), &train_log);
    if (cfg.corrupt_scale > 0.0)
        corrupt_layer(net, net.scheme_length() - 1, cfg.corrupt_scale,
                      cfg.stage_seed(Stage::Corrupt));

    const std::string dir = make_run_dir(cfg.out_dir, "pretrain");
    const std::string ck_path = dir + "/checkpoint.ptck";
    save_checkpoint(ck_path, net, experiment_config_text(cfg));
    const std::string ck_hash = file_blob_sha1(ck_path);
    if (cfg.export_dataset_file) write_text_file(dir + "/dataset.txt", export_dataset(ds));
    write_run_log(dir, "pretrain", cfg,
                  {"dataset_hash = " + ds_hash, "checkpoint_hash = " + ck_hash},
                  train_log.str());

    out << "run dir: " << dir << "\n";
    out << "checkpoint: " << ck_path << "\n";
    out << "checkpoint_hash: " << ck_hash << "\n";
    out << "dataset_hash: " << ds_hash << "\n";
    return 0;
}

int cmd_search(const CmdOptions& opts, std::ostream& out) {
    const RunConfig cfg = load_with_overrides(opts);
    const LoadedCheckpoint lc = load_matching_checkpoint(cfg, opts);
    const std::string ck_hash = file_blob_sha1(opts.checkpoint_path);
    const LabeledDataset ds = generate_dataset(cfg.stage_seed(Stage::Data), cfg.data);
    const std::string ds_hash = dataset_hash(ds);

    const std::size_t L = lc.net.scheme_length();
    const SearchConfig sc = cfg.search_config(L);

    // The validation episode set is sampled once and reused for every fitness
    // call, so fitness is a deterministic function of the scheme.
    const std::uint64_t episode_seed = derive_seed(sc.seed, 1);
    std::vector<Episode> episodes;
    episodes.reserve(sc.n_val_episodes);
    for (std::size_t i = 0; i < sc.n_val_episodes; ++i) {
        Rng rng(episode_seed ^ static_cast<std::uint64_t>(i));
        episodes.push_back(
            sample_episode(ds, Split::Validation, cfg.n_way, cfg.k_shot, cfg.n_query, rng));
    }
    const FitnessFn fitness = [&](const SchemeVector& s) {
        std::vector<double> acc(episodes.size());
        for (std::size_t i = 0; i < episodes.size(); ++i)
            acc[i] = mini_finetune(lc.net, s, cfg.zoo, episodes[i], cfg.budget, cfg.head,
                                   cfg.cosine_scale)
                         .accuracy;
        return pairwise_mean(acc);
    };

    const std::string dir = make_run_dir(cfg.out_dir, "search");
    std::ofstream trace_file(dir + "/trace.txt", std::ios::binary);
    std::ofstream timing_file(dir + "/timings.txt", std::ios::binary);
    trace_file << "trace-v1\n";
    auto last = std::chrono::steady_clock::now();
    const EvalCallback on_eval = [&](const ScoredScheme& s) {
        trace_file << "eval " << format_scored(s) << "\n";
        trace_file.flush();
        const auto now = std::chrono::steady_clock::now();
        timing_file << "order=" << s.order << " wall_us="
                    << std::chrono::duration_cast<std::chrono::microseconds>(now - last)
                           .count()
                    << "\n";
        last = now;
    };

    auto [best, trace] = search(sc, fitness, nullptr, on_eval);
    for (const GenerationRecord& g : trace.generations) {
        trace_file << "gen index=" << g.generation << " best=" << dstr(g.best_fitness)
                   << " evals=" << g.evaluations << " population=";
        for (std::size_t i = 0; i < g.population_fitness.size(); ++i)
            trace_file << (i ? "," : "") << dstr(g.population_fitness[i]);
        trace_file << "\n";
    }
    trace_file << "best " << format_scored(trace.best) << "\n";
    trace_file.close();
    timing_file.close();

    const std::size_t expected_budget =
        sc.n_random + 2 + sc.iterations * (sc.n_mutation + sc.n_crossover);
    if (trace.total_evaluations() != expected_budget)
        throw std::runtime_error("evaluation budget mismatch: " +
                                 std::to_string(trace.total_evaluations()) + " vs " +
                                 std::to_string(expected_budget));

    write_scheme_file(dir + "/scheme.txt", {"Searched", cfg.zoo, best.scheme});
    const std::string grid =
        render_scheme_grid(scheme_layer_names(lc.net.layers), best.scheme, cfg.zoo);
    write_text_file(dir + "/grid.txt", grid);
    write_run_log(dir, "search", cfg,
                  {"dataset_hash = " + ds_hash, "checkpoint_hash = " + ck_hash,
                   "best_scheme = " + format_scheme_entries(best.scheme),
                   "best_fitness = " + dstr(best.fitness),
                   "evaluations = " + std::to_string(trace.total_evaluations())});

    out << "run dir: " << dir << "\n";
    out << "best scheme: " << format_scheme_entries(best.scheme) << "\n";
    out << "validation fitness: " << dstr(best.fitness) << "\n";
    out << grid;
    return 0;
}

int cmd_evaluate(const CmdOptions& opts, std::ostream& out) {
    const RunConfig cfg = load_with_overrides(opts);
    const LoadedCheckpoint lc = load_matching_checkpoint(cfg, opts);
    const std::string ck_hash = file_blob_sha1(opts.checkpoint_path);
    const LabeledDataset ds = generate_dataset(cfg.stage_seed(Stage::Data), cfg.data);
    const std::string ds_hash = dataset_hash(ds);

    const SchemeChoice choice =
        resolve_scheme_arg(opts.scheme_arg, lc.net.scheme_length(), cfg.zoo);
    const EvalReport report = evaluate_scheme(
        lc.net, choice.scheme, cfg.zoo, ds, Split::Novel, cfg.n_way, cfg.k_shot,
        cfg.n_query, cfg.eval_episodes, cfg.budget, cfg.head, cfg.stage_seed(Stage::Eval),
        cfg.workers, cfg.cosine_scale);

    const std::string dir = make_run_dir(cfg.out_dir, "evaluate");
    ReportFile rf;
    rf.label = choice.label;
    rf.n_way = cfg.n_way;
    rf.k_shot = cfg.k_shot;
    rf.checkpoint_hash = ck_hash;
    rf.dataset_hash = ds_hash;
    rf.config_text = experiment_config_text(cfg);
    rf.report = report;
    write_text_file(dir + "/report.evalreport", format_report_file(rf));
    write_text_file(dir + "/records.log", eval_record_line(report) + "\n");
    write_run_log(dir, "evaluate", cfg,
                  {"dataset_hash = " + ds_hash, "checkpoint_hash = " + ck_hash,
                   "label = " + choice.label,
                   "scheme = " + format_scheme_entries(choice.scheme)});

    out << "run dir: " << dir << "\n";
    out << choice.label << " " << cfg.n_way << "-way " << cfg.k_shot << "-shot: "
        << format_percent_ci(report.mean_accuracy, report.ci95_halfwidth) << "\n";
    return 0;
}

int cmd_report(const CmdOptions& opts, std::ostream& out) {
    std::string root;
    if (opts.out_override) root = *opts.out_override;
    else if (!opts.config_path.empty()) root = load_with_overrides(opts).out_dir;
    else throw ConfigError("report needs --out DIR (or --config with run.out_dir)");
    if (!fs::is_directory(root)) throw ConfigError("'" + root + "' is not a directory");

    std::vector<std::string> report_paths, trace_paths;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().extension() == ".evalreport")
            report_paths.push_back(entry.path().string());
        else if (entry.path().filename() == "trace.txt")
            trace_paths.push_back(entry.path().string());
    }
    std::sort(report_paths.begin(), report_paths.end());
    std::sort(trace_paths.begin(), trace_paths.end());
    if (report_paths.empty())
        throw ConfigError("no .evalreport files under '" + root + "'");

    std::vector<ReportFile> reports;
    for (const std::string& p : report_paths) {
        try {
            reports.push_back(parse_report_file(read_text_file(p)));
        } catch (const std::exception& e) {
            throw std::runtime_error(p + ": " + e.what());
        }
    }
    for (std::size_t i = 1; i < reports.size(); ++i)
        if (reports[i].dataset_hash != reports[0].dataset_hash)
            throw ConfigError("refusing to compare reports over different datasets: " +
                              report_paths[0] + " has " + reports[0].dataset_hash + ", " +
                              report_paths[i] + " has " + reports[i].dataset_hash);

    std::vector<ResultRow> rows;
    for (const ReportFile& r : reports)
        rows.push_back({r.label, r.n_way, r.k_shot, r.report.mean_accuracy,
                        r.report.ci95_halfwidth});
    const std::string table = comparison_table(rows);

    std::string csv;
    for (const std::string& p : trace_paths) {
        const SearchTrace t = parse_trace(read_text_file(p));
        if (t.generations.empty()) continue;
        csv += convergence_csv(t, fs::path(p).parent_path().filename().string());
    }

    const std::string dir = make_run_dir(root, "report");
    write_text_file(dir + "/table.txt", table);
    if (!csv.empty()) write_text_file(dir + "/convergence.csv", csv);

    out << table;
    if (!csv.empty()) out << "\n" << csv;
    return 0;
}

int run_command(const std::string& name, const CmdOptions& opts, std::ostream& out,
                std::ostream& err) {
    try {
        if (name == "pretrain") return cmd_pretrain(opts, out);
        if (name == "search") return cmd_search(opts, out);
        if (name == "evaluate") return cmd_evaluate(opts, out);
        if (name == "report") return cmd_report(opts, out);
        throw ConfigError("unknown command '" + name + "'");
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace ptransfer
