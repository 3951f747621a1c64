#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ptransfer/commands.hpp"

namespace {

struct RawOptions {
    std::string config, checkpoint, scheme, out;
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    bool has_seed = false, has_workers = false, has_out = false;
};

void add_common_flags(CLI::App* cmd, RawOptions& raw) {
    cmd->add_option("--config", raw.config, "run configuration file");
    cmd->add_option("--seed", raw.seed, "master seed, overrides run.seed")
        ->each([&raw](const std::string&) { raw.has_seed = true; });
    cmd->add_option("--workers", raw.workers, "parallel fitness/eval workers")
        ->each([&raw](const std::string&) { raw.has_workers = true; });
    cmd->add_option("--out", raw.out, "output root, overrides run.out_dir")
        ->each([&raw](const std::string&) { raw.has_out = true; });
}

ptransfer::CmdOptions to_cmd_options(const RawOptions& raw) {
    ptransfer::CmdOptions opts;
    opts.config_path = raw.config;
    opts.checkpoint_path = raw.checkpoint;
    opts.scheme_arg = raw.scheme;
    if (raw.has_seed) opts.seed_override = raw.seed;
    if (raw.has_workers) opts.workers_override = raw.workers;
    if (raw.has_out) opts.out_override = raw.out;
    return opts;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise fine-tuning scheme search for few-shot transfer"};
    app.require_subcommand(1);

    RawOptions raw;
    CLI::App* pretrain = app.add_subcommand(
        "pretrain", "train the base feature extractor and write a checkpoint");
    add_common_flags(pretrain, raw);

    CLI::App* search = app.add_subcommand(
        "search", "evolutionary search for the best fine-tuning scheme");
    add_common_flags(search, raw);
    search->add_option("--checkpoint", raw.checkpoint, "base checkpoint file");

    CLI::App* evaluate = app.add_subcommand(
        "evaluate", "episodic evaluation of a scheme on the novel split");
    add_common_flags(evaluate, raw);
    evaluate->add_option("--checkpoint", raw.checkpoint, "base checkpoint file");
    evaluate->add_option("--scheme", raw.scheme,
                         "scheme file, or one of: fixed, uniform, manual");

    CLI::App* report = app.add_subcommand(
        "report", "comparison table and convergence series for a run directory");
    add_common_flags(report, raw);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    std::string name;
    if (pretrain->parsed()) name = "pretrain";
    else if (search->parsed()) name = "search";
    else if (evaluate->parsed()) name = "evaluate";
    else if (report->parsed()) name = "report";

    return ptransfer::run_command(name, to_cmd_options(raw), std::cout, std::cerr);
}
