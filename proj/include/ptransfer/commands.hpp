#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

namespace ptransfer {

struct CmdOptions {
    std::string config_path;
    std::string checkpoint_path;
    std::string scheme_arg;  // path, or one of: fixed, uniform, manual
    std::optional<std::uint64_t> seed_override;
    std::optional<std::size_t> workers_override;
    std::optional<std::string> out_override;
};

// Each command writes its outputs into a fresh run directory under the
// configured output root and returns 0. Configuration and usage problems
// throw ConfigError, runtime failures throw std::runtime_error; run_command
// maps those to exit codes 1 and 2.
int cmd_pretrain(const CmdOptions& opts, std::ostream& out);
int cmd_search(const CmdOptions& opts, std::ostream& out);
int cmd_evaluate(const CmdOptions& opts, std::ostream& out);
int cmd_report(const CmdOptions& opts, std::ostream& out);

int run_command(const std::string& name, const CmdOptions& opts, std::ostream& out,
                std::ostream& err);

// <base>/<name>, or <base>/<name>-2, -3, ... so reruns never overwrite.
std::string make_run_dir(const std::string& base, const std::string& name);

}  // namespace ptransfer
