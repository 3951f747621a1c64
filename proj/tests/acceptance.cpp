// Acceptance gate: one pass/fail line per criterion, exit code = number of
// failed criteria. Library-level criteria run in process; pipeline criteria
// drive the installed CLI binary (PTRANSFER_BIN) through temp run roots.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptransfer/checkpoint.hpp"
#include "ptransfer/config.hpp"
#include "ptransfer/dataset.hpp"
#include "ptransfer/evo.hpp"
#include "ptransfer/finetune.hpp"
#include "ptransfer/network.hpp"
#include "ptransfer/report.hpp"
#include "ptransfer/rng.hpp"
#include "ptransfer/scheme.hpp"
#include "ptransfer/tensor.hpp"

using namespace ptransfer;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_s(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt_s(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", s);
    return buf;
}

struct CriterionResult {
    bool pass = false;
    std::string detail;
};

std::string g_root;     // temp run root shared by the pipeline criteria
std::string g_cli_log;  // combined stdout/stderr of every CLI call

void run_tool(const std::string& args) {
    const std::string cmd =
        std::string(PTRANSFER_BIN) + " " + args + " >> " + g_cli_log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    const int code = rc == -1 ? -1 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : -2);
    if (code != 0)
        throw std::runtime_error("command failed (exit " + std::to_string(code) +
                                 "): " + args);
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path);
}

// ---- search landscapes ----------------------------------------------------

LrZoo zoo_of(std::size_t m) {
    std::vector<double> rates(m);
    for (std::size_t i = 0; i < m; ++i) rates[i] = 0.01 * static_cast<double>(i);
    return make_zoo(std::move(rates));
}

FitnessFn hash_landscape(std::size_t m, std::uint64_t salt) {
    return [m, salt](const SchemeVector& s) {
        std::uint64_t x = splitmix64(salt + 0x243F6A8885A308D3ULL);
        for (std::size_t e : s.entries)
            x = splitmix64(x * static_cast<std::uint64_t>(m) + e + 1);
        return static_cast<double>(x >> 11) * 0x1.0p-53;
    };
}

FitnessFn tie_landscape(std::uint64_t salt) {
    return [salt](const SchemeVector& s) {
        std::size_t sum = salt % 2;
        for (std::size_t e : s.entries) sum += e;
        return static_cast<double>(sum % 3);
    };
}

struct TraceRecord {
    SearchTrace trace;
    std::size_t expected_evaluations = 0;
    std::string origin;
};

// ---- finite-difference machinery (central differences, all slots) ---------

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double span = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = span * (2.0 * rng.uniform01() - 1.0);
    return t;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t n_classes, Rng& rng) {
    std::vector<std::size_t> out(n);
    for (auto& l : out) l = rng.uniform_below(n_classes);
    return out;
}

std::vector<double*> parameter_slots(Network& net) {
    std::vector<double*> slots;
    for (auto& lp : net.params) {
        for (auto& v : lp.weight.data) slots.push_back(&v);
        for (auto& v : lp.bias.data) slots.push_back(&v);
    }
    if (auto* s = std::get_if<SoftmaxHead>(&net.head)) {
        for (auto& v : s->weight.data) slots.push_back(&v);
        for (auto& v : s->bias.data) slots.push_back(&v);
    } else if (auto* c = std::get_if<CosineHead>(&net.head)) {
        for (auto& v : c->weights.data) slots.push_back(&v);
    }
    return slots;
}

std::vector<double> analytic_flat(const Network& net, const Gradients& g) {
    std::vector<double> flat;
    for (const auto& lp : g.layers) {
        flat.insert(flat.end(), lp.weight.data.begin(), lp.weight.data.end());
        flat.insert(flat.end(), lp.bias.data.begin(), lp.bias.data.end());
    }
    if (head_kind(net.head) == HeadKind::Softmax) {
        flat.insert(flat.end(), g.head_weight.data.begin(), g.head_weight.data.end());
        flat.insert(flat.end(), g.head_bias.data.begin(), g.head_bias.data.end());
    } else if (head_kind(net.head) == HeadKind::Cosine) {
        flat.insert(flat.end(), g.head_weight.data.begin(), g.head_weight.data.end());
    }
    return flat;
}

bool fd_close(double analytic, double numeric) {
    const double diff = std::fabs(analytic - numeric);
    const double denom = std::max(std::fabs(analytic), std::fabs(numeric));
    if (denom < 1e-7) return diff < 1e-7;
    return diff / denom <= 1e-4;
}

// Checks every parameter slot; returns the number of slots outside tolerance.
// Central differences carry step artifacts of their own: a small step loses
// digits to cancellation on near-zero gradients, a large step can straddle a
// ReLU kink. A genuine gradient bug disagrees at every step size, so a slot
// counts as bad only when both steps reject it.
std::size_t fd_bad_slots(Network net, const Tensor& batch,
                         const std::vector<std::size_t>& labels, double& worst) {
    const auto [loss, grads] = loss_and_gradients(net, batch, labels);
    if (!std::isfinite(loss)) return 1;
    const std::vector<double> analytic = analytic_flat(net, grads);
    std::vector<double*> slots = parameter_slots(net);
    if (analytic.size() != slots.size()) return slots.size() + 1;

    auto central = [&](std::size_t i, double h) {
        const double saved = *slots[i];
        *slots[i] = saved + h;
        const double up = loss_and_gradients(net, batch, labels).first;
        *slots[i] = saved - h;
        const double down = loss_and_gradients(net, batch, labels).first;
        *slots[i] = saved;
        return (up - down) / (2.0 * h);
    };

    std::size_t bad = 0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        double numeric = central(i, 1e-5);
        if (!fd_close(analytic[i], numeric)) {
            const double retry = central(i, 1e-4);
            if (fd_close(analytic[i], retry)) numeric = retry;
        }
        if (!fd_close(analytic[i], numeric)) ++bad;
        const double denom =
            std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-7});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return bad;
}

Network dense_net(const std::string& layers, std::uint64_t seed) {
    return make_network(resolve_layer_chain(parse_layer_list(layers)), seed);
}

// Cosine scoring is defined as 0 at zero-norm inputs, a discontinuity finite
// differences cannot straddle; FD base points must stay clear of it.
double min_cosine_norm(const Network& net, const Tensor& batch) {
    Tensor emb = embed(net, batch);
    const std::size_t d = emb.shape[1];
    double worst = std::numeric_limits<double>::infinity();
    auto row_norm = [d](const Tensor& t, std::size_t r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += t[r * d + j] * t[r * d + j];
        return std::sqrt(s);
    };
    for (std::size_t r = 0; r < emb.shape[0]; ++r)
        worst = std::min(worst, row_norm(emb, r));
    if (const auto* c = std::get_if<CosineHead>(&net.head))
        for (std::size_t r = 0; r < c->weights.shape[0]; ++r)
            worst = std::min(worst, row_norm(c->weights, r));
    return worst;
}

bool params_bit_identical(const LayerParams& a, const LayerParams& b) {
    return a.weight.data.size() == b.weight.data.size() &&
           a.bias.data.size() == b.bias.data.size() &&
           std::memcmp(a.weight.data.data(), b.weight.data.data(),
                       a.weight.data.size() * sizeof(double)) == 0 &&
           std::memcmp(a.bias.data.data(), b.bias.data.data(),
                       a.bias.data.size() * sizeof(double)) == 0;
}

bool grad_nonzero(const LayerParams& g) {
    for (double v : g.weight.data)
        if (v != 0.0) return true;
    for (double v : g.bias.data)
        if (v != 0.0) return true;
    return false;
}

// ---- pipeline configs ------------------------------------------------------

std::string bench_config(const std::string& head, int k_shot) {
    std::ostringstream ss;
    ss << "run.seed = 21\n"
       << "net.layers = dense:16:24,relu,dense:24:24,relu,dense:24:16\n"
       << "net.head = " << head << "\n"
       << "pretrain.epochs = 60\n"
       << "pretrain.corrupt_scale = 0.01\n"
       << "episode.n_way = 5\n"
       << "episode.k_shot = " << k_shot << "\n"
       << "episode.n_query = 15\n";
    return ss.str();
}

std::string shift_config(bool shifted) {
    std::string text =
        "run.seed = 0\n"
        "net.layers = dense:16:24,relu,dense:24:24,relu,dense:24:16\n"
        "net.head = cosine\n"
        "pretrain.epochs = 150\n"
        "episode.n_way = 5\n"
        "episode.k_shot = 1\n"
        "episode.n_query = 15\n";
    if (shifted)
        text +=
            "data.shift.enabled = true\n"
            "data.shift.validation = true\n"
            "data.shift.rotate = 1.4\n"
            "data.shift.scale = 1.6\n"
            "data.shift.translate = 6.0\n"
            "data.shift.noise = 0.1\n";
    return text;
}

// ---- criteria ---------------------------------------------------------------

CriterionResult criterion_oracle_equivalence(std::vector<TraceRecord>& traces) {
    const auto t0 = Clock::now();

    struct Space {
        std::size_t L, m, extra;
    };
    const std::vector<Space> spaces = {
        {2, 2, 0}, {3, 2, 0}, {3, 2, 7}, {2, 4, 0},
        {4, 2, 0}, {3, 4, 0}, {4, 4, 0}, {8, 2, 0},
    };

    std::size_t exact_runs = 0;
    for (const auto& sp : spaces) {
        const std::size_t space = scheme_space_size(sp.L, sp.m, 100000);
        for (std::uint64_t salt = 1; salt <= 3; ++salt) {
            const bool ties = salt == 3;
            const FitnessFn f =
                ties ? tie_landscape(salt) : hash_landscape(sp.m, salt);

            SearchConfig cfg;
            cfg.population = 4;
            cfg.iterations = 2;
            cfg.n_random = space + sp.extra;
            cfg.n_mutation = 8;
            cfg.n_crossover = 8;
            cfg.mutation_prob = 0.25;
            cfg.zoo = zoo_of(sp.m);
            cfg.scheme_length = sp.L;
            cfg.seed = 900 + salt;

            auto [best, trace] = search(cfg, f);
            traces.push_back({std::move(trace),
                              cfg.n_random + 2 + cfg.iterations * 16,
                              "exact L=" + std::to_string(sp.L)});
            const ScoredScheme oracle = exhaustive_oracle(sp.L, sp.m, f);
            if (!(best.scheme == oracle.scheme) || best.fitness != oracle.fitness)
                return {false, "full-coverage search disagreed with oracle at L=" +
                                   std::to_string(sp.L) + " m=" + std::to_string(sp.m) +
                                   " salt=" + std::to_string(salt)};
            ++exact_runs;
        }
    }

    // Budgeted search on the 4^4 space must land in the top 5% of all 256
    // fitness values, for 20 independent landscapes.
    std::size_t quantile_ok = 0;
    for (std::uint64_t t = 0; t < 20; ++t) {
        const FitnessFn f = hash_landscape(4, 100 + t);

        SearchConfig cfg;
        cfg.population = 20;
        cfg.iterations = 20;
        cfg.n_random = 50;
        cfg.n_mutation = 50;
        cfg.n_crossover = 50;
        cfg.mutation_prob = 0.1;
        cfg.zoo = zoo_of(4);
        cfg.scheme_length = 4;
        cfg.seed = 5000 + t;

        auto [best, trace] = search(cfg, f);
        traces.push_back({std::move(trace), 50 + 2 + 20 * 100, "quantile"});

        std::vector<double> all;
        all.reserve(256);
        SchemeVector v;
        v.entries.assign(4, 0);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b)
                for (std::size_t c = 0; c < 4; ++c)
                    for (std::size_t d = 0; d < 4; ++d) {
                        v.entries = {a, b, c, d};
                        all.push_back(f(v));
                    }
        std::sort(all.begin(), all.end(), std::greater<>());
        const double threshold = all[11];  // strictly inside the top 5% of 256
        if (best.fitness >= threshold) ++quantile_ok;
    }

    const double secs = elapsed_s(t0);
    const bool pass = quantile_ok == 20 && secs < 60.0;
    std::ostringstream d;
    d << "exact match " << exact_runs << "/" << exact_runs << " full-coverage runs, "
      << "top-5% quantile " << quantile_ok << "/20 budgeted landscapes, "
      << fmt_s(secs) << " (<60s)";
    return {pass, d.str()};
}

CriterionResult criterion_gradient_exactness() {
    const auto t0 = Clock::now();
    std::ostringstream d;
    bool pass = true;

    struct Family {
        std::string name;
        std::function<std::size_t(std::uint64_t, double&)> check;  // bad slots
    };

    auto softmax_family = [](const std::string& layers,
                             std::vector<std::size_t> batch_shape,
                             std::size_t classes) {
        return [layers, batch_shape, classes](std::uint64_t seed, double& worst) {
            Rng rng(seed);
            Network net = dense_net(layers, seed);
            attach_softmax_head(net, classes, seed + 1000);
            const Tensor batch = random_tensor(batch_shape, rng);
            const std::size_t n = batch_shape[0];
            return fd_bad_slots(net, batch, random_labels(n, classes, rng), worst);
        };
    };

    const std::vector<Family> families = {
        {"dense", softmax_family("dense:6:4", {5, 6}, 3)},
        {"relu", softmax_family("dense:5:8,relu,dense:8:4", {5, 5}, 3)},
        {"conv2d", softmax_family("conv:1:5:5:2:3:3,flatten", {4, 1, 5, 5}, 3)},
        {"cosine",
         [](std::uint64_t seed, double& worst) -> std::size_t {
             Rng rng(seed);
             Network net = dense_net("dense:6:5,relu,dense:5:4", seed);
             net.head = CosineHead{random_tensor({3, 4}, rng, 0.9), 10.0};
             const Tensor batch = random_tensor({5, 6}, rng);
             if (min_cosine_norm(net, batch) < 1e-3) return SIZE_MAX;  // skip
             return fd_bad_slots(net, batch, random_labels(5, 3, rng), worst);
         }},
        {"prototype",
         [](std::uint64_t seed, double& worst) -> std::size_t {
             Rng rng(seed);
             Network net = dense_net("dense:6:5,relu,dense:5:4", seed);
             net.head = PrototypeHead{Tensor({3, 4})};
             const Tensor batch = random_tensor({6, 6}, rng);
             std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2};
             rng.shuffle(labels);
             return fd_bad_slots(net, batch, labels, worst);
         }},
        {"composed",
         softmax_family("conv:1:6:6:2:3:3,relu,maxpool,flatten,dense:8:6",
                        {4, 1, 6, 6}, 3)},
    };

    for (const auto& fam : families) {
        std::size_t checked = 0, bad = 0;
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 80 && checked < 20; ++seed) {
            const std::size_t r = fam.check(seed, worst);
            if (r == SIZE_MAX) continue;  // degenerate base point, skipped
            ++checked;
            bad += r;
        }
        if (checked < 20 || bad != 0) pass = false;
        d << fam.name << " " << checked << "/20";
        if (bad) d << " (" << bad << " bad slots)";
        d << " ";
    }

    const double secs = elapsed_s(t0);
    if (secs >= 60.0) pass = false;
    d << fmt_s(secs) << " (<60s), rel err <= 1e-4";
    return {pass, d.str()};
}

CriterionResult criterion_freeze_invariant() {
    DatasetParams p;
    p.n_base = 8;
    p.n_val = 4;
    p.n_novel = 6;
    p.per_class = 16;
    p.dim = 8;
    p.cluster_spread = 0.2;
    p.subspace_rank = 3;
    const LabeledDataset ds = generate_dataset(7, p);

    const Network base =
        dense_net("dense:8:10,relu,dense:10:10,relu,dense:10:8", 11);
    const LrZoo zoo = make_zoo({0.0, 0.01, 0.1, 1.0});
    Rng rng(1234);

    std::size_t frozen_checked = 0, frozen_bad = 0;
    std::size_t active_checked = 0, active_bad = 0;
    for (int i = 0; i < 100; ++i) {
        const Episode ep = sample_episode(ds, Split::Validation, 3, 1, 5, rng);
        const SchemeVector scheme = random_scheme(3, 4, rng);
        const HeadKind head = i % 2 ? HeadKind::Prototype : HeadKind::Cosine;

        const Network tuned =
            finetune_network(base, scheme, zoo, ep, FinetuneBudget{3, 0.01}, head);
        const Network start =
            finetune_network(base, scheme, zoo, ep, FinetuneBudget{0, 0.01}, head);
        const auto [loss, g] =
            loss_and_gradients(start, ep.support_points, ep.support_labels);

        for (std::size_t l = 0; l < scheme.length(); ++l) {
            if (scheme.entries[l] == 0) {
                ++frozen_checked;
                if (!params_bit_identical(tuned.params[l], base.params[l]))
                    ++frozen_bad;
            } else if (grad_nonzero(g.layers[l])) {
                ++active_checked;
                if (params_bit_identical(tuned.params[l], base.params[l]))
                    ++active_bad;
            }
        }
    }

    const bool pass = frozen_bad == 0 && active_bad == 0 && frozen_checked > 0 &&
                      active_checked > 0;
    std::ostringstream d;
    d << "100 random schemes: " << frozen_checked << " frozen layers bit-identical ("
      << frozen_bad << " bad), " << active_checked
      << " active layers with nonzero gradient all changed (" << active_bad
      << " bad)";
    return {pass, d.str()};
}

CriterionResult criterion_baseline_dominance(const std::vector<TraceRecord>& traces) {
    if (traces.empty()) return {false, "no search traces collected"};
    std::size_t ok = 0;
    for (const auto& tr : traces) {
        bool has_fixed = false;
        double fixed_fitness = 0.0;
        for (const auto& e : tr.trace.evaluations)
            if (e.provenance == Provenance::Seeded && nonzero_count(e.scheme) == 0) {
                has_fixed = true;
                fixed_fitness = e.fitness;
            }
        if (has_fixed && tr.trace.best.fitness >= fixed_fitness) ++ok;
    }
    std::ostringstream d;
    d << "best fitness >= seeded all-frozen baseline in " << ok << "/"
      << traces.size() << " searches run this session";
    return {ok == traces.size(), d.str()};
}

struct ComboResult {
    std::string name;
    double fixed_mean = 0.0, fixed_hw = 0.0;
    double searched_mean = 0.0, searched_hw = 0.0;
    std::size_t episodes = 0;
    bool pass = false;
};

CriterionResult criterion_benchmark_gap(std::vector<TraceRecord>& traces,
                                        std::vector<ReportFile>& reports,
                                        std::vector<ComboResult>& combos) {
    const auto t0 = Clock::now();

    const std::string pre_cfg = g_root + "/bench_cos1.cfg";
    write_file(pre_cfg, bench_config("cosine", 1));
    run_tool("pretrain --config " + pre_cfg + " --out " + g_root + "/bench_pre");
    const std::string ck = g_root + "/bench_pre/pretrain/checkpoint.ptck";

    const std::vector<std::pair<std::string, int>> shapes = {
        {"cosine", 1}, {"prototype", 1}, {"cosine", 5}, {"prototype", 5}};

    bool pass = true;
    for (const auto& [head, k] : shapes) {
        const std::string tag = head.substr(0, 3) + std::to_string(k);
        const std::string cfg_path = g_root + "/bench_" + tag + ".cfg";
        write_file(cfg_path, bench_config(head, k));

        const std::string sroot = g_root + "/" + tag + "_search";
        run_tool("search --config " + cfg_path + " --checkpoint " + ck + " --out " +
                 sroot);
        const std::string scheme_path = sroot + "/search/scheme.txt";

        const std::string froot = g_root + "/" + tag + "_evalF";
        const std::string rroot = g_root + "/" + tag + "_evalS";
        run_tool("evaluate --config " + cfg_path + " --checkpoint " + ck +
                 " --scheme fixed --out " + froot);
        run_tool("evaluate --config " + cfg_path + " --checkpoint " + ck +
                 " --scheme " + scheme_path + " --out " + rroot);

        traces.push_back({parse_trace(read_bytes(sroot + "/search/trace.txt")),
                          50 + 2 + 20 * 100, "benchmark " + tag});
        const ReportFile rf_fixed =
            parse_report_file(read_bytes(froot + "/evaluate/report.evalreport"));
        const ReportFile rf_searched =
            parse_report_file(read_bytes(rroot + "/evaluate/report.evalreport"));
        reports.push_back(rf_fixed);
        reports.push_back(rf_searched);

        ComboResult cr;
        cr.name = std::to_string(5) + "w" + std::to_string(k) + "s-" + head;
        cr.fixed_mean = rf_fixed.report.mean_accuracy;
        cr.fixed_hw = rf_fixed.report.ci95_halfwidth;
        cr.searched_mean = rf_searched.report.mean_accuracy;
        cr.searched_hw = rf_searched.report.ci95_halfwidth;
        cr.episodes = rf_searched.report.n_episodes;
        cr.pass = cr.episodes == 600 && rf_fixed.report.n_episodes == 600 &&
                  cr.searched_mean - cr.fixed_mean >= cr.searched_hw + cr.fixed_hw;
        combos.push_back(cr);
        if (!cr.pass) pass = false;
    }

    const double secs = elapsed_s(t0);
    if (secs >= 600.0) pass = false;
    std::ostringstream d;
    for (const auto& c : combos) {
        d << c.name << " " << format_percent_ci(c.searched_mean, c.searched_hw)
          << " vs fixed " << format_percent_ci(c.fixed_mean, c.fixed_hw)
          << (c.pass ? " OK; " : " GAP TOO SMALL; ");
    }
    d << "600 episodes each, " << fmt_s(secs) << " (<600s)";
    return {pass, d.str()};
}

CriterionResult criterion_shift_pattern(std::vector<TraceRecord>& traces) {
    const auto t0 = Clock::now();
    const std::string off_cfg = g_root + "/shift_off.cfg";
    const std::string on_cfg = g_root + "/shift_on.cfg";
    write_file(off_cfg, shift_config(false));
    write_file(on_cfg, shift_config(true));

    std::size_t ok = 0;
    std::ostringstream per_seed;
    for (int seed = 101; seed <= 105; ++seed) {
        const std::string s = std::to_string(seed);
        run_tool("pretrain --config " + off_cfg + " --seed " + s + " --out " +
                 g_root + "/cd" + s);
        const std::string ck = g_root + "/cd" + s + "/pretrain/checkpoint.ptck";
        run_tool("search --config " + off_cfg + " --seed " + s + " --checkpoint " +
                 ck + " --out " + g_root + "/cd" + s + "_off");
        run_tool("search --config " + on_cfg + " --seed " + s + " --checkpoint " +
                 ck + " --out " + g_root + "/cd" + s + "_on");

        const SchemeVector off_scheme =
            read_scheme_file(g_root + "/cd" + s + "_off/search/scheme.txt").scheme;
        const SchemeVector on_scheme =
            read_scheme_file(g_root + "/cd" + s + "_on/search/scheme.txt").scheme;
        traces.push_back(
            {parse_trace(read_bytes(g_root + "/cd" + s + "_off/search/trace.txt")),
             50 + 2 + 20 * 100, "shift-off seed " + s});
        traces.push_back(
            {parse_trace(read_bytes(g_root + "/cd" + s + "_on/search/trace.txt")),
             50 + 2 + 20 * 100, "shift-on seed " + s});

        const std::size_t n_off = nonzero_count(off_scheme);
        const std::size_t n_on = nonzero_count(on_scheme);
        if (n_on >= n_off) ++ok;
        per_seed << s << ":" << n_off << "->" << n_on << " ";
    }

    std::ostringstream d;
    d << "nonzero entries with shift >= without in " << ok
      << "/5 seeds (need >=4): " << per_seed.str() << fmt_s(elapsed_s(t0));
    return {ok >= 4, d.str()};
}

CriterionResult criterion_ci_arithmetic(const std::vector<ReportFile>& reports) {
    if (reports.empty()) return {false, "no evaluation reports collected"};
    std::size_t ok = 0, total = 0;
    double worst = 0.0;
    for (const auto& rf : reports) {
        const auto& xs = rf.report.per_episode;
        const std::size_t n = xs.size();
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(n);
        double sq = 0.0;
        for (double x : xs) sq += (x - mean) * (x - mean);
        const double s = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
        const double hw = 1.96 * s / std::sqrt(static_cast<double>(n));
        const double diff = std::fabs(rf.report.ci95_halfwidth - hw);
        worst = std::max(worst, diff);
        ++total;
        if (diff <= 1e-12) ++ok;
    }

    // Closed-form spot check away from any pipeline output.
    const EvalReport synth = make_report(fixed_scheme(3), make_zoo({0.0, 0.1}), 9,
                                         {0.5, 1.0}, 0);
    const double expect = 1.96 * std::sqrt(0.125) / std::sqrt(2.0);
    const bool synth_ok = std::fabs(synth.ci95_halfwidth - expect) <= 1e-12;

    std::ostringstream d;
    d << "halfwidth == 1.96*s/sqrt(n) within 1e-12 on " << ok << "/" << total
      << " reports (worst diff " << worst << "), closed-form case "
      << (synth_ok ? "OK" : "BAD");
    return {ok == total && synth_ok, d.str()};
}

CriterionResult criterion_determinism() {
    const auto t0 = Clock::now();
    const std::string cfg_path = g_root + "/bench_cos1.cfg";  // written earlier

    auto run_pipeline = [&](const std::string& tag) {
        const std::string pre = g_root + "/det_" + tag + "_pre";
        run_tool("pretrain --config " + cfg_path + " --out " + pre);
        const std::string ck = pre + "/pretrain/checkpoint.ptck";
        const std::string sr = g_root + "/det_" + tag + "_search";
        run_tool("search --config " + cfg_path + " --checkpoint " + ck + " --out " +
                 sr);
        const std::string ev = g_root + "/det_" + tag + "_eval";
        run_tool("evaluate --config " + cfg_path + " --checkpoint " + ck +
                 " --scheme " + sr + "/search/scheme.txt --out " + ev);
        return std::array<std::string, 4>{
            read_bytes(ck), read_bytes(sr + "/search/trace.txt"),
            read_bytes(sr + "/search/scheme.txt"),
            read_bytes(ev + "/evaluate/report.evalreport")};
    };

    const auto a = run_pipeline("a");
    const auto b = run_pipeline("b");
    const char* names[] = {"checkpoint", "trace", "scheme", "report"};
    std::string bad;
    for (int i = 0; i < 4; ++i)
        if (a[i] != b[i]) bad += std::string(bad.empty() ? "" : ", ") + names[i];

    if (!bad.empty())
        return {false, "artifacts differ across identical executions: " + bad};
    std::ostringstream d;
    d << "checkpoint, trace, scheme, report byte-identical across two "
         "pretrain->search->evaluate executions, "
      << fmt_s(elapsed_s(t0));
    return {true, d.str()};
}

CriterionResult criterion_budget_accounting(const std::vector<TraceRecord>& traces) {
    if (traces.empty()) return {false, "no search traces collected"};
    std::size_t ok = 0;
    std::string bad;
    for (const auto& tr : traces) {
        if (tr.trace.total_evaluations() == tr.expected_evaluations)
            ++ok;
        else if (bad.empty())
            bad = tr.origin + " got " + std::to_string(tr.trace.total_evaluations()) +
                  " expected " + std::to_string(tr.expected_evaluations);
    }
    std::ostringstream d;
    d << "trace evaluation count == R + 2 + I*(M+C) in " << ok << "/" << traces.size()
      << " searches";
    if (!bad.empty()) d << " (first mismatch: " << bad << ")";
    return {ok == traces.size(), d.str()};
}

}  // namespace

int main() {
    const std::string stamp = std::to_string(::getpid());
    g_root = (fs::temp_directory_path() / ("ptransfer-acceptance-" + stamp)).string();
    fs::create_directories(g_root);
    g_cli_log = g_root + "/cli.log";

    std::vector<TraceRecord> traces;
    std::vector<ReportFile> reports;
    std::vector<ComboResult> combos;

    const char* names[9] = {
        "oracle equivalence",  "gradient exactness", "freeze invariant",
        "baseline dominance",  "benchmark gap",      "domain-shift pattern",
        "ci arithmetic",       "determinism",        "budget accounting",
    };
    CriterionResult results[9];

    auto guard = [&](int idx, auto&& fn) {
        try {
            results[idx] = fn();
        } catch (const std::exception& e) {
            results[idx] = {false, std::string("exception: ") + e.what()};
        }
    };

    guard(0, [&] { return criterion_oracle_equivalence(traces); });
    guard(1, [] { return criterion_gradient_exactness(); });
    guard(2, [] { return criterion_freeze_invariant(); });
    guard(4, [&] { return criterion_benchmark_gap(traces, reports, combos); });
    guard(5, [&] { return criterion_shift_pattern(traces); });
    guard(3, [&] { return criterion_baseline_dominance(traces); });
    guard(6, [&] { return criterion_ci_arithmetic(reports); });
    guard(7, [] { return criterion_determinism(); });
    guard(8, [&] { return criterion_budget_accounting(traces); });

    int failures = 0;
    for (int i = 0; i < 9; ++i) {
        if (!results[i].pass) ++failures;
        std::printf("%s  %d. %-20s  %s\n", results[i].pass ? "PASS" : "FAIL", i + 1,
                    names[i], results[i].detail.c_str());
    }
    std::printf("%d/9 acceptance criteria passed\n", 9 - failures);

    if (failures == 0) {
        std::error_code ec;
        fs::remove_all(g_root, ec);
    } else {
        std::printf("artifacts kept under %s\n", g_root.c_str());
    }
    return failures;
}
