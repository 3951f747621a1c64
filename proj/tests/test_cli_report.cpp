#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ptransfer/checkpoint.hpp"
#include "ptransfer/commands.hpp"
#include "ptransfer/config.hpp"
#include "ptransfer/report.hpp"

using namespace ptransfer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ptcli-" + std::to_string(std::rand()) + "-" +
                std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& rel = "") const {
        return rel.empty() ? path.string() : (path / rel).string();
    }
};

// minimal config that keeps every pipeline stage under a second
std::string fast_config_text(const std::string& out_dir) {
    std::ostringstream os;
    os << "run.seed = 11\n"
       << "run.out_dir = " << out_dir << "\n"
       << "data.n_base = 8\n"
       << "data.n_val = 4\n"
       << "data.n_novel = 6\n"
       << "data.per_class = 18\n"
       << "data.dim = 8\n"
       << "data.subspace_rank = 3\n"
       << "net.layers = dense:8:10,relu,dense:10:8\n"
       << "pretrain.epochs = 3\n"
       << "episode.n_way = 3\n"
       << "episode.k_shot = 1\n"
       << "episode.n_query = 2\n"
       << "finetune.iterations = 4\n"
       << "search.population = 3\n"
       << "search.iterations = 2\n"
       << "search.random = 5\n"
       << "search.mutation = 3\n"
       << "search.crossover = 3\n"
       << "search.val_episodes = 2\n"
       << "eval.episodes = 6\n";
    return os.str();
}

std::string write_config(const TempDir& tmp, const std::string& name,
                         const std::string& text) {
    const std::string p = tmp.str(name);
    std::ofstream(p) << text;
    return p;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
    const std::string out_file =
        fs::temp_directory_path() / ("ptcli-out-" + std::to_string(std::rand()));
    const std::string cmd =
        std::string(PTRANSFER_BIN) + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(out_file);
        std::stringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    fs::remove(out_file);
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("scheme grid renders and parses back exactly for every scheme") {
    LrZoo zoo = make_zoo({0.0, 0.01, 0.1, 1.0});
    const std::vector<std::string> names = {"dense0", "dense1", "dense2"};
    // all 4^3 schemes
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t c = 0; c < 4; ++c) {
                SchemeVector s{{a, b, c}};
                const std::string grid = render_scheme_grid(names, s, zoo);
                CHECK(parse_scheme_grid(grid, zoo) == s);
            }
}

TEST_CASE("scheme grid marks frozen layers") {
    LrZoo zoo = make_zoo({0.0, 0.5});
    const std::string grid =
        render_scheme_grid({"conv0", "dense1"}, SchemeVector{{0, 1}}, zoo);
    CHECK(grid.find("scheme-grid-v1") == 0);
    CHECK(grid.find("frozen") != std::string::npos);
    CHECK(grid.find("lr=0.5") != std::string::npos);
    CHECK(grid.find("conv0") != std::string::npos);

    CHECK_THROWS_AS(parse_scheme_grid("scheme-grid-v1\n| a |\n| lr=0.3 |\n", zoo),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_scheme_grid("nope\n", zoo), std::invalid_argument);
}

TEST_CASE("layer names carry kind and ordinal") {
    auto specs = resolve_layer_chain(
        parse_layer_list("conv:1:4:4:2:3:3,relu,flatten,dense:8:4,relu,dense:4:4"));
    CHECK(scheme_layer_names(specs) ==
          std::vector<std::string>{"conv0", "dense1", "dense2"});
}

TEST_CASE("percent formatting rounds to two decimals") {
    CHECK(format_percent_ci(0.6421, 0.0077) == "64.21±0.77");
    CHECK(format_percent_ci(1.0, 0.0) == "100.00±0.00");
    CHECK(format_percent_ci(0.123456, 0.00987) == "12.35±0.99");
}

TEST_CASE("comparison table orders rows and fills missing cells") {
    std::vector<ResultRow> rows = {
        {"Searched", 5, 5, 0.777, 0.005},
        {"Fixed", 5, 1, 0.5, 0.01},
        {"Searched", 5, 1, 0.65, 0.008},
        {"Aardvark", 5, 1, 0.6, 0.002},
    };
    const std::string table = comparison_table(rows);

    const auto fixed_pos = table.find("Fixed");
    const auto searched_pos = table.find("Searched");
    const auto other_pos = table.find("Aardvark");
    REQUIRE(fixed_pos != std::string::npos);
    REQUIRE(searched_pos != std::string::npos);
    REQUIRE(other_pos != std::string::npos);
    CHECK(fixed_pos < searched_pos);
    CHECK(searched_pos < other_pos);

    CHECK(table.find("5-way 1-shot") != std::string::npos);
    CHECK(table.find("5-way 5-shot") != std::string::npos);
    CHECK(table.find("50.00±1.00") != std::string::npos);
    CHECK(table.find("77.70±0.50") != std::string::npos);

    // Fixed has no 5-shot cell
    std::istringstream is(table);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line))
        if (line.find("Fixed") != std::string::npos)
            CHECK(line.find("-") != std::string::npos);
}

TEST_CASE("convergence csv has one column per generation") {
    SearchTrace t;
    for (std::size_t g = 0; g < 4; ++g) {
        GenerationRecord r;
        r.generation = g;
        r.best_fitness = 0.1 * double(g + 1);
        t.generations.push_back(r);
    }
    const std::string csv = convergence_csv(t, "searchA");
    CHECK(csv == "run,gen0,gen1,gen2,gen3\nsearchA,0.1,0.2,0.30000000000000004,0.4\n");
}

TEST_CASE("report files round-trip") {
    ReportFile f;
    f.label = "Searched";
    f.n_way = 5;
    f.k_shot = 1;
    f.checkpoint_hash = std::string(40, 'a');
    f.dataset_hash = std::string(40, 'b');
    f.config_text = "run.seed = 3\nnet.layers = dense:4:4\n";
    f.report.scheme = SchemeVector{{1, 0}};
    f.report.zoo = make_zoo({0.0, 0.1});
    f.report.seed = 9;
    f.report.n_episodes = 2;
    f.report.per_episode = {0.5, 1.0};
    f.report.mean_accuracy = 0.75;
    f.report.ci95_halfwidth = ci95_halfwidth_of(f.report.per_episode);

    const std::string text = format_report_file(f);
    ReportFile back = parse_report_file(text);
    CHECK(back.label == f.label);
    CHECK(back.n_way == f.n_way);
    CHECK(back.k_shot == f.k_shot);
    CHECK(back.checkpoint_hash == f.checkpoint_hash);
    CHECK(back.dataset_hash == f.dataset_hash);
    CHECK(back.config_text == f.config_text);
    CHECK(back.report.per_episode == f.report.per_episode);
    CHECK(format_report_file(back) == text);

    CHECK_THROWS_AS(parse_report_file("report-v1\nlabel = x\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_report_file("wrong\n"), std::invalid_argument);
}

TEST_CASE("config text round-trips through parse and serialize") {
    RunConfig cfg;
    cfg.seed = 123;
    cfg.data.n_base = 9;
    cfg.data.cluster_spread = 0.125;
    cfg.layers = "dense:16:24,relu,dense:24:16";
    cfg.head = HeadKind::Prototype;
    cfg.pretrain_epochs = 17;
    cfg.corrupt_scale = 2.5;
    cfg.zoo = make_zoo({0.0, 0.02, 0.2});
    cfg.k_shot = 5;
    cfg.budget.iterations = 55;
    cfg.search_mutation_prob = 0.3;
    cfg.eval_episodes = 321;
    cfg.data.shift.enabled = true;
    cfg.data.shift.include_validation = true;

    const std::string text = serialize_config(cfg);
    RunConfig back = parse_config_text(text);
    CHECK(back == cfg);
    CHECK(serialize_config(back) == text);
}

TEST_CASE("config parser reports unknown keys and bad values") {
    try {
        parse_config_text("data.bogus = 3\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("data.bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text("run.seed = banana\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("pretrain.batch = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("zoo.rates = 0.1,0.2\n"), ConfigError);  // no 0
    CHECK_THROWS_AS(parse_config_text("net.head = softmax\n"), ConfigError);
    // comments and blank lines are fine
    RunConfig cfg = parse_config_text("# comment\n\nrun.seed = 5\n");
    CHECK(cfg.seed == 5);
}

TEST_CASE("config validation catches cross-field inconsistencies") {
    // a later line overrides an earlier one, so appending works as a probe
    const std::string base = fast_config_text("x");
    CHECK_THROWS_AS(parse_config_text(base + "data.per_class = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(base + "net.layers = dense:4:4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(base + "search.random = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(base + "data.subspace_rank = 99\n"), ConfigError);
}

TEST_CASE("run directories get unique suffixes") {
    TempDir tmp;
    const std::string a = make_run_dir(tmp.str(), "search");
    fs::create_directories(a);
    const std::string b = make_run_dir(tmp.str(), "search");
    fs::create_directories(b);
    const std::string c = make_run_dir(tmp.str(), "search");
    CHECK(a == tmp.str("search"));
    CHECK(b == tmp.str("search-2"));
    CHECK(c == tmp.str("search-3"));
}

TEST_CASE("cli: missing config file exits 1 with a diagnostic") {
    std::string out;
    const int code = run_cli("pretrain --config /nonexistent/xyz.cfg", &out);
    CHECK(code == 1);
    CHECK(out.find("error:") != std::string::npos);
}

TEST_CASE("cli: unknown flag exits 1, help exits 0") {
    std::string out;
    CHECK(run_cli("pretrain --frobnicate", &out) == 1);
    CHECK(run_cli("--help", &out) == 0);
    CHECK(out.find("pretrain") != std::string::npos);
    CHECK(run_cli("", &out) == 1);  // a subcommand is required
}

TEST_CASE("cli: full pipeline runs and artifacts are deterministic") {
    TempDir tmp;
    const std::string cfg1 = write_config(tmp, "run.cfg", fast_config_text(tmp.str("r1")));
    const std::string cfg2 = write_config(tmp, "run2.cfg", fast_config_text(tmp.str("r2")));

    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfg1, &out) == 0);
    REQUIRE(run_cli("pretrain --config " + cfg2, &out) == 0);

    const std::string ck1 = tmp.str("r1/pretrain/checkpoint.ptck");
    const std::string ck2 = tmp.str("r2/pretrain/checkpoint.ptck");
    CHECK(slurp(ck1) == slurp(ck2));

    REQUIRE(run_cli("search --config " + cfg1 + " --checkpoint " + ck1, &out) == 0);
    REQUIRE(run_cli("search --config " + cfg2 + " --checkpoint " + ck2, &out) == 0);
    CHECK(slurp(tmp.str("r1/search/trace.txt")) == slurp(tmp.str("r2/search/trace.txt")));
    CHECK(slurp(tmp.str("r1/search/scheme.txt")) == slurp(tmp.str("r2/search/scheme.txt")));

    REQUIRE(run_cli("evaluate --config " + cfg1 + " --checkpoint " + ck1 +
                        " --scheme " + tmp.str("r1/search/scheme.txt"),
                    &out) == 0);
    REQUIRE(run_cli("evaluate --config " + cfg2 + " --checkpoint " + ck2 +
                        " --scheme " + tmp.str("r2/search/scheme.txt") + " --workers 3",
                    &out) == 0);
    CHECK(slurp(tmp.str("r1/evaluate/report.evalreport")) ==
          slurp(tmp.str("r2/evaluate/report.evalreport")));

    REQUIRE(run_cli("evaluate --config " + cfg1 + " --checkpoint " + ck1 +
                        " --scheme fixed",
                    &out) == 0);
    REQUIRE(run_cli("report --config " + cfg1, &out) == 0);
    CHECK(out.find("Fixed") != std::string::npos);
    CHECK(out.find("Searched") != std::string::npos);
    CHECK(out.find("3-way 1-shot") != std::string::npos);
    CHECK(fs::exists(tmp.str("r1/report/table.txt")));
    CHECK(fs::exists(tmp.str("r1/report/convergence.csv")));
}

TEST_CASE("cli: rerunning into the same root suffixes the run directory") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, "run.cfg", fast_config_text(tmp.str("r")));
    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfg, &out) == 0);
    REQUIRE(run_cli("pretrain --config " + cfg, &out) == 0);
    CHECK(fs::exists(tmp.str("r/pretrain/checkpoint.ptck")));
    CHECK(fs::exists(tmp.str("r/pretrain-2/checkpoint.ptck")));
    CHECK(slurp(tmp.str("r/pretrain/checkpoint.ptck")) ==
          slurp(tmp.str("r/pretrain-2/checkpoint.ptck")));
}

TEST_CASE("cli: zero pretraining epochs equals a fresh seeded network") {
    TempDir tmp;
    std::string text = fast_config_text(tmp.str("r"));
    text += "pretrain.epochs = 0\n";  // later line wins
    const std::string cfg = write_config(tmp, "run.cfg", text);
    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfg, &out) == 0);

    RunConfig rc = parse_config_text(text);
    Network fresh = make_network(rc.layer_specs(), rc.stage_seed(Stage::NetInit));
    LoadedCheckpoint lc = load_checkpoint(tmp.str("r/pretrain/checkpoint.ptck"));
    REQUIRE(lc.net.params.size() == fresh.params.size());
    for (std::size_t i = 0; i < fresh.params.size(); ++i) {
        CHECK(lc.net.params[i].weight.data == fresh.params[i].weight.data);
        CHECK(lc.net.params[i].bias.data == fresh.params[i].bias.data);
    }
}

TEST_CASE("cli: the fixed alias matches an explicit all-zero scheme file") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, "run.cfg", fast_config_text(tmp.str("r")));
    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfg, &out) == 0);
    const std::string ck = tmp.str("r/pretrain/checkpoint.ptck");

    SchemeFile sf;
    sf.label = "Fixed";
    sf.zoo = make_zoo({0.0, 0.01, 0.1, 1.0});
    sf.scheme = SchemeVector{{0, 0}};
    write_scheme_file(tmp.str("fixed.scheme"), sf);

    REQUIRE(run_cli("evaluate --config " + cfg + " --checkpoint " + ck +
                        " --scheme fixed",
                    &out) == 0);
    REQUIRE(run_cli("evaluate --config " + cfg + " --checkpoint " + ck + " --scheme " +
                        tmp.str("fixed.scheme"),
                    &out) == 0);
    CHECK(slurp(tmp.str("r/evaluate/report.evalreport")) ==
          slurp(tmp.str("r/evaluate-2/report.evalreport")));
}

TEST_CASE("cli: checkpoint and config layer mismatch is refused with detail") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, "run.cfg", fast_config_text(tmp.str("r")));
    std::string other_text = fast_config_text(tmp.str("r"));
    other_text += "net.layers = dense:8:6,relu,dense:6:8\n";
    const std::string cfg2 = write_config(tmp, "other.cfg", other_text);

    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfg, &out) == 0);
    const int code = run_cli("search --config " + cfg2 + " --checkpoint " +
                                 tmp.str("r/pretrain/checkpoint.ptck"),
                             &out);
    CHECK(code == 1);
    CHECK(out.find("layer") != std::string::npos);
    CHECK(out.find("dense:8:6") != std::string::npos);
    CHECK(out.find("dense:8:10") != std::string::npos);
}

TEST_CASE("cli: report refuses to mix different datasets") {
    TempDir tmp;
    const std::string cfgA = write_config(tmp, "a.cfg", fast_config_text(tmp.str("r")));
    std::string textB = fast_config_text(tmp.str("r"));
    textB += "run.seed = 99\n";  // different dataset
    const std::string cfgB = write_config(tmp, "b.cfg", textB);

    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfgA, &out) == 0);
    REQUIRE(run_cli("pretrain --config " + cfgB, &out) == 0);
    REQUIRE(run_cli("evaluate --config " + cfgA + " --checkpoint " +
                        tmp.str("r/pretrain/checkpoint.ptck") + " --scheme fixed",
                    &out) == 0);
    REQUIRE(run_cli("evaluate --config " + cfgB + " --checkpoint " +
                        tmp.str("r/pretrain-2/checkpoint.ptck") + " --scheme uniform",
                    &out) == 0);

    const int code = run_cli("report --config " + cfgA, &out);
    CHECK(code == 1);
    CHECK(out.find("dataset") != std::string::npos);
}

TEST_CASE("cli: seed override changes artifacts, workers override does not") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, "run.cfg", fast_config_text(tmp.str("r")));
    std::string out;
    REQUIRE(run_cli("pretrain --config " + cfg, &out) == 0);
    REQUIRE(run_cli("pretrain --config " + cfg + " --seed 77", &out) == 0);
    CHECK(slurp(tmp.str("r/pretrain/checkpoint.ptck")) !=
          slurp(tmp.str("r/pretrain-2/checkpoint.ptck")));
}

TEST_CASE("cli: report with no evaluations exits 1") {
    TempDir tmp;
    const std::string cfg = write_config(tmp, "run.cfg", fast_config_text(tmp.str("r")));
    std::string out;
    const int code = run_cli("report --config " + cfg, &out);
    CHECK(code == 1);
}
