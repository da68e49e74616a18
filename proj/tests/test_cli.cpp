#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fairstitch/commands.hpp"
#include "fairstitch/config.hpp"
#include "fairstitch/toml.hpp"

using namespace fairstitch;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "fairstitch_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Tiny but complete pipeline configuration for fast command tests.
RunConfig tiny_config(const fs::path& out) {
    RunConfig cfg;
    cfg.synth.n = 600;
    cfg.synth.d = 4;
    cfg.model.dims = {4, 6, 2};
    cfg.train.erm_epochs = 30;
    cfg.train.finetune_epochs = 25;
    cfg.eval.abroca_grid = 801;
    cfg.out_dir = out.string();
    return cfg;
}

int run_cli(const std::string& args) {
    const std::string command = std::string(FAIRSTITCH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("toml loader: sections, arrays, comments, strict schema") {
    const fs::path path = fresh_dir("toml") / "cfg.toml";
    {
        std::ofstream out(path);
        out << "# experiment configuration\n"
            << "out = \"runs/exp1\"\n"
            << "[data]\n"
            << "source = \"csv\"  # inline comment\n"
            << "csv_train = \"d/train.csv\"\n"
            << "csv_val = \"d/val.csv\"\n"
            << "csv_test = \"d/test.csv\"\n"
            << "[synth]\n"
            << "n = 1234\n"
            << "cell_probs = [0.4, 0.4, 0.1, 0.1]\n"
            << "label_noise = 1e-2\n"
            << "[split]\n"
            << "stratify = false\n"
            << "[model]\n"
            << "dims = [8, 32, 2]\n"
            << "[constraint]\n"
            << "kind = \"mmf\"\n"
            << "alpha = 1.5\n"
            << "[seeds]\n"
            << "train = 11\n";
    }
    const RunConfig cfg = load_config_file(path);
    CHECK(cfg.out_dir == "runs/exp1");
    CHECK(cfg.data.source == "csv");
    CHECK(cfg.data.csv_val == "d/val.csv");
    CHECK(cfg.synth.n == 1234);
    CHECK(cfg.synth.cell_probs == std::vector<double>{0.4, 0.4, 0.1, 0.1});
    CHECK(cfg.synth.label_noise == 0.01);
    CHECK(cfg.split.stratify == false);
    CHECK(cfg.model.dims == std::vector<std::size_t>{8, 32, 2});
    CHECK(cfg.constraint.kind == "mmf");
    CHECK(cfg.constraint.alpha == 1.5);
    CHECK(cfg.seeds.train == 11);
    // untouched fields keep their defaults
    CHECK(cfg.seeds.init == 7);
    CHECK(cfg.optimizer.momentum == 0.9);
    CHECK(cfg.train.finetune_epochs == 1000);

    auto write_and_load = [&](const std::string& body) {
        const fs::path bad = path.parent_path() / "bad.toml";
        std::ofstream out(bad);
        out << body;
        out.close();
        return load_config_file(bad);
    };
    CHECK_THROWS_WITH_AS(write_and_load("[synth]\nunknown_key = 1\n"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(write_and_load("[synth]\nn = 1\nn = 2\n"),
                         doctest::Contains("duplicate"), ConfigError);
    CHECK_THROWS_WITH_AS(write_and_load("[synth]\nn = \"many\"\n"),
                         doctest::Contains("synth.n"), ConfigError);
    CHECK_THROWS_WITH_AS(write_and_load("[synth\nn = 1\n"),
                         doctest::Contains("line 1"), ConfigError);
    CHECK_THROWS_WITH_AS(write_and_load("[synth]\nn 1\n"),
                         doctest::Contains("key = value"), ConfigError);
    CHECK_THROWS_AS(load_config_file(path.parent_path() / "missing.toml"), ConfigError);
}

TEST_CASE("config validation rejects bad fields with their path in the message") {
    RunConfig cfg = tiny_config(fresh_dir("validate"));
    CHECK_NOTHROW(cfg.validate());

    RunConfig bad = cfg;
    bad.data.source = "parquet";
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("data.source"), ConfigError);

    bad = cfg;
    bad.split.fractions = {0.5, 0.5, 0.5};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("split.fractions"), ConfigError);

    bad = cfg;
    bad.model.dims = {4, 6, 3};
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("model.dims"), ConfigError);

    bad = cfg;
    bad.constraint.kind = "equality";
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("constraint.kind"), ConfigError);

    bad = cfg;
    bad.optimizer.lr = 0.0;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("optimizer.lr"), ConfigError);

    bad = cfg;
    bad.model.stitch_index = 2; // only blocks [4,6,2] -> valid stitch position is 1
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("stitch_index"), ConfigError);

    bad = cfg;
    bad.eval.eo_diff_mode = "both";
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("eo_diff_mode"), ConfigError);
}

TEST_CASE("config hash is stable and sensitive to changes") {
    RunConfig cfg = tiny_config(fresh_dir("hash"));
    const std::string h1 = cfg.hash();
    CHECK(h1 == cfg.hash());
    RunConfig other = cfg;
    other.constraint.alpha = 2.0;
    CHECK(other.hash() != h1);
    // out_dir is not part of the canonical hash (artifacts stay comparable
    // across directories)
    RunConfig moved = cfg;
    moved.out_dir = "elsewhere";
    CHECK(moved.hash() == h1);
}

TEST_CASE("gen-data writes consistent CSVs and manifest; reruns are byte-identical") {
    const fs::path out = fresh_dir("gendata");
    RunConfig cfg = tiny_config(out);
    cmd::gen_data(cfg);

    const cmd::OutPaths paths{cfg.out_dir};
    REQUIRE(fs::exists(paths.train_csv()));
    REQUIRE(fs::exists(paths.manifest()));

    const nlohmann::json manifest = nlohmann::json::parse(slurp(paths.manifest()));
    std::size_t total = 0;
    for (const char* split : {"train", "val", "test"}) {
        total += manifest.at("cells").at(split).at("total").get<std::size_t>();
    }
    CHECK(total == cfg.synth.n);

    // balanced CSV has equal cell counts = min pooled cell (recount oracle)
    const TripletDataset train = load_csv(paths.train_csv());
    const TripletDataset val = load_csv(paths.val_csv());
    const TripletDataset balanced = load_csv(paths.balanced_csv());
    CellCounts pooled{};
    for (std::size_t i = 0; i < train.size(); ++i) {
        pooled.counts[cell_index(train.y[i], train.a[i])]++;
    }
    for (std::size_t i = 0; i < val.size(); ++i) {
        pooled.counts[cell_index(val.y[i], val.a[i])]++;
    }
    const CellCounts bal_cells = cell_counts(balanced);
    for (std::size_t idx = 0; idx < 4; ++idx) {
        CHECK(bal_cells.counts[idx] == pooled.min_cell());
    }
    CHECK(manifest.at("cells").at("balanced").at("total").get<std::size_t>() ==
          4 * pooled.min_cell());

    const std::string train_bytes = slurp(paths.train_csv());
    const std::string manifest_bytes = slurp(paths.manifest());
    cmd::gen_data(cfg);
    CHECK(slurp(paths.train_csv()) == train_bytes);
    CHECK(slurp(paths.manifest()) == manifest_bytes);

    RunConfig csv_cfg = cfg;
    csv_cfg.data.source = "csv";
    csv_cfg.data.csv_train = paths.train_csv().string();
    csv_cfg.data.csv_val = paths.val_csv().string();
    csv_cfg.data.csv_test = paths.test_csv().string();
    CHECK_THROWS_AS(cmd::gen_data(csv_cfg), ConfigError);
}

TEST_CASE("pipeline commands: ordering guards and artifact layout") {
    const fs::path out = fresh_dir("pipeline");
    RunConfig cfg = tiny_config(out);

    // training before gen-data: actionable error naming the expected path
    CHECK_THROWS_WITH_AS(cmd::pretrain(cfg), doctest::Contains("gen-data"), IoError);

    cmd::gen_data(cfg);
    // tfs before pretrain: missing-checkpoint error naming the path
    CHECK_THROWS_WITH_AS(cmd::tfs(cfg), doctest::Contains("erm_final"), CheckpointError);

    cmd::pretrain(cfg);
    const cmd::OutPaths paths{cfg.out_dir};
    REQUIRE(fs::exists(paths.checkpoint("erm_final")));
    REQUIRE(fs::exists(paths.records("erm")));

    cmd::tfs(cfg);
    cmd::fdr(cfg);
    for (const char* stem : {"tfs_init", "tfs_best", "tfs_final", "fdr_init", "fdr_best",
                             "fdr_final"}) {
        REQUIRE(fs::exists(paths.checkpoint(stem)));
    }

    // records line counts equal the epoch counts
    auto lines_of = [](const fs::path& p) {
        std::ifstream in(p);
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) ++n;
        return n;
    };
    CHECK(lines_of(paths.records("erm")) == cfg.train.erm_epochs);
    CHECK(lines_of(paths.records("tfs")) == cfg.train.finetune_epochs);
    CHECK(lines_of(paths.records("fdr")) == cfg.train.finetune_epochs);

    // the tfs checkpoints freeze every original block
    const Checkpoint tfs_best = load_checkpoint(paths.checkpoint("tfs_best"));
    REQUIRE(tfs_best.net.stitch.has_value());
    for (const LayerBlock& b : tfs_best.net.blocks) CHECK_FALSE(b.trainable);

    // evaluate twice -> identical JSON
    cmd::EvaluateArgs eval_args;
    eval_args.checkpoint = paths.checkpoint("tfs_best").string();
    eval_args.splits = {"all"};
    const fs::path eval_path = cmd::evaluate(cfg, eval_args);
    const std::string eval_bytes = slurp(eval_path);
    cmd::evaluate(cfg, eval_args);
    CHECK(slurp(eval_path) == eval_bytes);

    // report: 9 rows, AF identity, deterministic bytes
    const fs::path report_path = cmd::report(cfg, cmd::ReportArgs{});
    const nlohmann::json report = nlohmann::json::parse(slurp(report_path));
    std::size_t rows = 0;
    for (const char* method : {"baseline", "fdr", "tfs"}) {
        for (const char* split : {"train", "balanced", "test"}) {
            const auto& cell = report.at("methods").at(method).at(split);
            const double af = cell.at("af").get<double>();
            const double bacc = cell.at("bacc").get<double>();
            const double eo = cell.at("eo_diff").get<double>();
            CHECK(std::abs(af - (bacc - eo)) <= 1e-12);
            ++rows;
        }
    }
    CHECK(rows == 9);
    const std::string report_bytes = slurp(report_path);
    cmd::report(cfg, cmd::ReportArgs{});
    CHECK(slurp(report_path) == report_bytes);

    // interpolation endpoints agree with evaluate's objective values
    cmd::InterpolateArgs interp;
    interp.from = paths.checkpoint("tfs_init").string();
    interp.to = paths.checkpoint("tfs_best").string();
    interp.grid = 5;
    const fs::path curve_path = cmd::interpolate(cfg, interp);
    REQUIRE(fs::exists(curve_path));

    const nlohmann::json eval_doc = nlohmann::json::parse(slurp(eval_path));
    const double obj_balanced =
        eval_doc.at("results").at("balanced").at("objective").get<double>();

    std::ifstream curve(curve_path);
    std::string line;
    std::getline(curve, line); // metadata
    CHECK(line.rfind("# config_hash=", 0) == 0);
    std::getline(curve, line); // header: dataset names are balanced, val, test
    CHECK(line == "alpha,balanced,val,test");
    double first_alpha_value = 0.0, last_alpha_value = 0.0;
    std::vector<std::string> rows_text;
    while (std::getline(curve, line)) rows_text.push_back(line);
    REQUIRE(rows_text.size() == 5);
    {
        std::stringstream first(rows_text.front());
        std::string field;
        std::getline(first, field, ',');
        CHECK(std::stod(field) == 0.0);
        std::getline(first, field, ',');
        first_alpha_value = std::stod(field);
    }
    {
        std::stringstream last(rows_text.back());
        std::string field;
        std::getline(last, field, ',');
        CHECK(std::stod(field) == 1.0);
        std::getline(last, field, ',');
        last_alpha_value = std::stod(field);
    }
    CHECK(std::isfinite(first_alpha_value));
    CHECK(std::abs(last_alpha_value - obj_balanced) <= 1e-9);
}

TEST_CASE("cli binary: exit codes and config file handling") {
    const fs::path out = fresh_dir("binary");
    const fs::path config_path = out / "run.toml";
    {
        std::ofstream toml(config_path);
        toml << "[synth]\n"
             << "n = 400\n"
             << "d = 4\n"
             << "[model]\n"
             << "dims = [4, 6, 2]\n"
             << "[train]\n"
             << "erm_epochs = 10\n"
             << "finetune_epochs = 8\n"
             << "[eval]\n"
             << "abroca_grid = 301\n";
    }
    const std::string base =
        "--config " + config_path.string() + " --out " + (out / "run").string();

    CHECK(run_cli(base + " gen-data") == 0);
    CHECK(run_cli(base + " pretrain") == 0);
    CHECK(run_cli(base + " tfs") == 0);
    CHECK(run_cli(base + " evaluate --checkpoint " +
                  (out / "run/checkpoints/tfs_best.json").string()) == 0);

    // no subcommand / unknown option -> config error exit code
    CHECK(run_cli("--out " + (out / "x").string()) == 2);
    CHECK(run_cli(base + " gen-data --no-such-flag") == 2);

    // invalid config value -> 2
    CHECK(run_cli(base + " gen-data --constraint.kind equality") == 2);

    // fdr without pretrain in a fresh dir -> I/O error (missing checkpoint)
    const std::string fresh = "--config " + config_path.string() + " --out " +
                              (out / "fresh").string();
    CHECK(run_cli(fresh + " gen-data") == 0);
    CHECK(run_cli(fresh + " fdr") == 5);

    // unknown key in the config file -> 2
    const fs::path bad_config = out / "bad.toml";
    {
        std::ofstream toml(bad_config);
        toml << "[synth]\nn = 100\nunknown_key = 3\n";
    }
    CHECK(run_cli("--config " + bad_config.string() + " gen-data") == 2);

    // seed override changes the generated data
    CHECK(run_cli(base + " gen-data --seed-override data=99") == 0);
    CHECK(run_cli(base + " gen-data --seed-override data=bogus") == 2);
}
