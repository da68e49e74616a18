// fairstitch: train a stitching layer under differentiable fairness
// constraints and compare it against last-layer fine-tuning and an
// unconstrained baseline.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairstitch/commands.hpp"
#include "fairstitch/config.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/toml.hpp"

namespace {

using fairstitch::RunConfig;

// The config file loads before CLI11 runs so command-line options override
// file values, which override the built-in defaults.
std::string find_config_path(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) return argv[i + 1];
        if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
    }
    return {};
}

void apply_seed_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw fairstitch::ConfigError("--seed-override: expected k=v, got '" + kv + "'");
        }
        const std::string key = kv.substr(0, eq);
        std::uint64_t value = 0;
        try {
            value = std::stoull(kv.substr(eq + 1));
        } catch (const std::exception&) {
            throw fairstitch::ConfigError("--seed-override: '" + kv.substr(eq + 1) +
                                          "' is not an unsigned integer");
        }
        if (key == "init") {
            cfg.seeds.init = value;
        } else if (key == "data") {
            cfg.seeds.data = value;
        } else if (key == "train") {
            cfg.seeds.train = value;
        } else {
            throw fairstitch::ConfigError("--seed-override: unknown seed '" + key +
                                          "' (expected init|data|train)");
        }
    }
}

int exit_code_for(const fairstitch::Error& e) {
    if (dynamic_cast<const fairstitch::ConfigError*>(&e)) return 2;
    if (dynamic_cast<const fairstitch::ParseError*>(&e)) return 3;
    if (dynamic_cast<const fairstitch::EmptyGroupError*>(&e)) return 3;
    if (dynamic_cast<const fairstitch::DegenerateSplitError*>(&e)) return 3;
    if (dynamic_cast<const fairstitch::DivergenceError*>(&e)) return 4;
    if (dynamic_cast<const fairstitch::CheckpointError*>(&e)) return 5;
    if (dynamic_cast<const fairstitch::IoError*>(&e)) return 5;
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairstitch: stitching-layer training under fairness constraints"};
    app.require_subcommand(1);
    app.fallthrough(); // global options may follow the subcommand

    RunConfig cfg;
    try {
        const std::string config_path = find_config_path(argc, argv);
        if (!config_path.empty()) cfg = fairstitch::load_config_file(config_path);
    } catch (const fairstitch::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }

    unsigned jobs = 1;
    std::vector<std::string> seed_overrides;
    std::string config_path_opt;

    app.add_option("--config", config_path_opt,
                   "TOML run configuration (sections data/synth/split/seeds/model/"
                   "constraint/optimizer/train/eval)");
    app.add_option("--out", cfg.out_dir, "Output directory")->capture_default_str();
    app.add_option("--jobs", jobs, "Worker threads for independent evaluations")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app.add_option("--seed-override", seed_overrides,
                   "Override one seed, e.g. --seed-override train=11 (repeatable)");

    app.add_option("--data.source", cfg.data.source, "Data source: synthetic|csv")
        ->capture_default_str();
    app.add_option("--data.csv_train", cfg.data.csv_train, "Train CSV (csv source)");
    app.add_option("--data.csv_val", cfg.data.csv_val, "Val CSV (csv source)");
    app.add_option("--data.csv_test", cfg.data.csv_test, "Test CSV (csv source)");

    app.add_option("--synth.n", cfg.synth.n, "Synthetic rows")->capture_default_str();
    app.add_option("--synth.d", cfg.synth.d, "Synthetic feature dim")->capture_default_str();
    app.add_option("--synth.cell_probs", cfg.synth.cell_probs,
                   "P(y,a) for cells (0,0),(0,1),(1,0),(1,1)")
        ->expected(4)
        ->capture_default_str();
    app.add_option("--synth.class_separation", cfg.synth.class_separation,
                   "Mean shift along f0 for y=1")
        ->capture_default_str();
    app.add_option("--synth.attribute_shift", cfg.synth.attribute_shift,
                   "Mean shift along f1 for a=1")
        ->capture_default_str();
    app.add_option("--synth.label_noise", cfg.synth.label_noise, "Label flip probability")
        ->capture_default_str();

    app.add_option("--split.fractions", cfg.split.fractions, "Train/val/test fractions")
        ->expected(3)
        ->capture_default_str();
    app.add_flag("--split.stratify,!--split.no-stratify", cfg.split.stratify,
                 "Stratify splits by (y,a) cell")
        ->capture_default_str();
    app.add_option("--split.balanced_carve", cfg.split.balanced_carve,
                   "Fine-tune share of the balanced set; the rest selects the best epoch")
        ->capture_default_str();

    app.add_option("--seeds.init", cfg.seeds.init, "Network init seed")->capture_default_str();
    app.add_option("--seeds.data", cfg.seeds.data, "Data generation/split seed")
        ->capture_default_str();
    app.add_option("--seeds.train", cfg.seeds.train, "Training seed")->capture_default_str();

    app.add_option("--model.dims", cfg.model.dims, "MLP dims, e.g. 8 16 16 2")
        ->capture_default_str();
    app.add_option("--model.stitch_index", cfg.model.stitch_index,
                   "Stitch position (0 = before the last block)")
        ->capture_default_str();

    app.add_option("--constraint.kind", cfg.constraint.kind, "none|eo|ae|mmf")
        ->capture_default_str();
    app.add_option("--constraint.alpha", cfg.constraint.alpha, "Fairness weight")
        ->capture_default_str();
    app.add_option("--constraint.eo_denominator", cfg.constraint.eo_denominator,
                   "group_size|conditional")
        ->capture_default_str();

    app.add_option("--optimizer.lr", cfg.optimizer.lr, "Learning rate")->capture_default_str();
    app.add_option("--optimizer.momentum", cfg.optimizer.momentum, "SGD momentum")
        ->capture_default_str();
    app.add_option("--optimizer.weight_decay", cfg.optimizer.weight_decay, "Weight decay")
        ->capture_default_str();

    app.add_option("--train.erm_epochs", cfg.train.erm_epochs, "ERM pretraining epochs")
        ->capture_default_str();
    app.add_option("--train.finetune_epochs", cfg.train.finetune_epochs,
                   "tfs/fdr fine-tuning epochs")
        ->capture_default_str();

    app.add_option("--eval.threshold", cfg.eval.threshold, "Hard prediction threshold")
        ->capture_default_str();
    app.add_option("--eval.abroca_grid", cfg.eval.abroca_grid, "ABROCA FPR grid points")
        ->capture_default_str();
    app.add_option("--eval.eo_diff_mode", cfg.eval.eo_diff_mode, "max|sum")
        ->capture_default_str();

    CLI::App* cmd_gen = app.add_subcommand("gen-data", "Write synthetic train/val/test CSVs, "
                                                       "the balanced CSV, and a manifest");
    CLI::App* cmd_pretrain =
        app.add_subcommand("pretrain", "ERM pretraining on the train split");
    CLI::App* cmd_tfs =
        app.add_subcommand("tfs", "Train a stitching layer on the balanced set");
    CLI::App* cmd_fdr =
        app.add_subcommand("fdr", "Fine-tune the last layer on the balanced set");

    fairstitch::cmd::EvaluateArgs eval_args;
    CLI::App* cmd_eval = app.add_subcommand("evaluate", "Metrics + objective of a checkpoint");
    cmd_eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
    cmd_eval->add_option("--split", eval_args.splits, "train|val|test|balanced|all")
        ->capture_default_str();

    fairstitch::cmd::InterpolateArgs interp_args;
    CLI::App* cmd_interp = app.add_subcommand(
        "interpolate", "Objective along the segment between two checkpoints");
    cmd_interp->add_option("--from", interp_args.from, "theta0 checkpoint")->required();
    cmd_interp->add_option("--to", interp_args.to, "theta* checkpoint")->required();
    cmd_interp->add_option("--grid", interp_args.grid, "Uniform alpha points on [0,1]")
        ->capture_default_str();
    cmd_interp->add_flag("--ce-only", interp_args.ce_only,
                         "Interpolate plain cross-entropy instead of the full objective");
    cmd_interp->add_flag("--interpolate-frozen", interp_args.interpolate_frozen,
                         "Also interpolate frozen parameters");

    fairstitch::cmd::ReportArgs report_args;
    CLI::App* cmd_report = app.add_subcommand(
        "report", "baseline/fdr/tfs x train/balanced/test comparison tables");
    cmd_report->add_option("--baseline", report_args.baseline,
                           "Baseline checkpoint (default: <out>/checkpoints/erm_final.json)");
    cmd_report->add_option("--fdr", report_args.fdr,
                           "FDR checkpoint (default: <out>/checkpoints/fdr_best.json)");
    cmd_report->add_option("--tfs", report_args.tfs,
                           "TFS checkpoint (default: <out>/checkpoints/tfs_best.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        // CLI11 returns 0 for --help/--version; anything else is a config error.
        return rc == 0 ? 0 : 2;
    }

    try {
        apply_seed_overrides(cfg, seed_overrides);
        cfg.validate();
        if (cmd_gen->parsed()) {
            fairstitch::cmd::gen_data(cfg);
            std::cout << "wrote " << fairstitch::cmd::OutPaths(cfg.out_dir).manifest().string()
                      << "\n";
        } else if (cmd_pretrain->parsed()) {
            fairstitch::cmd::pretrain(cfg);
            std::cout << "wrote "
                      << fairstitch::cmd::OutPaths(cfg.out_dir).checkpoint("erm_final").string()
                      << "\n";
        } else if (cmd_tfs->parsed()) {
            fairstitch::cmd::tfs(cfg);
            std::cout << "wrote "
                      << fairstitch::cmd::OutPaths(cfg.out_dir).checkpoint("tfs_best").string()
                      << "\n";
        } else if (cmd_fdr->parsed()) {
            fairstitch::cmd::fdr(cfg);
            std::cout << "wrote "
                      << fairstitch::cmd::OutPaths(cfg.out_dir).checkpoint("fdr_best").string()
                      << "\n";
        } else if (cmd_eval->parsed()) {
            std::cout << "wrote " << fairstitch::cmd::evaluate(cfg, eval_args).string() << "\n";
        } else if (cmd_interp->parsed()) {
            interp_args.jobs = jobs;
            std::cout << "wrote " << fairstitch::cmd::interpolate(cfg, interp_args).string()
                      << "\n";
        } else if (cmd_report->parsed()) {
            report_args.jobs = jobs;
            std::cout << "wrote " << fairstitch::cmd::report(cfg, report_args).string() << "\n";
        }
    } catch (const fairstitch::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
