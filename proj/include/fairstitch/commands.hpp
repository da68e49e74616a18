#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairstitch/analysis.hpp"
#include "fairstitch/config.hpp"
#include "fairstitch/dataset.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/network.hpp"
#include "fairstitch/pipeline.hpp"

namespace fairstitch::cmd {

// ============================================================================
// Command layer shared by the CLI binary and the test suites. Every command
// is a pure function of (validated config, files under out_dir); reruns with
// identical inputs rewrite byte-identical artifacts.
// ============================================================================

struct OutPaths {
    std::filesystem::path root;
    std::filesystem::path data_dir, ckpt_dir, records_dir, reports_dir, analysis_dir;

    explicit OutPaths(const std::filesystem::path& out_root)
        : root(out_root),
          data_dir(out_root / "data"),
          ckpt_dir(out_root / "checkpoints"),
          records_dir(out_root / "records"),
          reports_dir(out_root / "reports"),
          analysis_dir(out_root / "analysis") {}

    std::filesystem::path train_csv() const { return data_dir / "train.csv"; }
    std::filesystem::path val_csv() const { return data_dir / "val.csv"; }
    std::filesystem::path test_csv() const { return data_dir / "test.csv"; }
    std::filesystem::path balanced_csv() const { return data_dir / "balanced.csv"; }
    std::filesystem::path manifest() const { return data_dir / "manifest.json"; }

    std::filesystem::path checkpoint(const std::string& stem) const {
        return ckpt_dir / (stem + ".json");
    }
    std::filesystem::path records(const std::string& phase) const {
        return records_dir / (phase + ".jsonl");
    }
    std::filesystem::path comparison_json() const { return reports_dir / "comparison.json"; }
    std::filesystem::path comparison_txt() const { return reports_dir / "comparison.txt"; }
};

namespace detail_cmd {

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline nlohmann::json cells_json(const TripletDataset& ds) {
    const CellCounts cc = cell_counts(ds);
    return nlohmann::json{{"y0_a0", cc.counts[0]},
                          {"y0_a1", cc.counts[1]},
                          {"y1_a0", cc.counts[2]},
                          {"y1_a1", cc.counts[3]},
                          {"total", cc.total()}};
}

struct LoadedData {
    TripletDataset train, val, test, balanced;
};

inline TripletDataset load_named_csv(const std::filesystem::path& path, const char* role,
                                     const std::string& hint) {
    if (!std::filesystem::exists(path)) {
        throw IoError(std::string(role) + " dataset missing at '" + path.string() + "'; " +
                      hint);
    }
    return load_csv(path);
}

// Train/val/test come from gen-data output (synthetic) or from the configured
// CSV paths; the balanced set is always recomputed from train+val, which by
// seed-determinism matches the balanced.csv that gen-data wrote.
inline LoadedData load_data(const RunConfig& cfg) {
    const OutPaths paths{cfg.out_dir};
    LoadedData data;
    if (cfg.data.source == "synthetic") {
        const std::string hint = "run the gen-data command first";
        data.train = load_named_csv(paths.train_csv(), "train", hint);
        data.val = load_named_csv(paths.val_csv(), "val", hint);
        data.test = load_named_csv(paths.test_csv(), "test", hint);
    } else {
        const std::string hint = "check the data.csv_* config paths";
        data.train = load_named_csv(cfg.data.csv_train, "train", hint);
        data.val = load_named_csv(cfg.data.csv_val, "val", hint);
        data.test = load_named_csv(cfg.data.csv_test, "test", hint);
    }
    data.train.name = "train";
    data.val.name = "val";
    data.test.name = "test";
    data.balanced = balanced_subsample(data.train, data.val, cfg.seeds.data);
    return data;
}

inline Checkpoint load_required_checkpoint(const std::filesystem::path& path,
                                           const std::string& hint) {
    if (!std::filesystem::exists(path)) {
        throw CheckpointError("missing checkpoint at '" + path.string() + "'; " + hint);
    }
    return load_checkpoint(path);
}

inline CheckpointMeta meta_for(const RunConfig& cfg, const std::string& phase,
                               std::size_t epoch) {
    CheckpointMeta meta;
    meta.phase = phase;
    meta.epoch = epoch;
    meta.optimizer = cfg.optimizer;
    meta.seeds = cfg.seeds;
    return meta;
}

// Shared tail of the tfs/fdr commands: carve the balanced set, train, write
// init/best/final checkpoints plus the record stream.
inline TrainOutput run_finetune(const RunConfig& cfg, const std::string& phase) {
    const OutPaths paths{cfg.out_dir};
    const LoadedData data = load_data(cfg);
    const auto carve =
        split2(data.balanced, cfg.split.balanced_carve, derive_seed(cfg.seeds.data, seed_tag::carve),
               cfg.split.stratify, "balanced_ft", "balanced_val");
    const Checkpoint erm = load_required_checkpoint(paths.checkpoint("erm_final"),
                                                    "run the pretrain command first");
    const FairnessConstraint constraint = cfg.fairness_constraint();
    const EvalOptions eval_opt = cfg.eval_options();

    TrainOutput out;
    if (phase == "tfs") {
        std::optional<std::size_t> position;
        if (cfg.model.stitch_index != 0) position = cfg.model.stitch_index;
        out = train_tfs(erm.net, carve[0], carve[1], constraint, cfg.train.finetune_epochs,
                        cfg.optimizer, cfg.seeds.train, eval_opt, position);
    } else {
        out = train_fdr(erm.net, carve[0], carve[1], constraint, cfg.train.finetune_epochs,
                        cfg.optimizer, cfg.seeds.train, eval_opt);
    }
    ensure_dir(paths.ckpt_dir);
    ensure_dir(paths.records_dir);
    save_checkpoint(out.initial, meta_for(cfg, phase, 0), paths.checkpoint(phase + "_init"));
    save_checkpoint(out.best, meta_for(cfg, phase, out.best_epoch),
                    paths.checkpoint(phase + "_best"));
    save_checkpoint(out.final_net, meta_for(cfg, phase, cfg.train.finetune_epochs),
                    paths.checkpoint(phase + "_final"));
    write_records(out.records, paths.records(phase));
    return out;
}

} // namespace detail_cmd

// ---------------------------------------------------------------------------
// gen-data: synthesize, split, balance, and write CSVs plus a manifest.
// ---------------------------------------------------------------------------
inline void gen_data(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.data.source != "synthetic") {
        throw ConfigError("gen-data: requires data.source = synthetic");
    }
    const OutPaths paths{cfg.out_dir};
    const TripletDataset full = synth_biased(cfg.synth_spec());
    auto splits = split(full, cfg.split_fractions(), cfg.seeds.data, cfg.split.stratify);
    const TripletDataset balanced =
        balanced_subsample(splits[0], splits[1], cfg.seeds.data);

    detail_cmd::ensure_dir(paths.data_dir);
    save_csv(splits[0], paths.train_csv());
    save_csv(splits[1], paths.val_csv());
    save_csv(splits[2], paths.test_csv());
    save_csv(balanced, paths.balanced_csv());

    nlohmann::json manifest{
        {"config_hash", cfg.hash()},
        {"seeds",
         {{"init", cfg.seeds.init}, {"data", cfg.seeds.data}, {"train", cfg.seeds.train}}},
        {"n", cfg.synth.n},
        {"d", cfg.synth.d},
        {"cells",
         {{"train", detail_cmd::cells_json(splits[0])},
          {"val", detail_cmd::cells_json(splits[1])},
          {"test", detail_cmd::cells_json(splits[2])},
          {"balanced", detail_cmd::cells_json(balanced)}}},
        {"files",
         {{"train", "train.csv"},
          {"val", "val.csv"},
          {"test", "test.csv"},
          {"balanced", "balanced.csv"}}},
    };
    detail_cmd::write_text(paths.manifest(), manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// pretrain: ERM on the full train split; writes the erm_final checkpoint.
// ---------------------------------------------------------------------------
inline void pretrain(const RunConfig& cfg) {
    cfg.validate();
    const OutPaths paths{cfg.out_dir};
    const detail_cmd::LoadedData data = detail_cmd::load_data(cfg);
    if (cfg.model.dims.front() != data.train.dim()) {
        throw ConfigError("model.dims: first entry " + std::to_string(cfg.model.dims.front()) +
                          " does not match the feature dimension " +
                          std::to_string(data.train.dim()));
    }
    Network net = init_mlp(cfg.model.dims, cfg.seeds.init);
    TrainOutput out = train_erm(net, data.train, data.val, cfg.train.erm_epochs, cfg.optimizer,
                                cfg.seeds.train, cfg.eval_options());
    detail_cmd::ensure_dir(paths.ckpt_dir);
    detail_cmd::ensure_dir(paths.records_dir);
    save_checkpoint(out.final_net, detail_cmd::meta_for(cfg, "erm", cfg.train.erm_epochs),
                    paths.checkpoint("erm_final"));
    write_records(out.records, paths.records("erm"));
}

// ---------------------------------------------------------------------------
// tfs / fdr: fine-tune on the balanced set against the ERM checkpoint.
// ---------------------------------------------------------------------------
inline void tfs(const RunConfig& cfg) {
    cfg.validate();
    detail_cmd::run_finetune(cfg, "tfs");
}

inline void fdr(const RunConfig& cfg) {
    cfg.validate();
    detail_cmd::run_finetune(cfg, "fdr");
}

// ---------------------------------------------------------------------------
// evaluate: metrics + objective of one checkpoint on the requested splits.
// ---------------------------------------------------------------------------
struct EvaluateArgs {
    std::string checkpoint;
    std::vector<std::string> splits{"test"}; // train|val|test|balanced or "all"
};

inline std::filesystem::path evaluate(const RunConfig& cfg, const EvaluateArgs& args) {
    cfg.validate();
    if (args.checkpoint.empty()) {
        throw ConfigError("evaluate: --checkpoint is required");
    }
    const OutPaths paths{cfg.out_dir};
    const detail_cmd::LoadedData data = detail_cmd::load_data(cfg);
    const Checkpoint ckpt = detail_cmd::load_required_checkpoint(
        args.checkpoint, "pass an existing checkpoint path");
    const FairnessConstraint constraint = cfg.fairness_constraint();
    const EvalOptions eval_opt = cfg.eval_options();

    std::vector<std::string> wanted = args.splits;
    if (wanted.size() == 1 && wanted[0] == "all") {
        wanted = {"train", "val", "test", "balanced"};
    }
    auto pick = [&](const std::string& name) -> const TripletDataset& {
        if (name == "train") return data.train;
        if (name == "val") return data.val;
        if (name == "test") return data.test;
        if (name == "balanced") return data.balanced;
        throw ConfigError("evaluate: unknown split '" + name +
                          "' (expected train|val|test|balanced|all)");
    };

    nlohmann::json results;
    for (const std::string& name : wanted) {
        const TripletDataset& ds = pick(name);
        const Tensor p = class1_probs(ckpt.net, ds.x);
        const MetricsReport report =
            evaluate_metrics(p.data, ds.y, ds.a, name, constraint.kind, eval_opt);
        results[name] = nlohmann::json{
            {"metrics", report.to_json()},
            {"objective", evaluate_objective(ckpt.net, ds, constraint)},
        };
    }
    nlohmann::json doc{
        {"checkpoint", args.checkpoint},
        {"config_hash", cfg.hash()},
        {"constraint",
         {{"kind", constraint_name(constraint.kind)},
          {"alpha", constraint.alpha}}},
        {"results", std::move(results)},
    };
    detail_cmd::ensure_dir(paths.reports_dir);
    const std::filesystem::path out_path =
        paths.reports_dir /
        ("evaluate_" + std::filesystem::path(args.checkpoint).stem().string() + ".json");
    detail_cmd::write_text(out_path, doc.dump(2) + "\n");
    return out_path;
}

// ---------------------------------------------------------------------------
// interpolate: objective along the segment between two checkpoints.
// ---------------------------------------------------------------------------
struct InterpolateArgs {
    std::string from;           // theta0 checkpoint
    std::string to;             // theta* checkpoint
    std::size_t grid = 101;     // uniform points on [0,1]
    bool ce_only = false;
    bool interpolate_frozen = false;
    unsigned jobs = 1;
};

inline std::filesystem::path interpolate(const RunConfig& cfg, const InterpolateArgs& args) {
    cfg.validate();
    if (args.from.empty() || args.to.empty()) {
        throw ConfigError("interpolate: --from and --to checkpoints are required");
    }
    if (args.grid < 2) throw ConfigError("interpolate: --grid must be >= 2");
    const OutPaths paths{cfg.out_dir};
    const detail_cmd::LoadedData data = detail_cmd::load_data(cfg);
    const Checkpoint theta0 = detail_cmd::load_required_checkpoint(
        args.from, "pass an existing checkpoint path");
    const Checkpoint theta_star = detail_cmd::load_required_checkpoint(
        args.to, "pass an existing checkpoint path");

    std::vector<double> alphas(args.grid);
    for (std::size_t i = 0; i < args.grid; ++i) {
        alphas[i] = static_cast<double>(i) / static_cast<double>(args.grid - 1);
    }
    InterpolationOptions opt;
    opt.ce_only = args.ce_only;
    opt.interpolate_frozen = args.interpolate_frozen;
    opt.jobs = args.jobs;
    const std::vector<const TripletDataset*> datasets{&data.balanced, &data.val, &data.test};
    const InterpolationCurve curve = interpolate_loss(theta0, theta_star, datasets,
                                                      cfg.fairness_constraint(), alphas, opt);
    detail_cmd::ensure_dir(paths.analysis_dir);
    const std::filesystem::path out_path =
        paths.analysis_dir /
        ("interpolate_" + std::filesystem::path(args.from).stem().string() + "_to_" +
         std::filesystem::path(args.to).stem().string() + ".csv");
    write_interpolation_csv(curve, out_path, cfg.hash(), cfg.seeds);
    return out_path;
}

// ---------------------------------------------------------------------------
// report: baseline/fdr/tfs x train/balanced/test comparison + ROC exports.
// ---------------------------------------------------------------------------
struct ReportArgs {
    std::string baseline; // default: out/checkpoints/erm_final.json
    std::string fdr;      // default: out/checkpoints/fdr_best.json
    std::string tfs;      // default: out/checkpoints/tfs_best.json
    unsigned jobs = 1;
};

inline std::filesystem::path report(const RunConfig& cfg, const ReportArgs& args = {}) {
    cfg.validate();
    const OutPaths paths{cfg.out_dir};
    const detail_cmd::LoadedData data = detail_cmd::load_data(cfg);
    const std::string baseline_path =
        args.baseline.empty() ? paths.checkpoint("erm_final").string() : args.baseline;
    const std::string fdr_path =
        args.fdr.empty() ? paths.checkpoint("fdr_best").string() : args.fdr;
    const std::string tfs_path =
        args.tfs.empty() ? paths.checkpoint("tfs_best").string() : args.tfs;

    const Checkpoint baseline = detail_cmd::load_required_checkpoint(
        baseline_path, "run the pretrain command first");
    const Checkpoint fdr_ckpt =
        detail_cmd::load_required_checkpoint(fdr_path, "run the fdr command first");
    const Checkpoint tfs_ckpt =
        detail_cmd::load_required_checkpoint(tfs_path, "run the tfs command first");

    const std::vector<std::pair<std::string, const Network*>> methods{
        {"baseline", &baseline.net}, {"fdr", &fdr_ckpt.net}, {"tfs", &tfs_ckpt.net}};
    const std::vector<const TripletDataset*> splits{&data.train, &data.balanced, &data.test};
    const ComparisonReport cmp = emit_report(methods, splits, cfg.fairness_constraint(),
                                             cfg.eval_options(), cfg.hash(), cfg.seeds,
                                             args.jobs);
    detail_cmd::ensure_dir(paths.reports_dir);
    detail_cmd::write_text(paths.comparison_json(), cmp.to_json().dump(2) + "\n");
    detail_cmd::write_text(paths.comparison_txt(), cmp.to_text());

    // ROC curves of each method on the test split, for ABROCA figures.
    detail_cmd::ensure_dir(paths.analysis_dir);
    for (const auto& [name, net] : methods) {
        const Tensor p = class1_probs(*net, data.test.x);
        const auto curves = roc_export(p.data, data.test.y, data.test.a);
        write_roc_csv(curves, paths.analysis_dir / ("roc_test_" + name + ".csv"), cfg.hash(),
                      cfg.seeds);
    }
    return paths.comparison_json();
}

} // namespace fairstitch::cmd
