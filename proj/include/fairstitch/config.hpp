#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairstitch/dataset.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/fairness.hpp"
#include "fairstitch/metrics.hpp"
#include "fairstitch/pipeline.hpp"

namespace fairstitch {

// ============================================================================
// Declarative run configuration. Field names mirror the TOML sections the CLI
// accepts; validate() runs in full before any compute or file output starts.
// Defaults carry the reference hyperparameters (momentum 0.9, weight decay
// 5e-4, 1000 fine-tuning epochs, alpha 20 for EO/AE) and the synthetic
// benchmark S1.
// ============================================================================

struct RunConfig {
    struct Data {
        std::string source = "synthetic"; // synthetic | csv
        std::string csv_train;
        std::string csv_val;
        std::string csv_test;
    } data;

    struct Synth {
        std::size_t n = 20000;
        std::size_t d = 8;
        std::vector<double> cell_probs{0.45, 0.45, 0.05, 0.05}; // (y,a) cell order
        double class_separation = 2.0;
        double attribute_shift = 1.5;
        double label_noise = 0.05;
    } synth;

    struct Split {
        std::vector<double> fractions{0.6, 0.2, 0.2}; // train, val, test
        bool stratify = true;
        double balanced_carve = 0.8; // fine-tune share of the balanced set
    } split;

    Seeds seeds;

    struct Model {
        std::vector<std::size_t> dims{8, 16, 16, 2};
        std::size_t stitch_index = 0; // 0 = auto (before the last block)
    } model;

    struct Constraint {
        std::string kind = "eo"; // none | eo | ae | mmf
        double alpha = 20.0;
        std::string eo_denominator = "group_size"; // group_size | conditional
    } constraint;

    OptimizerConfig optimizer;

    struct Train {
        std::size_t erm_epochs = 500;
        std::size_t finetune_epochs = 1000;
    } train;

    struct Eval {
        double threshold = 0.5;
        std::size_t abroca_grid = 10001;
        std::string eo_diff_mode = "max"; // max | sum
    } eval;

    std::string out_dir = "out";

    // -- typed views ---------------------------------------------------------

    FairnessConstraint fairness_constraint() const {
        FairnessConstraint fc;
        fc.kind = constraint_from_name(constraint.kind);
        fc.alpha = constraint.alpha;
        if (constraint.eo_denominator == "group_size") {
            fc.eo_denominator = EoDenominator::GroupSize;
        } else if (constraint.eo_denominator == "conditional") {
            fc.eo_denominator = EoDenominator::Conditional;
        } else {
            throw ConfigError("constraint.eo_denominator: unknown value '" +
                              constraint.eo_denominator +
                              "' (expected group_size|conditional)");
        }
        return fc;
    }

    EvalOptions eval_options() const {
        EvalOptions opt;
        opt.threshold = eval.threshold;
        opt.abroca_grid = eval.abroca_grid;
        if (eval.eo_diff_mode == "max") {
            opt.eo_diff_mode = EoDiffMode::MaxGap;
        } else if (eval.eo_diff_mode == "sum") {
            opt.eo_diff_mode = EoDiffMode::SumGap;
        } else {
            throw ConfigError("eval.eo_diff_mode: unknown value '" + eval.eo_diff_mode +
                              "' (expected max|sum)");
        }
        return opt;
    }

    SynthSpec synth_spec() const {
        SynthSpec spec;
        spec.n = synth.n;
        spec.d = synth.d;
        for (std::size_t i = 0; i < 4; ++i) spec.cell_probs[i] = synth.cell_probs[i];
        spec.class_separation = synth.class_separation;
        spec.attribute_shift = synth.attribute_shift;
        spec.label_noise = synth.label_noise;
        spec.seed = seeds.data;
        return spec;
    }

    SplitFractions split_fractions() const {
        return SplitFractions{split.fractions[0], split.fractions[1], split.fractions[2]};
    }

    // -- validation ------------------------------------------------------------

    void validate() const {
        if (data.source != "synthetic" && data.source != "csv") {
            throw ConfigError("data.source: unknown value '" + data.source +
                              "' (expected synthetic|csv)");
        }
        if (data.source == "csv") {
            if (data.csv_train.empty() || data.csv_val.empty() || data.csv_test.empty()) {
                throw ConfigError("data.csv_train/csv_val/csv_test: all three paths are "
                                  "required when data.source = csv");
            }
        } else {
            if (synth.cell_probs.size() != 4) {
                throw ConfigError("synth.cell_probs: need exactly 4 entries, got " +
                                  std::to_string(synth.cell_probs.size()));
            }
            validate_synth_spec(synth_spec());
        }
        if (split.fractions.size() != 3) {
            throw ConfigError("split.fractions: need exactly 3 entries (train, val, test)");
        }
        double frac_sum = 0.0;
        for (double f : split.fractions) {
            if (!(f > 0.0)) throw ConfigError("split.fractions: every fraction must be > 0");
            frac_sum += f;
        }
        if (std::abs(frac_sum - 1.0) > 1e-9) {
            throw ConfigError("split.fractions: must sum to 1, got " +
                              std::to_string(frac_sum));
        }
        if (!(split.balanced_carve > 0.0 && split.balanced_carve < 1.0)) {
            throw ConfigError("split.balanced_carve: must be in (0,1)");
        }
        if (model.dims.size() < 3) {
            throw ConfigError("model.dims: need at least [input, hidden, output], got " +
                              std::to_string(model.dims.size()) + " entries");
        }
        for (std::size_t d : model.dims) {
            if (d == 0) throw ConfigError("model.dims: zero entry");
        }
        if (model.dims.back() != 2) {
            throw ConfigError("model.dims: final dim must be 2 (binary logits)");
        }
        const std::size_t n_blocks = model.dims.size() - 1;
        if (model.stitch_index != 0 &&
            (model.stitch_index < 1 || model.stitch_index >= n_blocks)) {
            throw ConfigError("model.stitch_index: must be 0 (auto) or in [1, " +
                              std::to_string(n_blocks - 1) + "]");
        }
        (void)fairness_constraint(); // validates kind, eo_denominator
        if (constraint.alpha < 0.0) throw ConfigError("constraint.alpha: must be >= 0");
        if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr: must be > 0");
        if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
            throw ConfigError("optimizer.momentum: must be in [0,1)");
        }
        if (optimizer.weight_decay < 0.0) {
            throw ConfigError("optimizer.weight_decay: must be >= 0");
        }
        if (!(eval.threshold >= 0.0 && eval.threshold <= 1.0)) {
            throw ConfigError("eval.threshold: must be in [0,1]");
        }
        if (eval.abroca_grid < 2) throw ConfigError("eval.abroca_grid: must be >= 2");
        (void)eval_options(); // validates eo_diff_mode
        if (out_dir.empty()) throw ConfigError("out: output directory must not be empty");
    }

    // Canonical serialization: the config hash stamped into artifacts is the
    // FNV-1a of this dump.
    nlohmann::json to_json() const {
        return nlohmann::json{
            {"data",
             {{"source", data.source},
              {"csv_train", data.csv_train},
              {"csv_val", data.csv_val},
              {"csv_test", data.csv_test}}},
            {"synth",
             {{"n", synth.n},
              {"d", synth.d},
              {"cell_probs", synth.cell_probs},
              {"class_separation", synth.class_separation},
              {"attribute_shift", synth.attribute_shift},
              {"label_noise", synth.label_noise}}},
            {"split",
             {{"fractions", split.fractions},
              {"stratify", split.stratify},
              {"balanced_carve", split.balanced_carve}}},
            {"seeds",
             {{"init", seeds.init}, {"data", seeds.data}, {"train", seeds.train}}},
            {"model", {{"dims", model.dims}, {"stitch_index", model.stitch_index}}},
            {"constraint",
             {{"kind", constraint.kind},
              {"alpha", constraint.alpha},
              {"eo_denominator", constraint.eo_denominator}}},
            {"optimizer",
             {{"lr", optimizer.lr},
              {"momentum", optimizer.momentum},
              {"weight_decay", optimizer.weight_decay}}},
            {"train",
             {{"erm_epochs", train.erm_epochs},
              {"finetune_epochs", train.finetune_epochs}}},
            {"eval",
             {{"threshold", eval.threshold},
              {"abroca_grid", eval.abroca_grid},
              {"eo_diff_mode", eval.eo_diff_mode}}},
        };
    }

    std::string hash() const {
        const std::string dump = to_json().dump();
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char c : dump) {
            h ^= c;
            h *= 1099511628211ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

} // namespace fairstitch
