#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairstitch/autodiff.hpp"
#include "fairstitch/dataset.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/fairness.hpp"
#include "fairstitch/metrics.hpp"
#include "fairstitch/network.hpp"
#include "fairstitch/rng.hpp"

namespace fairstitch {

// ============================================================================
// Training procedures: ERM pretraining, stitch training (tfs), and last-layer
// fine-tuning (fdr), all full-batch and deterministic per (config, seeds).
// ============================================================================

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay folded into the velocity:
//   v <- mu*v + g + lambda*theta;  theta <- theta - eta*v
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    // Largest step that stays stable under momentum 0.9 for unit-scale
    // features; full-batch training at smaller rates visibly underfits
    // within the default epoch budgets.
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

struct OptimizerState {
    OptimizerConfig cfg;
    std::vector<double> velocity;

    OptimizerState(OptimizerConfig config, std::size_t n_params)
        : cfg(config), velocity(n_params, 0.0) {}
};

inline void sgd_step(std::span<double> params, std::span<const double> grads,
                     OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.velocity.size()) {
        throw ContractError("sgd_step: length mismatch: params=" +
                            std::to_string(params.size()) + " grads=" +
                            std::to_string(grads.size()) + " velocity=" +
                            std::to_string(state.velocity.size()));
    }
    const double mu = state.cfg.momentum;
    const double lambda = state.cfg.weight_decay;
    const double eta = state.cfg.lr;
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.velocity[i] = mu * state.velocity[i] + grads[i] + lambda * params[i];
        params[i] -= eta * state.velocity[i];
    }
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct RunRecord {
    std::string phase;
    std::size_t epoch = 0;
    double objective = 0.0;
    MetricsReport validation;
    FairnessConstraint constraint;
    std::uint64_t seed = 0;
    // Held in memory only; the serialized record stream must be byte-identical
    // across reruns, so wall time never reaches disk.
    double wall_time_ms = 0.0;

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"phase", phase},
            {"epoch", epoch},
            {"objective", objective},
            {"constraint",
             {{"kind", constraint_name(constraint.kind)},
              {"alpha", constraint.alpha},
              {"eo_denominator",
               constraint.eo_denominator == EoDenominator::GroupSize ? "group_size"
                                                                     : "conditional"}}},
            {"seed", seed},
            {"validation", validation.to_json()},
        };
    }
};

inline void write_records(const std::vector<RunRecord>& records,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_records: cannot open '" + path.string() + "'");
    for (const RunRecord& r : records) out << r.to_json().dump() << "\n";
    if (!out) throw IoError("write_records: write failed for '" + path.string() + "'");
}

// Epoch whose validation score is maximal: AF under an active constraint,
// BACC otherwise. Ties resolve to the earliest epoch.
inline std::size_t select_best(const std::vector<RunRecord>& records) {
    if (records.empty()) throw ContractError("select_best: no records");
    std::size_t best = 0;
    auto key = [](const RunRecord& r) {
        return r.validation.af ? *r.validation.af : r.validation.bacc;
    };
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (key(records[i]) > key(records[best])) best = i;
    }
    return records[best].epoch;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOutput {
    Network best;       // epoch maximizing the validation selection score
    Network final_net;  // state after the last epoch
    Network initial;    // state before the first epoch (stitch already inserted)
    std::vector<RunRecord> records;
    std::size_t best_epoch = 0;
};

namespace detail_train {

inline constexpr double kDivergenceBound = 1e6;

inline TrainOutput run_loop(Network net, const TripletDataset& train_ds,
                            const TripletDataset& val_ds, const std::string& phase,
                            const FairnessConstraint& constraint, std::size_t epochs,
                            OptimizerConfig opt, std::uint64_t seed,
                            const EvalOptions& eval_opt) {
    check_dataset(train_ds);
    check_dataset(val_ds);
    TrainOutput out{net, net, net, {}, 0};
    std::vector<double> theta = params(net, /*trainable_only=*/true);
    OptimizerState state(opt, theta.size());
    double best_key = -std::numeric_limits<double>::infinity();
    out.records.reserve(epochs);

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Tape tape;
        ForwardVars vars = forward(net, train_ds.x, tape);
        Tape::Var objective =
            composite_objective(tape, vars.logits, train_ds.y, train_ds.a, constraint);
        const double loss = tape.scalar(objective);
        if (!std::isfinite(loss) || loss > kDivergenceBound) {
            throw DivergenceError(phase + ": objective " + std::to_string(loss) +
                                  " at epoch " + std::to_string(epoch) + " with lr " +
                                  std::to_string(opt.lr));
        }
        tape.backward(objective);
        const std::vector<double> grad = trainable_grad(net, tape, vars);
        sgd_step(theta, grad, state);
        net = with_params(std::move(net), theta, true);

        const Tensor val_p = class1_probs(net, val_ds.x);
        MetricsReport report = evaluate_metrics(val_p.data, val_ds.y, val_ds.a, val_ds.name,
                                                constraint.kind, eval_opt);
        RunRecord record{phase, epoch, loss, std::move(report), constraint, seed, 0.0};
        record.wall_time_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        const double key =
            record.validation.af ? *record.validation.af : record.validation.bacc;
        if (key > best_key) {
            best_key = key;
            out.best = net;
            out.best_epoch = epoch;
        }
        out.records.push_back(std::move(record));
    }
    out.final_net = std::move(net);
    if (epochs == 0) {
        out.best = out.initial;
        out.final_net = out.initial;
    }
    return out;
}

} // namespace detail_train

// Plain cross-entropy pretraining of a fully trainable network. The product
// of this phase is the final state.
inline TrainOutput train_erm(const Network& net, const TripletDataset& train_ds,
                             const TripletDataset& val_ds, std::size_t epochs,
                             OptimizerConfig opt, std::uint64_t seed,
                             const EvalOptions& eval_opt = EvalOptions{}) {
    for (const LayerBlock& b : net.blocks) {
        if (!b.trainable) throw ContractError("train_erm: network must be fully trainable");
    }
    TrainOutput out = detail_train::run_loop(net, train_ds, val_ds, "erm",
                                             FairnessConstraint{}, epochs, opt, seed, eval_opt);
    out.best = out.final_net;
    out.best_epoch = epochs;
    return out;
}

// Stitch training: inserts a random-init stitch (default: before the last
// block), freezes everything else, and optimizes cross-entropy + alpha *
// surrogate on the balanced set. Selection is by validation AF.
inline TrainOutput train_tfs(const Network& pretrained, const TripletDataset& balanced_ds,
                             const TripletDataset& val_ds, const FairnessConstraint& constraint,
                             std::size_t epochs, OptimizerConfig opt, std::uint64_t seed,
                             const EvalOptions& eval_opt = EvalOptions{},
                             std::optional<std::size_t> stitch_position = std::nullopt) {
    if (pretrained.stitch) {
        throw ContractError("train_tfs: pretrained network already has a stitch");
    }
    const std::size_t position = stitch_position.value_or(pretrained.block_count() - 1);
    Network net = insert_stitch(pretrained, position, StitchInit::Random,
                                derive_seed(seed, seed_tag::stitch_init));
    return detail_train::run_loop(std::move(net), balanced_ds, val_ds, "tfs", constraint,
                                  epochs, opt, seed, eval_opt);
}

// Last-layer fine-tuning baseline: same objective and selection as train_tfs
// but the only trainable parameters are the last block's.
inline TrainOutput train_fdr(const Network& pretrained, const TripletDataset& balanced_ds,
                             const TripletDataset& val_ds, const FairnessConstraint& constraint,
                             std::size_t epochs, OptimizerConfig opt, std::uint64_t seed,
                             const EvalOptions& eval_opt = EvalOptions{}) {
    Network net = set_trainable(pretrained, TrainableSelector::LastBlockOnly);
    return detail_train::run_loop(std::move(net), balanced_ds, val_ds, "fdr", constraint,
                                  epochs, opt, seed, eval_opt);
}

// ---------------------------------------------------------------------------
// Checkpoints (JSON, exact double round trip)
// ---------------------------------------------------------------------------

struct Seeds {
    std::uint64_t init = 7;
    std::uint64_t data = 7;
    std::uint64_t train = 7;
};

struct CheckpointMeta {
    std::string phase = "erm";
    std::size_t epoch = 0;
    OptimizerConfig optimizer;
    Seeds seeds;
};

struct Checkpoint {
    int version = 1;
    Network net;
    CheckpointMeta meta;
};

namespace detail_ckpt {

inline nlohmann::json weight_to_json(const Tensor& w) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < w.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < w.cols; ++c) row.push_back(w.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Tensor weight_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                               const std::string& what) {
    if (!j.is_array() || j.size() != rows) {
        throw CheckpointError("checkpoint: " + what + " has " + std::to_string(j.size()) +
                              " rows, expected " + std::to_string(rows));
    }
    Tensor w(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const nlohmann::json& row = j[r];
        if (!row.is_array() || row.size() != cols) {
            throw CheckpointError("checkpoint: " + what + " row " + std::to_string(r) +
                                  " has " + std::to_string(row.size()) +
                                  " entries, expected " + std::to_string(cols));
        }
        for (std::size_t c = 0; c < cols; ++c) w.at(r, c) = row[c].get<double>();
    }
    return w;
}

inline Tensor bias_from_json(const nlohmann::json& j, std::size_t cols,
                             const std::string& what) {
    if (!j.is_array() || j.size() != cols) {
        throw CheckpointError("checkpoint: " + what + " has " + std::to_string(j.size()) +
                              " entries, expected " + std::to_string(cols));
    }
    Tensor b(1, cols);
    for (std::size_t c = 0; c < cols; ++c) b.at(0, c) = j[c].get<double>();
    return b;
}

} // namespace detail_ckpt

inline nlohmann::json checkpoint_to_json(const Network& net, const CheckpointMeta& meta) {
    check_chain(net);
    nlohmann::json params_json;
    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        nlohmann::json block;
        block["w"] = detail_ckpt::weight_to_json(net.blocks[k].weight);
        nlohmann::json bias = nlohmann::json::array();
        for (double v : net.blocks[k].bias.data) bias.push_back(v);
        block["b"] = std::move(bias);
        params_json["block_" + std::to_string(k)] = std::move(block);
    }
    nlohmann::json trainable = nlohmann::json::array();
    for (const LayerBlock& b : net.blocks) trainable.push_back(b.trainable);
    nlohmann::json j{
        {"version", 1},
        {"dims", net.dims()},
        {"stitch_index", nullptr},
        {"trainable", std::move(trainable)},
        {"optimizer",
         {{"lr", meta.optimizer.lr},
          {"momentum", meta.optimizer.momentum},
          {"weight_decay", meta.optimizer.weight_decay}}},
        {"phase", meta.phase},
        {"epoch", meta.epoch},
        {"seeds",
         {{"init", meta.seeds.init}, {"data", meta.seeds.data}, {"train", meta.seeds.train}}},
    };
    if (net.stitch) {
        j["stitch_index"] = net.stitch->position;
        nlohmann::json stitch;
        stitch["w"] = detail_ckpt::weight_to_json(net.stitch->layer.weight);
        nlohmann::json bias = nlohmann::json::array();
        for (double v : net.stitch->layer.bias.data) bias.push_back(v);
        stitch["b"] = std::move(bias);
        stitch["trainable"] = net.stitch->layer.trainable;
        params_json["stitch"] = std::move(stitch);
    }
    j["params"] = std::move(params_json);
    return j;
}

inline void save_checkpoint(const Network& net, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_checkpoint: cannot open '" + path.string() + "'");
    out << checkpoint_to_json(net, meta).dump(2) << "\n";
    if (!out) throw IoError("save_checkpoint: write failed for '" + path.string() + "'");
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        Checkpoint ckpt;
        ckpt.version = j.at("version").get<int>();
        if (ckpt.version != 1) {
            throw CheckpointError("checkpoint: version " + std::to_string(ckpt.version) +
                                  " is not supported (expected 1)");
        }
        const std::vector<std::size_t> dims = j.at("dims").get<std::vector<std::size_t>>();
        if (dims.size() < 2) throw CheckpointError("checkpoint: dims needs >= 2 entries");
        const std::size_t n_blocks = dims.size() - 1;
        const std::vector<bool> trainable = j.at("trainable").get<std::vector<bool>>();
        if (trainable.size() != n_blocks) {
            throw CheckpointError("checkpoint: trainable has " +
                                  std::to_string(trainable.size()) + " entries for " +
                                  std::to_string(n_blocks) + " blocks");
        }
        const nlohmann::json& params_json = j.at("params");
        Network net;
        for (std::size_t k = 0; k < n_blocks; ++k) {
            const std::string key = "block_" + std::to_string(k);
            if (!params_json.contains(key)) {
                throw CheckpointError("checkpoint: missing params." + key);
            }
            LayerBlock block;
            block.weight = detail_ckpt::weight_from_json(params_json[key].at("w"), dims[k],
                                                         dims[k + 1], key + ".w");
            block.bias =
                detail_ckpt::bias_from_json(params_json[key].at("b"), dims[k + 1], key + ".b");
            block.activation = (k + 1 == n_blocks) ? Activation::None : Activation::Relu;
            block.trainable = trainable[k];
            net.blocks.push_back(std::move(block));
        }
        if (!j.at("stitch_index").is_null()) {
            const std::size_t pos = j.at("stitch_index").get<std::size_t>();
            if (pos < 1 || pos >= n_blocks) {
                throw CheckpointError("checkpoint: stitch_index " + std::to_string(pos) +
                                      " outside [1, " + std::to_string(n_blocks - 1) + "]");
            }
            if (!params_json.contains("stitch")) {
                throw CheckpointError("checkpoint: stitch_index set but params.stitch missing");
            }
            Stitch stitch;
            stitch.position = pos;
            stitch.layer.weight = detail_ckpt::weight_from_json(
                params_json["stitch"].at("w"), dims[pos], dims[pos], "stitch.w");
            stitch.layer.bias =
                detail_ckpt::bias_from_json(params_json["stitch"].at("b"), dims[pos], "stitch.b");
            stitch.layer.activation = Activation::None;
            stitch.layer.trainable = params_json["stitch"].at("trainable").get<bool>();
            net.stitch = std::move(stitch);
        }
        check_chain(net);
        ckpt.net = std::move(net);
        ckpt.meta.phase = j.at("phase").get<std::string>();
        ckpt.meta.epoch = j.at("epoch").get<std::size_t>();
        ckpt.meta.optimizer.lr = j.at("optimizer").at("lr").get<double>();
        ckpt.meta.optimizer.momentum = j.at("optimizer").at("momentum").get<double>();
        ckpt.meta.optimizer.weight_decay = j.at("optimizer").at("weight_decay").get<double>();
        ckpt.meta.seeds.init = j.at("seeds").at("init").get<std::uint64_t>();
        ckpt.meta.seeds.data = j.at("seeds").at("data").get<std::uint64_t>();
        ckpt.meta.seeds.train = j.at("seeds").at("train").get<std::uint64_t>();
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed document: ") + e.what());
    } catch (const ShapeError& e) {
        throw CheckpointError(std::string("checkpoint: inconsistent dimensions: ") + e.what());
    } catch (const RangeError& e) {
        throw CheckpointError(std::string("checkpoint: inconsistent dimensions: ") + e.what());
    }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint: '" + path.string() + "' is not valid JSON: " +
                              e.what());
    }
    return checkpoint_from_json(j);
}

} // namespace fairstitch
