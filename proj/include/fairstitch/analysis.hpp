#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairstitch/dataset.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/fairness.hpp"
#include "fairstitch/metrics.hpp"
#include "fairstitch/network.hpp"
#include "fairstitch/pipeline.hpp"

namespace fairstitch {

// ============================================================================
// Post-hoc analyses: 1-D loss interpolation between checkpoints, per-group
// ROC export, and the method-by-split comparison report. Every evaluation
// here is pure, so grid points and report cells may run in parallel.
// ============================================================================

// Full training objective of a network on one dataset.
inline double evaluate_objective(const Network& net, const TripletDataset& ds,
                                 const FairnessConstraint& constraint, bool ce_only = false) {
    Tape tape;
    ForwardVars vars = forward(net, ds.x, tape);
    const FairnessConstraint active = ce_only ? FairnessConstraint{} : constraint;
    return tape.scalar(composite_objective(tape, vars.logits, ds.y, ds.a, active));
}

// ---------------------------------------------------------------------------
// Loss interpolation along theta(alpha) = (1-alpha)*theta0 + alpha*theta_star
// ---------------------------------------------------------------------------

struct InterpolationOptions {
    bool interpolate_frozen = false; // default: only the trainable component moves
    bool ce_only = false;            // default: the full training objective
    bool allow_extrapolation = false;
    unsigned jobs = 1;
};

struct InterpolationCurve {
    std::vector<double> alphas;
    std::vector<std::string> dataset_names;
    std::vector<std::vector<double>> values; // values[dataset][alpha]
    std::string theta0_id;
    std::string theta_star_id;
};

namespace detail_analysis {

inline void check_same_topology(const Network& a, const Network& b) {
    if (a.dims() != b.dims()) {
        throw ContractError("interpolate: checkpoint architectures disagree");
    }
    const bool sa = a.stitch.has_value(), sb = b.stitch.has_value();
    if (sa != sb || (sa && a.stitch->position != b.stitch->position)) {
        throw ContractError("interpolate: stitch topology disagrees between checkpoints");
    }
    for (std::size_t k = 0; k < a.blocks.size(); ++k) {
        if (a.blocks[k].trainable != b.blocks[k].trainable) {
            throw ContractError("interpolate: trainable flags disagree at block " +
                                std::to_string(k));
        }
    }
    if (sa && a.stitch->layer.trainable != b.stitch->layer.trainable) {
        throw ContractError("interpolate: stitch trainable flags disagree");
    }
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
    const unsigned workers = std::max(1u, jobs);
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::atomic<std::size_t> next{0};
    const unsigned spawn = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    threads.reserve(spawn);
    std::vector<std::exception_ptr> errors(spawn);
    for (unsigned t = 0; t < spawn; ++t) {
        threads.emplace_back([&, t] {
            try {
                for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                    fn(i);
                }
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (std::thread& th : threads) th.join();
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace detail_analysis

inline InterpolationCurve interpolate_loss(const Checkpoint& theta0,
                                           const Checkpoint& theta_star,
                                           const std::vector<const TripletDataset*>& datasets,
                                           const FairnessConstraint& constraint,
                                           std::span<const double> grid,
                                           const InterpolationOptions& opt = {}) {
    detail_analysis::check_same_topology(theta0.net, theta_star.net);
    if (datasets.empty()) throw ContractError("interpolate: no datasets given");
    if (grid.empty()) throw ContractError("interpolate: empty alpha grid");
    if (!opt.allow_extrapolation) {
        for (double alpha : grid) {
            if (alpha < 0.0 || alpha > 1.0) {
                throw ContractError("interpolate: alpha " + std::to_string(alpha) +
                                    " outside [0,1] without the extrapolation flag");
            }
        }
    }
    const bool trainable_only = !opt.interpolate_frozen;
    if (trainable_only && !frozen_params_equal(theta0.net, theta_star.net)) {
        throw ContractError("interpolate: frozen parameters differ between checkpoints; "
                            "they must share the frozen substrate");
    }
    const std::vector<double> p0 = params(theta0.net, trainable_only);
    const std::vector<double> p1 = params(theta_star.net, trainable_only);

    InterpolationCurve curve;
    curve.alphas.assign(grid.begin(), grid.end());
    curve.theta0_id = theta0.meta.phase + "@" + std::to_string(theta0.meta.epoch);
    curve.theta_star_id = theta_star.meta.phase + "@" + std::to_string(theta_star.meta.epoch);
    for (const TripletDataset* ds : datasets) curve.dataset_names.push_back(ds->name);
    curve.values.assign(datasets.size(), std::vector<double>(grid.size(), 0.0));

    detail_analysis::parallel_for(grid.size(), opt.jobs, [&](std::size_t gi) {
        const double alpha = curve.alphas[gi];
        std::vector<double> blend(p0.size());
        for (std::size_t i = 0; i < p0.size(); ++i) {
            blend[i] = (1.0 - alpha) * p0[i] + alpha * p1[i];
        }
        const Network net = with_params(theta_star.net, blend, trainable_only);
        for (std::size_t di = 0; di < datasets.size(); ++di) {
            curve.values[di][gi] =
                evaluate_objective(net, *datasets[di], constraint, opt.ce_only);
        }
    });
    return curve;
}

// ---------------------------------------------------------------------------
// ROC export
// ---------------------------------------------------------------------------

// Per-group empirical ROC step curves; group 0 first.
inline std::array<RocCurve, 2> roc_export(std::span<const double> p, std::span<const int> y,
                                          std::span<const int> a) {
    if (p.size() != y.size() || p.size() != a.size()) {
        throw ShapeError("roc_export: length mismatch");
    }
    std::array<std::vector<double>, 2> group_p;
    std::array<std::vector<int>, 2> group_y;
    for (std::size_t i = 0; i < p.size(); ++i) {
        group_p[static_cast<std::size_t>(a[i])].push_back(p[i]);
        group_y[static_cast<std::size_t>(a[i])].push_back(y[i]);
    }
    for (int g = 0; g < 2; ++g) {
        if (group_p[g].empty()) {
            throw EmptyGroupError("roc_export: attribute group " + std::to_string(g) +
                                  " is empty");
        }
    }
    return {roc_curve(group_p[0], group_y[0]), roc_curve(group_p[1], group_y[1])};
}

// ---------------------------------------------------------------------------
// CSV emission (metadata header line first, '#'-prefixed)
// ---------------------------------------------------------------------------

namespace detail_analysis {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string seeds_str(const Seeds& seeds) {
    return "init:" + std::to_string(seeds.init) + ",data:" + std::to_string(seeds.data) +
           ",train:" + std::to_string(seeds.train);
}

} // namespace detail_analysis

inline void write_interpolation_csv(const InterpolationCurve& curve,
                                    const std::filesystem::path& path,
                                    const std::string& config_hash, const Seeds& seeds) {
    std::ofstream out(path);
    if (!out) throw IoError("interpolation csv: cannot open '" + path.string() + "'");
    out << "# config_hash=" << config_hash << " seeds=" << detail_analysis::seeds_str(seeds)
        << " theta0=" << curve.theta0_id << " theta_star=" << curve.theta_star_id << "\n";
    out << "alpha";
    for (const std::string& name : curve.dataset_names) out << "," << name;
    out << "\n";
    for (std::size_t gi = 0; gi < curve.alphas.size(); ++gi) {
        out << detail_analysis::fmt17(curve.alphas[gi]);
        for (std::size_t di = 0; di < curve.values.size(); ++di) {
            out << "," << detail_analysis::fmt17(curve.values[di][gi]);
        }
        out << "\n";
    }
    if (!out) throw IoError("interpolation csv: write failed for '" + path.string() + "'");
}

inline void write_roc_csv(const std::array<RocCurve, 2>& curves,
                          const std::filesystem::path& path, const std::string& config_hash,
                          const Seeds& seeds) {
    std::ofstream out(path);
    if (!out) throw IoError("roc csv: cannot open '" + path.string() + "'");
    out << "# config_hash=" << config_hash << " seeds=" << detail_analysis::seeds_str(seeds)
        << "\n";
    out << "fpr,group0,group1\n";
    std::set<double> fpr_union(curves[0].fpr.begin(), curves[0].fpr.end());
    fpr_union.insert(curves[1].fpr.begin(), curves[1].fpr.end());
    for (double f : fpr_union) {
        out << detail_analysis::fmt17(f) << "," << detail_analysis::fmt17(curves[0].at(f))
            << "," << detail_analysis::fmt17(curves[1].at(f)) << "\n";
    }
    if (!out) throw IoError("roc csv: write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Comparison report: methods x splits
// ---------------------------------------------------------------------------

struct ComparisonReport {
    std::vector<std::string> methods;
    std::vector<std::string> splits;
    // cells[method][split]
    std::map<std::string, std::map<std::string, MetricsReport>> cells;
    std::string config_hash;
    Seeds seeds;
    FairnessConstraint constraint;

    const MetricsReport& cell(const std::string& method, const std::string& split) const {
        return cells.at(method).at(split);
    }

    nlohmann::json to_json() const {
        nlohmann::json methods_json;
        for (const std::string& m : methods) {
            nlohmann::json per_split;
            for (const std::string& s : splits) per_split[s] = cells.at(m).at(s).to_json();
            methods_json[m] = std::move(per_split);
        }
        return nlohmann::json{
            {"config_hash", config_hash},
            {"seeds",
             {{"init", seeds.init}, {"data", seeds.data}, {"train", seeds.train}}},
            {"constraint",
             {{"kind", constraint_name(constraint.kind)},
              {"alpha", constraint.alpha},
              {"eo_denominator",
               constraint.eo_denominator == EoDenominator::GroupSize ? "group_size"
                                                                     : "conditional"}}},
            {"methods", std::move(methods_json)},
        };
    }

    std::string to_text() const {
        auto fmt = [](double v) {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "%8.4f", v);
            return std::string(buf);
        };
        std::string text;
        char header[160];
        std::snprintf(header, sizeof(header), "%-10s %-10s %8s %8s %8s %8s %8s %8s %8s\n",
                      "method", "split", "bacc", "auc", "eo_diff", "ae_diff", "wa", "af",
                      "abroca");
        text += header;
        for (const std::string& m : methods) {
            for (const std::string& s : splits) {
                const MetricsReport& r = cells.at(m).at(s);
                char line[160];
                std::snprintf(line, sizeof(line), "%-10s %-10s ", m.c_str(), s.c_str());
                text += line;
                text += fmt(r.bacc) + " " + fmt(r.auc) + " " + fmt(r.eo_diff) + " " +
                        fmt(r.ae_diff) + " " + fmt(r.worst_accuracy) + " ";
                text += r.af ? fmt(*r.af) : std::string("       -");
                text += " " + fmt(r.abroca) + "\n";
            }
        }
        return text;
    }
};

// Evaluates every (method, split) cell with the metrics module. Errors are
// annotated with the cell that raised them.
inline ComparisonReport
emit_report(const std::vector<std::pair<std::string, const Network*>>& methods,
            const std::vector<const TripletDataset*>& splits,
            const FairnessConstraint& constraint, const EvalOptions& eval_opt,
            const std::string& config_hash, const Seeds& seeds, unsigned jobs = 1) {
    if (methods.empty() || splits.empty()) {
        throw ContractError("emit_report: methods and splits must be non-empty");
    }
    ComparisonReport report;
    report.config_hash = config_hash;
    report.seeds = seeds;
    report.constraint = constraint;
    for (const auto& [name, net] : methods) report.methods.push_back(name);
    for (const TripletDataset* ds : splits) report.splits.push_back(ds->name);

    struct Cell {
        std::string method;
        std::string split;
        MetricsReport result;
    };
    std::vector<Cell> flat(methods.size() * splits.size());
    detail_analysis::parallel_for(flat.size(), jobs, [&](std::size_t i) {
        const auto& [mname, net] = methods[i / splits.size()];
        const TripletDataset* ds = splits[i % splits.size()];
        try {
            const Tensor p = class1_probs(*net, ds->x);
            flat[i] = Cell{mname, ds->name,
                           evaluate_metrics(p.data, ds->y, ds->a, ds->name, constraint.kind,
                                            eval_opt)};
        } catch (const EmptyGroupError& e) {
            throw EmptyGroupError("report[" + mname + "/" + ds->name + "]: " + e.what());
        } catch (const DegenerateSplitError& e) {
            throw DegenerateSplitError("report[" + mname + "/" + ds->name + "]: " + e.what());
        } catch (const Error& e) {
            throw Error("report[" + mname + "/" + ds->name + "]: " + e.what());
        }
    });
    for (Cell& cell : flat) {
        report.cells[cell.method][cell.split] = std::move(cell.result);
    }
    return report;
}

} // namespace fairstitch
