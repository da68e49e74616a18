#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairstitch/errors.hpp"
#include "fairstitch/fairness.hpp"

namespace fairstitch {

// ============================================================================
// Hard-prediction performance and fairness metrics. Everything here is pure
// and stateless; predictions are thresholded as yhat = [p >= threshold].
// ============================================================================

struct ConfusionCounts {
    long tp = 0, fp = 0, tn = 0, fn = 0;

    long size() const { return tp + fp + tn + fn; }
    long positives() const { return tp + fn; }
    long negatives() const { return fp + tn; }
    double tpr() const { return static_cast<double>(tp) / static_cast<double>(positives()); }
    double fpr() const { return static_cast<double>(fp) / static_cast<double>(negatives()); }
    double error_rate() const {
        return static_cast<double>(fp + fn) / static_cast<double>(size());
    }
};

struct GroupConfusion {
    std::array<ConfusionCounts, 2> group; // indexed by attribute value
};

namespace detail_metrics {

inline void check_lengths(std::span<const double> p, std::span<const int> y,
                          std::span<const int> a) {
    if (p.size() != y.size() || p.size() != a.size()) {
        throw ShapeError("metrics: length mismatch: p=" + std::to_string(p.size()) +
                         " y=" + std::to_string(y.size()) + " a=" + std::to_string(a.size()));
    }
}

} // namespace detail_metrics

inline GroupConfusion confusion_by_group(std::span<const double> p, std::span<const int> y,
                                         std::span<const int> a, double threshold = 0.5) {
    detail_metrics::check_lengths(p, y, a);
    GroupConfusion gc;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int pred = p[i] >= threshold ? 1 : 0;
        ConfusionCounts& c = gc.group[static_cast<std::size_t>(a[i])];
        if (y[i] == 1) {
            (pred == 1 ? c.tp : c.fn)++;
        } else {
            (pred == 1 ? c.fp : c.tn)++;
        }
    }
    if (gc.group[0].size() == 0 || gc.group[1].size() == 0) {
        throw EmptyGroupError("confusion_by_group: an attribute group is empty");
    }
    return gc;
}

// Balanced accuracy over the whole split: (TPR + TNR) / 2.
inline double bacc(std::span<const double> p, std::span<const int> y, double threshold = 0.5) {
    if (p.size() != y.size()) {
        throw ShapeError("bacc: length mismatch: p=" + std::to_string(p.size()) + " y=" +
                         std::to_string(y.size()));
    }
    long tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int pred = p[i] >= threshold ? 1 : 0;
        if (y[i] == 1) {
            (pred == 1 ? tp : fn)++;
        } else {
            (pred == 1 ? fp : tn)++;
        }
    }
    if (tp + fn == 0 || tn + fp == 0) {
        throw DegenerateSplitError("bacc: split contains a single class");
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double tnr = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return (tpr + tnr) / 2.0;
}

// Mann-Whitney AUC with half credit for ties, computed from averaged ranks.
// The rank-sum numerator is exact in double precision (half-integers), so the
// result is bit-identical to direct pair counting.
inline double auc(std::span<const double> p, std::span<const int> y) {
    if (p.size() != y.size()) {
        throw ShapeError("auc: length mismatch: p=" + std::to_string(p.size()) + " y=" +
                         std::to_string(y.size()));
    }
    const std::size_t n = p.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
    double pos_rank_sum = 0.0;
    long n_pos = 0, n_neg = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && p[order[j]] == p[order[i]]) ++j;
        // 1-based ranks i+1 .. j averaged over the tie block
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (y[order[k]] == 1) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            } else {
                ++n_neg;
            }
        }
        i = j;
    }
    if (n_pos == 0 || n_neg == 0) {
        throw DegenerateSplitError("auc: split contains a single class");
    }
    const double numerator =
        pos_rank_sum - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
    return numerator / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

enum class EoDiffMode { MaxGap, SumGap };

// Hard equalized-odds difference from the group confusion counts. MaxGap is
// the default scalarization; SumGap adds the two gaps instead.
inline double eo_diff(std::span<const double> p, std::span<const int> y, std::span<const int> a,
                      double threshold = 0.5, EoDiffMode mode = EoDiffMode::MaxGap) {
    const GroupConfusion gc = confusion_by_group(p, y, a, threshold);
    for (int g = 0; g < 2; ++g) {
        if (gc.group[g].positives() == 0 || gc.group[g].negatives() == 0) {
            throw EmptyGroupError("eo_diff: empty (group, label) cell for group " +
                                  std::to_string(g));
        }
    }
    const double tpr_gap = std::abs(gc.group[1].tpr() - gc.group[0].tpr());
    const double fpr_gap = std::abs(gc.group[1].fpr() - gc.group[0].fpr());
    return mode == EoDiffMode::MaxGap ? std::max(tpr_gap, fpr_gap) : tpr_gap + fpr_gap;
}

// Absolute gap between the two groups' misclassification rates.
inline double ae_diff(std::span<const double> p, std::span<const int> y, std::span<const int> a,
                      double threshold = 0.5) {
    const GroupConfusion gc = confusion_by_group(p, y, a, threshold);
    return std::abs(gc.group[1].error_rate() - gc.group[0].error_rate());
}

// Minimum per-(y,a)-cell accuracy.
inline double worst_accuracy(std::span<const double> p, std::span<const int> y,
                             std::span<const int> a, double threshold = 0.5) {
    detail_metrics::check_lengths(p, y, a);
    std::array<long, 4> total{}, correct{};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int pred = p[i] >= threshold ? 1 : 0;
        const std::size_t idx = cell_index(y[i], a[i]);
        total[idx]++;
        if (pred == y[i]) correct[idx]++;
    }
    double worst = 1.0;
    for (std::size_t idx = 0; idx < 4; ++idx) {
        if (total[idx] == 0) {
            throw EmptyGroupError(std::string("worst_accuracy: empty cell ") + cell_name(idx));
        }
        worst = std::min(worst, static_cast<double>(correct[idx]) /
                                    static_cast<double>(total[idx]));
    }
    return worst;
}

// Aggregate fairness-performance score: BACC - EO_Diff, BACC - AE_Diff, or
// BACC + WA depending on the active constraint.
inline double af_score(double balanced_accuracy, double fairness_value, ConstraintKind kind) {
    switch (kind) {
    case ConstraintKind::EqualizedOdds:
    case ConstraintKind::AccuracyEquality:
        return balanced_accuracy - fairness_value;
    case ConstraintKind::MaxMinFairness:
        return balanced_accuracy + fairness_value;
    case ConstraintKind::None:
        break;
    }
    throw ContractError("af_score: undefined without an active fairness constraint");
}

// ---------------------------------------------------------------------------
// ROC curves and ABROCA
// ---------------------------------------------------------------------------

// Empirical ROC threshold points, sorted by FPR, from (0,0) to (1,1).
// Consecutive points are connected linearly: axis-aligned staircase segments
// for distinct scores, diagonal segments across tie blocks (which keeps the
// trapezoid area equal to the tie-corrected AUC).
struct RocCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;

    std::size_t size() const { return fpr.size(); }

    // Trapezoid area under the curve.
    double area() const {
        double acc = 0.0;
        for (std::size_t k = 0; k + 1 < fpr.size(); ++k) {
            acc += (fpr[k + 1] - fpr[k]) * (tpr[k] + tpr[k + 1]) / 2.0;
        }
        return acc;
    }

    // Value at an FPR query; the top of a vertical riser is used when the
    // query hits it exactly (right-continuous choice).
    double at(double f) const {
        auto it = std::upper_bound(fpr.begin(), fpr.end(), f);
        const std::size_t idx = static_cast<std::size_t>(it - fpr.begin()) - 1;
        if (fpr[idx] == f || idx + 1 == fpr.size()) return tpr[idx];
        const double span = fpr[idx + 1] - fpr[idx];
        return tpr[idx] + (tpr[idx + 1] - tpr[idx]) * (f - fpr[idx]) / span;
    }
};

inline RocCurve roc_curve(std::span<const double> p, std::span<const int> y) {
    if (p.size() != y.size()) {
        throw ShapeError("roc_curve: length mismatch: p=" + std::to_string(p.size()) + " y=" +
                         std::to_string(y.size()));
    }
    long n_pos = 0, n_neg = 0;
    for (int label : y) (label == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) {
        throw DegenerateSplitError("roc_curve: split contains a single class");
    }
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return p[i] > p[j]; });
    RocCurve curve;
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && p[order[j]] == p[order[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) (y[order[k]] == 1 ? tp : fp)++;
        curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
        curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
        i = j;
    }
    return curve;
}

// Area between the two groups' ROC curves over the FPR axis, sampled on a
// uniform grid of `grid` points and integrated by the trapezoid rule.
inline double abroca(std::span<const double> p, std::span<const int> y, std::span<const int> a,
                     std::size_t grid = 10001) {
    detail_metrics::check_lengths(p, y, a);
    if (grid < 2) throw ConfigError("abroca: grid must have at least 2 points");
    std::array<std::vector<double>, 2> group_p;
    std::array<std::vector<int>, 2> group_y;
    for (std::size_t i = 0; i < p.size(); ++i) {
        group_p[static_cast<std::size_t>(a[i])].push_back(p[i]);
        group_y[static_cast<std::size_t>(a[i])].push_back(y[i]);
    }
    for (int g = 0; g < 2; ++g) {
        if (group_p[g].empty()) {
            throw EmptyGroupError("abroca: attribute group " + std::to_string(g) + " is empty");
        }
    }
    RocCurve c0, c1;
    try {
        c0 = roc_curve(group_p[0], group_y[0]);
        c1 = roc_curve(group_p[1], group_y[1]);
    } catch (const DegenerateSplitError&) {
        throw DegenerateSplitError("abroca: a group lacks one of the classes");
    }
    const double h = 1.0 / static_cast<double>(grid - 1);
    double acc = 0.0;
    double prev = std::abs(c1.at(0.0) - c0.at(0.0));
    for (std::size_t g = 1; g < grid; ++g) {
        const double f = static_cast<double>(g) * h;
        const double cur = std::abs(c1.at(std::min(f, 1.0)) - c0.at(std::min(f, 1.0)));
        acc += (prev + cur) / 2.0 * h;
        prev = cur;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// MetricsReport
// ---------------------------------------------------------------------------

struct EvalOptions {
    double threshold = 0.5;
    std::size_t abroca_grid = 10001;
    EoDiffMode eo_diff_mode = EoDiffMode::MaxGap;
};

// All metrics for one model on one split. `af` is present only when the
// report was evaluated under an active constraint.
struct MetricsReport {
    double bacc = 0.0;
    double auc = 0.0;
    double eo_diff = 0.0;
    double ae_diff = 0.0;
    double worst_accuracy = 0.0;
    double abroca = 0.0;
    std::optional<double> af;
    double threshold = 0.5;
    std::string split;
    ConstraintKind constraint = ConstraintKind::None;

    nlohmann::json to_json() const {
        nlohmann::json j{
            {"bacc", bacc},       {"auc", auc},
            {"eo_diff", eo_diff}, {"ae_diff", ae_diff},
            {"wa", worst_accuracy}, {"abroca", abroca},
            {"threshold", threshold}, {"split", split},
            {"constraint", constraint_name(constraint)},
        };
        if (af) {
            j["af"] = *af;
        } else {
            j["af"] = nullptr;
        }
        return j;
    }
};

inline MetricsReport evaluate_metrics(std::span<const double> p, std::span<const int> y,
                                      std::span<const int> a, const std::string& split,
                                      ConstraintKind constraint,
                                      const EvalOptions& opt = EvalOptions{}) {
    MetricsReport r;
    r.split = split;
    r.constraint = constraint;
    r.threshold = opt.threshold;
    r.bacc = bacc(p, y, opt.threshold);
    r.auc = auc(p, y);
    r.eo_diff = eo_diff(p, y, a, opt.threshold, opt.eo_diff_mode);
    r.ae_diff = ae_diff(p, y, a, opt.threshold);
    r.worst_accuracy = worst_accuracy(p, y, a, opt.threshold);
    r.abroca = abroca(p, y, a, opt.abroca_grid);
    switch (constraint) {
    case ConstraintKind::EqualizedOdds:
        r.af = af_score(r.bacc, r.eo_diff, constraint);
        break;
    case ConstraintKind::AccuracyEquality:
        r.af = af_score(r.bacc, r.ae_diff, constraint);
        break;
    case ConstraintKind::MaxMinFairness:
        r.af = af_score(r.bacc, r.worst_accuracy, constraint);
        break;
    case ConstraintKind::None:
        break;
    }
    return r;
}

} // namespace fairstitch
