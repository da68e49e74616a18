#pragma once

#include <array>
#include <string>
#include <vector>

#include "fairstitch/autodiff.hpp"
#include "fairstitch/errors.hpp"
#include "fairstitch/tensor.hpp"

namespace fairstitch {

// ============================================================================
// Differentiable fairness surrogates and the composite training objective
// (cross-entropy + alpha * surrogate). All group statistics are soft: hard
// thresholded rates live in metrics.hpp.
// ============================================================================

enum class ConstraintKind { None, EqualizedOdds, AccuracyEquality, MaxMinFairness };

// The printed equalized-odds ratio terms normalize by group size; the
// conditional variant normalizes by the count of rows carrying the relevant
// label within each group (true-rate semantics). Both are supported.
enum class EoDenominator { GroupSize, Conditional };

struct FairnessConstraint {
    ConstraintKind kind = ConstraintKind::None;
    double alpha = 0.0;
    EoDenominator eo_denominator = EoDenominator::GroupSize;
};

inline const char* constraint_name(ConstraintKind k) {
    switch (k) {
    case ConstraintKind::None: return "none";
    case ConstraintKind::EqualizedOdds: return "eo";
    case ConstraintKind::AccuracyEquality: return "ae";
    case ConstraintKind::MaxMinFairness: return "mmf";
    }
    return "none";
}

inline ConstraintKind constraint_from_name(const std::string& name) {
    if (name == "none") return ConstraintKind::None;
    if (name == "eo") return ConstraintKind::EqualizedOdds;
    if (name == "ae") return ConstraintKind::AccuracyEquality;
    if (name == "mmf") return ConstraintKind::MaxMinFairness;
    throw ConfigError("constraint.kind: unknown value '" + name +
                      "' (expected none|eo|ae|mmf)");
}

// Per-batch view used by every surrogate: class-1 probabilities on tape plus
// constant label/attribute columns.
struct BatchContext {
    Tape::Var p; // m x 1, in (0,1)
    std::vector<int> y;
    std::vector<int> a;
};

namespace detail {

inline void check_binary(const std::vector<int>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] != 0 && v[i] != 1) {
            throw ContractError(std::string("batch: ") + what + " at row " +
                                std::to_string(i) + " is " + std::to_string(v[i]) +
                                ", expected 0/1");
        }
    }
}

// Column of m entries, 1.0 where pred holds.
template <typename Pred>
Tensor mask_where(std::size_t m, Pred&& pred) {
    Tensor t(m, 1, 0.0);
    for (std::size_t i = 0; i < m; ++i) t.data[i] = pred(i) ? 1.0 : 0.0;
    return t;
}

inline std::size_t mask_count(const Tensor& mask) {
    std::size_t n = 0;
    for (double v : mask.data) n += v != 0.0 ? 1 : 0;
    return n;
}

} // namespace detail

inline BatchContext make_context(Tape::Var p, std::vector<int> y, std::vector<int> a) {
    if (p.cols != 1) {
        throw ShapeError("batch: probabilities must be a column vector, got " +
                         Tensor::shape_str(p.rows, p.cols));
    }
    if (y.size() != p.rows || a.size() != p.rows) {
        throw ShapeError("batch: length mismatch: p has " + std::to_string(p.rows) +
                         " rows, y has " + std::to_string(y.size()) + ", a has " +
                         std::to_string(a.size()));
    }
    detail::check_binary(y, "label");
    detail::check_binary(a, "attribute");
    return BatchContext{p, std::move(y), std::move(a)};
}

// ---------------------------------------------------------------------------
// Equalized-odds surrogate: soft false-positive gap + soft false-negative gap
// between the two attribute groups.
//
//   T = | sum p_i (1-y_i) a_i / D1  -  sum p_i (1-y_i)(1-a_i) / D0 |
//   F = | sum (1-p_i) y_i a_i / D1  -  sum (1-p_i) y_i (1-a_i) / D0 |
//
// with D_g the group size, or the per-(group, relevant-label) cell count in
// the conditional variant.
// ---------------------------------------------------------------------------
inline Tape::Var eo_surrogate(Tape& tape, const BatchContext& ctx,
                              EoDenominator denom = EoDenominator::GroupSize) {
    const std::size_t m = ctx.y.size();
    const Tensor group1 = detail::mask_where(m, [&](std::size_t i) { return ctx.a[i] == 1; });
    const Tensor group0 = detail::mask_where(m, [&](std::size_t i) { return ctx.a[i] == 0; });
    if (detail::mask_count(group1) == 0 || detail::mask_count(group0) == 0) {
        throw EmptyGroupError("eo_surrogate: an attribute group is empty");
    }

    const Tensor neg_label = detail::mask_where(m, [&](std::size_t i) { return ctx.y[i] == 0; });
    const Tensor pos_label = detail::mask_where(m, [&](std::size_t i) { return ctx.y[i] == 1; });
    Tape::Var one_minus_p = tape.scale_shift(ctx.p, -1.0, 1.0);

    auto rate_gap = [&](Tape::Var probs, const Tensor& label_mask,
                        const char* which) -> Tape::Var {
        Tape::Var t1, t0;
        if (denom == EoDenominator::GroupSize) {
            t1 = tape.masked_mean(tape.cmul(probs, label_mask), group1);
            t0 = tape.masked_mean(tape.cmul(probs, label_mask), group0);
        } else {
            Tensor cell1(m, 1), cell0(m, 1);
            for (std::size_t i = 0; i < m; ++i) {
                cell1.data[i] = label_mask.data[i] * group1.data[i];
                cell0.data[i] = label_mask.data[i] * group0.data[i];
            }
            if (detail::mask_count(cell1) == 0 || detail::mask_count(cell0) == 0) {
                throw EmptyGroupError(std::string("eo_surrogate: empty (group, label) cell for ") +
                                      which + " term under conditional denominators");
            }
            t1 = tape.masked_mean(probs, cell1);
            t0 = tape.masked_mean(probs, cell0);
        }
        const std::array<Tape::Var, 2> terms{t1, t0};
        const std::array<double, 2> signs{1.0, -1.0};
        return tape.abs_scalar(tape.weighted_sum(terms, signs));
    };

    Tape::Var fp_gap = rate_gap(ctx.p, neg_label, "false-positive");
    Tape::Var fn_gap = rate_gap(one_minus_p, pos_label, "false-negative");
    const std::array<Tape::Var, 2> parts{fp_gap, fn_gap};
    const std::array<double, 2> ones{1.0, 1.0};
    return tape.weighted_sum(parts, ones);
}

// ---------------------------------------------------------------------------
// Accuracy-equality surrogate: absolute gap in group-mean soft
// misclassification, err_i = p_i(1-y_i) + (1-p_i)y_i.
// ---------------------------------------------------------------------------
inline Tape::Var ae_surrogate(Tape& tape, const BatchContext& ctx) {
    const std::size_t m = ctx.y.size();
    const Tensor group1 = detail::mask_where(m, [&](std::size_t i) { return ctx.a[i] == 1; });
    const Tensor group0 = detail::mask_where(m, [&](std::size_t i) { return ctx.a[i] == 0; });
    if (detail::mask_count(group1) == 0 || detail::mask_count(group0) == 0) {
        throw EmptyGroupError("ae_surrogate: an attribute group is empty");
    }
    // err = p(1-2y) + y, elementwise
    Tensor one_minus_2y(m, 1), label(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
        one_minus_2y.data[i] = 1.0 - 2.0 * ctx.y[i];
        label.data[i] = static_cast<double>(ctx.y[i]);
    }
    Tape::Var err = tape.cadd(tape.cmul(ctx.p, one_minus_2y), label);
    Tape::Var mean1 = tape.masked_mean(err, group1);
    Tape::Var mean0 = tape.masked_mean(err, group0);
    const std::array<Tape::Var, 2> terms{mean1, mean0};
    const std::array<double, 2> signs{1.0, -1.0};
    return tape.abs_scalar(tape.weighted_sum(terms, signs));
}

// Canonical (label, attribute) cell order used everywhere a cell index
// appears: (0,0), (0,1), (1,0), (1,1).
inline std::size_t cell_index(int y, int a) {
    return static_cast<std::size_t>(2 * y + a);
}

inline const char* cell_name(std::size_t idx) {
    static constexpr const char* names[4] = {"(y=0,a=0)", "(y=0,a=1)", "(y=1,a=0)", "(y=1,a=1)"};
    return names[idx];
}

// ---------------------------------------------------------------------------
// Max-min fairness surrogate: maximum per-(y,a)-cell mean cross-entropy. The
// subgradient flows to the lowest-index cell on ties.
// ---------------------------------------------------------------------------
inline Tape::Var mmf_surrogate(Tape& tape, const BatchContext& ctx, Tape::Var per_row_ce) {
    const std::size_t m = ctx.y.size();
    if (per_row_ce.rows != m || per_row_ce.cols != 1) {
        throw ShapeError("mmf_surrogate: per-row loss shape " +
                         Tensor::shape_str(per_row_ce.rows, per_row_ce.cols) +
                         " does not match batch of " + std::to_string(m));
    }
    std::array<Tape::Var, 4> cell_means;
    for (std::size_t idx = 0; idx < 4; ++idx) {
        const int yq = static_cast<int>(idx / 2), aq = static_cast<int>(idx % 2);
        const Tensor mask = detail::mask_where(
            m, [&](std::size_t i) { return ctx.y[i] == yq && ctx.a[i] == aq; });
        if (detail::mask_count(mask) == 0) {
            throw EmptyGroupError(std::string("mmf_surrogate: empty cell ") + cell_name(idx));
        }
        cell_means[idx] = tape.masked_mean(per_row_ce, mask);
    }
    return tape.max_scalar(cell_means);
}

// ---------------------------------------------------------------------------
// Composite objective: cross-entropy + alpha * surrogate.
// ---------------------------------------------------------------------------
inline Tape::Var composite_objective(Tape& tape, Tape::Var logits, const std::vector<int>& y,
                                     const std::vector<int>& a,
                                     const FairnessConstraint& constraint) {
    if (constraint.alpha < 0.0) {
        throw ConfigError("constraint.alpha: must be non-negative, got " +
                          std::to_string(constraint.alpha));
    }
    Tape::Var rows = tape.cross_entropy_rows(logits, y);
    Tape::Var ce = tape.masked_mean(rows, Tensor(rows.rows, 1, 1.0));
    if (constraint.kind == ConstraintKind::None) return ce;

    BatchContext ctx = make_context(tape.softmax_probs(logits), y, a);
    Tape::Var regularizer;
    switch (constraint.kind) {
    case ConstraintKind::EqualizedOdds:
        regularizer = eo_surrogate(tape, ctx, constraint.eo_denominator);
        break;
    case ConstraintKind::AccuracyEquality:
        regularizer = ae_surrogate(tape, ctx);
        break;
    case ConstraintKind::MaxMinFairness:
        regularizer = mmf_surrogate(tape, ctx, rows);
        break;
    case ConstraintKind::None:
        break;
    }
    const std::array<Tape::Var, 2> terms{ce, regularizer};
    const std::array<double, 2> weights{1.0, constraint.alpha};
    return tape.weighted_sum(terms, weights);
}

} // namespace fairstitch
