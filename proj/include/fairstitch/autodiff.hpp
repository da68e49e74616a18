#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fairstitch/errors.hpp"
#include "fairstitch/tensor.hpp"

namespace fairstitch {

// ============================================================================
// Reverse-mode differentiation over dense 2-D tensors.
//
// A Tape records every forward operation as an append-only node list (inputs
// always precede their consumers), so backward() is a single reverse sweep
// with a deterministic accumulation order. Tensors and tapes are
// immutable-after-forward; one tape is built and backpropagated by a single
// thread.
// ============================================================================

enum class OpKind {
    Leaf,
    MatMul,
    Affine,
    Relu,
    SoftmaxProbs,
    CrossEntropyRows,
    MaskedMean,
    CMul,
    CAdd,
    ScaleShift,
    AbsScalar,
    MaxScalar,
    WeightedSum,
};

class Tape {
public:
    struct Var {
        int id = -1;
        std::size_t rows = 0;
        std::size_t cols = 0;
    };

    // ---- leaves ------------------------------------------------------------

    Var leaf(Tensor t) {
        return push(OpKind::Leaf, {}, std::move(t), {}, /*leaf_requires_grad=*/true);
    }

    Var constant(Tensor t) {
        t.requires_grad = false;
        return push(OpKind::Leaf, {}, std::move(t), {}, true);
    }

    // ---- linear algebra ----------------------------------------------------

    Var matmul(Var a, Var b) {
        if (a.cols != b.rows) {
            throw ShapeError("matmul: inner dimensions disagree: " +
                             Tensor::shape_str(a.rows, a.cols) + " vs " +
                             Tensor::shape_str(b.rows, b.cols));
        }
        Tensor out = matmul_nn(value(a), value(b));
        return push(OpKind::MatMul, {a.id, b.id}, std::move(out), {});
    }

    Var affine(Var x, Var w, Var b) {
        if (x.cols != w.rows) {
            throw ShapeError("affine: input/weight dimensions disagree: " +
                             Tensor::shape_str(x.rows, x.cols) + " vs " +
                             Tensor::shape_str(w.rows, w.cols));
        }
        if (b.rows != 1 || b.cols != w.cols) {
            throw ShapeError("affine: bias shape " + Tensor::shape_str(b.rows, b.cols) +
                             " does not broadcast over rows of " +
                             Tensor::shape_str(x.rows, w.cols));
        }
        Tensor out = matmul_nn(value(x), value(w));
        const Tensor& bias = value(b);
        for (std::size_t r = 0; r < out.rows; ++r) {
            for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += bias.at(0, c);
        }
        return push(OpKind::Affine, {x.id, w.id, b.id}, std::move(out), {});
    }

    // ---- elementwise -------------------------------------------------------

    Var relu(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(OpKind::Relu, {x.id}, std::move(out), {});
    }

    // Elementwise product with a constant; the constant never receives grad.
    Var cmul(Var x, const Tensor& c) {
        require_same_shape("cmul", x, c);
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= c.data[i];
        return push(OpKind::CMul, {x.id}, std::move(out), c.data);
    }

    Var cadd(Var x, const Tensor& c) {
        require_same_shape("cadd", x, c);
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
        return push(OpKind::CAdd, {x.id}, std::move(out), c.data);
    }

    // a*x + b applied elementwise.
    Var scale_shift(Var x, double a, double b) {
        Tensor out = value(x);
        for (double& v : out.data) v = a * v + b;
        return push(OpKind::ScaleShift, {x.id}, std::move(out), {a, b});
    }

    // ---- classifier head ---------------------------------------------------

    // Probability of class 1 per row for binary logits, max-shifted for
    // stability and nudged into the open interval (0, 1).
    Var softmax_probs(Var logits) {
        if (logits.cols != 2) {
            throw ShapeError("softmax_probs: expected 2 logit columns, got shape " +
                             Tensor::shape_str(logits.rows, logits.cols));
        }
        const Tensor& z = value(logits);
        Tensor out(z.rows, 1);
        for (std::size_t r = 0; r < z.rows; ++r) {
            out.at(r, 0) = clamp_prob(row_prob1(z.at(r, 0), z.at(r, 1)));
        }
        return push(OpKind::SoftmaxProbs, {logits.id}, std::move(out), {});
    }

    // Per-row negative log-likelihood of the true class, via log-sum-exp.
    Var cross_entropy_rows(Var logits, const std::vector<int>& y) {
        if (logits.cols != 2) {
            throw ShapeError("cross_entropy: expected 2 logit columns, got shape " +
                             Tensor::shape_str(logits.rows, logits.cols));
        }
        if (y.size() != logits.rows) {
            throw ShapeError("cross_entropy: " + std::to_string(y.size()) +
                             " labels for " + std::to_string(logits.rows) + " rows");
        }
        if (logits.rows == 0) throw ContractError("cross_entropy: empty batch");
        const Tensor& z = value(logits);
        Tensor out(z.rows, 1);
        std::vector<double> aux(2 * z.rows); // [labels..., p1 per row...]
        for (std::size_t r = 0; r < z.rows; ++r) {
            const int label = y[r];
            if (label != 0 && label != 1) {
                throw ContractError("cross_entropy: label at row " + std::to_string(r) +
                                    " is " + std::to_string(label) + ", expected 0/1");
            }
            const double z0 = z.at(r, 0), z1 = z.at(r, 1);
            const double m = std::max(z0, z1);
            const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
            out.at(r, 0) = lse - (label == 1 ? z1 : z0);
            aux[r] = static_cast<double>(label);
            aux[z.rows + r] = row_prob1(z0, z1);
        }
        return push(OpKind::CrossEntropyRows, {logits.id}, std::move(out), std::move(aux));
    }

    // Mean per-row cross-entropy over the batch.
    Var cross_entropy(Var logits, const std::vector<int>& y) {
        Var rows = cross_entropy_rows(logits, y);
        return masked_mean(rows, Tensor(rows.rows, 1, 1.0));
    }

    // ---- reductions --------------------------------------------------------

    // (sum v_i * mask_i) / (sum mask_i); mask is a {0,1} constant.
    Var masked_mean(Var v, const Tensor& mask) {
        if (v.cols != 1) {
            throw ShapeError("masked_mean: expected column vector, got " +
                             Tensor::shape_str(v.rows, v.cols));
        }
        require_same_shape("masked_mean", v, mask);
        double mask_sum = 0.0;
        for (double m : mask.data) {
            if (m != 0.0 && m != 1.0) {
                throw ContractError("masked_mean: mask entries must be 0 or 1");
            }
            mask_sum += m;
        }
        if (mask_sum == 0.0) throw EmptyGroupError("masked_mean: mask selects no rows");
        const Tensor& val = value(v);
        double acc = 0.0;
        for (std::size_t i = 0; i < val.data.size(); ++i) acc += val.data[i] * mask.data[i];
        Tensor out(1, 1, acc / mask_sum);
        std::vector<double> aux = mask.data;
        aux.push_back(mask_sum);
        return push(OpKind::MaskedMean, {v.id}, std::move(out), std::move(aux));
    }

    // ---- scalar combinators ------------------------------------------------

    Var abs_scalar(Var s) {
        require_scalar("abs_scalar", s);
        const double x = scalar(s);
        const double sign = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        return push(OpKind::AbsScalar, {s.id}, Tensor(1, 1, std::abs(x)), {sign});
    }

    // Max of scalars; the subgradient flows to the lowest-index argmax.
    Var max_scalar(std::span<const Var> ss) {
        if (ss.empty()) throw ContractError("max_scalar: no inputs");
        std::vector<int> ids;
        ids.reserve(ss.size());
        std::size_t argmax = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < ss.size(); ++i) {
            require_scalar("max_scalar", ss[i]);
            ids.push_back(ss[i].id);
            const double x = scalar(ss[i]);
            if (x > best) {
                best = x;
                argmax = i;
            }
        }
        return push(OpKind::MaxScalar, std::move(ids), Tensor(1, 1, best),
                    {static_cast<double>(argmax)});
    }

    Var weighted_sum(std::span<const Var> ss, std::span<const double> w) {
        if (ss.size() != w.size()) {
            throw ContractError("weighted_sum: " + std::to_string(ss.size()) +
                                " terms vs " + std::to_string(w.size()) + " weights");
        }
        if (ss.empty()) throw ContractError("weighted_sum: no inputs");
        std::vector<int> ids;
        ids.reserve(ss.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < ss.size(); ++i) {
            require_scalar("weighted_sum", ss[i]);
            ids.push_back(ss[i].id);
            acc += w[i] * scalar(ss[i]);
        }
        return push(OpKind::WeightedSum, std::move(ids), Tensor(1, 1, acc),
                    std::vector<double>(w.begin(), w.end()));
    }

    // ---- access ------------------------------------------------------------

    const Tensor& value(Var v) const { return nodes_[check_id(v)].value; }

    double scalar(Var v) const {
        require_scalar("scalar", v);
        return nodes_[check_id(v)].value.data[0];
    }

    OpKind kind(Var v) const { return nodes_[check_id(v)].kind; }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- backward ----------------------------------------------------------

    // Reverse sweep from a scalar root. Afterwards grad(v) is defined for
    // every node; leaves with requires_grad=true that the root never touched
    // keep an all-zero gradient.
    void backward(Var root) {
        const int rid = check_id(root);
        if (root.rows != 1 || root.cols != 1) {
            throw ContractError("backward: root has shape " +
                                Tensor::shape_str(root.rows, root.cols) +
                                ", expected scalar 1x1");
        }
        grads_.clear();
        grads_.reserve(nodes_.size());
        for (const Node& n : nodes_) grads_.emplace_back(n.value.rows, n.value.cols, 0.0);
        grads_[rid].data[0] = 1.0;

        for (int i = rid; i >= 0; --i) {
            const Node& node = nodes_[i];
            if (!node.requires_grad || node.kind == OpKind::Leaf) continue;
            propagate(node, grads_[i]);
        }
        has_grads_ = true;
    }

    const Tensor& grad(Var v) const {
        if (!has_grads_) throw ContractError("grad: backward has not run on this tape");
        return grads_[check_id(v)];
    }

private:
    struct Node {
        OpKind kind;
        std::vector<int> inputs;
        Tensor value;
        std::vector<double> aux;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool has_grads_ = false;

    static constexpr double kProbFloor = 1e-300;

    static double row_prob1(double z0, double z1) {
        const double m = std::max(z0, z1);
        const double e0 = std::exp(z0 - m);
        const double e1 = std::exp(z1 - m);
        return e1 / (e0 + e1);
    }

    static double clamp_prob(double p) {
        const double ceil = 1.0 - 0x1.0p-53;
        return std::min(std::max(p, kProbFloor), ceil);
    }

    int check_id(Var v) const {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw ContractError("tape: variable does not belong to this tape");
        }
        return v.id;
    }

    void require_scalar(const char* op, Var v) const {
        if (v.rows != 1 || v.cols != 1) {
            throw ShapeError(std::string(op) + ": expected scalar, got " +
                             Tensor::shape_str(v.rows, v.cols));
        }
    }

    void require_same_shape(const char* op, Var v, const Tensor& c) const {
        if (v.rows != c.rows || v.cols != c.cols) {
            throw ShapeError(std::string(op) + ": shapes disagree: " +
                             Tensor::shape_str(v.rows, v.cols) + " vs " + c.shape());
        }
    }

    Var push(OpKind kind, std::vector<int> inputs, Tensor value, std::vector<double> aux,
             bool leaf_requires_grad = false) {
        Node n{kind, std::move(inputs), std::move(value), std::move(aux), false};
        if (kind == OpKind::Leaf) {
            n.requires_grad = leaf_requires_grad && n.value.requires_grad;
        } else {
            for (int id : n.inputs) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
        }
        has_grads_ = false;
        nodes_.push_back(std::move(n));
        const Node& stored = nodes_.back();
        return Var{static_cast<int>(nodes_.size()) - 1, stored.value.rows, stored.value.cols};
    }

    static Tensor matmul_nn(const Tensor& a, const Tensor& b) {
        Tensor c(a.rows, b.cols, 0.0);
        for (std::size_t i = 0; i < a.rows; ++i) {
            for (std::size_t k = 0; k < a.cols; ++k) {
                const double aik = a.at(i, k);
                if (aik == 0.0) continue;
                const double* brow = &b.data[k * b.cols];
                double* crow = &c.data[i * c.cols];
                for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
            }
        }
        return c;
    }

    // C += A * B^T
    static void add_matmul_nt(Tensor& c, const Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.rows; ++i) {
            for (std::size_t j = 0; j < b.rows; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(j, k);
                c.at(i, j) += acc;
            }
        }
    }

    // C += A^T * B
    static void add_matmul_tn(Tensor& c, const Tensor& a, const Tensor& b) {
        for (std::size_t k = 0; k < a.rows; ++k) {
            for (std::size_t i = 0; i < a.cols; ++i) {
                const double aki = a.at(k, i);
                if (aki == 0.0) continue;
                for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += aki * b.at(k, j);
            }
        }
    }

    void propagate(const Node& node, const Tensor& gout) {
        switch (node.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::MatMul: {
            const Tensor& a = nodes_[node.inputs[0]].value;
            const Tensor& b = nodes_[node.inputs[1]].value;
            add_matmul_nt(grads_[node.inputs[0]], gout, b);
            add_matmul_tn(grads_[node.inputs[1]], a, gout);
            break;
        }
        case OpKind::Affine: {
            const Tensor& x = nodes_[node.inputs[0]].value;
            const Tensor& w = nodes_[node.inputs[1]].value;
            add_matmul_nt(grads_[node.inputs[0]], gout, w);
            add_matmul_tn(grads_[node.inputs[1]], x, gout);
            Tensor& gb = grads_[node.inputs[2]];
            for (std::size_t r = 0; r < gout.rows; ++r) {
                for (std::size_t c = 0; c < gout.cols; ++c) gb.at(0, c) += gout.at(r, c);
            }
            break;
        }
        case OpKind::Relu: {
            const Tensor& x = nodes_[node.inputs[0]].value;
            Tensor& gx = grads_[node.inputs[0]];
            for (std::size_t i = 0; i < x.data.size(); ++i) {
                if (x.data[i] > 0.0) gx.data[i] += gout.data[i]; // subgradient at 0 is 0
            }
            break;
        }
        case OpKind::SoftmaxProbs: {
            Tensor& gz = grads_[node.inputs[0]];
            for (std::size_t r = 0; r < node.value.rows; ++r) {
                const double p = node.value.at(r, 0);
                const double s = gout.at(r, 0) * p * (1.0 - p);
                gz.at(r, 0) -= s;
                gz.at(r, 1) += s;
            }
            break;
        }
        case OpKind::CrossEntropyRows: {
            Tensor& gz = grads_[node.inputs[0]];
            const std::size_t m = node.value.rows;
            for (std::size_t r = 0; r < m; ++r) {
                const double label = node.aux[r];
                const double p1 = node.aux[m + r];
                const double g = gout.at(r, 0);
                gz.at(r, 0) += g * ((1.0 - p1) - (1.0 - label));
                gz.at(r, 1) += g * (p1 - label);
            }
            break;
        }
        case OpKind::MaskedMean: {
            Tensor& gv = grads_[node.inputs[0]];
            const double mask_sum = node.aux.back();
            const double g = gout.data[0] / mask_sum;
            for (std::size_t i = 0; i < gv.data.size(); ++i) gv.data[i] += g * node.aux[i];
            break;
        }
        case OpKind::CMul: {
            Tensor& gx = grads_[node.inputs[0]];
            for (std::size_t i = 0; i < gx.data.size(); ++i) {
                gx.data[i] += gout.data[i] * node.aux[i];
            }
            break;
        }
        case OpKind::CAdd: {
            Tensor& gx = grads_[node.inputs[0]];
            for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gout.data[i];
            break;
        }
        case OpKind::ScaleShift: {
            Tensor& gx = grads_[node.inputs[0]];
            const double a = node.aux[0];
            for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += a * gout.data[i];
            break;
        }
        case OpKind::AbsScalar:
            grads_[node.inputs[0]].data[0] += gout.data[0] * node.aux[0];
            break;
        case OpKind::MaxScalar:
            grads_[node.inputs[static_cast<std::size_t>(node.aux[0])]].data[0] += gout.data[0];
            break;
        case OpKind::WeightedSum:
            for (std::size_t i = 0; i < node.inputs.size(); ++i) {
                grads_[node.inputs[i]].data[0] += gout.data[0] * node.aux[i];
            }
            break;
        }
    }
};

// ============================================================================
// Central-difference gradient check.
// ============================================================================

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double tolerance = 0.0;
    bool pass = true;
};

// Compares an analytic gradient against (f(theta+h*e_i) - f(theta-h*e_i))/2h
// per parameter. The relative error denominator is max(|g|, |est|, 1e-8).
// f must be a pure forward evaluation so the check stays independent of the
// tape gradient it audits.
template <typename F>
FiniteDiffReport finite_diff_check(F&& f, std::span<const double> theta,
                                   std::span<const double> analytic_grad, double h,
                                   double tol) {
    if (h <= 0.0) throw ContractError("finite_diff_check: h must be positive");
    if (theta.size() != analytic_grad.size()) {
        throw ContractError("finite_diff_check: parameter/gradient length mismatch");
    }
    FiniteDiffReport report;
    report.tolerance = tol;
    std::vector<double> probe(theta.begin(), theta.end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double original = probe[i];
        probe[i] = original + h;
        const double fp = f(std::span<const double>(probe));
        probe[i] = original - h;
        const double fm = f(std::span<const double>(probe));
        probe[i] = original;
        const double estimate = (fp - fm) / (2.0 * h);
        const double g = analytic_grad[i];
        const double denom = std::max({std::abs(g), std::abs(estimate), 1e-8});
        const double rel = std::abs(estimate - g) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

} // namespace fairstitch
