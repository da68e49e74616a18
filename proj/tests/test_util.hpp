#pragma once

// Shared fixtures and independent oracles for the test suites. Everything in
// here recomputes results with plain loops so the implementations under test
// are never used to produce their own expected values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fairstitch/autodiff.hpp"
#include "fairstitch/dataset.hpp"
#include "fairstitch/fairness.hpp"
#include "fairstitch/network.hpp"
#include "fairstitch/rng.hpp"
#include "fairstitch/tensor.hpp"

namespace testutil {

using fairstitch::Activation;
using fairstitch::FairnessConstraint;
using fairstitch::Network;
using fairstitch::Rng;
using fairstitch::Tensor;

// ---------------------------------------------------------------------------
// Dense algebra oracles (triple loop / direct summation)
// ---------------------------------------------------------------------------

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

inline Tensor naive_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor out = naive_matmul(x, w);
    for (std::size_t r = 0; r < out.rows; ++r) {
        for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) += b.at(0, c);
    }
    return out;
}

// Forward replay without the tape; also reports the smallest |pre-activation|
// feeding a relu, so gradient checks can stay away from the kinks.
struct ReplayResult {
    Tensor logits;
    double min_abs_relu_preact = std::numeric_limits<double>::infinity();
};

inline ReplayResult replay_forward(const Network& net, const Tensor& x) {
    ReplayResult result;
    Tensor h = x;
    for (std::size_t k = 0; k < net.blocks.size(); ++k) {
        if (net.stitch && net.stitch->position == k) {
            h = naive_affine(h, net.stitch->layer.weight, net.stitch->layer.bias);
        }
        h = naive_affine(h, net.blocks[k].weight, net.blocks[k].bias);
        if (net.blocks[k].activation == Activation::Relu) {
            for (double& v : h.data) {
                result.min_abs_relu_preact = std::min(result.min_abs_relu_preact, std::abs(v));
                v = v > 0.0 ? v : 0.0;
            }
        }
    }
    result.logits = std::move(h);
    return result;
}

// ---------------------------------------------------------------------------
// Random fixtures
// ---------------------------------------------------------------------------

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(rows, cols);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Labels/attributes with all four (y,a) cells guaranteed non-empty (m >= 4).
inline void random_cells(Rng& rng, std::size_t m, std::vector<int>& y, std::vector<int>& a) {
    y.resize(m);
    a.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        y[i] = static_cast<int>(rng.below(2));
        a[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0; a[0] = 0;
    y[1] = 0; a[1] = 1;
    y[2] = 1; a[2] = 0;
    y[3] = 1; a[3] = 1;
}

// ---------------------------------------------------------------------------
// Soft-surrogate oracles (direct summation over rows)
// ---------------------------------------------------------------------------

inline double oracle_eo_group_size(std::span<const double> p, std::span<const int> y,
                                   std::span<const int> a) {
    double n1 = 0, n0 = 0, fp1 = 0, fp0 = 0, fn1 = 0, fn0 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (a[i] == 1) {
            n1 += 1;
            fp1 += p[i] * (1 - y[i]);
            fn1 += (1 - p[i]) * y[i];
        } else {
            n0 += 1;
            fp0 += p[i] * (1 - y[i]);
            fn0 += (1 - p[i]) * y[i];
        }
    }
    return std::abs(fp1 / n1 - fp0 / n0) + std::abs(fn1 / n1 - fn0 / n0);
}

inline double oracle_ae(std::span<const double> p, std::span<const int> y,
                        std::span<const int> a) {
    double n1 = 0, n0 = 0, e1 = 0, e0 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double err = p[i] * (1 - y[i]) + (1 - p[i]) * y[i];
        if (a[i] == 1) {
            n1 += 1;
            e1 += err;
        } else {
            n0 += 1;
            e0 += err;
        }
    }
    return std::abs(e1 / n1 - e0 / n0);
}

// ---------------------------------------------------------------------------
// Hard-metric counting oracles (independent row loops)
// ---------------------------------------------------------------------------

struct OracleCounts {
    long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline OracleCounts oracle_count(std::span<const double> p, std::span<const int> y,
                                 double threshold) {
    OracleCounts c;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool pred = p[i] >= threshold;
        if (y[i] == 1 && pred) c.tp++;
        if (y[i] == 1 && !pred) c.fn++;
        if (y[i] == 0 && pred) c.fp++;
        if (y[i] == 0 && !pred) c.tn++;
    }
    return c;
}

inline double oracle_bacc(std::span<const double> p, std::span<const int> y, double threshold) {
    const OracleCounts c = oracle_count(p, y, threshold);
    const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    return (tpr + tnr) / 2.0;
}

// Pairwise Mann-Whitney statistic.
inline double oracle_auc(std::span<const double> p, std::span<const int> y) {
    long wins = 0, ties = 0, n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (y[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (y[j] == 1) continue;
            if (p[i] > p[j]) ++wins;
            if (p[i] == p[j]) ++ties;
        }
    }
    for (int label : y) {
        if (label == 0) ++n_neg;
    }
    const double numerator = static_cast<double>(wins) + 0.5 * static_cast<double>(ties);
    return numerator / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double oracle_eo_diff(std::span<const double> p, std::span<const int> y,
                             std::span<const int> a, double threshold) {
    OracleCounts g[2];
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool pred = p[i] >= threshold;
        OracleCounts& c = g[a[i]];
        if (y[i] == 1 && pred) c.tp++;
        if (y[i] == 1 && !pred) c.fn++;
        if (y[i] == 0 && pred) c.fp++;
        if (y[i] == 0 && !pred) c.tn++;
    }
    const double tpr1 = static_cast<double>(g[1].tp) / static_cast<double>(g[1].tp + g[1].fn);
    const double tpr0 = static_cast<double>(g[0].tp) / static_cast<double>(g[0].tp + g[0].fn);
    const double fpr1 = static_cast<double>(g[1].fp) / static_cast<double>(g[1].fp + g[1].tn);
    const double fpr0 = static_cast<double>(g[0].fp) / static_cast<double>(g[0].fp + g[0].tn);
    return std::max(std::abs(tpr1 - tpr0), std::abs(fpr1 - fpr0));
}

inline double oracle_ae_diff(std::span<const double> p, std::span<const int> y,
                             std::span<const int> a, double threshold) {
    long err[2] = {0, 0}, n[2] = {0, 0};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int pred = p[i] >= threshold ? 1 : 0;
        n[a[i]]++;
        if (pred != y[i]) err[a[i]]++;
    }
    return std::abs(static_cast<double>(err[1]) / static_cast<double>(n[1]) -
                    static_cast<double>(err[0]) / static_cast<double>(n[0]));
}

inline double oracle_worst_accuracy(std::span<const double> p, std::span<const int> y,
                                    std::span<const int> a, double threshold) {
    long correct[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int pred = p[i] >= threshold ? 1 : 0;
        const std::size_t idx = static_cast<std::size_t>(2 * y[i] + a[i]);
        total[idx]++;
        if (pred == y[i]) correct[idx]++;
    }
    double worst = 1.0;
    for (std::size_t idx = 0; idx < 4; ++idx) {
        worst = std::min(worst, static_cast<double>(correct[idx]) /
                                    static_cast<double>(total[idx]));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// ABROCA oracle: exact area between the two per-group ROC polylines.
//
// Curves are rebuilt here by direct threshold enumeration, then the area is
// integrated piecewise with zero-crossing splits. Vertical risers are handled
// by sampling each linear piece at interior points (1/4 and 3/4) and
// extrapolating the endpoints, which never touches the ambiguous riser value.
// ---------------------------------------------------------------------------

struct OraclePolyline {
    std::vector<double> x, t;

    double interior(double q) const { // q strictly inside (x.front(), x.back())
        std::size_t k = 0;
        while (k + 1 < x.size() && x[k + 1] <= q) ++k;
        while (x[k + 1] == x[k]) ++k; // skip zero-width riser pieces
        return t[k] + (t[k + 1] - t[k]) * (q - x[k]) / (x[k + 1] - x[k]);
    }
};

inline OraclePolyline oracle_roc(std::span<const double> p, std::span<const int> y) {
    std::vector<double> scores(p.begin(), p.end());
    std::sort(scores.begin(), scores.end(), std::greater<>());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    long n_pos = 0, n_neg = 0;
    for (int label : y) (label == 1 ? n_pos : n_neg)++;
    OraclePolyline curve;
    curve.x.push_back(0.0);
    curve.t.push_back(0.0);
    for (double threshold : scores) {
        long tp = 0, fp = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] >= threshold) (y[i] == 1 ? tp : fp)++;
        }
        curve.x.push_back(static_cast<double>(fp) / static_cast<double>(n_neg));
        curve.t.push_back(static_cast<double>(tp) / static_cast<double>(n_pos));
    }
    return curve;
}

inline double oracle_abroca(std::span<const double> p, std::span<const int> y,
                            std::span<const int> a) {
    std::vector<double> p0, p1;
    std::vector<int> y0, y1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (a[i] == 1) {
            p1.push_back(p[i]);
            y1.push_back(y[i]);
        } else {
            p0.push_back(p[i]);
            y0.push_back(y[i]);
        }
    }
    const OraclePolyline c0 = oracle_roc(p0, y0);
    const OraclePolyline c1 = oracle_roc(p1, y1);
    std::vector<double> cuts;
    cuts.insert(cuts.end(), c0.x.begin(), c0.x.end());
    cuts.insert(cuts.end(), c1.x.begin(), c1.x.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    double area = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double u = cuts[k], v = cuts[k + 1];
        const double w = v - u;
        if (w <= 0.0) continue;
        const double dq = (c1.interior(u + w * 0.25) - c0.interior(u + w * 0.25));
        const double dr = (c1.interior(u + w * 0.75) - c0.interior(u + w * 0.75));
        const double slope = (dr - dq) / (w * 0.5);
        const double d_at_u = dq - slope * w * 0.25;
        const double d_at_v = dr + slope * w * 0.25;
        if (d_at_u * d_at_v >= 0.0) {
            area += std::abs(d_at_u + d_at_v) / 2.0 * w;
        } else {
            const double cross = w * d_at_u / (d_at_u - d_at_v);
            area += std::abs(d_at_u) * cross / 2.0 + std::abs(d_at_v) * (w - cross) / 2.0;
        }
    }
    return area;
}

} // namespace testutil
