#include <doctest.h>

#include <cmath>
#include <vector>

#include "fairstitch/analysis.hpp"
#include "test_util.hpp"

using namespace fairstitch;

namespace {

TripletDataset small_data(std::size_t n, std::uint64_t seed, const std::string& name) {
    SynthSpec spec;
    spec.n = n;
    spec.d = 3;
    spec.cell_probs = {0.3, 0.3, 0.2, 0.2};
    spec.class_separation = 2.0;
    spec.attribute_shift = 1.0;
    spec.label_noise = 0.0;
    spec.seed = seed;
    TripletDataset ds = synth_biased(spec);
    ds.name = name;
    return ds;
}

Checkpoint as_checkpoint(Network net, const std::string& phase, std::size_t epoch) {
    Checkpoint ckpt;
    ckpt.net = std::move(net);
    ckpt.meta.phase = phase;
    ckpt.meta.epoch = epoch;
    return ckpt;
}

} // namespace

TEST_CASE("interpolate_loss: endpoints reproduce direct evaluation") {
    const TripletDataset train = small_data(200, 81, "train");
    TripletDataset val = small_data(100, 82, "val");
    const Network pretrained =
        train_erm(init_mlp({3, 6, 2}, 9), train, val, 40, OptimizerConfig{}, 7).final_net;
    FairnessConstraint constraint{ConstraintKind::EqualizedOdds, 5.0, EoDenominator::GroupSize};
    const TrainOutput run = train_tfs(pretrained, train, val, constraint, 30,
                                      OptimizerConfig{}, 7);

    const Checkpoint theta0 = as_checkpoint(run.initial, "tfs", 0);
    const Checkpoint theta_star = as_checkpoint(run.best, "tfs", run.best_epoch);
    const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    const InterpolationCurve curve =
        interpolate_loss(theta0, theta_star, {&train, &val}, constraint, grid);

    REQUIRE(curve.values.size() == 2);
    REQUIRE(curve.alphas.size() == 5);
    CHECK(std::abs(curve.values[0][0] - evaluate_objective(run.initial, train, constraint)) <=
          1e-9);
    CHECK(std::abs(curve.values[0][4] - evaluate_objective(run.best, train, constraint)) <=
          1e-9);
    CHECK(std::abs(curve.values[1][0] - evaluate_objective(run.initial, val, constraint)) <=
          1e-9);
    CHECK(std::abs(curve.values[1][4] - evaluate_objective(run.best, val, constraint)) <=
          1e-9);
    for (const auto& series : curve.values) {
        for (double v : series) CHECK(std::isfinite(v));
    }

    // parallel evaluation returns the same values
    InterpolationOptions opt;
    opt.jobs = 3;
    const InterpolationCurve parallel =
        interpolate_loss(theta0, theta_star, {&train, &val}, constraint, grid, opt);
    for (std::size_t d = 0; d < 2; ++d) {
        for (std::size_t g = 0; g < grid.size(); ++g) {
            CHECK(parallel.values[d][g] == curve.values[d][g]);
        }
    }
}

TEST_CASE("interpolate_loss: midpoint blend follows the quadratic closed form") {
    // theta(0.5) with theta0 = 0 and theta* = 2*e1 lands on e1: |theta|^2 = 1.
    // Checked through the same blend path the curve evaluator uses.
    Network zero = init_mlp({3, 4, 2}, 1);
    std::vector<double> zeros(param_count(zero, false), 0.0);
    zero = with_params(zero, zeros, false);
    Network spike = zero;
    std::vector<double> spiked = zeros;
    spiked[0] = 2.0;
    spike = with_params(spike, spiked, false);

    const std::vector<double> p0 = params(zero, false);
    const std::vector<double> p1 = params(spike, false);
    std::vector<double> blend(p0.size());
    const double alpha = 0.5;
    for (std::size_t i = 0; i < p0.size(); ++i) {
        blend[i] = (1.0 - alpha) * p0[i] + alpha * p1[i];
    }
    double norm_sq = 0.0;
    for (double v : blend) norm_sq += v * v;
    CHECK(norm_sq == 1.0);
}

TEST_CASE("interpolate_loss: topology and grid guards") {
    const TripletDataset train = small_data(100, 83, "train");
    const Network a = init_mlp({3, 6, 2}, 1);
    const Network b = init_mlp({3, 7, 2}, 1);
    FairnessConstraint constraint{ConstraintKind::None, 0.0, EoDenominator::GroupSize};

    const std::vector<double> grid{0.0, 1.0};
    CHECK_THROWS_AS(interpolate_loss(as_checkpoint(a, "erm", 0), as_checkpoint(b, "erm", 0),
                                     {&train}, constraint, grid),
                    ContractError);

    const std::vector<double> outside{-0.5, 1.5};
    CHECK_THROWS_AS(interpolate_loss(as_checkpoint(a, "erm", 0), as_checkpoint(a, "erm", 1),
                                     {&train}, constraint, outside),
                    ContractError);
    InterpolationOptions allow;
    allow.allow_extrapolation = true;
    CHECK_NOTHROW(interpolate_loss(as_checkpoint(a, "erm", 0), as_checkpoint(a, "erm", 1),
                                   {&train}, constraint, outside, allow));

    // differing frozen substrate is rejected when only trainables move
    const Network frozen_a = set_trainable(a, TrainableSelector::LastBlockOnly);
    Network frozen_b = frozen_a;
    frozen_b.blocks[0].weight.data[0] += 1.0;
    CHECK_THROWS_AS(interpolate_loss(as_checkpoint(frozen_a, "fdr", 0),
                                     as_checkpoint(frozen_b, "fdr", 1), {&train}, constraint,
                                     grid),
                    ContractError);
}

TEST_CASE("roc_export: separation, ties, exhaustive enumeration equality") {
    // perfectly separating scores pass through (0,1)
    {
        const std::vector<double> p{0.9, 0.8, 0.2, 0.1, 0.9, 0.7, 0.3, 0.1};
        const std::vector<int> y{1, 1, 0, 0, 1, 1, 0, 0};
        const std::vector<int> a{0, 0, 0, 0, 1, 1, 1, 1};
        const auto curves = roc_export(p, y, a);
        for (const RocCurve& c : curves) {
            bool hits_corner = false;
            for (std::size_t k = 0; k < c.size(); ++k) {
                if (c.fpr[k] == 0.0 && c.tpr[k] == 1.0) hits_corner = true;
            }
            CHECK(hits_corner);
        }
    }
    // all-tied scores collapse to the two endpoints
    {
        const std::vector<double> p{0.5, 0.5, 0.5, 0.5};
        const std::vector<int> y{1, 0, 1, 0};
        const std::vector<int> a{0, 0, 1, 1};
        const auto curves = roc_export(p, y, a);
        for (const RocCurve& c : curves) {
            REQUIRE(c.size() == 2);
            CHECK(c.fpr[0] == 0.0);
            CHECK(c.tpr[0] == 0.0);
            CHECK(c.fpr[1] == 1.0);
            CHECK(c.tpr[1] == 1.0);
        }
    }
    // random instance vs the exhaustive threshold enumeration oracle
    {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t n = 10;
            std::vector<double> p(n);
            std::vector<int> y(n), a(n);
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = static_cast<double>(rng.below(6)) / 6.0;
                y[i] = static_cast<int>(rng.below(2));
                a[i] = static_cast<int>(i % 2);
            }
            // both classes in both groups
            y[0] = 1; y[1] = 1; y[2] = 0; y[3] = 0;
            const auto curves = roc_export(p, y, a);
            for (int g = 0; g < 2; ++g) {
                std::vector<double> gp;
                std::vector<int> gy;
                for (std::size_t i = 0; i < n; ++i) {
                    if (a[i] == g) {
                        gp.push_back(p[i]);
                        gy.push_back(y[i]);
                    }
                }
                const testutil::OraclePolyline oracle = testutil::oracle_roc(gp, gy);
                REQUIRE(curves[g].size() == oracle.x.size());
                for (std::size_t k = 0; k < oracle.x.size(); ++k) {
                    CHECK(curves[g].fpr[k] == oracle.x[k]);
                    CHECK(curves[g].tpr[k] == oracle.t[k]);
                }
            }
        }
    }
    // degenerate group
    {
        const std::vector<double> p{0.9, 0.8, 0.7, 0.6};
        const std::vector<int> y{1, 1, 1, 0};
        const std::vector<int> a{1, 1, 0, 0};
        CHECK_THROWS_AS(roc_export(p, y, a), DegenerateSplitError);
    }
}

TEST_CASE("emit_report: shape, AF identity, identical checkpoints give identical rows") {
    const TripletDataset train = small_data(240, 91, "train");
    TripletDataset balanced = small_data(160, 92, "balanced");
    TripletDataset test = small_data(120, 93, "test");
    const Network net_a =
        train_erm(init_mlp({3, 6, 2}, 5), train, test, 30, OptimizerConfig{}, 7).final_net;
    const Network net_b = net_a;
    const Network net_c =
        train_erm(init_mlp({3, 6, 2}, 6), train, test, 30, OptimizerConfig{}, 7).final_net;

    FairnessConstraint constraint{ConstraintKind::EqualizedOdds, 20.0,
                                  EoDenominator::GroupSize};
    const std::vector<std::pair<std::string, const Network*>> methods{
        {"baseline", &net_a}, {"fdr", &net_b}, {"tfs", &net_c}};
    const std::vector<const TripletDataset*> splits{&train, &balanced, &test};
    const ComparisonReport report =
        emit_report(methods, splits, constraint, EvalOptions{}, "deadbeef", Seeds{1, 2, 3});

    CHECK(report.methods.size() == 3);
    CHECK(report.splits.size() == 3);
    std::size_t rows = 0;
    for (const std::string& m : report.methods) {
        for (const std::string& s : report.splits) {
            const MetricsReport& cell = report.cell(m, s);
            REQUIRE(cell.af.has_value());
            CHECK(std::abs(*cell.af - af_score(cell.bacc, cell.eo_diff, constraint.kind)) <=
                  1e-12);
            ++rows;
        }
    }
    CHECK(rows == 9);

    // identical checkpoints -> identical rows
    for (const std::string& s : report.splits) {
        CHECK(report.cell("baseline", s).bacc == report.cell("fdr", s).bacc);
        CHECK(report.cell("baseline", s).abroca == report.cell("fdr", s).abroca);
        CHECK(report.cell("baseline", s).eo_diff == report.cell("fdr", s).eo_diff);
    }

    // the text table has one line per cell plus a header
    const std::string text = report.to_text();
    CHECK(std::count(text.begin(), text.end(), '\n') == 10);

    // deterministic regeneration, including under parallel evaluation
    const ComparisonReport again =
        emit_report(methods, splits, constraint, EvalOptions{}, "deadbeef", Seeds{1, 2, 3}, 4);
    CHECK(again.to_json() == report.to_json());
}
