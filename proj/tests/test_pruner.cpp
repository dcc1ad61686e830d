#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "prunekit/model_io.hpp"
#include "prunekit/pruner.hpp"
#include "prunekit/synthfaces.hpp"
#include "test_util.hpp"

using namespace prunekit;

namespace {

// forward pass where the listed output channels of layer `l` are zeroed:
// surgery must be indistinguishable from this on the surviving signal
template <typename T>
TensorT<T> masked_forward(const NetworkIRT<T>& net, const TensorT<T>& x, std::size_t l,
                          const std::vector<std::size_t>& dropped) {
    TensorT<T> cur = x;
    for (std::size_t q = 0; q < net.layers.size(); ++q) {
        cur = layer_forward(net.layers[q], net.params[q], cur);
        if (q == l) {
            const std::size_t n = cur.dim(0), c = cur.dim(1), h = cur.dim(2), w = cur.dim(3);
            for (std::size_t ni = 0; ni < n; ++ni)
                for (std::size_t ci : dropped)
                    for (std::size_t yy = 0; yy < h; ++yy)
                        for (std::size_t xx = 0; xx < w; ++xx)
                            cur.at4(ni, ci, yy, xx) = T(0);
            (void)c;
        }
    }
    return cur;
}

std::vector<std::size_t> complement(const std::vector<std::size_t>& keep, std::size_t total) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < total; ++i)
        if (std::find(keep.begin(), keep.end(), i) == keep.end()) out.push_back(i);
    return out;
}

}  // namespace

TEST(PruneConv, EquivalentToZeroMasking) {
    auto net = testutil::small_conv_net<double>(1, 8, 201);
    const auto x = testutil::random_tensor<double>({3, 1, 8, 8}, 202);
    const std::vector<std::size_t> keep = {0, 2};

    const auto pruned = prune_conv_pair(net, 0, keep);
    EXPECT_TRUE(validate(pruned).empty());
    const auto got = forward(pruned, x).output;
    const auto want = masked_forward(net, x, 0, complement(keep, 4));
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-15);
}

TEST(PruneConv, RepairPassesThroughPoolingToLinear) {
    // pruning the deepest conv re-slices the head across the pooling layer
    auto net = testutil::small_conv_net<double>(1, 8, 203);
    const auto x = testutil::random_tensor<double>({2, 1, 8, 8}, 204);
    const std::vector<std::size_t> keep = {1, 3, 4};

    const auto pruned = prune_conv_pair(net, 3, keep);
    EXPECT_EQ(pruned.layers[3].out_channels, 3);
    EXPECT_EQ(pruned.layers[6].in_features, 3);
    const auto got = forward(pruned, x).output;
    const auto want = masked_forward(net, x, 3, complement(keep, 6));
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-15);
}

TEST(PruneMaxPair, KeepsWholePairsAndMatchesMasking) {
    auto net = testutil::small_mfm_net<double>(205);
    const auto x = testutil::random_tensor<double>({3, 1, 8, 8}, 206);
    const std::vector<std::size_t> keep = {1, 3};

    const auto pruned = prune_mfm(net, 0, keep);
    EXPECT_EQ(pruned.layers[0].out_channels, 2);
    EXPECT_EQ(pruned.layers[0].conv_out_channels, 4);
    EXPECT_EQ(pruned.params[0].weight.dim(0), 4u);
    const auto got = forward(pruned, x).output;
    const auto want = masked_forward(net, x, 0, complement(keep, 4));
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-15);
}

TEST(PruneGroup, EditsTheGroupTailAndNextConsumer) {
    auto net = testutil::small_mfm_net<double>(207);
    const auto x = testutil::random_tensor<double>({2, 1, 8, 8}, 208);
    const std::vector<std::size_t> keep = {0, 4, 5};

    // group 1 spans layers 2 (1x1) and 3 (3x3); selection edits layer 3
    const auto pruned = prune_group(net, 1, keep);
    EXPECT_EQ(pruned.layers[2].out_channels, 4);  // leading 1x1 untouched
    EXPECT_EQ(pruned.layers[3].out_channels, 3);
    EXPECT_EQ(pruned.layers[5].in_features, 3);
    const auto got = forward(pruned, x).output;
    const auto want = masked_forward(net, x, 3, complement(keep, 6));
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-15);
}

TEST(Prune, ParameterCountStrictlyDecreases) {
    auto net = testutil::small_conv_net<float>();
    const auto before = count_network(net).total_params;
    const auto after = count_network(prune_conv_pair(net, 0, {0, 1, 2})).total_params;
    EXPECT_LT(after, before);

    // exact bookkeeping: conv0 loses 1 filter (9 weights + bias), conv1 loses
    // 1 input slice on each of its 6 filters (9 weights each)
    EXPECT_EQ(before - after, 9 + 1 + 6 * 9);
}

TEST(Prune, RejectsBadKeepSets) {
    auto net = testutil::small_conv_net<float>();
    EXPECT_THROW(prune_conv_pair(net, 0, {}), std::invalid_argument);
    EXPECT_THROW(prune_conv_pair(net, 0, {0, 9}), std::invalid_argument);
    EXPECT_THROW(prune_conv_pair(net, 0, {2, 1}), std::invalid_argument);
    EXPECT_THROW(prune_conv_pair(net, 1, {0}), std::invalid_argument);  // relu has no filters
    EXPECT_THROW(prune_mfm(net, 0, {0}), std::invalid_argument);        // wrong kind
    EXPECT_THROW(prune_group(net, 7, {0}), std::invalid_argument);      // no such group
}

TEST(TruncationLayer, DeepestSpatialFilterBank) {
    EXPECT_EQ(select_truncation_layer(testutil::small_conv_net<float>()), 3u);
    EXPECT_EQ(select_truncation_layer(testutil::small_mfm_net<float>()), 3u);
}

namespace {

struct PlantedPipeline {
    NetworkIRT<double> net;
    TensorT<double> images;
    FeatureMatrix features;
    std::vector<double> y;
    CharacteristicCurve curve;
    KneePoint knee;
    std::size_t trunc = 0;
};

PlantedPipeline run_pipeline(std::uint64_t seed) {
    PlantedPipeline p;
    p.net = testutil::small_conv_net<double>(1, 8, seed);
    p.images = testutil::random_tensor<double>({160, 1, 8, 8}, seed + 1);
    p.trunc = select_truncation_layer(p.net);
    p.features = extract_gap(p.net, p.images, p.trunc);

    const auto planted = plant_task(p.net, p.images, p.trunc, 2, 0.02, seed + 2);
    p.y = planted.values;

    const auto splits = make_splits(p.features.rows, 0.75, 0.25, seed + 3);
    const auto x_train = p.features.select_rows(splits.train);
    const auto x_val = p.features.select_rows(splits.val);
    std::vector<double> y_train, y_val;
    for (auto i : splits.train) y_train.push_back(p.y[i]);
    for (auto i : splits.val) y_val.push_back(p.y[i]);

    CurveOptions opts;
    opts.lambda_count = 40;
    p.curve = characteristic_curve(x_train, y_train, x_val, y_val, opts);
    p.knee = kneepoint(p.curve, 0.01);
    return p;
}

}  // namespace

TEST(BuildPruned, NetworkComputesTheSparseFit) {
    const auto p = run_pipeline(301);
    const auto plan = make_prune_plan("planted", p.trunc, p.curve, p.knee);
    const auto pruned = build_pruned_network(p.net, plan);

    EXPECT_EQ(pruned.layers.back().kind, LayerKind::Linear);
    EXPECT_EQ(pruned.layers.back().out_features, 1);
    EXPECT_EQ(pruned.primary_task, "planted");

    // the truncated+pruned+head network must reproduce the knee point's
    // affine prediction over the kept pooled activations
    const auto out = forward(pruned, p.images).output;
    const auto& pt = p.curve.points[p.knee.point_index];
    for (std::size_t i = 0; i < p.features.rows; ++i) {
        double want = pt.beta0;
        for (std::size_t j : p.knee.kept)
            want += pt.beta[j] * (p.features.at(i, j) - p.curve.standardizer.mean[j]) /
                    p.curve.standardizer.stdev[j];
        ASSERT_NEAR(out.at2(i, 0), want, 1e-9) << "sample " << i;
    }
}

TEST(BuildPruned, CompressionAgainstBaseline) {
    const auto p = run_pipeline(311);
    const auto plan = make_prune_plan("planted", p.trunc, p.curve, p.knee);
    const auto pruned = build_pruned_network(p.net, plan);
    const auto rep = compression_report(p.net, pruned);

    EXPECT_GT(rep.param_reduction, 0.0);
    EXPECT_GT(rep.flop_reduction, 0.0);
    EXPECT_EQ(rep.pruned.total_params,
              count_network(pruned).total_params);
    EXPECT_NEAR(rep.param_reduction,
                1.0 - static_cast<double>(rep.pruned.total_params) /
                          static_cast<double>(rep.baseline.total_params),
                1e-12);

    const auto j = rep.to_json();
    EXPECT_TRUE(j.contains("baseline"));
    EXPECT_TRUE(j.contains("pruned"));
}

TEST(BuildPruned, IdentityPlanLeavesBytesUntouched) {
    testutil::TempDir tmp("identity");
    auto net = testutil::small_conv_net<float>(1, 8, 321);
    PrunePlan plan;
    plan.truncation_layer = -1;
    plan.task = "none";
    const auto same = build_pruned_network(net, plan);
    const auto a = tmp.path() / "a.pkir", b = tmp.path() / "b.pkir";
    save_model(net, a);
    save_model(same, b);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    EXPECT_EQ(ba, bb);
}

TEST(BuildPruned, RejectsInconsistentPlans) {
    auto net = testutil::small_conv_net<float>();
    PrunePlan plan;
    plan.task = "broken";
    plan.truncation_layer = 3;
    plan.kept = {0, 1};
    plan.head_w = {{1.0}};  // width 1 against 2 kept filters
    plan.head_b = {0.0};
    EXPECT_THROW(build_pruned_network(net, plan), std::invalid_argument);

    plan.truncation_layer = 2;  // pooling layer has no filters
    plan.head_w = {{1.0, 1.0}};
    EXPECT_THROW(build_pruned_network(net, plan), std::invalid_argument);
}

TEST(PrunePlan, JsonRoundTrip) {
    testutil::TempDir tmp("plan");
    PrunePlan plan;
    plan.task = "age";
    plan.truncation_layer = 3;
    plan.kept = {1, 4, 5};
    plan.gamma = 0.01;
    plan.lambda = 0.37;
    plan.head_kind = TaskKind::regression;
    plan.head_w = {{0.5, -1.0, 2.0}};
    plan.head_b = {0.25};

    const auto p = tmp.path() / "plan.json";
    save_plan(plan, p);
    const auto loaded = load_plan(p);
    EXPECT_EQ(loaded.task, plan.task);
    EXPECT_EQ(loaded.truncation_layer, plan.truncation_layer);
    EXPECT_EQ(loaded.kept, plan.kept);
    EXPECT_EQ(loaded.head_w, plan.head_w);
    EXPECT_EQ(loaded.head_b, plan.head_b);
    EXPECT_EQ(loaded.gamma, plan.gamma);
}

TEST(RefitHead, MulticlassHeadMatchesProbeScores) {
    const auto p = run_pipeline(331);

    // labels from a feature sign so the kept filters carry signal
    ProbeTargets tg;
    tg.labels.resize(p.features.rows);
    for (std::size_t i = 0; i < p.features.rows; ++i)
        tg.labels[i] = p.y[i] > 0 ? 1 : 0;
    TaskSpec task{"side", TaskKind::multiclass, 2};

    auto plan = make_prune_plan("side", p.trunc, p.curve, p.knee);
    std::vector<std::size_t> train_rows(p.features.rows);
    std::iota(train_rows.begin(), train_rows.end(), 0);
    refit_plan_head(plan, p.features, tg, task, train_rows);
    ASSERT_EQ(plan.head_w.size(), 2u);

    const auto pruned = build_pruned_network(p.net, plan);
    const auto out = forward(pruned, p.images).output;

    // probe fit on the same kept columns must produce the same raw scores
    SplitIndices all;
    all.train = train_rows;
    const auto probe = fit_probe(p.features.select_cols(plan.kept), tg, task, all);
    const auto scores = probe.model.scores(p.features.select_cols(plan.kept));
    for (std::size_t i = 0; i < p.features.rows; ++i)
        for (std::size_t o = 0; o < 2; ++o)
            ASSERT_NEAR(out.at2(i, o), scores[i][o], 1e-9);
}

TEST(Timing, InferenceMeasurementIsPositive) {
    auto net = testutil::small_conv_net<float>();
    const auto x = testutil::random_tensor<float>({8, 1, 8, 8}, 401);
    EXPECT_GT(measure_inference_seconds(net, x, 2), 0.0);
}

TEST(LayerRanking, TieBreaksToDeepest) {
    std::vector<LayerProbeRow> rows(3);
    rows[0].layer = 0;
    rows[0].val_rmse = 0.5;
    rows[1].layer = 3;
    rows[1].val_rmse = 0.2;
    rows[2].layer = 6;
    rows[2].val_rmse = 0.2 + 5e-10;  // inside the tie band
    EXPECT_EQ(pick_best_layer(rows), 2u);

    rows[2].val_rmse = 0.2 + 1e-6;  // outside it
    EXPECT_EQ(pick_best_layer(rows), 1u);

    EXPECT_EQ(pick_best_layer({rows[0]}), 0u);  // single candidate
    EXPECT_THROW(pick_best_layer({}), std::invalid_argument);
}

TEST(LayerRanking, FindsThePlantedLayer) {
    auto net = testutil::small_conv_net<double>(1, 8, 71);
    const auto images = testutil::random_tensor<double>({120, 1, 8, 8}, 72);

    // target is an exact affine function of layer 3's pooled activations, so
    // no other layer's probe can tie it
    const auto planted = plant_task(net, images, 3, 2, 0.0, 73);
    ProbeTargets tg;
    tg.values = planted.values;
    const TaskSpec task{"planted", TaskKind::regression, 1};
    const auto splits = make_splits(images.shape()[0], 0.5, 0.25, 74);

    const auto table = rank_probe_layers(net, images, tg, task, splits);
    ASSERT_EQ(table.rows.size(), 2u);
    EXPECT_EQ(table.rows[0].layer, 0u);
    EXPECT_EQ(table.rows[1].layer, 3u);
    EXPECT_EQ(table.rows[table.best].layer, 3u);
    EXPECT_LT(table.rows[1].val_rmse, table.rows[0].val_rmse);

    const auto j = table.to_json();
    EXPECT_EQ(j.at("best_layer").get<std::size_t>(), 3u);
    EXPECT_EQ(j.at("rows").size(), 2u);
}
