#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "prunekit/engine.hpp"
#include "reference_impl.hpp"
#include "test_util.hpp"

using namespace prunekit;
using refimpl::DTensor;

TEST(Forward, MatchesReferenceConvNet) {
    auto net = testutil::small_conv_net<double>(1, 8, 11);
    const auto x = testutil::random_tensor<double>({3, 1, 8, 8}, 21);
    const auto got = forward(net, x).output;
    const auto want = refimpl::ref_forward(net, x);
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-12);
}

TEST(Forward, MatchesReferenceMaxPairNet) {
    auto net = testutil::small_mfm_net<double>(13);
    const auto x = testutil::random_tensor<double>({2, 1, 8, 8}, 22);
    const auto got = forward(net, x).output;
    const auto want = refimpl::ref_forward(net, x);
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-12);
}

TEST(Forward, StridedPaddedConvMatchesReference) {
    auto net = make_network<double>(
        {LayerSpec::conv2d(2, 3, 3, 2, 1), LayerSpec::relu(), LayerSpec::maxpool(3, 2, 1),
         LayerSpec::gap(), LayerSpec::linear(3, 2, false)},
        {2, 9, 9});
    randomize_params(net, 7);
    const auto x = testutil::random_tensor<double>({2, 2, 9, 9}, 23);
    const auto got = forward(net, x).output;
    const auto want = refimpl::ref_forward(net, x);
    EXPECT_LT(testutil::max_abs_diff(got, want), 1e-12);
}

TEST(Forward, ThreadCountDoesNotChangeBits) {
    auto net = testutil::small_mfm_net<float>(17);
    const auto x = testutil::random_tensor<float>({4, 1, 8, 8}, 24);
    const auto a = forward(net, x, {}, 1).output;
    const auto b = forward(net, x, {}, 3).output;
    const auto c = forward(net, x, {}, 8).output;
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(Forward, CaptureReturnsRequestedLayers) {
    auto net = testutil::small_conv_net<float>();
    const auto x = testutil::random_tensor<float>({2, 1, 8, 8}, 25);
    const auto res = forward(net, x, {0, 5});
    ASSERT_EQ(res.captured.size(), 2u);
    EXPECT_EQ(res.captured.at(0).shape(), (std::vector<std::size_t>{2, 4, 8, 8}));
    EXPECT_EQ(res.captured.at(5).shape(), (std::vector<std::size_t>{2, 6}));
}

TEST(MaxPair, TieKeepsLowerChannel) {
    // identity-free construction: conv output is forced by bias-only weights
    auto net = make_network<double>({LayerSpec::mfm(1, 1, 1)}, {1, 1, 1});
    net.params[0].weight.raw() = {0.0, 0.0};  // both internal filters ignore input
    net.params[0].bias.raw() = {2.5, 2.5};    // exact tie
    const TensorT<double> x({1, 1, 1, 1}, 1.0);
    ForwardCacheT<double> cache;
    forward_cached(net, x, cache);
    EXPECT_EQ(cache.output[0], 2.5);
    EXPECT_EQ(cache.winners[0][0], 0);  // first channel of the pair wins ties
}

TEST(MaxPool, TieKeepsFirstInScanOrder) {
    auto net = make_network<double>({LayerSpec::maxpool(2, 2)}, {1, 2, 2});
    TensorT<double> x({1, 1, 2, 2}, 3.0);  // all equal
    ForwardCacheT<double> cache;
    forward_cached(net, x, cache);
    EXPECT_EQ(cache.winners[0][0], 0);
}

namespace {

// loss(params) via fresh forward; used as the finite-difference target
template <typename LossFn>
void check_param_gradients(NetworkIRT<double>& net, const TensorT<double>& x, LossFn&& loss_fn,
                           double tol) {
    ForwardCacheT<double> cache;
    forward_cached(net, x, cache);
    TensorT<double> d_out;
    loss_fn(cache.output, &d_out);
    const auto grads = backward(net, cache, d_out);

    auto loss_now = [&]() {
        const auto out = forward(net, x).output;
        return loss_fn(out, nullptr);
    };

    double worst = 0.0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].has_params()) continue;
        for (std::size_t i = 0; i < net.params[l].weight.size(); ++i) {
            const double numeric = refimpl::ref_fdiff(loss_now, net.params[l].weight[i]);
            worst = std::max(worst, std::abs(numeric - grads.params[l].weight[i]));
        }
        for (std::size_t i = 0; i < net.params[l].bias.size(); ++i) {
            const double numeric = refimpl::ref_fdiff(loss_now, net.params[l].bias[i]);
            worst = std::max(worst, std::abs(numeric - grads.params[l].bias[i]));
        }
    }
    EXPECT_LT(worst, tol);
}

}  // namespace

TEST(Backward, MseGradientsMatchFiniteDifferences) {
    auto net = testutil::small_conv_net<double>(1, 8, 31);
    const auto x = testutil::random_tensor<double>({3, 1, 8, 8}, 32);
    const auto target = testutil::random_tensor<double>({3, 3}, 33);
    check_param_gradients(
        net, x,
        [&](const TensorT<double>& out, TensorT<double>* grad) {
            return mse_loss(out, target, grad);
        },
        1e-7);
}

TEST(Backward, MaxPairGradientsMatchFiniteDifferences) {
    auto net = testutil::small_mfm_net<double>(41);
    const auto x = testutil::random_tensor<double>({2, 1, 8, 8}, 42);
    std::vector<int> labels = {0, 1};
    check_param_gradients(
        net, x,
        [&](const TensorT<double>& out, TensorT<double>* grad) {
            return softmax_ce_loss(out, labels, grad);
        },
        1e-7);
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
    auto net = testutil::small_conv_net<double>(1, 8, 51);
    auto x = testutil::random_tensor<double>({1, 1, 8, 8}, 52);
    const auto target = testutil::random_tensor<double>({1, 3}, 53);

    ForwardCacheT<double> cache;
    forward_cached(net, x, cache);
    TensorT<double> d_out;
    mse_loss(cache.output, target, &d_out);
    const auto grads = backward(net, cache, d_out);

    auto loss_now = [&]() { return mse_loss(forward(net, x).output, target); };
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); i += 7) {  // sample every 7th pixel
        const double numeric = refimpl::ref_fdiff(loss_now, x[i]);
        worst = std::max(worst, std::abs(numeric - grads.input[i]));
    }
    EXPECT_LT(worst, 1e-7);
}

TEST(Losses, HandComputedValues) {
    TensorT<double> pred({2, 2});
    pred.raw() = {1.0, 2.0, 3.0, 4.0};
    TensorT<double> target({2, 2});
    target.raw() = {1.0, 1.0, 3.0, 2.0};
    // squared diffs: 0, 1, 0, 4 -> mean 5/4
    EXPECT_NEAR(mse_loss(pred, target), 1.25, 1e-15);

    TensorT<double> logits({1, 2});
    logits.raw() = {0.0, 0.0};
    EXPECT_NEAR(softmax_ce_loss(logits, {1}), std::log(2.0), 1e-12);
    EXPECT_NEAR(classification_accuracy(pred, {1, 1}), 1.0, 1e-15);
    EXPECT_NEAR(classification_accuracy(pred, {0, 1}), 0.5, 1e-15);
}

TEST(TrainSgd, LossFallsAndRunsAreReproducible) {
    const auto x = testutil::random_tensor<float>({24, 1, 8, 8}, 61);
    // target: fixed linear functional of the input so it is learnable
    TensorT<float> y({24, 3});
    for (std::size_t i = 0; i < 24; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 64; ++j) s += x[i * 64 + j];
        y.at2(i, 0) = static_cast<float>(s / 64.0);
        y.at2(i, 1) = static_cast<float>(-s / 128.0);
        y.at2(i, 2) = 0.0f;
    }

    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.05;
    cfg.loss = LossKind::mse;
    cfg.seed = 5;

    auto net1 = testutil::small_conv_net<float>(1, 8, 62);
    TrainDataT<float> td{&x, &y, nullptr};
    const auto hist1 = train_sgd(net1, td, cfg);
    ASSERT_EQ(hist1.epochs.size(), 8u);
    EXPECT_LT(hist1.epochs.back().train_loss, hist1.epochs.front().train_loss * 0.9);

    auto net2 = testutil::small_conv_net<float>(1, 8, 62);
    const auto hist2 = train_sgd(net2, td, cfg);
    EXPECT_EQ(net1, net2);
    EXPECT_EQ(hist1.epochs.back().train_loss, hist2.epochs.back().train_loss);

    auto net3 = testutil::small_conv_net<float>(1, 8, 62);
    TrainConfig cfg3 = cfg;
    cfg3.threads = 4;
    train_sgd(net3, td, cfg3);
    EXPECT_EQ(net1, net3);  // thread count must not leak into results
}

TEST(TrainSgd, ValidationMetricsReported) {
    const auto x = testutil::random_tensor<float>({16, 1, 8, 8}, 71);
    std::vector<int> labels(16);
    for (int i = 0; i < 16; ++i) labels[i] = i % 3;

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.01;
    cfg.loss = LossKind::softmax_ce;

    auto net = testutil::small_conv_net<float>(1, 8, 72);
    TrainDataT<float> td{&x, nullptr, &labels};
    const std::optional<TrainDataT<float>> vd{TrainDataT<float>{&x, nullptr, &labels}};
    const auto hist = train_sgd(net, td, cfg, vd);
    for (const auto& e : hist.epochs) {
        EXPECT_TRUE(std::isfinite(e.val_loss));
        EXPECT_GE(e.val_metric, 0.0);
        EXPECT_LE(e.val_metric, 1.0);
    }
}

TEST(TrainSgd, HistoryCsv) {
    testutil::TempDir tmp("hist");
    TrainHistory h;
    h.epochs.push_back({0, 1.5, 2.0, 0.25});
    h.epochs.push_back({1, 1.0, std::numeric_limits<double>::quiet_NaN(),
                        std::numeric_limits<double>::quiet_NaN()});
    const auto p = tmp.path() / "hist.csv";
    h.write_csv(p);
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,train_loss,val_loss,val_metric");
    std::getline(in, line);
    EXPECT_EQ(line, "0,1.5,2,0.25");
    std::getline(in, line);
    EXPECT_EQ(line, "1,1,,");
}
