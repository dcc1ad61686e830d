#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "prunekit/features.hpp"
#include "reference_impl.hpp"
#include "test_util.hpp"

using namespace prunekit;

namespace {

// pooled activations of layer `upto` computed entirely with the oracles
FeatureMatrix ref_features(const NetworkIRT<double>& net, const TensorT<double>& x,
                           std::size_t upto) {
    TensorT<double> cur = x;
    for (std::size_t l = 0; l <= upto; ++l) {
        NetworkIRT<double> one;
        one.layers = {net.layers[l]};
        one.params = {net.params[l]};
        cur = refimpl::ref_forward(one, cur);
    }
    FeatureMatrix fm;
    if (cur.rank() == 4) {
        const auto pooled = refimpl::ref_gap(cur);
        fm.rows = pooled.dim(0);
        fm.cols = pooled.dim(1);
        fm.data.assign(pooled.data(), pooled.data() + pooled.size());
    } else {
        fm.rows = cur.dim(0);
        fm.cols = cur.dim(1);
        fm.data.assign(cur.data(), cur.data() + cur.size());
    }
    return fm;
}

}  // namespace

TEST(ExtractGap, MatchesOraclePooling) {
    auto net = testutil::small_conv_net<double>(1, 8, 91);
    const auto x = testutil::random_tensor<double>({5, 1, 8, 8}, 92);
    for (std::size_t layer : {std::size_t{0}, std::size_t{3}, std::size_t{5}}) {
        const auto got = extract_gap(net, x, layer);
        const auto want = ref_features(net, x, layer);
        ASSERT_EQ(got.rows, want.rows);
        ASSERT_EQ(got.cols, want.cols);
        double worst = 0.0;
        for (std::size_t i = 0; i < got.data.size(); ++i)
            worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
        EXPECT_LT(worst, 1e-12) << "layer " << layer;
        EXPECT_EQ(got.source_layer, static_cast<int>(layer));
    }
}

TEST(ExtractGap, PoolingLayerOutputIsIdentical) {
    // capturing at the pooling layer and at the conv feeding it must agree
    auto net = testutil::small_conv_net<double>(1, 8, 93);
    const auto x = testutil::random_tensor<double>({3, 1, 8, 8}, 94);
    const auto at_gap = extract_gap(net, x, 5);
    const std::size_t prev = 4;  // relu before gap
    const auto at_prev = extract_gap(net, x, prev);
    ASSERT_EQ(at_gap.cols, at_prev.cols);
    for (std::size_t i = 0; i < at_gap.data.size(); ++i)
        EXPECT_NEAR(at_gap.data[i], at_prev.data[i], 1e-12);
}

TEST(Correlation, PlantedSignalsRecovered) {
    Rng rng(5);
    FeatureMatrix fm;
    fm.rows = 200;
    fm.cols = 4;
    fm.data.resize(fm.rows * fm.cols);
    for (auto& v : fm.data) v = rng.normal();
    for (std::size_t r = 0; r < fm.rows; ++r) fm.at(r, 2) = 7.0;  // constant column

    std::vector<double> y(fm.rows);
    for (std::size_t r = 0; r < fm.rows; ++r) y[r] = 3.0 * fm.at(r, 1) + 10.0;

    const auto corr = correlate_attribute(fm, y);
    EXPECT_NEAR(corr[1], 1.0, 1e-12);
    EXPECT_EQ(corr[2], 0.0);  // zero variance never yields NaN
    EXPECT_LT(std::abs(corr[0]), 0.25);

    std::vector<double> yneg(fm.rows);
    for (std::size_t r = 0; r < fm.rows; ++r) yneg[r] = -y[r];
    EXPECT_NEAR(correlate_attribute(fm, yneg)[1], -1.0, 1e-12);

    const std::vector<double> flat(fm.rows, 2.0);
    for (double c : correlate_attribute(fm, flat)) EXPECT_EQ(c, 0.0);
}

TEST(Correlation, MatchesDirectFormula) {
    Rng rng(6);
    FeatureMatrix fm;
    fm.rows = 50;
    fm.cols = 3;
    fm.data.resize(150);
    for (auto& v : fm.data) v = rng.uniform(-2.0, 2.0);
    std::vector<double> y(50);
    for (auto& v : y) v = rng.uniform(-1.0, 1.0);

    const auto got = correlate_attribute(fm, y);
    for (std::size_t c = 0; c < 3; ++c) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        const double n = 50.0;
        for (std::size_t r = 0; r < 50; ++r) {
            sx += fm.at(r, c);
            sy += y[r];
            sxx += fm.at(r, c) * fm.at(r, c);
            syy += y[r] * y[r];
            sxy += fm.at(r, c) * y[r];
        }
        const double want = (n * sxy - sx * sy) /
                            (std::sqrt(n * sxx - sx * sx) * std::sqrt(n * syy - sy * sy));
        EXPECT_NEAR(got[c], want, 1e-10);
    }
}

TEST(FilterNorms, HandComputed) {
    auto net = make_network<float>({LayerSpec::conv2d(1, 2, 2, 1, 0, false)}, {1, 4, 4});
    net.params[0].weight.raw() = {1, -1, 2, -2, 3, 0, 0, -4};
    const auto l1 = filter_norms(net, 0, NormKind::l1);
    EXPECT_NEAR(l1[0], 6.0, 1e-6);
    EXPECT_NEAR(l1[1], 7.0, 1e-6);
    const auto l2 = filter_norms(net, 0, NormKind::l2);
    EXPECT_NEAR(l2[0], std::sqrt(10.0), 1e-6);
    EXPECT_NEAR(l2[1], 5.0, 1e-6);
}

TEST(FilterNorms, MaxPairTakesLargerOfThePair) {
    auto net = make_network<float>({LayerSpec::mfm(1, 2, 1, 1, 0, false)}, {1, 4, 4});
    // internal rows: [c0, c1, c0+2, c1+2] with 1x1x1 kernels
    net.params[0].weight.raw() = {1.0f, -3.0f, 2.0f, 0.5f};
    const auto norms = filter_norms(net, 0, NormKind::l2);
    ASSERT_EQ(norms.size(), 2u);
    EXPECT_NEAR(norms[0], 2.0, 1e-6);  // max(|1|, |2|)
    EXPECT_NEAR(norms[1], 3.0, 1e-6);  // max(|-3|, |0.5|)
}

TEST(Standardizer, NormalizesFitDataExactly) {
    Rng rng(7);
    FeatureMatrix fm;
    fm.rows = 64;
    fm.cols = 3;
    fm.data.resize(192);
    for (auto& v : fm.data) v = rng.uniform(5.0, 9.0);
    for (std::size_t r = 0; r < fm.rows; ++r) fm.at(r, 2) = 4.0;  // constant

    const auto st = Standardizer::fit(fm);
    const auto out = st.apply(fm);
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0, v = 0;
        for (std::size_t r = 0; r < out.rows; ++r) m += out.at(r, c);
        m /= out.rows;
        for (std::size_t r = 0; r < out.rows; ++r)
            v += (out.at(r, c) - m) * (out.at(r, c) - m);
        v /= out.rows;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v, 1.0, 1e-12);
    }
    EXPECT_EQ(st.stdev[2], 1.0);  // constant column passes through shifted only
    for (std::size_t r = 0; r < out.rows; ++r) EXPECT_NEAR(out.at(r, 2), 0.0, 1e-12);
}

TEST(FeatureIo, BinaryRoundTripIsExact) {
    testutil::TempDir tmp("feat");
    Rng rng(8);
    FeatureMatrix fm;
    fm.rows = 17;
    fm.cols = 5;
    fm.source_layer = 3;
    fm.data.resize(85);
    for (auto& v : fm.data) v = rng.normal();
    for (std::size_t c = 0; c < 5; ++c) fm.names.push_back("f" + std::to_string(c));

    const auto p = tmp.path() / "f.pkfm";
    write_features_bin(fm, p);
    const auto loaded = load_features_bin(p);
    EXPECT_EQ(fm, loaded);
}

TEST(FeatureIo, CsvHasHeaderAndRows) {
    testutil::TempDir tmp("featcsv");
    FeatureMatrix fm;
    fm.rows = 2;
    fm.cols = 2;
    fm.names = {"a", "b"};
    fm.data = {1.0, 2.0, 3.0, 4.5};
    const auto p = tmp.path() / "f.csv";
    write_features_csv(fm, p);
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "a,b");
    std::getline(in, line);
    EXPECT_EQ(line, "1,2");
    std::getline(in, line);
    EXPECT_EQ(line, "3,4.5");
}

TEST(FeatureMatrix, RowAndColumnSelection) {
    FeatureMatrix fm;
    fm.rows = 3;
    fm.cols = 3;
    fm.names = {"a", "b", "c"};
    fm.data = {0, 1, 2, 10, 11, 12, 20, 21, 22};

    const auto rows = fm.select_rows({2, 0});
    EXPECT_EQ(rows.rows, 2u);
    EXPECT_EQ(rows.at(0, 1), 21.0);
    EXPECT_EQ(rows.at(1, 0), 0.0);

    const auto cols = fm.select_cols({1});
    EXPECT_EQ(cols.cols, 1u);
    EXPECT_EQ(cols.names, (std::vector<std::string>{"b"}));
    EXPECT_EQ(cols.at(2, 0), 21.0);
}
