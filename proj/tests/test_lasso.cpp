#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "prunekit/lasso.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/rng.hpp"
#include "reference_impl.hpp"
#include "test_util.hpp"

using namespace prunekit;

namespace {

FeatureMatrix random_features(std::size_t n, std::size_t p, std::uint64_t seed) {
    FeatureMatrix fm;
    fm.rows = n;
    fm.cols = p;
    fm.data.resize(n * p);
    Rng rng(seed);
    for (auto& v : fm.data) v = rng.normal();
    return fm;
}

// y = b0 + X[:, support] w + noise
std::vector<double> planted_target(const FeatureMatrix& x,
                                   const std::vector<std::size_t>& support,
                                   const std::vector<double>& w, double b0, double noise,
                                   std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> y(x.rows, b0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t k = 0; k < support.size(); ++k) y[i] += w[k] * x.at(i, support[k]);
        y[i] += rng.normal() * noise;
    }
    return y;
}

}  // namespace

TEST(LambdaSchedule, GeometricWithPinnedEndpoints) {
    const auto s = lambda_schedule(5.0, 100, 1e4);
    ASSERT_EQ(s.size(), 100u);
    EXPECT_DOUBLE_EQ(s.front(), 5.0);
    EXPECT_NEAR(s.back(), 5.0 / 1e4, 5.0 / 1e4 * 1e-10);
    for (std::size_t i = 2; i < s.size(); ++i)
        EXPECT_NEAR(s[i] / s[i - 1], s[1] / s[0], 1e-12);
    EXPECT_TRUE(std::is_sorted(s.rbegin(), s.rend()));
}

TEST(LambdaMax, ExactlyZeroesEveryCoefficient) {
    auto x = random_features(60, 6, 11);
    const auto st = Standardizer::fit(x);
    x = st.apply(x);
    const auto y = planted_target(x, {1, 4}, {2.0, -1.5}, 0.7, 0.1, 12);

    const double lmax = lambda_max(x, y);
    const auto at_max = fit_lasso(x, y, lmax);
    EXPECT_EQ(at_max.nnz(), 0u);
    EXPECT_TRUE(at_max.converged);
    // mean(y) is the optimal intercept once everything is shrunk away
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    EXPECT_NEAR(at_max.beta0, ym, 1e-9);

    // nudging the penalty below the threshold activates a coefficient
    const auto below = fit_lasso(x, y, lmax * 0.98);
    EXPECT_GE(below.nnz(), 1u);
}

TEST(FitLasso, SingleFeatureClosedForm) {
    FeatureMatrix x = random_features(80, 1, 21);
    const auto y = planted_target(x, {0}, {1.3}, -0.4, 0.05, 22);

    const double lambda = 0.2;
    const auto fit = fit_lasso(x, y, lambda);

    // closed form on centered data: beta = S(cov(x,y~), lambda) / var(x)
    const double n = static_cast<double>(x.rows);
    double xm = 0, ym = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        xm += x.at(i, 0);
        ym += y[i];
    }
    xm /= n;
    ym /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        sxx += (x.at(i, 0) - xm) * (x.at(i, 0) - xm);
        sxy += (x.at(i, 0) - xm) * (y[i] - ym);
    }
    sxx /= n;
    sxy /= n;
    double want = 0.0;
    if (sxy > lambda) want = (sxy - lambda) / sxx;
    else if (sxy < -lambda) want = (sxy + lambda) / sxx;

    ASSERT_EQ(fit.beta.size(), 1u);
    EXPECT_NEAR(fit.beta[0], want, 1e-8);
    EXPECT_NEAR(fit.beta0, ym - want * xm, 1e-8);
}

TEST(FitLasso, OrthonormalDesignClosedForm) {
    // build X with centered columns satisfying X^T X / N = I via Gram-Schmidt
    const std::size_t n = 64, p = 4;
    auto raw = random_features(n, p, 31);
    std::vector<std::vector<double>> cols(p, std::vector<double>(n));
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) cols[j][i] = raw.at(i, j);
        double m = std::accumulate(cols[j].begin(), cols[j].end(), 0.0) / n;
        for (auto& v : cols[j]) v -= m;
        for (std::size_t k = 0; k < j; ++k) {
            const double d = dot(cols[j], cols[k]) / dot(cols[k], cols[k]);
            for (std::size_t i = 0; i < n; ++i) cols[j][i] -= d * cols[k][i];
        }
    }
    FeatureMatrix x;
    x.rows = n;
    x.cols = p;
    x.data.resize(n * p);
    for (std::size_t j = 0; j < p; ++j) {
        const double scale = std::sqrt(static_cast<double>(n) / dot(cols[j], cols[j]));
        for (std::size_t i = 0; i < n; ++i) x.at(i, j) = cols[j][i] * scale;
    }

    const auto y = planted_target(x, {0, 2}, {1.0, -0.8}, 0.3, 0.1, 32);
    const double lambda = 0.15;
    const auto fit = fit_lasso(x, y, lambda);

    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
    for (std::size_t j = 0; j < p; ++j) {
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += x.at(i, j) * (y[i] - ym);
        z /= static_cast<double>(n);
        const double want = z > lambda ? z - lambda : (z < -lambda ? z + lambda : 0.0);
        EXPECT_NEAR(fit.beta[j], want, 1e-8) << "coefficient " << j;
    }
    EXPECT_NEAR(fit.beta0, ym, 1e-8);
}

TEST(FitLasso, AgreesWithProximalGradientOracle) {
    auto x = random_features(40, 8, 41);
    const auto st = Standardizer::fit(x);
    x = st.apply(x);
    const auto y = planted_target(x, {0, 3, 6}, {1.5, -2.0, 0.9}, 0.2, 0.2, 42);

    const double lambda = 0.3;
    const auto cd = fit_lasso(x, y, lambda);
    const auto ista = refimpl::ref_ista(x.data, x.rows, x.cols, y, lambda, 300000);

    EXPECT_NEAR(cd.beta0, ista.beta0, 1e-5);
    for (std::size_t j = 0; j < x.cols; ++j) EXPECT_NEAR(cd.beta[j], ista.beta[j], 1e-5);

    const double obj_cd = lasso_objective(x, y, cd.beta0, cd.beta, lambda);
    const double obj_ista = lasso_objective(x, y, ista.beta0, ista.beta, lambda);
    EXPECT_LE(obj_cd, obj_ista + 1e-10);
}

TEST(FitLasso, ZeroPenaltyMatchesLeastSquares) {
    auto x = random_features(50, 5, 51);
    const auto y = planted_target(x, {0, 1, 2, 3, 4}, {1, -1, 2, 0.5, -0.3}, 1.1, 0.05, 52);
    const auto fit = fit_lasso(x, y, 0.0);

    // ordinary least squares with explicit intercept via centering
    const std::size_t n = x.rows, p = x.cols;
    std::vector<double> xm(p, 0.0);
    double ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) xm[j] += x.at(i, j);
        xm[j] /= n;
    }
    std::vector<double> xc(n * p), yc(n);
    for (std::size_t i = 0; i < n; ++i) {
        yc[i] = y[i] - ym;
        for (std::size_t j = 0; j < p; ++j) xc[i * p + j] = x.at(i, j) - xm[j];
    }
    const auto w = ridge_solve(xc, n, p, yc, 0.0);
    for (std::size_t j = 0; j < p; ++j) EXPECT_NEAR(fit.beta[j], w[j], 1e-6);
}

TEST(FitLasso, ReportsCertifiedStationarity) {
    auto x = random_features(30, 6, 61);
    const auto y = planted_target(x, {2, 5}, {0.7, -1.1}, 0.0, 0.3, 62);
    const auto fit = fit_lasso(x, y, 0.1);
    EXPECT_TRUE(fit.converged);
    EXPECT_LT(fit.kkt_residual, 2e-7);

    // random feasible perturbations cannot beat the reported solution
    const double obj = lasso_objective(x, y, fit.beta0, fit.beta, 0.1);
    Rng rng(63);
    for (int t = 0; t < 30; ++t) {
        auto beta = fit.beta;
        for (auto& b : beta) b += rng.normal() * 1e-3;
        const double other = lasso_objective(x, y, fit.beta0 + rng.normal() * 1e-3, beta, 0.1);
        EXPECT_GE(other, obj - 1e-9);
    }
}

TEST(LassoPath, WarmStartsMatchColdFits) {
    auto x = random_features(40, 5, 71);
    const auto st = Standardizer::fit(x);
    x = st.apply(x);
    const auto y = planted_target(x, {1, 3}, {2.0, -1.0}, 0.5, 0.1, 72);

    const auto lambdas = lambda_schedule(lambda_max(x, y), 12, 1e3);
    const auto warm = lasso_path(x, y, lambdas);
    ASSERT_EQ(warm.size(), 12u);
    EXPECT_EQ(warm.front().nnz(), 0u);
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const auto cold = fit_lasso(x, y, lambdas[i]);
        const double obj_w = lasso_objective(x, y, warm[i].beta0, warm[i].beta, lambdas[i]);
        const double obj_c = lasso_objective(x, y, cold.beta0, cold.beta, lambdas[i]);
        EXPECT_NEAR(obj_w, obj_c, 1e-9);
    }
}

TEST(CharacteristicCurve, PlantedSupportSitsAtTheKnee) {
    // target built from 3 of 12 features; the curve must flatten exactly there
    auto x_all = random_features(240, 12, 81);
    const std::vector<std::size_t> support = {2, 5, 9};
    const auto y_all = planted_target(x_all, support, {2.0, -1.5, 1.0}, 0.4, 0.05, 82);

    FeatureMatrix x_train, x_val;
    std::vector<double> y_train, y_val;
    x_train = x_all.select_rows([] {
        std::vector<std::size_t> v(180);
        std::iota(v.begin(), v.end(), 0);
        return v;
    }());
    x_val = x_all.select_rows([] {
        std::vector<std::size_t> v(60);
        std::iota(v.begin(), v.end(), 180);
        return v;
    }());
    y_train.assign(y_all.begin(), y_all.begin() + 180);
    y_val.assign(y_all.begin() + 180, y_all.end());

    CurveOptions opts;
    opts.lambda_count = 60;
    const auto curve = characteristic_curve(x_train, y_train, x_val, y_val, opts);
    ASSERT_EQ(curve.points.size(), 60u);
    EXPECT_EQ(curve.points.front().nnz, 0u);

    const auto knee = kneepoint(curve, 0.01);
    EXPECT_EQ(knee.nnz, support.size());
    EXPECT_EQ(knee.kept, support);
}

TEST(CharacteristicCurve, ValidationScaleCannotLeakIntoFit) {
    auto x_train = random_features(100, 6, 91);
    const auto y_train = planted_target(x_train, {0, 4}, {1.0, -2.0}, 0.1, 0.05, 92);
    auto x_val_a = random_features(40, 6, 93);
    auto x_val_b = x_val_a;
    for (auto& v : x_val_b.data) v *= 1000.0;  // wildly different validation scale
    const auto y_val = planted_target(x_val_a, {0, 4}, {1.0, -2.0}, 0.1, 0.05, 94);

    const auto ca = characteristic_curve(x_train, y_train, x_val_a, y_val);
    const auto cb = characteristic_curve(x_train, y_train, x_val_b, y_val);
    ASSERT_EQ(ca.points.size(), cb.points.size());
    for (std::size_t i = 0; i < ca.points.size(); ++i) {
        // fitted coefficients depend on the training split alone
        EXPECT_EQ(ca.points[i].lambda, cb.points[i].lambda);
        EXPECT_EQ(ca.points[i].beta, cb.points[i].beta);
    }
}

namespace {

CharacteristicCurve hand_curve(const std::vector<std::pair<std::size_t, double>>& pts) {
    CharacteristicCurve c;
    c.n_features = 16;
    double lam = 1.0;
    for (const auto& [nnz, rmse] : pts) {
        CurvePoint pt;
        pt.lambda = lam;
        lam *= 0.8;
        pt.nnz = nnz;
        pt.rmse_val = rmse;
        pt.beta.assign(16, 0.0);
        for (std::size_t j = 0; j < nnz; ++j) pt.beta[j] = 1.0;
        c.points.push_back(pt);
    }
    c.standardizer.mean.assign(16, 0.0);
    c.standardizer.stdev.assign(16, 1.0);
    return c;
}

}  // namespace

TEST(KneePoint, MinimalCountWithinToleranceBand) {
    // range is [0.94, 10]; gamma 0.01 allows rmse below 0.94 + 0.0906
    const auto curve = hand_curve(
        {{0, 10.0}, {1, 5.0}, {2, 1.2}, {3, 1.0}, {5, 0.95}, {8, 0.94}});
    const auto knee = kneepoint(curve, 0.01);
    EXPECT_EQ(knee.nnz, 3u);
    EXPECT_NEAR(knee.rmse_min, 0.94, 1e-12);
    EXPECT_NEAR(knee.rmse_max, 10.0, 1e-12);

    // a looser band admits sparser points
    EXPECT_EQ(kneepoint(curve, 0.5).nnz, 1u);
}

TEST(KneePoint, BandBoundaryIsExclusive) {
    // nnz=2 sits exactly on the boundary: rmse - min == gamma * range
    const auto curve = hand_curve({{0, 2.0}, {2, 1.1}, {4, 1.0}});
    // range = 1.0, gamma = 0.1, boundary value = 1.0 + 0.1 exactly
    const auto knee = kneepoint(curve, 0.1);
    EXPECT_EQ(knee.nnz, 4u);  // strict inequality rejects the boundary point
}

TEST(KneePoint, BestPointPerCountIsUsed) {
    // two points share nnz=2; only the better one is judged against the band
    const auto curve = hand_curve({{0, 2.0}, {2, 1.9}, {2, 1.01}, {6, 1.0}});
    const auto knee = kneepoint(curve, 0.05);
    EXPECT_EQ(knee.nnz, 2u);
    EXPECT_NEAR(knee.rmse_val, 1.01, 1e-12);
}

TEST(KneePoint, FlatCurveFallsBackToSparsest) {
    const auto curve = hand_curve({{0, 1.0}, {2, 1.0}, {4, 1.0}});
    const auto knee = kneepoint(curve, 0.1);  // strict < unsatisfiable when range is 0
    EXPECT_EQ(knee.nnz, 0u);
}

TEST(KneePoint, KeptSetMatchesSupport) {
    auto curve = hand_curve({{0, 3.0}, {2, 0.5}});
    curve.points[1].beta.assign(16, 0.0);
    curve.points[1].beta[4] = 0.7;
    curve.points[1].beta[11] = -0.2;
    const auto knee = kneepoint(curve, 0.2);
    EXPECT_EQ(knee.kept, (std::vector<std::size_t>{4, 11}));
}

TEST(CurveIo, CsvColumns) {
    testutil::TempDir tmp("curve");
    const auto curve = hand_curve({{0, 2.0}, {3, 0.5}});
    const auto p = tmp.path() / "curve.csv";
    curve.write_csv(p);
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "lambda,nnz,rmse_val,rmse_train");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 2);
}
