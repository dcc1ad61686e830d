#pragma once

// L1-path machinery: coordinate-descent lasso, a geometric penalty schedule
// anchored at the smallest penalty that zeroes every coefficient, the
// filters-vs-error characteristic curve, and its knee point.
//
// Objective: (1/2N) sum_i (y_i - b0 - x_i.b)^2 + lambda * sum_j |b_j|
// The intercept is never penalized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunekit/features.hpp"

namespace prunekit {

struct LassoOptions {
    double tol = 1e-7;       // max coordinate change per sweep
    double kkt_tol = 2e-7;   // max stationarity violation
    std::size_t max_sweeps = 10000;
};

struct LassoFit {
    double lambda = 0.0;
    double beta0 = 0.0;
    std::vector<double> beta;
    std::size_t sweeps = 0;
    bool converged = false;
    double kkt_residual = 0.0;

    std::size_t nnz() const {
        std::size_t n = 0;
        for (double b : beta)
            if (b != 0.0) ++n;
        return n;
    }
    std::vector<std::size_t> support() const {
        std::vector<std::size_t> s;
        for (std::size_t j = 0; j < beta.size(); ++j)
            if (beta[j] != 0.0) s.push_back(j);
        return s;
    }
};

// Smallest penalty at which the all-zero coefficient vector is optimal
// (the intercept then equals mean(y)).
inline double lambda_max(const FeatureMatrix& x, const std::vector<double>& y) {
    if (y.size() != x.rows) throw std::invalid_argument("lambda_max: length mismatch");
    if (x.rows == 0) return 0.0;
    double ym = 0.0;
    for (double v : y) ym += v;
    ym /= static_cast<double>(y.size());
    double best = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) s += x.at(i, j) * (y[i] - ym);
        best = std::max(best, std::abs(s) / static_cast<double>(x.rows));
    }
    return best;
}

// Geometric grid from lam_max down to lam_max/ratio, `count` values.
inline std::vector<double> lambda_schedule(double lam_max, std::size_t count = 100,
                                           double ratio = 1e4) {
    if (count == 0) return {};
    if (lam_max <= 0.0) return std::vector<double>(count, 0.0);
    if (count == 1) return {lam_max};
    std::vector<double> out(count);
    const double step = std::pow(1.0 / ratio, 1.0 / static_cast<double>(count - 1));
    double v = lam_max;
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = v;
        v *= step;
    }
    return out;
}

// Cyclic coordinate descent with soft-thresholding; zero-variance columns
// stay at zero. Convergence requires both a small coordinate step and a
// small KKT violation, so reported solutions are certifiably stationary.
inline LassoFit fit_lasso(const FeatureMatrix& x, const std::vector<double>& y, double lambda,
                          const LassoFit* warm = nullptr, const LassoOptions& opts = {}) {
    const std::size_t n = x.rows, p = x.cols;
    if (y.size() != n) throw std::invalid_argument("fit_lasso: length mismatch");
    if (n == 0) throw std::invalid_argument("fit_lasso: empty data");
    if (lambda < 0.0) throw std::invalid_argument("fit_lasso: negative penalty");

    LassoFit fit;
    fit.lambda = lambda;
    fit.beta.assign(p, 0.0);
    if (warm && warm->beta.size() == p) {
        fit.beta = warm->beta;
        fit.beta0 = warm->beta0;
    }

    std::vector<double> col_sq(p, 0.0);  // (1/N) x_j . x_j
    for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x.at(i, j) * x.at(i, j);
        col_sq[j] = s / static_cast<double>(n);
    }

    std::vector<double> r(n);  // residual y - b0 - X b
    for (std::size_t i = 0; i < n; ++i) {
        double pred = fit.beta0;
        for (std::size_t j = 0; j < p; ++j)
            if (fit.beta[j] != 0.0) pred += x.at(i, j) * fit.beta[j];
        r[i] = y[i] - pred;
    }

    auto kkt_residual = [&]() {
        double worst = 0.0;
        double rsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) rsum += r[i];
        worst = std::abs(rsum / static_cast<double>(n));  // intercept stationarity
        for (std::size_t j = 0; j < p; ++j) {
            if (col_sq[j] == 0.0) continue;
            double g = 0.0;
            for (std::size_t i = 0; i < n; ++i) g += x.at(i, j) * r[i];
            g /= static_cast<double>(n);
            if (fit.beta[j] != 0.0)
                worst = std::max(worst, std::abs(g - lambda * (fit.beta[j] > 0 ? 1.0 : -1.0)));
            else
                worst = std::max(worst, std::max(0.0, std::abs(g) - lambda));
        }
        return worst;
    };

    for (fit.sweeps = 0; fit.sweeps < opts.max_sweeps; ++fit.sweeps) {
        double max_step = 0.0;

        double rmean = 0.0;
        for (std::size_t i = 0; i < n; ++i) rmean += r[i];
        rmean /= static_cast<double>(n);
        fit.beta0 += rmean;
        for (std::size_t i = 0; i < n; ++i) r[i] -= rmean;
        max_step = std::abs(rmean);

        for (std::size_t j = 0; j < p; ++j) {
            if (col_sq[j] == 0.0) continue;
            double rho = 0.0;
            for (std::size_t i = 0; i < n; ++i) rho += x.at(i, j) * r[i];
            rho = rho / static_cast<double>(n) + col_sq[j] * fit.beta[j];
            double b = 0.0;
            if (rho > lambda) b = (rho - lambda) / col_sq[j];
            else if (rho < -lambda) b = (rho + lambda) / col_sq[j];
            const double delta = b - fit.beta[j];
            if (delta != 0.0) {
                for (std::size_t i = 0; i < n; ++i) r[i] -= x.at(i, j) * delta;
                fit.beta[j] = b;
                max_step = std::max(max_step, std::abs(delta));
            }
        }

        if (max_step < opts.tol) {
            fit.kkt_residual = kkt_residual();
            if (fit.kkt_residual < opts.kkt_tol) {
                fit.converged = true;
                ++fit.sweeps;
                break;
            }
        }
    }
    if (!fit.converged) fit.kkt_residual = kkt_residual();
    return fit;
}

inline double lasso_objective(const FeatureMatrix& x, const std::vector<double>& y,
                              double beta0, const std::vector<double>& beta, double lambda) {
    const std::size_t n = x.rows;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = beta0;
        for (std::size_t j = 0; j < x.cols; ++j) pred += x.at(i, j) * beta[j];
        const double d = y[i] - pred;
        sse += d * d;
    }
    double l1 = 0.0;
    for (double b : beta) l1 += std::abs(b);
    return sse / (2.0 * static_cast<double>(n)) + lambda * l1;
}

// Descending-penalty path with warm starts.
inline std::vector<LassoFit> lasso_path(const FeatureMatrix& x, const std::vector<double>& y,
                                        const std::vector<double>& lambdas,
                                        const LassoOptions& opts = {}) {
    std::vector<LassoFit> fits;
    fits.reserve(lambdas.size());
    const LassoFit* warm = nullptr;
    for (double lam : lambdas) {
        fits.push_back(fit_lasso(x, y, lam, warm, opts));
        warm = &fits.back();
    }
    return fits;
}

struct CurvePoint {
    double lambda = 0.0;
    std::size_t nnz = 0;
    double rmse_val = 0.0;
    double rmse_train = 0.0;
    double beta0 = 0.0;          // in standardized feature space
    std::vector<double> beta;    // in standardized feature space
};

// Validation-error curve along the penalty path. Features are standardized
// with training-split statistics only; RMSE stays in raw target units.
struct CharacteristicCurve {
    std::vector<CurvePoint> points;  // path order: penalty descending
    Standardizer standardizer;
    std::size_t n_features = 0;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open " + path.string());
        out.precision(17);
        out << "lambda,nnz,rmse_val,rmse_train\n";
        for (const auto& pt : points)
            out << pt.lambda << "," << pt.nnz << "," << pt.rmse_val << "," << pt.rmse_train
                << "\n";
    }

    nlohmann::json to_json() const {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& pt : points)
            pts.push_back({{"lambda", pt.lambda},
                           {"nnz", pt.nnz},
                           {"rmse_val", pt.rmse_val},
                           {"rmse_train", pt.rmse_train},
                           {"beta0", pt.beta0},
                           {"beta", pt.beta}});
        return {{"n_features", n_features},
                {"mean", standardizer.mean},
                {"stdev", standardizer.stdev},
                {"points", pts}};
    }

    static CharacteristicCurve from_json(const nlohmann::json& j) {
        CharacteristicCurve c;
        c.n_features = j.at("n_features").get<std::size_t>();
        c.standardizer.mean = j.at("mean").get<std::vector<double>>();
        c.standardizer.stdev = j.at("stdev").get<std::vector<double>>();
        for (const auto& jp : j.at("points")) {
            CurvePoint pt;
            pt.lambda = jp.at("lambda").get<double>();
            pt.nnz = jp.at("nnz").get<std::size_t>();
            pt.rmse_val = jp.at("rmse_val").get<double>();
            pt.rmse_train = jp.at("rmse_train").get<double>();
            pt.beta0 = jp.at("beta0").get<double>();
            pt.beta = jp.at("beta").get<std::vector<double>>();
            c.points.push_back(std::move(pt));
        }
        return c;
    }
};

struct CurveOptions {
    std::size_t lambda_count = 100;
    double lambda_ratio = 1e4;
    LassoOptions lasso;
};

namespace detail {

inline double rmse_of(const FeatureMatrix& x, const std::vector<double>& y, double beta0,
                      const std::vector<double>& beta) {
    if (x.rows == 0) return 0.0;
    double sse = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        double pred = beta0;
        for (std::size_t j = 0; j < x.cols; ++j)
            if (beta[j] != 0.0) pred += x.at(i, j) * beta[j];
        const double d = y[i] - pred;
        sse += d * d;
    }
    return std::sqrt(sse / static_cast<double>(x.rows));
}

}  // namespace detail

inline CharacteristicCurve characteristic_curve(const FeatureMatrix& x_train,
                                                const std::vector<double>& y_train,
                                                const FeatureMatrix& x_val,
                                                const std::vector<double>& y_val,
                                                const CurveOptions& opts = {}) {
    if (x_train.cols != x_val.cols)
        throw std::invalid_argument("characteristic_curve: feature count mismatch");
    CharacteristicCurve curve;
    curve.standardizer = Standardizer::fit(x_train);
    curve.n_features = x_train.cols;
    const FeatureMatrix xs_train = curve.standardizer.apply(x_train);
    const FeatureMatrix xs_val = curve.standardizer.apply(x_val);

    const double lam_max = lambda_max(xs_train, y_train);
    const auto lambdas = lambda_schedule(lam_max, opts.lambda_count, opts.lambda_ratio);
    const auto fits = lasso_path(xs_train, y_train, lambdas, opts.lasso);

    curve.points.reserve(fits.size());
    for (const auto& f : fits) {
        CurvePoint pt;
        pt.lambda = f.lambda;
        pt.nnz = f.nnz();
        pt.beta0 = f.beta0;
        pt.beta = f.beta;
        pt.rmse_train = detail::rmse_of(xs_train, y_train, f.beta0, f.beta);
        pt.rmse_val = detail::rmse_of(xs_val, y_val, f.beta0, f.beta);
        curve.points.push_back(std::move(pt));
    }
    return curve;
}

struct KneePoint {
    std::size_t point_index = 0;  // into curve.points
    std::size_t nnz = 0;
    double lambda = 0.0;
    double rmse_val = 0.0;
    double gamma = 0.0;
    double rmse_min = 0.0;
    double rmse_max = 0.0;
    std::vector<std::size_t> kept;  // selected feature columns

    nlohmann::json to_json() const {
        return {{"point_index", point_index}, {"nnz", nnz},           {"lambda", lambda},
                {"rmse_val", rmse_val},       {"gamma", gamma},       {"rmse_min", rmse_min},
                {"rmse_max", rmse_max},       {"kept_filters", kept}};
    }
};

// Smallest filter count whose validation error is within a gamma fraction of
// the curve's full error range above the minimum (strict inequality). Among
// points with that count, the lowest-error one wins; a flat curve falls back
// to the sparsest minimum-error point.
inline KneePoint kneepoint(const CharacteristicCurve& curve, double gamma) {
    if (curve.points.empty()) throw std::invalid_argument("kneepoint: empty curve");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& pt : curve.points) {
        lo = std::min(lo, pt.rmse_val);
        hi = std::max(hi, pt.rmse_val);
    }

    // best point per distinct filter count
    std::vector<std::size_t> order(curve.points.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (curve.points[a].nnz != curve.points[b].nnz)
            return curve.points[a].nnz < curve.points[b].nnz;
        return curve.points[a].rmse_val < curve.points[b].rmse_val;
    });

    std::size_t chosen = order[0];
    bool found = false;
    std::size_t last_nnz = std::numeric_limits<std::size_t>::max();
    for (std::size_t i : order) {
        const auto& pt = curve.points[i];
        if (pt.nnz == last_nnz) continue;  // only the best point per count
        last_nnz = pt.nnz;
        if (pt.rmse_val - lo < gamma * (hi - lo)) {
            chosen = i;
            found = true;
            break;
        }
    }
    if (!found) {
        // strict inequality unsatisfiable (flat curve): sparsest minimum
        for (std::size_t i : order) {
            if (curve.points[i].rmse_val == lo) {
                chosen = i;
                break;
            }
        }
    }

    KneePoint k;
    k.point_index = chosen;
    k.nnz = curve.points[chosen].nnz;
    k.lambda = curve.points[chosen].lambda;
    k.rmse_val = curve.points[chosen].rmse_val;
    k.gamma = gamma;
    k.rmse_min = lo;
    k.rmse_max = hi;
    for (std::size_t j = 0; j < curve.points[chosen].beta.size(); ++j)
        if (curve.points[chosen].beta[j] != 0.0) k.kept.push_back(j);
    return k;
}

}  // namespace prunekit
