#pragma once

// Small dense helpers for the closed-form solvers. Everything here works in
// double regardless of the engine scalar; problem sizes are tiny (p <= a few
// hundred), so O(p^3) is fine.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace prunekit {

// Row-major square matrix view over a flat vector.
struct SquareMat {
    std::size_t n = 0;
    std::vector<double> a;

    explicit SquareMat(std::size_t n_) : n(n_), a(n_ * n_, 0.0) {}
    double& at(std::size_t i, std::size_t j) { return a[i * n + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

// In-place lower Cholesky; throws if the matrix is not positive definite.
inline void cholesky(SquareMat& m) {
    const std::size_t n = m.n;
    for (std::size_t j = 0; j < n; ++j) {
        double d = m.at(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= m.at(j, k) * m.at(j, k);
        if (!(d > 0.0))
            throw std::runtime_error("cholesky: matrix not positive definite");
        const double ljj = std::sqrt(d);
        m.at(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= m.at(i, k) * m.at(j, k);
            m.at(i, j) = s / ljj;
        }
        for (std::size_t k = j + 1; k < n; ++k) m.at(j, k) = 0.0;
    }
}

// Solves A x = b for symmetric positive definite A (A is destroyed).
inline std::vector<double> cholesky_solve(SquareMat a, std::vector<double> b) {
    if (a.n != b.size()) throw std::invalid_argument("cholesky_solve: size mismatch");
    cholesky(a);
    const std::size_t n = a.n;
    // forward: L y = b
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a.at(i, k) * b[k];
        b[i] = s / a.at(i, i);
    }
    // back: L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a.at(k, ii) * b[k];
        b[ii] = s / a.at(ii, ii);
    }
    return b;
}

// Ridge-regularized least squares on raw (already centered/scaled if desired)
// data: minimizes ||X w - y||^2 + ridge ||w||^2 via normal equations.
// X is row-major n x p.
inline std::vector<double> ridge_solve(const std::vector<double>& x, std::size_t n,
                                       std::size_t p, const std::vector<double>& y,
                                       double ridge) {
    if (x.size() != n * p || y.size() != n)
        throw std::invalid_argument("ridge_solve: size mismatch");
    SquareMat g(p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i; j < p; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += x[r * p + i] * x[r * p + j];
            g.at(i, j) = s;
            g.at(j, i) = s;
        }
    for (std::size_t i = 0; i < p; ++i) g.at(i, i) += ridge;
    std::vector<double> rhs(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < n; ++r) s += x[r * p + j] * y[r];
        rhs[j] = s;
    }
    return cholesky_solve(std::move(g), std::move(rhs));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace prunekit
