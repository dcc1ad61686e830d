#pragma once

// Naive double-precision oracles, written straight from the math with no code
// shared with the library. Deliberately slow and explicit.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "prunekit/netir.hpp"
#include "prunekit/tensor.hpp"

namespace refimpl {

using prunekit::LayerKind;
using prunekit::LayerParamsT;
using prunekit::LayerSpec;
using prunekit::NetworkIRT;
using prunekit::TensorT;

using DTensor = TensorT<double>;

inline DTensor ref_conv2d(const DTensor& x, const DTensor& w, const DTensor& b, int stride,
                          int pad) {
    const int n = static_cast<int>(x.dim(0)), ci = static_cast<int>(x.dim(1));
    const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
    const int co = static_cast<int>(w.dim(0)), k = static_cast<int>(w.dim(2));
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (wd + 2 * pad - k) / stride + 1;
    DTensor y({static_cast<std::size_t>(n), static_cast<std::size_t>(co),
               static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (int ni = 0; ni < n; ++ni)
        for (int o = 0; o < co; ++o)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
                    for (int c = 0; c < ci; ++c)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const int ih = yy * stride - pad + kh;
                                const int iw = xx * stride - pad + kw;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                                acc += w.at4(o, c, kh, kw) * x.at4(ni, c, ih, iw);
                            }
                    y.at4(ni, o, yy, xx) = acc;
                }
    return y;
}

inline DTensor ref_relu(const DTensor& x) {
    DTensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
    return y;
}

inline DTensor ref_maxpool(const DTensor& x, int window, int stride, int pad) {
    const int n = static_cast<int>(x.dim(0)), c = static_cast<int>(x.dim(1));
    const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
    const int oh = (h + 2 * pad - window) / stride + 1;
    const int ow = (w + 2 * pad - window) / stride + 1;
    DTensor y({static_cast<std::size_t>(n), static_cast<std::size_t>(c),
               static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    double best = -std::numeric_limits<double>::infinity();
                    bool seen = false;
                    for (int kh = 0; kh < window; ++kh)
                        for (int kw = 0; kw < window; ++kw) {
                            const int ih = yy * stride - pad + kh;
                            const int iw = xx * stride - pad + kw;
                            if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                            best = std::max(best, x.at4(ni, ci, ih, iw));
                            seen = true;
                        }
                    y.at4(ni, ci, yy, xx) = seen ? best : 0.0;
                }
    return y;
}

inline DTensor ref_mfm(const DTensor& x, const DTensor& w, const DTensor& b, int stride,
                       int pad) {
    const DTensor conv = ref_conv2d(x, w, b, stride, pad);
    const std::size_t n = conv.dim(0), c2 = conv.dim(1), oh = conv.dim(2), ow = conv.dim(3);
    const std::size_t half = c2 / 2;
    DTensor y({n, half, oh, ow});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ci = 0; ci < half; ++ci)
            for (std::size_t yy = 0; yy < oh; ++yy)
                for (std::size_t xx = 0; xx < ow; ++xx)
                    y.at4(ni, ci, yy, xx) =
                        std::max(conv.at4(ni, ci, yy, xx), conv.at4(ni, ci + half, yy, xx));
    return y;
}

inline DTensor ref_gap(const DTensor& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    DTensor y({n, c});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (std::size_t yy = 0; yy < h; ++yy)
                for (std::size_t xx = 0; xx < w; ++xx) s += x.at4(ni, ci, yy, xx);
            y.at2(ni, ci) = s / static_cast<double>(h * w);
        }
    return y;
}

inline DTensor ref_linear(const DTensor& x, const DTensor& w, const DTensor& b) {
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    DTensor y({n, out});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < in; ++i) acc += w.at2(o, i) * x.at2(ni, i);
            y.at2(ni, o) = acc;
        }
    return y;
}

inline DTensor ref_forward(const NetworkIRT<double>& net, const DTensor& x) {
    DTensor cur = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        const LayerParamsT<double>& p = net.params[l];
        switch (s.kind) {
            case LayerKind::Conv2D: cur = ref_conv2d(cur, p.weight, p.bias, s.stride, s.padding); break;
            case LayerKind::ReLU: cur = ref_relu(cur); break;
            case LayerKind::MaxPool2D: cur = ref_maxpool(cur, s.window, s.stride, s.padding); break;
            case LayerKind::MFM: cur = ref_mfm(cur, p.weight, p.bias, s.stride, s.padding); break;
            case LayerKind::GAP: cur = ref_gap(cur); break;
            case LayerKind::Linear: cur = ref_linear(cur, p.weight, p.bias); break;
        }
    }
    return cur;
}

// ---- independent sparse-regression solver: proximal gradient (ISTA) ----
// Minimizes (1/2N)||y - b0 - X b||^2 + lambda ||b||_1 by small fixed-step
// proximal descent; slow but has no machinery in common with coordinate
// descent.

struct IstaResult {
    double beta0 = 0.0;
    std::vector<double> beta;
};

inline IstaResult ref_ista(const std::vector<double>& x, std::size_t n, std::size_t p,
                           const std::vector<double>& y, double lambda,
                           std::size_t iters = 200000) {
    // Lipschitz bound for the smooth part: ||X||_F^2 / N covers the largest
    // eigenvalue of X^T X / N, plus 1 for the intercept direction.
    double fro = 0.0;
    for (double v : x) fro += v * v;
    const double L = fro / static_cast<double>(n) + 1.0;
    const double step = 1.0 / L;

    IstaResult r;
    r.beta.assign(p, 0.0);
    std::vector<double> resid(n);
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double pred = r.beta0;
            for (std::size_t j = 0; j < p; ++j) pred += x[i * p + j] * r.beta[j];
            resid[i] = pred - y[i];
        }
        double g0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) g0 += resid[i];
        g0 /= static_cast<double>(n);
        r.beta0 -= step * g0;
        for (std::size_t j = 0; j < p; ++j) {
            double g = 0.0;
            for (std::size_t i = 0; i < n; ++i) g += x[i * p + j] * resid[i];
            g /= static_cast<double>(n);
            const double z = r.beta[j] - step * g;
            const double t = lambda * step;
            r.beta[j] = z > t ? z - t : (z < -t ? z + t : 0.0);
        }
    }
    return r;
}

// central finite difference of a scalar function
template <typename F>
double ref_fdiff(F&& f, double& param, double h = 1e-6) {
    const double saved = param;
    param = saved + h;
    const double up = f();
    param = saved - h;
    const double down = f();
    param = saved;
    return (up - down) / (2.0 * h);
}

}  // namespace refimpl
