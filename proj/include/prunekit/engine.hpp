#pragma once

// Reference-grade execution engine for the network IR. Direct loops, double
// accumulation everywhere, and deterministic results independent of thread
// count: parallel loops only ever split work whose outputs are disjoint, and
// every reduction runs sequentially in a fixed order.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "prunekit/netir.hpp"
#include "prunekit/parallel.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

namespace detail {

// Conv used directly by Conv2D layers and as the inner stage of MFM.
// x: [N, in, H, W], w: [rows, in, k, k] -> [N, rows, OH, OW]
template <typename T>
TensorT<T> conv_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                        int stride, int padding, int threads) {
    const std::size_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t rows = w.dim(0), k = w.dim(2);
    const std::size_t oh = static_cast<std::size_t>(
        conv_out_dim(static_cast<int>(h), static_cast<int>(k), stride, padding));
    const std::size_t ow = static_cast<std::size_t>(
        conv_out_dim(static_cast<int>(wd), static_cast<int>(k), stride, padding));
    TensorT<T> y({n, rows, oh, ow});
    const bool bias = !b.empty();

    parallel_for(n * rows, threads, [&](std::size_t idx) {
        const std::size_t ni = idx / rows, o = idx % rows;
        for (std::size_t yy = 0; yy < oh; ++yy)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                double acc = bias ? static_cast<double>(b[o]) : 0.0;
                const long long h0 = static_cast<long long>(yy) * stride - padding;
                const long long w0 = static_cast<long long>(xx) * stride - padding;
                for (std::size_t c = 0; c < in_c; ++c)
                    for (std::size_t kh = 0; kh < k; ++kh) {
                        const long long ih = h0 + static_cast<long long>(kh);
                        if (ih < 0 || ih >= static_cast<long long>(h)) continue;
                        for (std::size_t kw = 0; kw < k; ++kw) {
                            const long long iw = w0 + static_cast<long long>(kw);
                            if (iw < 0 || iw >= static_cast<long long>(wd)) continue;
                            acc += static_cast<double>(w.at4(o, c, kh, kw)) *
                                   static_cast<double>(
                                       x.at4(ni, c, static_cast<std::size_t>(ih),
                                             static_cast<std::size_t>(iw)));
                        }
                    }
                y.at4(ni, o, yy, xx) = static_cast<T>(acc);
            }
    });
    return y;
}

}  // namespace detail

// Winner bookkeeping for the selection layers so backward replays the exact
// forward choice. MaxPool stores the flat input h*W+w per output element;
// MFM stores the winning internal-conv channel. Ties go to the first
// candidate in scan order.
template <typename T>
TensorT<T> layer_forward(const LayerSpec& s, const LayerParamsT<T>& p, const TensorT<T>& x,
                         int threads = 1, std::vector<int>* winners = nullptr) {
    switch (s.kind) {
        case LayerKind::Conv2D:
            return detail::conv_forward(x, p.weight, p.bias, s.stride, s.padding, threads);
        case LayerKind::ReLU: {
            TensorT<T> y(x.shape());
            parallel_for(x.size(), threads,
                         [&](std::size_t i) { y[i] = x[i] > T(0) ? x[i] : T(0); });
            return y;
        }
        case LayerKind::MaxPool2D: {
            const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
            const std::size_t oh = static_cast<std::size_t>(
                detail::conv_out_dim(static_cast<int>(h), s.window, s.stride, s.padding));
            const std::size_t ow = static_cast<std::size_t>(
                detail::conv_out_dim(static_cast<int>(w), s.window, s.stride, s.padding));
            TensorT<T> y({n, c, oh, ow});
            if (winners) winners->assign(y.size(), -1);
            parallel_for(n * c, threads, [&](std::size_t idx) {
                const std::size_t ni = idx / c, ci = idx % c;
                for (std::size_t yy = 0; yy < oh; ++yy)
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                        const long long h0 = static_cast<long long>(yy) * s.stride - s.padding;
                        const long long w0 = static_cast<long long>(xx) * s.stride - s.padding;
                        bool seen = false;
                        T best = T(0);
                        int best_idx = -1;
                        for (int kh = 0; kh < s.window; ++kh) {
                            const long long ih = h0 + kh;
                            if (ih < 0 || ih >= static_cast<long long>(h)) continue;
                            for (int kw = 0; kw < s.window; ++kw) {
                                const long long iw = w0 + kw;
                                if (iw < 0 || iw >= static_cast<long long>(w)) continue;
                                const T v = x.at4(ni, ci, static_cast<std::size_t>(ih),
                                                  static_cast<std::size_t>(iw));
                                if (!seen || v > best) {
                                    seen = true;
                                    best = v;
                                    best_idx = static_cast<int>(ih * static_cast<long long>(w) + iw);
                                }
                            }
                        }
                        y.at4(ni, ci, yy, xx) = seen ? best : T(0);
                        if (winners)
                            (*winners)[((ni * c + ci) * oh + yy) * ow + xx] = best_idx;
                    }
            });
            return y;
        }
        case LayerKind::MFM: {
            TensorT<T> conv =
                detail::conv_forward(x, p.weight, p.bias, s.stride, s.padding, threads);
            const std::size_t n = conv.dim(0), oh = conv.dim(2), ow = conv.dim(3);
            const std::size_t half = static_cast<std::size_t>(s.out_channels);
            TensorT<T> y({n, half, oh, ow});
            if (winners) winners->assign(y.size(), -1);
            parallel_for(n * half, threads, [&](std::size_t idx) {
                const std::size_t ni = idx / half, ci = idx % half;
                for (std::size_t yy = 0; yy < oh; ++yy)
                    for (std::size_t xx = 0; xx < ow; ++xx) {
                        const T a = conv.at4(ni, ci, yy, xx);
                        const T b = conv.at4(ni, ci + half, yy, xx);
                        const bool first = a >= b;  // tie keeps the lower channel
                        y.at4(ni, ci, yy, xx) = first ? a : b;
                        if (winners)
                            (*winners)[((ni * half + ci) * oh + yy) * ow + xx] =
                                static_cast<int>(first ? ci : ci + half);
                    }
            });
            return y;
        }
        case LayerKind::GAP: {
            const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
            TensorT<T> y({n, c});
            parallel_for(n * c, threads, [&](std::size_t idx) {
                const std::size_t ni = idx / c, ci = idx % c;
                double acc = 0.0;
                for (std::size_t yy = 0; yy < h; ++yy)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        acc += static_cast<double>(x.at4(ni, ci, yy, xx));
                y.at2(ni, ci) = static_cast<T>(acc / static_cast<double>(h * w));
            });
            return y;
        }
        case LayerKind::Linear: {
            const std::size_t n = x.dim(0), in_f = x.dim(1);
            const std::size_t out_f = static_cast<std::size_t>(s.out_features);
            TensorT<T> y({n, out_f});
            const bool bias = !p.bias.empty();
            parallel_for(n, threads, [&](std::size_t ni) {
                for (std::size_t o = 0; o < out_f; ++o) {
                    double acc = bias ? static_cast<double>(p.bias[o]) : 0.0;
                    for (std::size_t i = 0; i < in_f; ++i)
                        acc += static_cast<double>(p.weight.at2(o, i)) *
                               static_cast<double>(x.at2(ni, i));
                    y.at2(ni, o) = static_cast<T>(acc);
                }
            });
            return y;
        }
    }
    throw std::logic_error("unreachable layer kind");
}

template <typename T>
struct ForwardResultT {
    TensorT<T> output;
    std::map<std::size_t, TensorT<T>> captured;  // layer id -> that layer's output
};

// x: [N, C, H, W]. capture lists layer ids whose outputs should be retained.
template <typename T>
ForwardResultT<T> forward(const NetworkIRT<T>& net, const TensorT<T>& x,
                          const std::vector<std::size_t>& capture = {}, int threads = 0) {
    const int nt = resolve_threads(threads);
    ForwardResultT<T> res;
    TensorT<T> cur = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        cur = layer_forward(net.layers[l], net.params[l], cur, nt);
        for (std::size_t c : capture)
            if (c == l) res.captured.emplace(l, cur);
    }
    res.output = std::move(cur);
    return res;
}

template <typename T>
struct ForwardCacheT {
    std::vector<TensorT<T>> inputs;         // inputs[l] = tensor fed to layer l
    std::vector<std::vector<int>> winners;  // per layer, empty unless pool/mfm
    TensorT<T> output;
};

template <typename T>
void forward_cached(const NetworkIRT<T>& net, const TensorT<T>& x, ForwardCacheT<T>& cache,
                    int threads = 0) {
    const int nt = resolve_threads(threads);
    cache.inputs.assign(net.layers.size(), {});
    cache.winners.assign(net.layers.size(), {});
    TensorT<T> cur = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        cache.inputs[l] = cur;
        cur = layer_forward(net.layers[l], net.params[l], cur, nt, &cache.winners[l]);
    }
    cache.output = std::move(cur);
}

template <typename T>
struct GradientsT {
    std::vector<LayerParamsT<T>> params;  // parallel to layers
    TensorT<T> input;                     // dLoss/dInput
};

namespace detail {

template <typename T>
void conv_backward(const TensorT<T>& x, const TensorT<T>& w, bool has_bias, int stride,
                   int padding, const TensorT<T>& dy, TensorT<T>& dw, TensorT<T>& db,
                   TensorT<T>& dx, int threads) {
    const std::size_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t rows = w.dim(0), k = w.dim(2);
    const std::size_t oh = dy.dim(2), ow = dy.dim(3);

    dw = TensorT<T>(w.shape());
    if (has_bias) db = TensorT<T>({rows});
    dx = TensorT<T>(x.shape());

    // weight/bias grads: one thread owns a whole output row, reduction order fixed
    parallel_for(rows, threads, [&](std::size_t o) {
        for (std::size_t c = 0; c < in_c; ++c)
            for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw) {
                    double acc = 0.0;
                    for (std::size_t ni = 0; ni < n; ++ni)
                        for (std::size_t yy = 0; yy < oh; ++yy) {
                            const long long ih =
                                static_cast<long long>(yy) * stride - padding + static_cast<long long>(kh);
                            if (ih < 0 || ih >= static_cast<long long>(h)) continue;
                            for (std::size_t xx = 0; xx < ow; ++xx) {
                                const long long iw = static_cast<long long>(xx) * stride -
                                                     padding + static_cast<long long>(kw);
                                if (iw < 0 || iw >= static_cast<long long>(wd)) continue;
                                acc += static_cast<double>(dy.at4(ni, o, yy, xx)) *
                                       static_cast<double>(
                                           x.at4(ni, c, static_cast<std::size_t>(ih),
                                                 static_cast<std::size_t>(iw)));
                            }
                        }
                    dw.at4(o, c, kh, kw) = static_cast<T>(acc);
                }
        if (has_bias) {
            double acc = 0.0;
            for (std::size_t ni = 0; ni < n; ++ni)
                for (std::size_t yy = 0; yy < oh; ++yy)
                    for (std::size_t xx = 0; xx < ow; ++xx)
                        acc += static_cast<double>(dy.at4(ni, o, yy, xx));
            db[o] = static_cast<T>(acc);
        }
    });

    // input grad: per-sample scatter, samples disjoint
    parallel_for(n, threads, [&](std::size_t ni) {
        std::vector<double> buf(in_c * h * wd, 0.0);
        for (std::size_t o = 0; o < rows; ++o)
            for (std::size_t yy = 0; yy < oh; ++yy)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const double g = static_cast<double>(dy.at4(ni, o, yy, xx));
                    if (g == 0.0) continue;
                    const long long h0 = static_cast<long long>(yy) * stride - padding;
                    const long long w0 = static_cast<long long>(xx) * stride - padding;
                    for (std::size_t c = 0; c < in_c; ++c)
                        for (std::size_t kh = 0; kh < k; ++kh) {
                            const long long ih = h0 + static_cast<long long>(kh);
                            if (ih < 0 || ih >= static_cast<long long>(h)) continue;
                            for (std::size_t kw = 0; kw < k; ++kw) {
                                const long long iw = w0 + static_cast<long long>(kw);
                                if (iw < 0 || iw >= static_cast<long long>(wd)) continue;
                                buf[(c * h + static_cast<std::size_t>(ih)) * wd +
                                    static_cast<std::size_t>(iw)] +=
                                    g * static_cast<double>(w.at4(o, c, kh, kw));
                            }
                        }
                }
        T* out = dx.data() + ni * in_c * h * wd;
        for (std::size_t i = 0; i < buf.size(); ++i) out[i] = static_cast<T>(buf[i]);
    });
}

}  // namespace detail

// Gradient of the scalar loss whose output-gradient is dOut, w.r.t. every
// parameter and the network input. Requires a cache from forward_cached on
// the same input. ReLU uses subgradient 0 at exactly 0.
template <typename T>
GradientsT<T> backward(const NetworkIRT<T>& net, const ForwardCacheT<T>& cache,
                       const TensorT<T>& d_output, int threads = 0) {
    const int nt = resolve_threads(threads);
    GradientsT<T> g;
    g.params.resize(net.layers.size());
    TensorT<T> dy = d_output;

    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& s = net.layers[li];
        const LayerParamsT<T>& p = net.params[li];
        const TensorT<T>& x = cache.inputs[li];
        TensorT<T> dx;
        switch (s.kind) {
            case LayerKind::Conv2D:
                detail::conv_backward(x, p.weight, s.has_bias, s.stride, s.padding, dy,
                                      g.params[li].weight, g.params[li].bias, dx, nt);
                break;
            case LayerKind::ReLU: {
                dx = TensorT<T>(x.shape());
                parallel_for(x.size(), nt,
                             [&](std::size_t i) { dx[i] = x[i] > T(0) ? dy[i] : T(0); });
                break;
            }
            case LayerKind::MaxPool2D: {
                const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
                const std::size_t oh = dy.dim(2), ow = dy.dim(3);
                dx = TensorT<T>(x.shape());
                const std::vector<int>& win = cache.winners[li];
                parallel_for(n * c, nt, [&](std::size_t idx) {
                    const std::size_t ni = idx / c, ci = idx % c;
                    std::vector<double> buf(h * w, 0.0);
                    for (std::size_t yy = 0; yy < oh; ++yy)
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                            const int wi = win[((ni * c + ci) * oh + yy) * ow + xx];
                            if (wi >= 0)
                                buf[static_cast<std::size_t>(wi)] +=
                                    static_cast<double>(dy.at4(ni, ci, yy, xx));
                        }
                    T* out = dx.data() + (ni * c + ci) * h * w;
                    for (std::size_t i = 0; i < h * w; ++i) out[i] = static_cast<T>(buf[i]);
                });
                break;
            }
            case LayerKind::MFM: {
                const std::size_t n = dy.dim(0), oh = dy.dim(2), ow = dy.dim(3);
                const std::size_t half = static_cast<std::size_t>(s.out_channels);
                const std::size_t conv_c = static_cast<std::size_t>(s.conv_out_channels);
                TensorT<T> d_conv({n, conv_c, oh, ow});
                const std::vector<int>& win = cache.winners[li];
                parallel_for(n * half, nt, [&](std::size_t idx) {
                    const std::size_t ni = idx / half, ci = idx % half;
                    for (std::size_t yy = 0; yy < oh; ++yy)
                        for (std::size_t xx = 0; xx < ow; ++xx) {
                            const int wc = win[((ni * half + ci) * oh + yy) * ow + xx];
                            d_conv.at4(ni, static_cast<std::size_t>(wc), yy, xx) =
                                dy.at4(ni, ci, yy, xx);
                        }
                });
                detail::conv_backward(x, p.weight, s.has_bias, s.stride, s.padding, d_conv,
                                      g.params[li].weight, g.params[li].bias, dx, nt);
                break;
            }
            case LayerKind::GAP: {
                const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
                dx = TensorT<T>(x.shape());
                const double inv = 1.0 / static_cast<double>(h * w);
                parallel_for(n * c, nt, [&](std::size_t idx) {
                    const std::size_t ni = idx / c, ci = idx % c;
                    const T v = static_cast<T>(static_cast<double>(dy.at2(ni, ci)) * inv);
                    for (std::size_t yy = 0; yy < h; ++yy)
                        for (std::size_t xx = 0; xx < w; ++xx) dx.at4(ni, ci, yy, xx) = v;
                });
                break;
            }
            case LayerKind::Linear: {
                const std::size_t n = x.dim(0), in_f = x.dim(1);
                const std::size_t out_f = static_cast<std::size_t>(s.out_features);
                g.params[li].weight = TensorT<T>(p.weight.shape());
                if (s.has_bias) g.params[li].bias = TensorT<T>({out_f});
                parallel_for(out_f, nt, [&](std::size_t o) {
                    for (std::size_t i = 0; i < in_f; ++i) {
                        double acc = 0.0;
                        for (std::size_t ni = 0; ni < n; ++ni)
                            acc += static_cast<double>(dy.at2(ni, o)) *
                                   static_cast<double>(x.at2(ni, i));
                        g.params[li].weight.at2(o, i) = static_cast<T>(acc);
                    }
                    if (s.has_bias) {
                        double acc = 0.0;
                        for (std::size_t ni = 0; ni < n; ++ni)
                            acc += static_cast<double>(dy.at2(ni, o));
                        g.params[li].bias[o] = static_cast<T>(acc);
                    }
                });
                dx = TensorT<T>(x.shape());
                parallel_for(n, nt, [&](std::size_t ni) {
                    for (std::size_t i = 0; i < in_f; ++i) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < out_f; ++o)
                            acc += static_cast<double>(dy.at2(ni, o)) *
                                   static_cast<double>(p.weight.at2(o, i));
                        dx.at2(ni, i) = static_cast<T>(acc);
                    }
                });
                break;
            }
        }
        dy = std::move(dx);
    }
    g.input = std::move(dy);
    return g;
}

// ---- losses ----

// Mean over all N*K elements; grad matches.
template <typename T>
double mse_loss(const TensorT<T>& pred, const TensorT<T>& target, TensorT<T>* grad = nullptr) {
    if (!pred.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
    const double inv = 1.0 / static_cast<double>(pred.size());
    double loss = 0.0;
    if (grad) *grad = TensorT<T>(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        loss += d * d;
        if (grad) (*grad)[i] = static_cast<T>(2.0 * d * inv);
    }
    return loss * inv;
}

// logits: [N, K], labels in [0, K)
template <typename T>
double softmax_ce_loss(const TensorT<T>& logits, const std::vector<int>& labels,
                       TensorT<T>* grad = nullptr) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw std::invalid_argument("softmax_ce_loss: label count mismatch");
    if (grad) *grad = TensorT<T>(logits.shape());
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t ni = 0; ni < n; ++ni) {
        double mx = static_cast<double>(logits.at2(ni, 0));
        for (std::size_t j = 1; j < k; ++j)
            mx = std::max(mx, static_cast<double>(logits.at2(ni, j)));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            z += std::exp(static_cast<double>(logits.at2(ni, j)) - mx);
        const int lab = labels[ni];
        loss -= (static_cast<double>(logits.at2(ni, static_cast<std::size_t>(lab))) - mx -
                 std::log(z));
        if (grad)
            for (std::size_t j = 0; j < k; ++j) {
                const double p =
                    std::exp(static_cast<double>(logits.at2(ni, j)) - mx) / z;
                (*grad).at2(ni, j) = static_cast<T>(
                    (p - (static_cast<std::size_t>(lab) == j ? 1.0 : 0.0)) * inv);
            }
    }
    return loss * inv;
}

template <typename T>
double classification_accuracy(const TensorT<T>& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::size_t hit = 0;
    for (std::size_t ni = 0; ni < n; ++ni) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits.at2(ni, j) > logits.at2(ni, best)) best = j;
        if (static_cast<int>(best) == labels[ni]) ++hit;
    }
    return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

// ---- SGD training ----

enum class LossKind { mse, softmax_ce };

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;  // applied to weights only, never biases
    std::uint64_t seed = 1;
    int threads = 0;
    LossKind loss = LossKind::softmax_ce;
    std::vector<std::size_t> frozen_layers;  // ids skipped by the update step
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_metric = std::numeric_limits<double>::quiet_NaN();  // accuracy or rmse
};

struct TrainHistory {
    std::vector<EpochStats> epochs;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open " + path.string());
        out << "epoch,train_loss,val_loss,val_metric\n";
        for (const auto& e : epochs) {
            out << e.epoch << "," << e.train_loss << ",";
            if (std::isnan(e.val_loss)) out << "";
            else out << e.val_loss;
            out << ",";
            if (std::isnan(e.val_metric)) out << "";
            else out << e.val_metric;
            out << "\n";
        }
    }
};

// Targets for one split; exactly one of dense/labels is used per LossKind.
template <typename T>
struct TrainDataT {
    const TensorT<T>* x = nullptr;
    const TensorT<T>* dense = nullptr;        // mse targets [N, K]
    const std::vector<int>* labels = nullptr; // softmax_ce targets
};

namespace detail {

template <typename T>
TensorT<T> gather_images(const TensorT<T>& x, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> shp = x.shape();
    shp[0] = idx.size();
    TensorT<T> out(shp);
    const std::size_t stride = x.size() / x.dim(0);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(x.data() + idx[i] * stride, x.data() + (idx[i] + 1) * stride,
                  out.data() + i * stride);
    return out;
}

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& y, const std::vector<std::size_t>& idx) {
    return gather_images(y, idx);
}

}  // namespace detail

// In-place SGD with momentum. Shuffle order, init, and updates depend only on
// the seed, never on thread count.
template <typename T>
TrainHistory train_sgd(NetworkIRT<T>& net, const TrainDataT<T>& train,
                       const TrainConfig& cfg,
                       const std::optional<TrainDataT<T>>& val = std::nullopt) {
    require_valid(net);
    if (!train.x) throw std::invalid_argument("train_sgd: missing inputs");
    if (cfg.loss == LossKind::mse && !train.dense)
        throw std::invalid_argument("train_sgd: mse needs dense targets");
    if (cfg.loss == LossKind::softmax_ce && !train.labels)
        throw std::invalid_argument("train_sgd: softmax_ce needs labels");
    const std::size_t n = train.x->dim(0);
    if (n == 0) throw std::invalid_argument("train_sgd: empty training set");

    std::vector<LayerParamsT<T>> velocity(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].has_params()) continue;
        velocity[l].weight = TensorT<T>(net.params[l].weight.shape());
        if (net.layers[l].has_bias) velocity[l].bias = TensorT<T>(net.params[l].bias.shape());
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainHistory hist;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < n; off += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, off + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(off),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            TensorT<T> bx = detail::gather_images(*train.x, idx);

            ForwardCacheT<T> cache;
            forward_cached(net, bx, cache, cfg.threads);

            TensorT<T> d_out;
            double loss = 0.0;
            if (cfg.loss == LossKind::mse) {
                TensorT<T> by = detail::gather_rows(*train.dense, idx);
                loss = mse_loss(cache.output, by, &d_out);
            } else {
                std::vector<int> bl(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) bl[i] = (*train.labels)[idx[i]];
                loss = softmax_ce_loss(cache.output, bl, &d_out);
            }
            if (!std::isfinite(loss))
                throw std::runtime_error("train_sgd: non-finite loss at epoch " +
                                         std::to_string(epoch));
            epoch_loss += loss;
            ++batches;

            GradientsT<T> g = backward(net, cache, d_out, cfg.threads);
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                if (!net.layers[l].has_params()) continue;
                if (std::find(cfg.frozen_layers.begin(), cfg.frozen_layers.end(), l) !=
                    cfg.frozen_layers.end())
                    continue;
                auto& w = net.params[l].weight;
                auto& vw = velocity[l].weight;
                const auto& gw = g.params[l].weight;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    const double step =
                        static_cast<double>(gw[i]) + cfg.weight_decay * static_cast<double>(w[i]);
                    vw[i] = static_cast<T>(cfg.momentum * static_cast<double>(vw[i]) -
                                           cfg.learning_rate * step);
                    w[i] = static_cast<T>(static_cast<double>(w[i]) + static_cast<double>(vw[i]));
                }
                if (net.layers[l].has_bias) {
                    auto& b = net.params[l].bias;
                    auto& vb = velocity[l].bias;
                    const auto& gb = g.params[l].bias;
                    for (std::size_t i = 0; i < b.size(); ++i) {
                        vb[i] = static_cast<T>(cfg.momentum * static_cast<double>(vb[i]) -
                                               cfg.learning_rate * static_cast<double>(gb[i]));
                        b[i] = static_cast<T>(static_cast<double>(b[i]) +
                                              static_cast<double>(vb[i]));
                    }
                }
            }
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
        if (val && val->x) {
            auto out = forward(net, *val->x, {}, cfg.threads).output;
            if (cfg.loss == LossKind::mse) {
                st.val_loss = mse_loss(out, *val->dense);
                st.val_metric = std::sqrt(st.val_loss);
            } else {
                st.val_loss = softmax_ce_loss(out, *val->labels);
                st.val_metric = classification_accuracy(out, *val->labels);
            }
        }
        hist.epochs.push_back(st);
    }
    return hist;
}

}  // namespace prunekit
