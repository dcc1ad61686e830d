#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class LayerKind { Conv2D, ReLU, MaxPool2D, MFM, GAP, Linear };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2D: return "conv";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool2D: return "maxpool";
        case LayerKind::MFM: return "mfm";
        case LayerKind::GAP: return "gap";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

// One layer of the network. Conv fields double as the MFM block's internal
// convolution; an MFM layer is a conv emitting conv_out_channels maps
// followed by the pairwise channel max, so out_channels = conv_out_channels/2.
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;

    // conv / mfm
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    bool has_bias = true;
    int conv_out_channels = 0;  // MFM only: channels emitted by the internal conv

    // maxpool
    int window = 0;

    // linear
    int in_features = 0;
    int out_features = 0;

    // MFM group tag; two consecutive MFM blocks share a group id
    int group_id = -1;

    static LayerSpec conv2d(int in, int out, int kernel, int stride = 1, int padding = 0,
                            bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::Conv2D;
        s.in_channels = in;
        s.out_channels = out;
        s.kernel = kernel;
        s.stride = stride;
        s.padding = padding;
        s.has_bias = bias;
        return s;
    }
    static LayerSpec relu() {
        LayerSpec s;
        s.kind = LayerKind::ReLU;
        return s;
    }
    static LayerSpec maxpool(int window, int stride, int padding = 0) {
        LayerSpec s;
        s.kind = LayerKind::MaxPool2D;
        s.window = window;
        s.stride = stride;
        s.padding = padding;
        return s;
    }
    static LayerSpec mfm(int in, int out, int kernel, int stride = 1, int padding = 0,
                         bool bias = true, int group = -1) {
        LayerSpec s;
        s.kind = LayerKind::MFM;
        s.in_channels = in;
        s.out_channels = out;
        s.conv_out_channels = 2 * out;
        s.kernel = kernel;
        s.stride = stride;
        s.padding = padding;
        s.has_bias = bias;
        s.group_id = group;
        return s;
    }
    static LayerSpec gap() {
        LayerSpec s;
        s.kind = LayerKind::GAP;
        return s;
    }
    static LayerSpec linear(int in, int out, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::Linear;
        s.in_features = in;
        s.out_features = out;
        s.has_bias = bias;
        return s;
    }

    bool has_params() const {
        return kind == LayerKind::Conv2D || kind == LayerKind::MFM ||
               kind == LayerKind::Linear;
    }

    // filter count emitted by the layer's internal convolution
    int weight_rows() const {
        switch (kind) {
            case LayerKind::Conv2D: return out_channels;
            case LayerKind::MFM: return conv_out_channels;
            case LayerKind::Linear: return out_features;
            default: return 0;
        }
    }

    std::vector<std::size_t> weight_shape() const {
        switch (kind) {
            case LayerKind::Conv2D:
                return {static_cast<std::size_t>(out_channels),
                        static_cast<std::size_t>(in_channels),
                        static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)};
            case LayerKind::MFM:
                return {static_cast<std::size_t>(conv_out_channels),
                        static_cast<std::size_t>(in_channels),
                        static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)};
            case LayerKind::Linear:
                return {static_cast<std::size_t>(out_features),
                        static_cast<std::size_t>(in_features)};
            default:
                return {};
        }
    }

    std::vector<std::size_t> bias_shape() const {
        if (!has_params() || !has_bias) return {};
        return {static_cast<std::size_t>(weight_rows())};
    }

    bool operator==(const LayerSpec&) const = default;
};

template <typename T>
struct LayerParamsT {
    TensorT<T> weight;
    TensorT<T> bias;

    bool operator==(const LayerParamsT&) const = default;

    template <typename U>
    LayerParamsT<U> cast() const {
        return {weight.template cast<U>(), bias.template cast<U>()};
    }
};

using LayerParams = LayerParamsT<float>;

// Immutable after construction; every transformation builds a new network.
template <typename T>
struct NetworkIRT {
    std::vector<LayerSpec> layers;
    std::vector<LayerParamsT<T>> params;  // parallel to layers
    std::array<int, 3> input_shape{0, 0, 0};  // C, H, W
    std::string name;
    std::string primary_task;

    std::size_t num_layers() const { return layers.size(); }

    template <typename U>
    NetworkIRT<U> cast() const {
        NetworkIRT<U> out;
        out.layers = layers;
        out.input_shape = input_shape;
        out.name = name;
        out.primary_task = primary_task;
        out.params.reserve(params.size());
        for (const auto& p : params) out.params.push_back(p.template cast<U>());
        return out;
    }

    bool operator==(const NetworkIRT&) const = default;
};

using NetworkIR = NetworkIRT<float>;

// Builds a network whose params are zero-initialized to the spec shapes.
template <typename T = float>
inline NetworkIRT<T> make_network(std::vector<LayerSpec> layers, std::array<int, 3> input_shape,
                                  std::string name = "", std::string primary_task = "") {
    NetworkIRT<T> net;
    net.layers = std::move(layers);
    net.input_shape = input_shape;
    net.name = std::move(name);
    net.primary_task = std::move(primary_task);
    net.params.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& s = net.layers[i];
        if (!s.has_params()) continue;
        net.params[i].weight = TensorT<T>(s.weight_shape());
        if (s.has_bias) net.params[i].bias = TensorT<T>(s.bias_shape());
    }
    return net;
}

// Deepest filter-bearing spatial layer before the pooling stage; probes and
// prune planning key on its channels.
template <typename T>
std::size_t deepest_filter_layer(const NetworkIRT<T>& net) {
    std::size_t best = net.layers.size();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerKind k = net.layers[l].kind;
        if (k == LayerKind::Conv2D || k == LayerKind::MFM) best = l;
        if (k == LayerKind::GAP) break;
    }
    if (best == net.layers.size())
        throw std::invalid_argument("no spatial filter layer found");
    return best;
}

// He-style init, deterministic for a given seed.
template <typename T>
inline void randomize_params(NetworkIRT<T>& net, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& s = net.layers[i];
        if (!s.has_params()) continue;
        double fan_in = 1.0;
        if (s.kind == LayerKind::Linear) {
            fan_in = s.in_features;
        } else {
            fan_in = static_cast<double>(s.in_channels) * s.kernel * s.kernel;
        }
        const double scale = std::sqrt(2.0 / fan_in);
        for (auto& v : net.params[i].weight.raw())
            v = static_cast<T>(rng.normal() * scale);
        for (auto& v : net.params[i].bias.raw()) v = static_cast<T>(0);
    }
}

namespace detail {

struct StreamState {
    bool spatial = true;
    int c = 0, h = 0, w = 0;  // spatial mode
    int features = 0;         // flat mode
};

inline int conv_out_dim(int in, int kernel, int stride, int padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace detail

// Shape-chain and parameter-shape validation. Violations are returned as
// data; an empty list means the network is valid.
template <typename T>
inline std::vector<std::string> validate(const NetworkIRT<T>& net) {
    std::vector<std::string> out;
    auto fail = [&](std::size_t l, const std::string& msg) {
        out.push_back("layer " + std::to_string(l) + ": " + msg);
    };

    if (net.params.size() != net.layers.size()) {
        out.push_back("network: params list length " + std::to_string(net.params.size()) +
                      " does not match layer count " + std::to_string(net.layers.size()));
        return out;
    }
    if (net.input_shape[0] <= 0 || net.input_shape[1] <= 0 || net.input_shape[2] <= 0) {
        out.push_back("network: non-positive input shape");
        return out;
    }

    detail::StreamState st;
    st.c = net.input_shape[0];
    st.h = net.input_shape[1];
    st.w = net.input_shape[2];

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        const LayerParamsT<T>& p = net.params[l];
        switch (s.kind) {
            case LayerKind::Conv2D:
            case LayerKind::MFM: {
                if (!st.spatial) {
                    fail(l, "convolution applied to non-spatial input");
                    return out;
                }
                if (s.kernel < 1 || s.stride < 1 || s.padding < 0)
                    fail(l, "bad kernel/stride/padding");
                if (s.in_channels != st.c)
                    fail(l, "in_channels " + std::to_string(s.in_channels) +
                                " does not match incoming channels " + std::to_string(st.c));
                if (s.out_channels < 1) fail(l, "non-positive out_channels");
                if (s.kind == LayerKind::MFM) {
                    if (s.conv_out_channels != 2 * s.out_channels)
                        fail(l, "internal conv emits " + std::to_string(s.conv_out_channels) +
                                    " channels, expected 2*" + std::to_string(s.out_channels));
                    if (s.conv_out_channels % 2 != 0)
                        fail(l, "internal conv channel count is odd");
                }
                if (!p.weight.empty() && p.weight.shape() != s.weight_shape())
                    fail(l, "weight shape " + shape_string(p.weight.shape()) +
                                " does not match spec " + shape_string(s.weight_shape()));
                if (p.weight.empty()) fail(l, "missing weight tensor");
                if (s.has_bias && p.bias.shape() != s.bias_shape())
                    fail(l, "bias shape " + shape_string(p.bias.shape()) +
                                " does not match spec " + shape_string(s.bias_shape()));
                if (!s.has_bias && !p.bias.empty())
                    fail(l, "bias present on bias-less layer");
                int oh = detail::conv_out_dim(st.h, s.kernel, s.stride, s.padding);
                int ow = detail::conv_out_dim(st.w, s.kernel, s.stride, s.padding);
                if (oh < 1 || ow < 1) fail(l, "empty spatial output");
                st.c = s.out_channels;
                st.h = oh;
                st.w = ow;
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::MaxPool2D: {
                if (!st.spatial) {
                    fail(l, "pooling applied to non-spatial input");
                    return out;
                }
                if (s.window < 1 || s.stride < 1 || s.padding < 0)
                    fail(l, "bad window/stride/padding");
                int oh = detail::conv_out_dim(st.h, s.window, s.stride, s.padding);
                int ow = detail::conv_out_dim(st.w, s.window, s.stride, s.padding);
                if (oh < 1 || ow < 1) fail(l, "empty spatial output");
                st.h = oh;
                st.w = ow;
                break;
            }
            case LayerKind::GAP: {
                if (!st.spatial) {
                    fail(l, "global average pooling applied to non-spatial input");
                    return out;
                }
                st.spatial = false;
                st.features = st.c;
                break;
            }
            case LayerKind::Linear: {
                int incoming = st.spatial ? -1 : st.features;
                if (st.spatial) {
                    fail(l, "linear layer requires flattened input (insert GAP)");
                    return out;
                }
                if (s.in_features != incoming)
                    fail(l, "in_features " + std::to_string(s.in_features) +
                                " does not match incoming features " + std::to_string(incoming));
                if (s.out_features < 1) fail(l, "non-positive out_features");
                if (!p.weight.empty() && p.weight.shape() != s.weight_shape())
                    fail(l, "weight shape " + shape_string(p.weight.shape()) +
                                " does not match spec " + shape_string(s.weight_shape()));
                if (p.weight.empty()) fail(l, "missing weight tensor");
                if (s.has_bias && p.bias.shape() != s.bias_shape())
                    fail(l, "bias shape does not match spec");
                st.features = s.out_features;
                break;
            }
        }
    }
    return out;
}

template <typename T>
inline void require_valid(const NetworkIRT<T>& net) {
    auto v = validate(net);
    if (!v.empty()) {
        std::string msg = "invalid network:";
        for (const auto& s : v) msg += "\n  " + s;
        throw std::invalid_argument(msg);
    }
}

struct LayerCount {
    std::size_t layer_id = 0;
    std::uint64_t param_count = 0;
    std::uint64_t flop_count = 0;
};

// Static size/compute accounting. FLOP convention: one multiply plus one
// add per MAC (2*MACs), comparisons counted one each, bias adds ignored;
// flop counts are per single image.
struct CountReport {
    std::vector<LayerCount> per_layer;
    std::uint64_t total_params = 0;
    std::uint64_t total_flops = 0;
    double param_reduction = 0.0;  // vs baseline, in [0,1]
    double flop_reduction = 0.0;
    std::array<int, 3> input_shape{0, 0, 0};
    std::string convention = "2mac-v1";

    nlohmann::json to_json() const {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& lc : per_layer) {
            layers.push_back({{"layer", lc.layer_id},
                              {"params", lc.param_count},
                              {"flops", lc.flop_count}});
        }
        return {{"per_layer", layers},
                {"total_params", total_params},
                {"total_flops", total_flops},
                {"param_reduction", param_reduction},
                {"flop_reduction", flop_reduction},
                {"input_shape", input_shape},
                {"convention", convention}};
    }
};

template <typename T>
inline CountReport count_network(const NetworkIRT<T>& net,
                                 std::optional<std::array<int, 3>> input_shape = {}) {
    require_valid(net);
    const std::array<int, 3> in = input_shape.value_or(net.input_shape);

    CountReport rep;
    rep.input_shape = in;
    std::uint64_t c = in[0], h = in[1], w = in[2];
    bool spatial = true;

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        LayerCount lc;
        lc.layer_id = l;
        switch (s.kind) {
            case LayerKind::Conv2D:
            case LayerKind::MFM: {
                const std::uint64_t rows = s.weight_rows();
                lc.param_count = rows * static_cast<std::uint64_t>(s.in_channels) * s.kernel * s.kernel;
                if (s.has_bias) lc.param_count += rows;
                const std::uint64_t oh = detail::conv_out_dim(static_cast<int>(h), s.kernel, s.stride, s.padding);
                const std::uint64_t ow = detail::conv_out_dim(static_cast<int>(w), s.kernel, s.stride, s.padding);
                lc.flop_count = 2ULL * rows * s.in_channels * s.kernel * s.kernel * oh * ow;
                if (s.kind == LayerKind::MFM) {
                    // one comparison per output element of the channel-pair max
                    lc.flop_count += static_cast<std::uint64_t>(s.out_channels) * oh * ow;
                }
                c = s.out_channels;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::ReLU:
                break;
            case LayerKind::MaxPool2D: {
                const std::uint64_t oh = detail::conv_out_dim(static_cast<int>(h), s.window, s.stride, s.padding);
                const std::uint64_t ow = detail::conv_out_dim(static_cast<int>(w), s.window, s.stride, s.padding);
                lc.flop_count = c * oh * ow *
                                (static_cast<std::uint64_t>(s.window) * s.window - 1);
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::GAP:
                lc.flop_count = c * h * w;  // one add per input element
                spatial = false;
                break;
            case LayerKind::Linear:
                lc.param_count = static_cast<std::uint64_t>(s.in_features) * s.out_features;
                if (s.has_bias) lc.param_count += s.out_features;
                lc.flop_count = 2ULL * s.in_features * s.out_features;
                c = s.out_features;
                break;
        }
        rep.per_layer.push_back(lc);
        rep.total_params += lc.param_count;
        rep.total_flops += lc.flop_count;
    }
    (void)spatial;
    return rep;
}

template <typename T>
inline CountReport count_params(const NetworkIRT<T>& net) {
    return count_network(net);
}

template <typename T>
inline CountReport count_flops(const NetworkIRT<T>& net, std::array<int, 3> input_shape) {
    return count_network(net, input_shape);
}

// reduction = 1 - pruned/baseline
inline void set_baseline(CountReport& pruned, const CountReport& baseline) {
    if (baseline.total_params > 0)
        pruned.param_reduction =
            1.0 - static_cast<double>(pruned.total_params) / baseline.total_params;
    if (baseline.total_flops > 0)
        pruned.flop_reduction =
            1.0 - static_cast<double>(pruned.total_flops) / baseline.total_flops;
}

}  // namespace prunekit
