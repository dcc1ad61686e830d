#pragma once

// Structural surgery on the network IR. Filter pruning removes rows of a
// convolution's weight tensor and repairs the matching input slices of the
// nearest downstream consumer, so the pruned net computes exactly what the
// original computes on the surviving channels. The end-to-end path truncates
// the net at a chosen layer, prunes its filters to a kept set, and attaches a
// pooled linear head whose coefficients come from the sparse fit.

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

#include "prunekit/engine.hpp"
#include "prunekit/features.hpp"
#include "prunekit/lasso.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/netir.hpp"
#include "prunekit/probe.hpp"

namespace prunekit {

namespace detail {

inline void check_keep(const std::vector<std::size_t>& keep, std::size_t limit,
                       const char* what) {
    if (keep.empty()) throw std::invalid_argument(std::string(what) + ": empty keep set");
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] >= limit)
            throw std::invalid_argument(std::string(what) + ": filter id " +
                                        std::to_string(keep[i]) + " out of range");
        if (i && keep[i] <= keep[i - 1])
            throw std::invalid_argument(std::string(what) + ": keep set must be strictly increasing");
    }
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& w, const std::vector<std::size_t>& keep) {
    std::vector<std::size_t> shp = w.shape();
    const std::size_t per = w.size() / shp[0];
    shp[0] = keep.size();
    TensorT<T> out(shp);
    for (std::size_t i = 0; i < keep.size(); ++i)
        std::copy(w.data() + keep[i] * per, w.data() + (keep[i] + 1) * per,
                  out.data() + i * per);
    return out;
}

// conv weights [rows, in, k, k] or linear weights [out, in]
template <typename T>
TensorT<T> slice_input(const TensorT<T>& w, const std::vector<std::size_t>& keep) {
    std::vector<std::size_t> shp = w.shape();
    const std::size_t rows = shp[0];
    const std::size_t in = shp[1];
    std::size_t inner = 1;
    for (std::size_t d = 2; d < shp.size(); ++d) inner *= shp[d];
    shp[1] = keep.size();
    TensorT<T> out(shp);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < keep.size(); ++i)
            std::copy(w.data() + (r * in + keep[i]) * inner,
                      w.data() + (r * in + keep[i] + 1) * inner,
                      out.data() + (r * keep.size() + i) * inner);
    return out;
}

// Slims the output side of layer l to `keep` channels, leaving downstream
// repair to the caller.
template <typename T>
void shrink_output(NetworkIRT<T>& net, std::size_t l, const std::vector<std::size_t>& keep) {
    LayerSpec& s = net.layers[l];
    LayerParamsT<T>& p = net.params[l];
    if (s.kind == LayerKind::Conv2D) {
        p.weight = slice_rows(p.weight, keep);
        if (s.has_bias) p.bias = slice_rows(p.bias, keep);
        s.out_channels = static_cast<int>(keep.size());
    } else if (s.kind == LayerKind::MFM) {
        // a kept output channel keeps both internal filters of its max pair
        const std::size_t half = static_cast<std::size_t>(s.out_channels);
        std::vector<std::size_t> rows;
        rows.reserve(2 * keep.size());
        for (std::size_t c : keep) rows.push_back(c);
        for (std::size_t c : keep) rows.push_back(c + half);
        p.weight = slice_rows(p.weight, rows);
        if (s.has_bias) p.bias = slice_rows(p.bias, rows);
        s.out_channels = static_cast<int>(keep.size());
        s.conv_out_channels = 2 * s.out_channels;
    } else {
        throw std::invalid_argument("prune: layer " + std::to_string(l) +
                                    " has no prunable filters");
    }
}

// Channel-count bookkeeping walks forward through channel-preserving layers
// and slices the first consumer that reads per-channel weights.
template <typename T>
void repair_downstream(NetworkIRT<T>& net, std::size_t l, const std::vector<std::size_t>& keep) {
    for (std::size_t q = l + 1; q < net.layers.size(); ++q) {
        LayerSpec& s = net.layers[q];
        switch (s.kind) {
            case LayerKind::ReLU:
            case LayerKind::MaxPool2D:
            case LayerKind::GAP:
                continue;  // channel-preserving (GAP maps channels to features 1:1)
            case LayerKind::Conv2D:
            case LayerKind::MFM:
                net.params[q].weight = slice_input(net.params[q].weight, keep);
                s.in_channels = static_cast<int>(keep.size());
                return;
            case LayerKind::Linear:
                net.params[q].weight = slice_input(net.params[q].weight, keep);
                s.in_features = static_cast<int>(keep.size());
                return;
        }
    }
}

}  // namespace detail

// Keeps the listed output filters of convolution layer l and repairs the next
// consumer's input slices. Channel-preserving layers in between are passed
// through untouched.
template <typename T>
NetworkIRT<T> prune_conv_pair(const NetworkIRT<T>& net, std::size_t l,
                              const std::vector<std::size_t>& keep) {
    if (l >= net.layers.size()) throw std::invalid_argument("prune_conv_pair: bad layer id");
    if (net.layers[l].kind != LayerKind::Conv2D)
        throw std::invalid_argument("prune_conv_pair: layer is not a convolution");
    detail::check_keep(keep, static_cast<std::size_t>(net.layers[l].out_channels),
                       "prune_conv_pair");
    NetworkIRT<T> out = net;
    detail::shrink_output(out, l, keep);
    detail::repair_downstream(out, l, keep);
    require_valid(out);
    return out;
}

// Same surgery for a max-pair block: kept output channel c retains internal
// filters c and c+o, so the winner-take-all pairing survives intact.
template <typename T>
NetworkIRT<T> prune_mfm(const NetworkIRT<T>& net, std::size_t l,
                        const std::vector<std::size_t>& keep) {
    if (l >= net.layers.size()) throw std::invalid_argument("prune_mfm: bad layer id");
    if (net.layers[l].kind != LayerKind::MFM)
        throw std::invalid_argument("prune_mfm: layer is not a max-pair block");
    detail::check_keep(keep, static_cast<std::size_t>(net.layers[l].out_channels), "prune_mfm");
    NetworkIRT<T> out = net;
    detail::shrink_output(out, l, keep);
    detail::repair_downstream(out, l, keep);
    require_valid(out);
    return out;
}

// A group is a 1x1 block followed by a kxk block sharing group_id. Selection
// happens on the group's final output, so the kxk block loses filters and the
// next group's leading 1x1 block (or whatever consumer follows) gets its
// input slices repaired. A trailing group simply ends the edit at its own
// output.
template <typename T>
NetworkIRT<T> prune_group(const NetworkIRT<T>& net, int group_id,
                          const std::vector<std::size_t>& keep) {
    std::size_t last = net.layers.size();
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        if (net.layers[l].kind == LayerKind::MFM && net.layers[l].group_id == group_id)
            last = l;
    if (last == net.layers.size())
        throw std::invalid_argument("prune_group: no max-pair block with group id " +
                                    std::to_string(group_id));
    return prune_mfm(net, last, keep);
}

// Deepest filter-bearing spatial layer: the one whose pooled activations the
// probes and curves rank.
template <typename T>
std::size_t select_truncation_layer(const NetworkIRT<T>& net) {
    return deepest_filter_layer(net);
}

// All filter-bearing layers below the pooling stage, shallowest first.
template <typename T>
std::vector<std::size_t> probe_candidate_layers(const NetworkIRT<T>& net) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerKind k = net.layers[l].kind;
        if (k == LayerKind::Conv2D || k == LayerKind::MFM) out.push_back(l);
        if (k == LayerKind::GAP) break;
    }
    return out;
}

struct LayerProbeRow {
    std::size_t layer = 0;
    std::size_t filters = 0;
    double val_rmse = 0.0;  // error rate for classification tasks
    double val_metric = 0.0;
    std::string metric_name;
};

struct LayerProbeTable {
    std::vector<LayerProbeRow> rows;  // shallowest first
    std::size_t best = 0;             // index into rows

    nlohmann::json to_json() const {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& row : rows)
            r.push_back({{"layer", row.layer},
                         {"filters", row.filters},
                         {"val_rmse", row.val_rmse},
                         {"val_metric", row.val_metric},
                         {"metric", row.metric_name}});
        return {{"rows", r}, {"best_layer", rows.at(best).layer}};
    }
};

// Lowest held-out error wins; layers within 1e-9 of the minimum count as tied
// and the deepest tied layer is taken.
inline std::size_t pick_best_layer(const std::vector<LayerProbeRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("pick_best_layer: empty table");
    double lo = rows[0].val_rmse;
    for (const auto& r : rows) lo = std::min(lo, r.val_rmse);
    std::size_t best = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].val_rmse <= lo + 1e-9) best = i;
    return best;
}

// Probes the pooled features of every candidate layer against one task and
// ranks the layers by held-out error.
template <typename T>
LayerProbeTable rank_probe_layers(const NetworkIRT<T>& net, const TensorT<T>& images,
                                  const ProbeTargets& targets, const TaskSpec& task,
                                  const SplitIndices& splits,
                                  std::vector<std::size_t> candidates = {}, int threads = 0) {
    if (candidates.empty()) candidates = probe_candidate_layers(net);
    if (candidates.empty())
        throw std::invalid_argument("rank_probe_layers: no filter layers to probe");
    LayerProbeTable table;
    for (std::size_t l : candidates) {
        const FeatureMatrix fm = extract_gap(net, images, l, threads);
        const ProbeResult pr = fit_probe(fm, targets, task, splits);
        const double metric = splits.val.empty() ? pr.train_metric : pr.val_metric;
        LayerProbeRow row;
        row.layer = l;
        row.filters = fm.cols;
        row.metric_name = pr.metric_name;
        row.val_metric = metric;
        row.val_rmse = task.kind == TaskKind::regression ? metric : 1.0 - metric;
        table.rows.push_back(std::move(row));
    }
    table.best = pick_best_layer(table.rows);
    return table;
}

struct PrunePlan {
    std::string task;
    int truncation_layer = -1;  // -1 keeps the network unchanged
    std::vector<std::size_t> kept;
    double gamma = 0.0;
    double lambda = 0.0;
    TaskKind head_kind = TaskKind::regression;
    // raw-feature-space head: one row per output over the kept filters
    std::vector<std::vector<double>> head_w;
    std::vector<double> head_b;

    nlohmann::json to_json() const {
        return {{"task", task},
                {"truncation_layer", truncation_layer},
                {"kept_filters", kept},
                {"gamma", gamma},
                {"lambda", lambda},
                {"head_kind", task_kind_name(head_kind)},
                {"head_w", head_w},
                {"head_b", head_b}};
    }

    static PrunePlan from_json(const nlohmann::json& j) {
        PrunePlan p;
        p.task = j.at("task").get<std::string>();
        p.truncation_layer = j.at("truncation_layer").get<int>();
        p.kept = j.at("kept_filters").get<std::vector<std::size_t>>();
        p.gamma = j.at("gamma").get<double>();
        p.lambda = j.at("lambda").get<double>();
        p.head_kind = task_kind_from_name(j.at("head_kind").get<std::string>());
        p.head_w = j.at("head_w").get<std::vector<std::vector<double>>>();
        p.head_b = j.at("head_b").get<std::vector<double>>();
        return p;
    }
};

inline void save_plan(const PrunePlan& plan, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << plan.to_json().dump(2) << "\n";
}

inline PrunePlan load_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return PrunePlan::from_json(j);
}

// Folds the knee point's standardized-space coefficients back to raw pooled
// activations: w_raw = beta/sigma restricted to the support, with the means
// absorbed into the intercept.
inline PrunePlan make_prune_plan(const std::string& task, std::size_t truncation_layer,
                                 const CharacteristicCurve& curve, const KneePoint& knee) {
    const CurvePoint& pt = curve.points.at(knee.point_index);
    PrunePlan plan;
    plan.task = task;
    plan.truncation_layer = static_cast<int>(truncation_layer);
    plan.kept = knee.kept;
    plan.gamma = knee.gamma;
    plan.lambda = knee.lambda;
    plan.head_kind = TaskKind::regression;

    std::vector<double> w;
    double b = pt.beta0;
    for (std::size_t j : plan.kept) {
        const double bj = pt.beta[j];
        const double mu = curve.standardizer.mean[j];
        const double sigma = curve.standardizer.stdev[j];
        w.push_back(bj / sigma);
        b -= bj * mu / sigma;
    }
    plan.head_w.push_back(std::move(w));
    plan.head_b.push_back(b);
    return plan;
}

// Multi-output head refit on the kept filters only (one-vs-rest indicator
// regression for classes), again folded to raw feature space.
inline void refit_plan_head(PrunePlan& plan, const FeatureMatrix& features,
                            const ProbeTargets& targets, const TaskSpec& task,
                            const std::vector<std::size_t>& train_rows) {
    FeatureMatrix kept_feats = features.select_cols(plan.kept);
    SplitIndices splits;
    splits.train = train_rows;
    ProbeResult pr = fit_probe(kept_feats, targets, task, splits);
    plan.head_kind = task.kind;
    plan.head_w.clear();
    plan.head_b.clear();
    for (std::size_t o = 0; o < pr.model.n_outputs(); ++o) {
        std::vector<double> w(plan.kept.size());
        double b = pr.model.b[o];
        for (std::size_t j = 0; j < plan.kept.size(); ++j) {
            const double wj = pr.model.w[o][j];
            const double mu = pr.model.input.mean[j];
            const double sigma = pr.model.input.stdev[j];
            w[j] = wj / sigma;
            b -= wj * mu / sigma;
        }
        // fold the tuned decision threshold into the bias so the standalone
        // net classifies with a plain sign test
        if ((task.kind == TaskKind::binary || task.kind == TaskKind::multilabel) &&
            o < pr.model.tau.size())
            b -= pr.model.tau[o];
        plan.head_w.push_back(std::move(w));
        plan.head_b.push_back(b);
    }
}

// Truncate at plan.truncation_layer, keep only the planned filters there, and
// attach pooling plus the plan's linear head. truncation_layer == -1 returns
// the input untouched (identity plan).
template <typename T>
NetworkIRT<T> build_pruned_network(const NetworkIRT<T>& net, const PrunePlan& plan) {
    if (plan.truncation_layer < 0) return net;
    const std::size_t l = static_cast<std::size_t>(plan.truncation_layer);
    if (l >= net.layers.size())
        throw std::invalid_argument("build_pruned_network: truncation layer out of range");
    const LayerKind k = net.layers[l].kind;
    if (k != LayerKind::Conv2D && k != LayerKind::MFM)
        throw std::invalid_argument("build_pruned_network: truncation layer has no filters");
    detail::check_keep(plan.kept, static_cast<std::size_t>(net.layers[l].out_channels),
                       "build_pruned_network");
    if (plan.head_w.empty() || plan.head_w[0].size() != plan.kept.size())
        throw std::invalid_argument("build_pruned_network: head width disagrees with keep set");

    NetworkIRT<T> out;
    out.input_shape = net.input_shape;
    out.name = net.name.empty() ? "pruned" : net.name + "-pruned";
    out.primary_task = plan.task;
    out.layers.assign(net.layers.begin(), net.layers.begin() + static_cast<std::ptrdiff_t>(l + 1));
    out.params.assign(net.params.begin(), net.params.begin() + static_cast<std::ptrdiff_t>(l + 1));
    detail::shrink_output(out, l, plan.kept);

    out.layers.push_back(LayerSpec::gap());
    out.params.emplace_back();

    const int n_out = static_cast<int>(plan.head_w.size());
    LayerSpec head = LayerSpec::linear(static_cast<int>(plan.kept.size()), n_out, true);
    LayerParamsT<T> head_p;
    head_p.weight = TensorT<T>(head.weight_shape());
    head_p.bias = TensorT<T>(head.bias_shape());
    for (int o = 0; o < n_out; ++o) {
        for (std::size_t j = 0; j < plan.kept.size(); ++j)
            head_p.weight.at2(static_cast<std::size_t>(o), j) =
                static_cast<T>(plan.head_w[static_cast<std::size_t>(o)][j]);
        head_p.bias[static_cast<std::size_t>(o)] =
            static_cast<T>(plan.head_b[static_cast<std::size_t>(o)]);
    }
    out.layers.push_back(head);
    out.params.push_back(std::move(head_p));

    require_valid(out);
    return out;
}

struct CompressionReport {
    CountReport baseline;
    CountReport pruned;
    double param_reduction = 0.0;
    double flop_reduction = 0.0;

    nlohmann::json to_json() const {
        return {{"baseline", baseline.to_json()},
                {"pruned", pruned.to_json()},
                {"param_reduction", param_reduction},
                {"flop_reduction", flop_reduction}};
    }
};

template <typename T>
CompressionReport compression_report(const NetworkIRT<T>& baseline,
                                     const NetworkIRT<T>& pruned) {
    CompressionReport rep;
    rep.baseline = count_network(baseline);
    rep.pruned = count_network(pruned);
    set_baseline(rep.pruned, rep.baseline);
    rep.param_reduction = rep.pruned.param_reduction;
    rep.flop_reduction = rep.pruned.flop_reduction;
    return rep;
}

struct TaskEval {
    std::string metric_name;  // "rmse" or "accuracy"
    double value = 0.0;
    std::size_t n = 0;
};

// Scores a self-contained network on task targets over the given rows.
// Regression nets read output column 0; multi-output nets classify by argmax
// (ties to the lowest class); single-output binary nets use a sign test,
// which assumes any tuned threshold was folded into the head bias.
template <typename T>
TaskEval evaluate_network(const NetworkIRT<T>& net, const TensorT<T>& images,
                          const ProbeTargets& targets, TaskKind kind,
                          const std::vector<std::size_t>& rows, int threads = 0) {
    if (rows.empty()) throw std::invalid_argument("evaluate_network: no rows");
    const TensorT<T> x = detail::gather_images(images, rows);
    const TensorT<T> out = forward(net, x, {}, threads).output;
    const std::size_t k = out.shape()[1];

    TaskEval ev;
    ev.n = rows.size();
    if (kind == TaskKind::regression) {
        double sse = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double d = static_cast<double>(out.at2(i, 0)) - targets.values[rows[i]];
            sse += d * d;
        }
        ev.metric_name = "rmse";
        ev.value = std::sqrt(sse / static_cast<double>(rows.size()));
        return ev;
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        int pred = 0;
        if (k == 1) {
            pred = out.at2(i, 0) >= 0 ? 1 : 0;
        } else {
            for (std::size_t o = 1; o < k; ++o)
                if (out.at2(i, o) > out.at2(i, static_cast<std::size_t>(pred))) pred = static_cast<int>(o);
        }
        if (pred == targets.labels[rows[i]]) ++hit;
    }
    ev.metric_name = "accuracy";
    ev.value = static_cast<double>(hit) / static_cast<double>(rows.size());
    return ev;
}

// Best-of-N wall clock for one full forward pass over the batch.
template <typename T>
double measure_inference_seconds(const NetworkIRT<T>& net, const TensorT<T>& images,
                                 int repeats = 3, int threads = 0) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, repeats); ++r) {
        const double s = time_seconds([&] { forward(net, images, {}, threads); });
        best = std::min(best, s);
    }
    return best;
}

}  // namespace prunekit
