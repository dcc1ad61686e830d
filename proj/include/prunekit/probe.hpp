#pragma once

// Linear read-outs over pooled filter activations. A probe is a per-output
// affine map fit by ridge-stabilized least squares on standardized features;
// classification outputs add a decision rule (threshold or argmax) chosen on
// the validation split. Probing never touches the frozen network's weights.

#include <chrono>
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
#include "prunekit/linalg.hpp"
#include "prunekit/splits.hpp"

namespace prunekit {

enum class TaskKind { regression, binary, multiclass, multilabel };

inline const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::regression: return "regression";
        case TaskKind::binary: return "binary";
        case TaskKind::multiclass: return "multiclass";
        case TaskKind::multilabel: return "multilabel";
    }
    return "?";
}

inline TaskKind task_kind_from_name(const std::string& s) {
    if (s == "regression") return TaskKind::regression;
    if (s == "binary") return TaskKind::binary;
    if (s == "multiclass") return TaskKind::multiclass;
    if (s == "multilabel") return TaskKind::multilabel;
    throw std::invalid_argument("unknown task kind '" + s + "'");
}

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::regression;
    int outputs = 1;  // classes for multiclass, labels for multilabel, else 1
};

// Exactly one member is read, selected by TaskSpec::kind.
struct ProbeTargets {
    std::vector<double> values;               // regression
    std::vector<int> labels;                  // binary {0,1} or class index
    std::vector<std::vector<int>> multilabel; // per sample, `outputs` 0/1 flags
};

struct ProbeModel {
    std::string task;
    TaskKind kind = TaskKind::regression;
    int source_layer = -1;
    Standardizer input;                  // fit on the training split
    std::vector<std::vector<double>> w;  // per output, standardized space
    std::vector<double> b;               // per output
    std::vector<double> tau;             // binary/multilabel decision thresholds

    std::size_t n_features() const { return w.empty() ? 0 : w[0].size(); }
    std::size_t n_outputs() const { return w.size(); }

    // raw scores, one row per sample
    std::vector<std::vector<double>> scores(const FeatureMatrix& fm) const {
        const FeatureMatrix xs = input.apply(fm);
        std::vector<std::vector<double>> out(xs.rows,
                                             std::vector<double>(n_outputs(), 0.0));
        for (std::size_t r = 0; r < xs.rows; ++r)
            for (std::size_t o = 0; o < n_outputs(); ++o) {
                double s = b[o];
                for (std::size_t j = 0; j < xs.cols; ++j) s += w[o][j] * xs.at(r, j);
                out[r][o] = s;
            }
        return out;
    }
};

struct ProbeResult {
    ProbeModel model;
    std::string metric_name;  // "rmse" or "accuracy"
    double train_metric = 0.0;
    double val_metric = 0.0;
    double test_metric = 0.0;
    bool degenerate = false;  // intercept-only fit; scores carry no signal
};

namespace detail {

// least squares with a trace-scaled ridge jitter; x is standardized so the
// intercept decouples as mean(t)
struct LsFit {
    std::vector<double> w;
    double b = 0.0;
};

inline LsFit fit_ls(const std::vector<double>& xs, std::size_t n, std::size_t p,
                    const std::vector<double>& t) {
    LsFit fit;
    double tm = 0.0;
    for (double v : t) tm += v;
    tm /= static_cast<double>(n);
    fit.b = tm;
    std::vector<double> tc(n);
    for (std::size_t i = 0; i < n; ++i) tc[i] = t[i] - tm;
    double trace = 0.0;
    for (double v : xs) trace += v * v;
    const double eps = 1e-6 * trace / static_cast<double>(p > 0 ? p : 1);
    fit.w = ridge_solve(xs, n, p, tc, eps > 0 ? eps : 1e-12);
    return fit;
}

// threshold maximizing accuracy under the closed-right rule score>=tau -> 1;
// candidates are midpoints of adjacent distinct validation scores plus the
// two all-one/all-zero extremes, ties resolved toward the smallest tau
inline double pick_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) return 0.0;
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<double> cands;
    cands.push_back(sorted.front() - 1.0);
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
        cands.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    cands.push_back(sorted.back() + 1.0);

    double best_tau = cands.front();
    std::size_t best_hits = 0;
    bool first = true;
    for (double tau : cands) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const int pred = scores[i] >= tau ? 1 : 0;
            if (pred == labels[i]) ++hits;
        }
        if (first || hits > best_hits) {
            best_hits = hits;
            best_tau = tau;
            first = false;
        }
    }
    return best_tau;
}

inline std::vector<double> gather(const std::vector<double>& v,
                                  const std::vector<std::size_t>& idx) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    return out;
}

inline std::vector<int> gather(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    return out;
}

}  // namespace detail

// discrete predictions: regression returns scores, binary/multilabel apply
// tau (score >= tau -> 1), multiclass takes argmax with ties to the lowest
// class index
inline std::vector<std::vector<double>> predict(const ProbeModel& m, const FeatureMatrix& fm) {
    auto sc = m.scores(fm);
    switch (m.kind) {
        case TaskKind::regression:
            return sc;
        case TaskKind::binary:
        case TaskKind::multilabel:
            for (auto& row : sc)
                for (std::size_t o = 0; o < row.size(); ++o)
                    row[o] = row[o] >= m.tau[o] ? 1.0 : 0.0;
            return sc;
        case TaskKind::multiclass: {
            std::vector<std::vector<double>> out(sc.size(), std::vector<double>(1, 0.0));
            for (std::size_t r = 0; r < sc.size(); ++r) {
                std::size_t best = 0;
                for (std::size_t o = 1; o < sc[r].size(); ++o)
                    if (sc[r][o] > sc[r][best]) best = o;
                out[r][0] = static_cast<double>(best);
            }
            return out;
        }
    }
    throw std::logic_error("unreachable task kind");
}

// rmse for regression, accuracy otherwise (mean per-label for multilabel)
inline double evaluate_probe(const ProbeModel& m, const FeatureMatrix& fm,
                             const ProbeTargets& targets) {
    const auto preds = predict(m, fm);
    const std::size_t n = fm.rows;
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    switch (m.kind) {
        case TaskKind::regression: {
            double sse = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = preds[i][0] - targets.values[i];
                sse += d * d;
            }
            return std::sqrt(sse / static_cast<double>(n));
        }
        case TaskKind::binary: {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (static_cast<int>(preds[i][0]) == targets.labels[i]) ++hits;
            return static_cast<double>(hits) / static_cast<double>(n);
        }
        case TaskKind::multiclass: {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (static_cast<int>(preds[i][0]) == targets.labels[i]) ++hits;
            return static_cast<double>(hits) / static_cast<double>(n);
        }
        case TaskKind::multilabel: {
            const std::size_t L = m.n_outputs();
            double acc = 0.0;
            for (std::size_t o = 0; o < L; ++o) {
                std::size_t hits = 0;
                for (std::size_t i = 0; i < n; ++i)
                    if (static_cast<int>(preds[i][o]) == targets.multilabel[i][o]) ++hits;
                acc += static_cast<double>(hits) / static_cast<double>(n);
            }
            return L ? acc / static_cast<double>(L) : 0.0;
        }
    }
    throw std::logic_error("unreachable task kind");
}

// Fits on splits.train, tunes decision rules on splits.val, reports metrics
// on all three splits. The frozen network never enters: only its features do.
inline ProbeResult fit_probe(const FeatureMatrix& features, const ProbeTargets& targets,
                             const TaskSpec& task, const SplitIndices& splits) {
    const std::size_t n = features.rows, p = features.cols;
    auto check_len = [&](std::size_t got, const char* what) {
        if (got != n)
            throw std::invalid_argument(std::string("fit_probe: ") + what + " length " +
                                        std::to_string(got) + " != sample count " +
                                        std::to_string(n));
    };
    switch (task.kind) {
        case TaskKind::regression: check_len(targets.values.size(), "values"); break;
        case TaskKind::binary:
        case TaskKind::multiclass: check_len(targets.labels.size(), "labels"); break;
        case TaskKind::multilabel: check_len(targets.multilabel.size(), "multilabel"); break;
    }
    if (splits.train.empty()) throw std::invalid_argument("fit_probe: empty training split");

    ProbeResult res;
    ProbeModel& m = res.model;
    m.task = task.name;
    m.kind = task.kind;
    m.source_layer = features.source_layer;

    const FeatureMatrix f_train = features.select_rows(splits.train);
    m.input = Standardizer::fit(f_train);
    const FeatureMatrix xs_train = m.input.apply(f_train);
    const std::size_t nt = xs_train.rows;

    const int n_out = (task.kind == TaskKind::regression || task.kind == TaskKind::binary)
                          ? 1
                          : task.outputs;
    if (n_out < 1) throw std::invalid_argument("fit_probe: non-positive output count");

    // per-output regression target in {raw y, +-1 indicator}
    auto target_for = [&](int o, std::size_t train_i) -> double {
        const std::size_t row = splits.train[train_i];
        switch (task.kind) {
            case TaskKind::regression: return targets.values[row];
            case TaskKind::binary: return targets.labels[row] ? 1.0 : -1.0;
            case TaskKind::multiclass: return targets.labels[row] == o ? 1.0 : -1.0;
            case TaskKind::multilabel: return targets.multilabel[row][static_cast<std::size_t>(o)] ? 1.0 : -1.0;
        }
        return 0.0;
    };

    for (int o = 0; o < n_out; ++o) {
        std::vector<double> t(nt);
        for (std::size_t i = 0; i < nt; ++i) t[i] = target_for(o, i);
        auto fit = detail::fit_ls(xs_train.data, nt, p, t);
        m.w.push_back(std::move(fit.w));
        m.b.push_back(fit.b);
    }
    m.tau.assign(static_cast<std::size_t>(n_out), 0.0);

    bool any_signal = false;
    for (const auto& wo : m.w)
        for (double v : wo)
            if (std::abs(v) > 1e-12) any_signal = true;
    res.degenerate = !any_signal;

    // decision thresholds come from the validation split (fall back to the
    // training split when there is none)
    if (task.kind == TaskKind::binary || task.kind == TaskKind::multilabel) {
        const auto& tune_idx = splits.val.empty() ? splits.train : splits.val;
        const FeatureMatrix f_tune = features.select_rows(tune_idx);
        const auto sc = m.scores(f_tune);
        for (int o = 0; o < n_out; ++o) {
            std::vector<double> s(tune_idx.size());
            std::vector<int> lab(tune_idx.size());
            for (std::size_t i = 0; i < tune_idx.size(); ++i) {
                s[i] = sc[i][static_cast<std::size_t>(o)];
                lab[i] = task.kind == TaskKind::binary
                             ? targets.labels[tune_idx[i]]
                             : targets.multilabel[tune_idx[i]][static_cast<std::size_t>(o)];
            }
            m.tau[static_cast<std::size_t>(o)] = detail::pick_threshold(s, lab);
        }
    }

    res.metric_name = task.kind == TaskKind::regression ? "rmse" : "accuracy";
    auto metric_on = [&](const std::vector<std::size_t>& idx) -> double {
        if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
        ProbeTargets sub;
        switch (task.kind) {
            case TaskKind::regression: sub.values = detail::gather(targets.values, idx); break;
            case TaskKind::binary:
            case TaskKind::multiclass: sub.labels = detail::gather(targets.labels, idx); break;
            case TaskKind::multilabel:
                for (std::size_t i : idx) sub.multilabel.push_back(targets.multilabel[i]);
                break;
        }
        return evaluate_probe(m, features.select_rows(idx), sub);
    };
    res.train_metric = metric_on(splits.train);
    res.val_metric = metric_on(splits.val);
    res.test_metric = metric_on(splits.test);
    return res;
}

// ---- serialization ----

inline nlohmann::json probe_to_json(const ProbeModel& m) {
    return {{"task", m.task},
            {"kind", task_kind_name(m.kind)},
            {"source_layer", m.source_layer},
            {"mean", m.input.mean},
            {"stdev", m.input.stdev},
            {"w", m.w},
            {"b", m.b},
            {"tau", m.tau}};
}

inline ProbeModel probe_from_json(const nlohmann::json& j) {
    ProbeModel m;
    m.task = j.at("task").get<std::string>();
    m.kind = task_kind_from_name(j.at("kind").get<std::string>());
    m.source_layer = j.at("source_layer").get<int>();
    m.input.mean = j.at("mean").get<std::vector<double>>();
    m.input.stdev = j.at("stdev").get<std::vector<double>>();
    m.w = j.at("w").get<std::vector<std::vector<double>>>();
    m.b = j.at("b").get<std::vector<double>>();
    m.tau = j.at("tau").get<std::vector<double>>();
    return m;
}

inline void save_probe(const ProbeModel& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << probe_to_json(m).dump(2) << "\n";
}

inline ProbeModel load_probe(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return probe_from_json(j);
}

// ---- transfer matrix ----

struct TransferCell {
    bool present = false;
    double metric = std::numeric_limits<double>::quiet_NaN();
    std::string metric_name;
    // parameter saving of reusing this frozen net (probe weights only) vs
    // training the task's dedicated network from scratch
    double param_reduction = std::numeric_limits<double>::quiet_NaN();
};

struct TransferMatrix {
    std::vector<std::string> net_names;   // rows
    std::vector<std::string> task_names;  // columns
    std::vector<TransferCell> cells;      // row-major

    TransferCell& at(std::size_t r, std::size_t c) { return cells[r * task_names.size() + c]; }
    const TransferCell& at(std::size_t r, std::size_t c) const {
        return cells[r * task_names.size() + c];
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < net_names.size(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t c = 0; c < task_names.size(); ++c) {
                const TransferCell& cell = at(r, c);
                if (!cell.present) {
                    row.push_back(nullptr);
                    continue;
                }
                nlohmann::json jc = {{"metric", cell.metric},
                                     {"metric_name", cell.metric_name}};
                if (std::isnan(cell.param_reduction)) jc["param_reduction"] = nullptr;
                else jc["param_reduction"] = cell.param_reduction;
                row.push_back(jc);
            }
            rows.push_back(row);
        }
        return {{"nets", net_names}, {"tasks", task_names}, {"cells", rows}};
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open " + path.string());
        out << "net";
        for (const auto& t : task_names) out << "," << t << "," << t << "_param_reduction";
        out << "\n";
        for (std::size_t r = 0; r < net_names.size(); ++r) {
            out << net_names[r];
            for (std::size_t c = 0; c < task_names.size(); ++c) {
                const TransferCell& cell = at(r, c);
                out << ",";
                if (cell.present && !std::isnan(cell.metric)) out << cell.metric;
                out << ",";
                if (cell.present && !std::isnan(cell.param_reduction))
                    out << cell.param_reduction;
            }
            out << "\n";
        }
    }
};

// First pooling-to-vector layer; probes attach there by default.
template <typename T>
std::size_t default_feature_layer(const NetworkIRT<T>& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l)
        if (net.layers[l].kind == LayerKind::GAP) return l;
    throw std::invalid_argument("network has no global pooling layer to probe");
}

struct TransferTask {
    TaskSpec spec;
    ProbeTargets targets;
};

// Probes every frozen net against every task on a shared image set. A cell's
// param_reduction compares the probe's own parameter count against the
// dedicated network trained for that task (matched via primary_task); tasks
// with no dedicated net get a NaN reduction but still report their metric.
template <typename T>
TransferMatrix transfer_matrix(const std::vector<NetworkIRT<T>>& nets,
                               const TensorT<T>& images,
                               const std::vector<TransferTask>& tasks,
                               const SplitIndices& splits, int threads = 0) {
    TransferMatrix tm;
    for (const auto& net : nets)
        tm.net_names.push_back(net.name.empty() ? "net" + std::to_string(tm.net_names.size())
                                                : net.name);
    for (const auto& t : tasks) tm.task_names.push_back(t.spec.name);
    tm.cells.assign(nets.size() * tasks.size(), {});

    std::vector<double> dedicated_params(tasks.size(),
                                         std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < tasks.size(); ++c)
        for (const auto& net : nets)
            if (!net.primary_task.empty() && net.primary_task == tasks[c].spec.name) {
                dedicated_params[c] = static_cast<double>(count_network(net).total_params);
                break;
            }

    for (std::size_t r = 0; r < nets.size(); ++r) {
        const FeatureMatrix fm =
            extract_gap(nets[r], images, deepest_filter_layer(nets[r]), threads);
        for (std::size_t c = 0; c < tasks.size(); ++c) {
            ProbeResult pr = fit_probe(fm, tasks[c].targets, tasks[c].spec, splits);
            TransferCell& cell = tm.at(r, c);
            cell.present = true;
            cell.metric = pr.test_metric;
            cell.metric_name = pr.metric_name;
            if (!std::isnan(dedicated_params[c])) {
                double probe_params = 0.0;
                for (const auto& wo : pr.model.w)
                    probe_params += static_cast<double>(wo.size()) + 1.0;
                cell.param_reduction = 1.0 - probe_params / dedicated_params[c];
            }
        }
    }
    return tm;
}

// ---- timing ----

struct ProbeTiming {
    double feature_seconds = 0.0;
    double fit_seconds = 0.0;
    double baseline_seconds = 0.0;
    double probe_metric = 0.0;     // probe held-out metric the baseline chases
    double baseline_metric = 0.0;  // metric the baseline reached
    int baseline_epochs = 0;
    bool baseline_matched = false;

    double probe_seconds() const { return feature_seconds + fit_seconds; }
    double speedup() const {
        const double denom = probe_seconds();
        return denom > 0.0 ? baseline_seconds / denom : std::numeric_limits<double>::infinity();
    }
};

template <typename F>
double time_seconds(F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

// Wall-clock comparison of the probe path (feature extraction + linear fit)
// against the transfer-learning baseline: same frozen trunk, reinitialized
// pooled head for the task, head-only SGD until the probe's held-out metric
// is matched within `tolerance` (accuracy points, or a relative RMSE band for
// regression) or `head_cfg.epochs` is exhausted. Evaluation passes between
// epochs are not billed to the baseline.
template <typename T>
ProbeTiming probe_timing(const NetworkIRT<T>& frozen, const TensorT<T>& images,
                         std::size_t layer_id, const ProbeTargets& targets,
                         const TaskSpec& task, const SplitIndices& splits,
                         TrainConfig head_cfg, double tolerance = 0.05,
                         ProbeResult* probe_out = nullptr) {
    for (std::size_t l = 0; l <= layer_id; ++l)
        if (frozen.layers[l].kind == LayerKind::Linear)
            throw std::invalid_argument("probe_timing: layer must precede the head");

    ProbeTiming t;
    FeatureMatrix fm;
    t.feature_seconds =
        time_seconds([&] { fm = extract_gap(frozen, images, layer_id, head_cfg.threads); });
    ProbeResult pr;
    t.fit_seconds = time_seconds([&] { pr = fit_probe(fm, targets, task, splits); });
    if (probe_out) *probe_out = pr;
    t.probe_metric = splits.val.empty() ? pr.train_metric : pr.val_metric;

    // trunk through layer_id plus a fresh pooled head over the probe's features
    std::vector<LayerSpec> ls;
    int ch = frozen.input_shape[0];
    for (std::size_t l = 0; l <= layer_id; ++l) {
        ls.push_back(frozen.layers[l]);
        if (frozen.layers[l].out_channels > 0) ch = frozen.layers[l].out_channels;
    }
    const int n_out = task.kind == TaskKind::regression ? 1
                      : task.kind == TaskKind::binary   ? 2
                                                        : task.outputs;
    if (frozen.layers[layer_id].kind != LayerKind::GAP) ls.push_back(LayerSpec::gap());
    ls.push_back(LayerSpec::linear(ch, n_out));
    NetworkIRT<T> net = make_network<T>(std::move(ls), frozen.input_shape);
    randomize_params(net, head_cfg.seed);
    for (std::size_t l = 0; l <= layer_id; ++l) net.params[l] = frozen.params[l];

    head_cfg.loss = task.kind == TaskKind::regression ? LossKind::mse : LossKind::softmax_ce;
    head_cfg.frozen_layers.clear();
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
        if (net.layers[l].has_params()) head_cfg.frozen_layers.push_back(l);

    TensorT<T> train_x = detail::gather_images(images, splits.train);
    TensorT<T> dense;
    std::vector<int> labels;
    TrainDataT<T> td;
    td.x = &train_x;
    if (task.kind == TaskKind::regression) {
        dense = TensorT<T>({splits.train.size(), 1});
        for (std::size_t i = 0; i < splits.train.size(); ++i)
            dense.at2(i, 0) = static_cast<T>(targets.values[splits.train[i]]);
        td.dense = &dense;
    } else {
        labels.resize(splits.train.size());
        for (std::size_t i = 0; i < splits.train.size(); ++i)
            labels[i] = targets.labels[splits.train[i]];
        td.labels = &labels;
    }

    const std::vector<std::size_t>& eval_rows = splits.val.empty() ? splits.train : splits.val;
    const TensorT<T> eval_x = detail::gather_images(images, eval_rows);
    auto eval_metric = [&]() {
        const TensorT<T> out = forward(net, eval_x, {}, head_cfg.threads).output;
        if (task.kind == TaskKind::regression) {
            double sse = 0.0;
            for (std::size_t i = 0; i < eval_rows.size(); ++i) {
                const double d =
                    static_cast<double>(out.at2(i, 0)) - targets.values[eval_rows[i]];
                sse += d * d;
            }
            return std::sqrt(sse / static_cast<double>(eval_rows.size()));
        }
        const std::size_t k = out.shape()[1];
        std::size_t hit = 0;
        for (std::size_t i = 0; i < eval_rows.size(); ++i) {
            int pred = 0;
            for (std::size_t o = 1; o < k; ++o)
                if (out.at2(i, o) > out.at2(i, static_cast<std::size_t>(pred)))
                    pred = static_cast<int>(o);
            if (pred == targets.labels[eval_rows[i]]) ++hit;
        }
        return static_cast<double>(hit) / static_cast<double>(eval_rows.size());
    };
    auto matched = [&](double m) {
        return task.kind == TaskKind::regression ? m <= t.probe_metric * (1.0 + tolerance)
                                                 : m >= t.probe_metric - tolerance;
    };

    const int cap = std::max(head_cfg.epochs, 1);
    TrainConfig step = head_cfg;
    step.epochs = 1;
    for (int e = 0; e < cap; ++e) {
        step.seed = head_cfg.seed + static_cast<std::uint64_t>(e);
        t.baseline_seconds += time_seconds([&] { train_sgd(net, td, step); });
        ++t.baseline_epochs;
        t.baseline_metric = eval_metric();
        if (matched(t.baseline_metric)) {
            t.baseline_matched = true;
            break;
        }
    }
    return t;
}

}  // namespace prunekit
