// prunekit command line: generate synthetic attribute datasets, train small
// frozen nets, probe their pooled activations for new tasks, trace sparse
// characteristic curves, pick knee points, carry out the filter surgery, and
// report the resulting compression.
//
// Every artifact written gets a <name>.manifest.json sidecar holding the
// resolved configuration and content hashes of all inputs, so any output can
// be regenerated bit-for-bit from its manifest. Exit codes: 0 success,
// 2 configuration error, 3 input/file error, 4 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prunekit/prunekit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prunekit;

namespace {

constexpr const char* kVersion = "0.3.0";

// distinct exception families so main() can map failures to exit codes
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename F>
auto as_input(F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw input_error(e.what());
    }
}

void require_exists(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw input_error(std::string(what) + " not found: " + p.string());
}

// ---- manifests ----

std::uint64_t fnv1a64(std::uint64_t h, const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;

std::uint64_t hash_stream(std::uint64_t h, std::istream& in) {
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(h, buf, static_cast<std::size_t>(in.gcount()));
    return h;
}

std::uint64_t hash_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw input_error("cannot hash " + p.string());
    return hash_stream(kFnvOffset, in);
}

// directory hash: relative paths in sorted order, each mixed with its bytes
std::uint64_t hash_tree(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = kFnvOffset;
    for (const auto& f : files) {
        const std::string rel = fs::relative(f, dir).generic_string();
        h = fnv1a64(h, rel.data(), rel.size());
        std::ifstream in(f, std::ios::binary);
        if (!in) throw input_error("cannot hash " + f.string());
        h = hash_stream(h, in);
    }
    return h;
}

std::string hash_name(const fs::path& p) {
    std::ostringstream os;
    os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0')
       << (fs::is_directory(p) ? hash_tree(p) : hash_file(p));
    return os.str();
}

void write_manifest(const fs::path& artifact, const std::string& command, const json& config,
                    const std::vector<fs::path>& inputs) {
    json in = json::object();
    for (const auto& p : inputs) in[p.generic_string()] = hash_name(p);
    const json m = {{"tool", "prunekit"},
                    {"version", kVersion},
                    {"command", command},
                    {"artifact", artifact.filename().string()},
                    {"config", config},
                    {"inputs", in}};
    const fs::path mp = artifact.string() + ".manifest.json";
    std::ofstream out(mp);
    if (!out) throw input_error("cannot open " + mp.string());
    out << m.dump(2) << "\n";
}

// ---- shared option plumbing ----

struct SplitArgs {
    double train_frac = 0.5;
    double val_frac = 0.25;
    std::uint64_t seed = 42;
};

void add_split_args(CLI::App* cmd, SplitArgs& s, double train_default = 0.5,
                    double val_default = 0.25) {
    s.train_frac = train_default;
    s.val_frac = val_default;
    cmd->add_option("--train-frac", s.train_frac, "training fraction")
        ->capture_default_str();
    cmd->add_option("--val-frac", s.val_frac, "validation fraction")->capture_default_str();
    cmd->add_option("--split-seed", s.seed, "shuffle seed for the splits")
        ->capture_default_str();
}

void add_threads(CLI::App* cmd, int& threads) {
    cmd->add_option("--threads", threads, "worker threads (0 = all cores)")
        ->envname("PRUNEKIT_THREADS")
        ->capture_default_str();
}

json split_json(const SplitArgs& s) {
    return {{"train_frac", s.train_frac}, {"val_frac", s.val_frac}, {"seed", s.seed}};
}

NetworkIR load_model_checked(const fs::path& p) {
    require_exists(p, "model");
    return load_model(p);
}

SynthDataset load_dataset_checked(const fs::path& dir) {
    require_exists(dir, "dataset");
    return as_input([&] { return load_dataset(dir); });
}

std::vector<double> gather(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

// continuous regression target behind a task name: *_bin tasks map back to
// their source column, binary labels become 0/1. Pure class tasks have no
// usable continuous target for curve fitting.
std::vector<double> continuous_target(const SynthDataset& ds, const std::string& task) {
    std::string name = task;
    if (name.size() > 4 && name.substr(name.size() - 4) == "_bin")
        name = name.substr(0, name.size() - 4);
    const NamedTask nt = dataset_task(ds, name);
    if (nt.spec.kind == TaskKind::regression) return nt.targets.values;
    if (nt.spec.kind == TaskKind::binary) {
        std::vector<double> out(nt.targets.labels.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = nt.targets.labels[i];
        return out;
    }
    throw std::invalid_argument("task '" + task + "' has no continuous target to trace");
}

double median_inference_seconds(const NetworkIR& net, const Tensor& one, int repeats,
                                int threads) {
    std::vector<double> runs;
    for (int r = 0; r < std::max(1, repeats); ++r)
        runs.push_back(time_seconds([&] { forward(net, one, {}, threads); }));
    std::sort(runs.begin(), runs.end());
    return runs[runs.size() / 2];
}

// ---- synth ----

struct SynthArgs {
    fs::path out;
    int count = 256;
    int size = 32;
    std::uint64_t seed = 7;
    int identities = 8;
    bool pose_grid = false;
    double identity_mix = 0.6;
    std::vector<std::string> correlate;
    fs::path plant_model;
    int plant_layer = -1;
    int plant_support = 4;
    double plant_noise = 0.05;
    std::string plant_name = "planted";
    int threads = 0;
};

int cmd_synth(const SynthArgs& a) {
    SynthSpec spec;
    spec.count = a.count;
    spec.image_size = a.size;
    spec.seed = a.seed;
    spec.identities = a.identities;
    spec.pose_grid = a.pose_grid;
    spec.identity_mix = a.identity_mix;
    for (const auto& c : a.correlate) {
        const auto p1 = c.find(':');
        const auto p2 = c.find(':', p1 == std::string::npos ? p1 : p1 + 1);
        if (p1 == std::string::npos || p2 == std::string::npos)
            throw std::invalid_argument("--correlate wants attr:attr:rho, got '" + c + "'");
        AttrCorrelation ac;
        ac.a = c.substr(0, p1);
        ac.b = c.substr(p1 + 1, p2 - p1 - 1);
        try {
            ac.rho = std::stod(c.substr(p2 + 1));
        } catch (const std::exception&) {
            throw std::invalid_argument("--correlate: bad rho in '" + c + "'");
        }
        spec.correlations.push_back(ac);
    }

    SynthDataset ds = generate(spec);

    json cfg = spec.to_json();
    std::vector<fs::path> inputs;
    if (!a.plant_model.empty()) {
        const NetworkIR net = load_model_checked(a.plant_model);
        const std::size_t layer = a.plant_layer < 0
                                      ? select_truncation_layer(net)
                                      : static_cast<std::size_t>(a.plant_layer);
        const PlantedTask planted =
            plant_task(net, ds.images, layer, static_cast<std::size_t>(a.plant_support),
                       a.plant_noise, a.seed + 1, a.threads);
        ds.extra[a.plant_name] = planted.values;

        json truth = {{"task", a.plant_name},
                      {"layer", layer},
                      {"support", planted.support},
                      {"weights", planted.weights},
                      {"intercept", planted.intercept},
                      {"noise", a.plant_noise}};
        fs::create_directories(a.out);
        const fs::path tp = a.out / (a.plant_name + "_truth.json");
        std::ofstream tf(tp);
        if (!tf) throw input_error("cannot open " + tp.string());
        tf << truth.dump(2) << "\n";

        cfg["plant"] = {{"model", a.plant_model.generic_string()},
                        {"layer", layer},
                        {"support", a.plant_support},
                        {"noise", a.plant_noise},
                        {"name", a.plant_name}};
        inputs.push_back(a.plant_model);
    }

    write_dataset(ds, a.out);
    write_manifest(a.out / "labels.csv", "synth", cfg, inputs);
    std::cout << "synth: " << ds.size() << " images -> " << a.out.generic_string() << "\n";
    return 0;
}

// ---- train ----

// ---- alternating trainer ----

struct AltOpts {
    TrainConfig cfg;         // epochs = total budget; batch_size <= 0 means full batch
    int refold_every = 5;    // head refit cadence, 0 = only at stage boundaries
    int stage_epochs = 0;    // epochs per greedy bottom-up block stage
    double head_ridge = 0.1;
    bool keep_best = false;  // finish on the best held-out state seen, not the last
};

// Block-coordinate training for pooled-head nets. Raw pooled features carry
// per-channel offsets that dwarf the informative fluctuation, so joint SGD
// either stalls on the uniform-logit plateau (cold head) or detonates (an
// exact head needs ~1/stdev rows, which amplify every conv nudge). Instead:
// fit a ridge-bounded head in closed form on the current pooled features,
// freeze it, run a few epochs of trunk-only SGD, refit, repeat. Optional
// greedy stages align each conv block against its own pooled head on a
// truncated stub first, because a linear readout is nearly blind to the top
// layer's mixing: probe-visible gains must come from the layers underneath.
// The net's head is always left at a closed-form optimum; regression heads
// come back in raw target units.
TrainHistory alternating_train(NetworkIR& net, const SynthDataset& ds, const NamedTask& nt,
                               const SplitIndices& splits, const AltOpts& opt) {
    const TaskKind kind = nt.spec.kind;
    const std::size_t k = static_cast<std::size_t>(net.layers.back().out_features);
    const std::size_t want = kind == TaskKind::regression ? 1
                             : kind == TaskKind::binary   ? 2
                                                          : static_cast<std::size_t>(nt.spec.outputs);
    if (k != want)
        throw std::invalid_argument("train: head width does not match the task");

    TrainConfig cfg = opt.cfg;
    if (cfg.batch_size <= 0) cfg.batch_size = static_cast<int>(splits.train.size());
    const bool use_ce = kind != TaskKind::regression;
    cfg.loss = use_ce ? LossKind::softmax_ce : LossKind::mse;

    const Tensor x_train = detail::gather_images(ds.images, splits.train);
    const Tensor x_val = detail::gather_images(ds.images, splits.val);

    std::vector<int> labels, vlabels;
    if (use_ce) {
        for (auto i : splits.train) labels.push_back(nt.targets.labels[i]);
        for (auto i : splits.val) vlabels.push_back(nt.targets.labels[i]);
    }

    // regression trains in standardized-target space end to end; the scale
    // folds out of the head again before returning
    double ymean = 0.0, ystd = 1.0;
    std::vector<double> y_std(splits.train.size()), vy_std(splits.val.size());
    if (kind == TaskKind::regression) {
        for (auto i : splits.train) ymean += nt.targets.values[i];
        ymean /= static_cast<double>(splits.train.size());
        double var = 0.0;
        for (auto i : splits.train) {
            const double d = nt.targets.values[i] - ymean;
            var += d * d;
        }
        ystd = std::sqrt(var / static_cast<double>(splits.train.size()));
        if (ystd <= 0) ystd = 1.0;
        for (std::size_t i = 0; i < splits.train.size(); ++i)
            y_std[i] = (nt.targets.values[splits.train[i]] - ymean) / ystd;
        for (std::size_t i = 0; i < splits.val.size(); ++i)
            vy_std[i] = (nt.targets.values[splits.val[i]] - ymean) / ystd;
        LayerParamsT<float>& head = net.params.back();
        for (std::size_t j = 0; j < head.weight.size(); ++j)
            head.weight[j] = static_cast<float>(head.weight[j] / ystd);
        head.bias[0] = static_cast<float>((head.bias[0] - ymean) / ystd);
    }

    TrainHistory hist;

    // dense targets the frozen rows regress toward (regression only)
    auto dense_for = [&](const std::vector<double>& ys) {
        Tensor t({ys.size(), k});
        for (std::size_t i = 0; i < ys.size(); ++i) t.at2(i, 0) = static_cast<float>(ys[i]);
        return t;
    };

    // closed-form head refit; returns the decision threshold (binary only).
    // Ridge least squares on centered raw features: penalizing raw weights
    // caps the trunk-side curvature directly, and near-dead channels drop
    // out on their own.
    auto refold = [&](NetworkIR& snet) -> double {
        const std::size_t fl = default_feature_layer(snet) - 1;
        const std::size_t head_id = snet.layers.size() - 1;
        const FeatureMatrix fm = extract_gap(snet, x_train, fl, cfg.threads);
        const std::size_t n = fm.rows, p = fm.cols;
        std::vector<double> mu(p, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < p; ++c) mu[c] += fm.at(r, c);
        for (auto& m : mu) m /= static_cast<double>(n);
        std::vector<double> xc(n * p);
        double trace = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < p; ++c) {
                const double v = fm.at(r, c) - mu[c];
                xc[r * p + c] = v;
                trace += v * v;
            }
        const double lam = std::max(opt.head_ridge * trace / static_cast<double>(p), 1e-12);
        const int n_out = kind == TaskKind::multiclass ? nt.spec.outputs : 1;
        std::vector<std::vector<double>> ws;
        std::vector<double> bs;
        for (int o = 0; o < n_out; ++o) {
            std::vector<double> t(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (kind == TaskKind::regression) t[i] = y_std[i];
                else if (kind == TaskKind::binary) t[i] = labels[i] ? 1.0 : -1.0;
                else t[i] = labels[i] == o ? 1.0 : -1.0;
            }
            double tm = 0.0;
            for (double v : t) tm += v;
            tm /= static_cast<double>(n);
            for (auto& v : t) v -= tm;
            ws.push_back(ridge_solve(xc, n, p, t, lam));
            bs.push_back(tm);
        }
        double tau = 0.0;
        if (kind == TaskKind::binary) {
            std::vector<double> sc(n);
            for (std::size_t i = 0; i < n; ++i) {
                double s = bs[0];
                for (std::size_t j = 0; j < p; ++j) s += ws[0][j] * xc[i * p + j];
                sc[i] = s;
            }
            tau = detail::pick_threshold(sc, labels);
        }
        LayerParamsT<float>& head = snet.params[head_id];
        auto fold_row = [&](std::size_t o, std::size_t row, double scale, double shift) {
            double b = bs[o] - shift;
            for (std::size_t j = 0; j < p; ++j) {
                head.weight.at2(row, j) = static_cast<float>(scale * ws[o][j]);
                b -= ws[o][j] * mu[j];
            }
            head.bias[row] = static_cast<float>(scale * b);
        };
        if (kind == TaskKind::binary) {
            // single closed-form score becomes a symmetric two-logit head
            fold_row(0, 0, -0.5, tau);
            fold_row(0, 1, 0.5, tau);
        } else {
            for (int o = 0; o < n_out; ++o)
                fold_row(static_cast<std::size_t>(o), static_cast<std::size_t>(o), 1.0, 0.0);
        }
        return tau;
    };

    // held-out score, higher better; standardized rmse orders the same as raw
    auto held_score = [&](const NetworkIR& snet) {
        const Tensor& xs = splits.val.empty() ? x_train : x_val;
        const Tensor out = forward(snet, xs, {}, cfg.threads).output;
        if (kind == TaskKind::regression) {
            const auto& ys = splits.val.empty() ? y_std : vy_std;
            double sse = 0.0;
            for (std::size_t i = 0; i < ys.size(); ++i) {
                const double d = static_cast<double>(out.at2(i, 0)) - ys[i];
                sse += d * d;
            }
            return -std::sqrt(sse / static_cast<double>(ys.size()));
        }
        const auto& lab = splits.val.empty() ? labels : vlabels;
        std::size_t hit = 0;
        for (std::size_t i = 0; i < lab.size(); ++i) {
            std::size_t pred = 0;
            for (std::size_t o = 1; o < k; ++o)
                if (out.at2(i, o) > out.at2(i, pred)) pred = o;
            if (static_cast<int>(pred) == lab[i]) ++hit;
        }
        return static_cast<double>(hit) / static_cast<double>(lab.size());
    };
    double best_score = 0.0;
    std::vector<LayerParamsT<float>> best_params;
    auto consider = [&](const NetworkIR& snet) {
        const double s = held_score(snet);
        if (best_params.empty() || s > best_score) {
            best_score = s;
            best_params = snet.params;
        }
    };
    if (opt.keep_best) consider(net);  // the incoming state is a candidate too

    // one stage: refold, rounds of SGD on the given layers with all else
    // frozen, refolding after every round so the head tracks the trunk
    auto run_stage = [&](NetworkIR& snet, const std::vector<std::size_t>& trainable,
                         int stage_epochs, int& epoch_base, bool track) {
        refold(snet);
        if (track) consider(snet);
        int done = 0;
        const int chunk = opt.refold_every > 0 ? opt.refold_every : std::max(stage_epochs, 1);
        while (done < stage_epochs) {
            TrainConfig rcfg = cfg;
            rcfg.epochs = std::min(chunk, stage_epochs - done);
            rcfg.seed = cfg.seed + static_cast<std::uint64_t>(epoch_base + done);
            rcfg.frozen_layers.clear();
            for (std::size_t l = 0; l < snet.layers.size(); ++l)
                if (snet.layers[l].has_params() &&
                    std::find(trainable.begin(), trainable.end(), l) == trainable.end())
                    rcfg.frozen_layers.push_back(l);
            Tensor dense, vdense;
            TrainDataT<float> td;
            td.x = &x_train;
            TrainDataT<float> vd;
            vd.x = &x_val;
            if (use_ce) {
                td.labels = &labels;
                vd.labels = &vlabels;
            } else {
                dense = dense_for(y_std);
                vdense = dense_for(vy_std);
                td.dense = &dense;
                vd.dense = &vdense;
            }
            std::optional<TrainDataT<float>> val;
            if (!splits.val.empty()) val = vd;
            TrainHistory h;
            try {
                h = train_sgd(snet, td, rcfg, val);
            } catch (const std::runtime_error& e) {
                throw numeric_error(e.what());
            }
            for (auto e : h.epochs) {
                e.epoch += epoch_base + done;
                hist.epochs.push_back(e);
            }
            done += rcfg.epochs;
            refold(snet);  // the saved head is always the current optimum
            if (track) consider(snet);
        }
        epoch_base += stage_epochs;
    };

    // trunk copy through `upto` plus a fresh pooled head
    auto make_stub = [&](std::size_t upto) {
        std::vector<LayerSpec> ls;
        int ch = net.input_shape[0];
        for (std::size_t l = 0; l <= upto; ++l) {
            ls.push_back(net.layers[l]);
            if (net.layers[l].out_channels > 0) ch = net.layers[l].out_channels;
        }
        ls.push_back(LayerSpec::gap());
        ls.push_back(LayerSpec::linear(ch, static_cast<int>(k)));
        NetworkIR stub = make_network(std::move(ls), net.input_shape, net.name);
        randomize_params(stub, cfg.seed);  // head only; trunk copied below
        for (std::size_t l = 0; l <= upto; ++l) stub.params[l] = net.params[l];
        return stub;
    };

    const std::vector<std::size_t> blocks = probe_candidate_layers(net);
    int epoch_base = 0;
    if (opt.stage_epochs > 0) {
        for (std::size_t bi = 0; bi + 1 < blocks.size(); ++bi) {
            if (epoch_base + opt.stage_epochs > cfg.epochs) break;
            std::size_t upto = blocks[bi];
            if (upto + 1 < net.layers.size() && net.layers[upto + 1].kind == LayerKind::ReLU)
                ++upto;  // pool what the trunk emits, activation included
            NetworkIR stub = make_stub(upto);
            run_stage(stub, {blocks[bi]}, opt.stage_epochs, epoch_base, false);
            for (std::size_t l = 0; l <= upto; ++l) net.params[l] = stub.params[l];
        }
    }
    run_stage(net, blocks, cfg.epochs - epoch_base, epoch_base, opt.keep_best);
    if (opt.keep_best && !best_params.empty()) net.params = best_params;

    if (kind == TaskKind::regression) {
        LayerParamsT<float>& head = net.params.back();
        for (std::size_t j = 0; j < head.weight.size(); ++j)
            head.weight[j] = static_cast<float>(head.weight[j] * ystd);
        head.bias[0] = static_cast<float>(head.bias[0] * ystd + ymean);
    }
    return hist;
}

struct TrainArgs {
    fs::path data, out, history;
    std::string task = "identity";
    std::string arch = "convnet-small";
    std::string head_init = "probe";
    int refold_every = 5;     // closed-form head refit cadence (probe init only)
    int stage_epochs = 0;     // epochs per greedy bottom-up block stage
    double head_ridge = 0.1;  // raw-space ridge strength for the head refit
    TrainConfig cfg;
    SplitArgs split;
};

int cmd_train(const TrainArgs& a) {
    const SynthDataset ds = load_dataset_checked(a.data);
    const NamedTask nt = dataset_task(ds, a.task);
    if (nt.spec.kind == TaskKind::multilabel)
        throw std::invalid_argument("train: multilabel primaries are not supported");

    const int outputs = nt.spec.kind == TaskKind::regression ? 1
                        : nt.spec.kind == TaskKind::binary   ? 2
                                                             : nt.spec.outputs;
    const auto shp = ds.images.shape();
    NetworkIR net = make_primary_net(
        a.arch, {static_cast<int>(shp[1]), static_cast<int>(shp[2]), static_cast<int>(shp[3])},
        outputs, a.cfg.seed);
    net.primary_task = a.task;

    const SplitIndices splits =
        make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);
    if (splits.train.empty()) throw std::invalid_argument("train: empty training split");

    TrainHistory hist;
    if (a.head_init == "probe") {
        AltOpts opt;
        opt.cfg = a.cfg;
        opt.refold_every = a.refold_every;
        opt.stage_epochs = a.stage_epochs;
        opt.head_ridge = a.head_ridge;
        hist = alternating_train(net, ds, nt, splits, opt);
    } else {
        // Raw pooled features carry per-channel offsets that dwarf the
        // informative fluctuation, so joint SGD either stalls on the
        // uniform-logit plateau (cold head) or detonates (an exact head needs
        // ~1/stdev rows, which amplify every conv nudge).  Train by block
        // coordinate descent instead: fit a ridge-bounded head in closed
        // form on the current pooled features, freeze it, run a few epochs
        // of conv-only SGD against its least-squares objective, refit,
        // repeat.  Blocks are aligned greedily bottom-up first, each against
        // its own pooled head on a truncated stub, because a linear readout
        // is nearly blind to the top layer's mixing: probe-visible gains
        // must come from the layers underneath.
        const bool use_ce = nt.spec.kind != TaskKind::regression;
        cfg.loss = use_ce ? LossKind::softmax_ce : LossKind::mse;
        const std::size_t k = static_cast<std::size_t>(outputs);

        // dense targets the frozen rows regress toward: the head's own
        // output at the closed-form optimum
        auto dense_for = [&](const std::vector<int>& lab, const std::vector<double>& ys,
                             double tau) {
            const std::size_t n = nt.spec.kind == TaskKind::regression ? ys.size() : lab.size();
            Tensor t({n, k});
            for (std::size_t i = 0; i < n; ++i) {
                if (nt.spec.kind == TaskKind::regression) {
                    t.at2(i, 0) = static_cast<float>(ys[i]);
                } else if (nt.spec.kind == TaskKind::binary) {
                    const double pm = lab[i] ? 1.0 : -1.0;
                    t.at2(i, 0) = static_cast<float>(-0.5 * (pm - tau));
                    t.at2(i, 1) = static_cast<float>(0.5 * (pm - tau));
                } else {
                    for (std::size_t o = 0; o < k; ++o)
                        t.at2(i, o) = static_cast<float>(
                            lab[i] == static_cast<int>(o) ? 1.0 : -1.0);
                }
            }
            return t;
        };

        // closed-form head refit; returns the decision threshold (binary
        // only).  Ridge least squares on centered raw features: penalizing
        // raw weights caps the conv-side curvature directly, and near-dead
        // channels drop out on their own.
        auto refold = [&](NetworkIR& snet) -> double {
            const std::size_t fl = default_feature_layer(snet) - 1;
            const std::size_t head_id = snet.layers.size() - 1;
            const FeatureMatrix fm = extract_gap(snet, x_train, fl, cfg.threads);
            const std::size_t n = fm.rows, p = fm.cols;
            std::vector<double> mu(p, 0.0);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < p; ++c) mu[c] += fm.at(r, c);
            for (auto& m : mu) m /= static_cast<double>(n);
            std::vector<double> xc(n * p);
            double trace = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < p; ++c) {
                    const double v = fm.at(r, c) - mu[c];
                    xc[r * p + c] = v;
                    trace += v * v;
                }
            const double lam = std::max(a.head_ridge * trace / static_cast<double>(p), 1e-12);
            const int n_out = nt.spec.kind == TaskKind::multiclass ? nt.spec.outputs : 1;
            std::vector<std::vector<double>> ws;
            std::vector<double> bs;
            for (int o = 0; o < n_out; ++o) {
                std::vector<double> t(n);
                for (std::size_t i = 0; i < n; ++i) {
                    if (nt.spec.kind == TaskKind::regression) t[i] = y_std[i];
                    else if (nt.spec.kind == TaskKind::binary) t[i] = labels[i] ? 1.0 : -1.0;
                    else t[i] = labels[i] == o ? 1.0 : -1.0;
                }
                double tm = 0.0;
                for (double v : t) tm += v;
                tm /= static_cast<double>(n);
                for (auto& v : t) v -= tm;
                ws.push_back(ridge_solve(xc, n, p, t, lam));
                bs.push_back(tm);
            }
            double tau = 0.0;
            if (nt.spec.kind == TaskKind::binary) {
                std::vector<double> sc(n);
                for (std::size_t i = 0; i < n; ++i) {
                    double s = bs[0];
                    for (std::size_t j = 0; j < p; ++j) s += ws[0][j] * xc[i * p + j];
                    sc[i] = s;
                }
                tau = detail::pick_threshold(sc, labels);
            }
            LayerParamsT<float>& head = snet.params[head_id];
            auto fold_row = [&](std::size_t o, std::size_t row, double scale, double shift) {
                double b = bs[o] - shift;
                for (std::size_t j = 0; j < p; ++j) {
                    head.weight.at2(row, j) = static_cast<float>(scale * ws[o][j]);
                    b -= ws[o][j] * mu[j];
                }
                head.bias[row] = static_cast<float>(scale * b);
            };
            if (nt.spec.kind == TaskKind::binary) {
                // single closed-form score becomes a symmetric two-logit head
                fold_row(0, 0, -0.5, tau);
                fold_row(0, 1, 0.5, tau);
            } else {
                for (int o = 0; o < n_out; ++o)
                    fold_row(static_cast<std::size_t>(o), static_cast<std::size_t>(o), 1.0, 0.0);
            }
            return tau;
        };

        // one stage: refold, rounds of SGD on the given layers with all else
        // frozen, refolding after every round so the head tracks the trunk
        auto run_stage = [&](NetworkIR& snet, const std::vector<std::size_t>& trainable,
                             int stage_epochs, int& epoch_base) {
            double tau = refold(snet);
            int done = 0;
            const int chunk = a.refold_every > 0 ? a.refold_every : std::max(stage_epochs, 1);
            while (done < stage_epochs) {
                TrainConfig rcfg = cfg;
                rcfg.epochs = std::min(chunk, stage_epochs - done);
                rcfg.seed = cfg.seed + static_cast<std::uint64_t>(epoch_base + done);
                rcfg.frozen_layers.clear();
                for (std::size_t l = 0; l < snet.layers.size(); ++l)
                    if (snet.layers[l].has_params() &&
                        std::find(trainable.begin(), trainable.end(), l) == trainable.end())
                        rcfg.frozen_layers.push_back(l);
                Tensor dense, vdense;
                TrainDataT<float> td;
                td.x = &x_train;
                TrainDataT<float> vd;
                vd.x = &x_val;
                if (use_ce) {
                    td.labels = &labels;
                    vd.labels = &vlabels;
                } else {
                    dense = dense_for(labels, y_std, tau);
                    vdense = dense_for(vlabels, vy_std, tau);
                    td.dense = &dense;
                    vd.dense = &vdense;
                }
                std::optional<TrainDataT<float>> val;
                if (!splits.val.empty()) val = vd;
                TrainHistory h;
                try {
                    h = train_sgd(snet, td, rcfg, val);
                } catch (const std::runtime_error& e) {
                    throw numeric_error(e.what());
                }
                for (auto e : h.epochs) {
                    e.epoch += epoch_base + done;
                    hist.epochs.push_back(e);
                }
                done += rcfg.epochs;
                tau = refold(snet);  // the saved head is always the current optimum
            }
            epoch_base += stage_epochs;
        };

        // trunk copy through `upto` plus a fresh pooled head
        auto make_stub = [&](std::size_t upto) {
            std::vector<LayerSpec> ls;
            int ch = net.input_shape[0];
            for (std::size_t l = 0; l <= upto; ++l) {
                ls.push_back(net.layers[l]);
                if (net.layers[l].out_channels > 0) ch = net.layers[l].out_channels;
            }
            ls.push_back(LayerSpec::gap());
            ls.push_back(LayerSpec::linear(ch, outputs));
            NetworkIR stub = make_network(std::move(ls), net.input_shape, net.name);
            randomize_params(stub, cfg.seed);  // head only; trunk copied below
            for (std::size_t l = 0; l <= upto; ++l) stub.params[l] = net.params[l];
            return stub;
        };

        const std::vector<std::size_t> blocks = probe_candidate_layers(net);
        int epoch_base = 0;
        if (a.stage_epochs > 0) {
            for (std::size_t bi = 0; bi + 1 < blocks.size(); ++bi) {
                if (epoch_base + a.stage_epochs > cfg.epochs) break;
                std::size_t upto = blocks[bi];
                if (upto + 1 < net.layers.size() &&
                    net.layers[upto + 1].kind == LayerKind::ReLU)
                    ++upto;  // pool what the trunk emits, activation included
                NetworkIR stub = make_stub(upto);
                run_stage(stub, {blocks[bi]}, a.stage_epochs, epoch_base);
                for (std::size_t l = 0; l <= upto; ++l) net.params[l] = stub.params[l];
            }
        }
        run_stage(net, blocks, cfg.epochs - epoch_base, epoch_base);
    } else {
        Tensor dense, vdense;
        TrainDataT<float> td;
        td.x = &x_train;
        TrainDataT<float> vd;
        vd.x = &x_val;
        if (nt.spec.kind == TaskKind::regression) {
            dense = Tensor({splits.train.size(), 1});
            for (std::size_t i = 0; i < splits.train.size(); ++i)
                dense.at2(i, 0) = static_cast<float>(y_std[i]);
            td.dense = &dense;
            vdense = Tensor({splits.val.size(), 1});
            for (std::size_t i = 0; i < splits.val.size(); ++i)
                vdense.at2(i, 0) = static_cast<float>(vy_std[i]);
            vd.dense = &vdense;
            cfg.loss = LossKind::mse;
        } else {
            td.labels = &labels;
            vd.labels = &vlabels;
            cfg.loss = LossKind::softmax_ce;
        }
        try {
            std::optional<TrainDataT<float>> val;
            if (!splits.val.empty()) val = vd;
            hist = train_sgd(net, td, cfg, val);
        } catch (const std::runtime_error& e) {
            throw numeric_error(e.what());
        }
    }

    if (nt.spec.kind == TaskKind::regression) {
        LayerParamsT<float>& head = net.params.back();
        for (std::size_t j = 0; j < head.weight.size(); ++j)
            head.weight[j] = static_cast<float>(head.weight[j] * ystd);
        head.bias[0] = static_cast<float>(head.bias[0] * ystd + ymean);
    }

    save_model(net, a.out);
    const fs::path hist_path = a.history.empty() ? fs::path(a.out.string() + ".history.csv")
                                                 : a.history;
    hist.write_csv(hist_path);

    const json cfg_json = {{"data", a.data.generic_string()},
                           {"task", a.task},
                           {"arch", a.arch},
                           {"head_init", a.head_init},
                           {"refold_every", a.refold_every},
                           {"epochs", cfg.epochs},
                           {"batch_size", cfg.batch_size},
                           {"learning_rate", cfg.learning_rate},
                           {"momentum", cfg.momentum},
                           {"weight_decay", cfg.weight_decay},
                           {"seed", cfg.seed},
                           {"splits", split_json(a.split)}};
    write_manifest(a.out, "train", cfg_json, {a.data});
    write_manifest(hist_path, "train", cfg_json, {a.data});

    const TaskEval tev = evaluate_network(net, ds.images, nt.targets, nt.spec.kind,
                                          splits.train, cfg.threads);
    std::cout << "train: " << a.arch << " on " << a.task << ", train " << tev.metric_name
              << " = " << tev.value;
    if (!splits.val.empty()) {
        const TaskEval ev = evaluate_network(net, ds.images, nt.targets, nt.spec.kind,
                                             splits.val, cfg.threads);
        std::cout << ", val " << ev.metric_name << " = " << ev.value;
    }
    std::cout << " -> " << a.out.generic_string() << "\n";
    return 0;
}

// ---- probe ----

struct ProbeArgs {
    fs::path data, model, out, features_out;
    std::string task;
    int layer = -1;
    bool scan_layers = false;
    bool timing = false;
    int baseline_epochs = 50;
    double baseline_lr = 0.01;
    SplitArgs split;
    int threads = 0;
};

int cmd_probe(const ProbeArgs& a) {
    const SynthDataset ds = load_dataset_checked(a.data);
    const NetworkIR net = load_model_checked(a.model);
    const NamedTask nt = dataset_task(ds, a.task);
    const SplitIndices splits =
        make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);

    json out;
    std::size_t layer;
    if (a.scan_layers) {
        const LayerProbeTable table =
            rank_probe_layers(net, ds.images, nt.targets, nt.spec, splits, {}, a.threads);
        layer = a.layer >= 0 ? static_cast<std::size_t>(a.layer)
                             : table.rows[table.best].layer;
        out["layer_scan"] = table.to_json();
    } else {
        layer = a.layer >= 0 ? static_cast<std::size_t>(a.layer)
                             : select_truncation_layer(net);
    }
    if (layer >= net.layers.size())
        throw std::invalid_argument("probe: layer id out of range");

    const FeatureMatrix fm = extract_gap(net, ds.images, layer, a.threads);
    const ProbeResult pr = fit_probe(fm, nt.targets, nt.spec, splits);

    out["task"] = nt.spec.name;
    out["kind"] = task_kind_name(nt.spec.kind);
    out["layer"] = layer;
    out["net"] = net.name;
    out["metric"] = pr.metric_name;
    out["train_metric"] = pr.train_metric;
    out["val_metric"] = pr.val_metric;
    out["test_metric"] = pr.test_metric;
    out["degenerate"] = pr.degenerate;
    out["model"] = probe_to_json(pr.model);

    if (a.timing) {
        if (nt.spec.kind == TaskKind::multilabel)
            throw std::invalid_argument("probe: --timing does not support multilabel tasks");
        ProbeTargets tt = nt.targets;
        TrainConfig bcfg;
        bcfg.epochs = a.baseline_epochs;
        bcfg.learning_rate = a.baseline_lr;
        bcfg.seed = a.split.seed;
        bcfg.threads = a.threads;
        if (nt.spec.kind == TaskKind::regression) {
            // the head-only baseline trains on standardized targets; the
            // probe fit is scale invariant so the comparison is fair
            double m = 0.0, v = 0.0;
            for (auto i : splits.train) m += tt.values[i];
            m /= static_cast<double>(splits.train.size());
            for (auto i : splits.train) v += (tt.values[i] - m) * (tt.values[i] - m);
            const double s = std::max(std::sqrt(v / static_cast<double>(splits.train.size())),
                                      1e-12);
            for (auto& y : tt.values) y = (y - m) / s;
        }
        ProbeTiming t;
        try {
            t = probe_timing(net, ds.images, layer, tt, nt.spec, splits, bcfg);
        } catch (const std::runtime_error& e) {
            throw numeric_error(e.what());
        }
        out["timing"] = {{"feature_seconds", t.feature_seconds},
                         {"fit_seconds", t.fit_seconds},
                         {"probe_seconds", t.probe_seconds()},
                         {"baseline_seconds", t.baseline_seconds},
                         {"baseline_epochs", t.baseline_epochs},
                         {"baseline_matched", t.baseline_matched},
                         {"probe_metric", t.probe_metric},
                         {"baseline_metric", t.baseline_metric},
                         {"speedup", t.speedup()}};
    }

    std::ofstream of(a.out);
    if (!of) throw input_error("cannot open " + a.out.string());
    of << out.dump(2) << "\n";

    const json cfg = {{"data", a.data.generic_string()},
                      {"model", a.model.generic_string()},
                      {"task", a.task},
                      {"layer", layer},
                      {"scan_layers", a.scan_layers},
                      {"splits", split_json(a.split)}};
    write_manifest(a.out, "probe", cfg, {a.data, a.model});
    if (!a.features_out.empty()) {
        write_features_bin(fm, a.features_out);
        write_manifest(a.features_out, "probe", cfg, {a.data, a.model});
    }

    std::cout << "probe: " << nt.spec.name << " at layer " << layer << ", val "
              << pr.metric_name << " = " << pr.val_metric << "\n";
    return 0;
}

// ---- matrix ----

struct MatrixArgs {
    fs::path data, out, csv;
    std::vector<fs::path> models;
    std::vector<std::string> tasks;
    SplitArgs split;
    int threads = 0;
};

int cmd_matrix(const MatrixArgs& a) {
    const SynthDataset ds = load_dataset_checked(a.data);
    std::vector<NetworkIR> nets;
    for (const auto& m : a.models) nets.push_back(load_model_checked(m));

    std::vector<std::string> names = a.tasks.empty() ? dataset_task_names(ds) : a.tasks;
    std::vector<TransferTask> tasks;
    for (const auto& n : names) {
        const NamedTask nt = dataset_task(ds, n);
        tasks.push_back({nt.spec, nt.targets});
    }

    const SplitIndices splits =
        make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);
    const TransferMatrix tm = transfer_matrix(nets, ds.images, tasks, splits, a.threads);

    std::ofstream of(a.out);
    if (!of) throw input_error("cannot open " + a.out.string());
    of << tm.to_json().dump(2) << "\n";

    json cfg = {{"data", a.data.generic_string()},
                {"tasks", names},
                {"splits", split_json(a.split)}};
    std::vector<fs::path> inputs = {a.data};
    for (const auto& m : a.models) inputs.push_back(m);
    write_manifest(a.out, "matrix", cfg, inputs);
    if (!a.csv.empty()) {
        tm.write_csv(a.csv);
        write_manifest(a.csv, "matrix", cfg, inputs);
    }

    std::cout << "matrix: " << nets.size() << " nets x " << tasks.size() << " tasks -> "
              << a.out.generic_string() << "\n";
    return 0;
}

// ---- curve ----

struct CurveArgs {
    fs::path data, model, out, csv;
    std::string task;
    int layer = -1;
    std::size_t lambda_count = 100;
    double lambda_ratio = 1e4;
    SplitArgs split;
    int threads = 0;
};

int cmd_curve(const CurveArgs& a) {
    const SynthDataset ds = load_dataset_checked(a.data);
    const NetworkIR net = load_model_checked(a.model);
    const std::vector<double> y = continuous_target(ds, a.task);
    const SplitIndices splits =
        make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);
    if (splits.train.empty() || splits.val.empty())
        throw std::invalid_argument("curve: needs non-empty train and validation splits");

    json out;
    std::size_t layer;
    if (a.layer >= 0) {
        layer = static_cast<std::size_t>(a.layer);
        if (layer >= net.layers.size())
            throw std::invalid_argument("curve: layer id out of range");
    } else {
        // pick the layer whose pooled features probe best for this target
        ProbeTargets tg;
        tg.values = y;
        const TaskSpec spec{a.task, TaskKind::regression, 1};
        const LayerProbeTable table =
            rank_probe_layers(net, ds.images, tg, spec, splits, {}, a.threads);
        layer = table.rows[table.best].layer;
        out["layer_scan"] = table.to_json();
    }

    const FeatureMatrix fm = extract_gap(net, ds.images, layer, a.threads);
    CurveOptions opts;
    opts.lambda_count = a.lambda_count;
    opts.lambda_ratio = a.lambda_ratio;
    CharacteristicCurve curve;
    try {
        curve = characteristic_curve(fm.select_rows(splits.train), gather(y, splits.train),
                                     fm.select_rows(splits.val), gather(y, splits.val), opts);
    } catch (const std::runtime_error& e) {
        throw numeric_error(e.what());
    }

    out["task"] = a.task;
    out["layer"] = layer;
    out["net"] = net.name;
    out["lambda_count"] = a.lambda_count;
    out["lambda_ratio"] = a.lambda_ratio;
    out["curve"] = curve.to_json();

    std::ofstream of(a.out);
    if (!of) throw input_error("cannot open " + a.out.string());
    of << out.dump(2) << "\n";

    const json cfg = {{"data", a.data.generic_string()},
                      {"model", a.model.generic_string()},
                      {"task", a.task},
                      {"layer", layer},
                      {"lambda_count", a.lambda_count},
                      {"lambda_ratio", a.lambda_ratio},
                      {"splits", split_json(a.split)}};
    write_manifest(a.out, "curve", cfg, {a.data, a.model});
    if (!a.csv.empty()) {
        curve.write_csv(a.csv);
        write_manifest(a.csv, "curve", cfg, {a.data, a.model});
    }

    std::size_t max_nnz = 0;
    for (const auto& pt : curve.points) max_nnz = std::max(max_nnz, pt.nnz);
    std::cout << "curve: " << a.task << " at layer " << layer << ", " << curve.points.size()
              << " points, nnz up to " << max_nnz << "\n";
    return 0;
}

// ---- knee ----

struct KneeArgs {
    fs::path curve, out;
    double gamma = 0.01;
};

int cmd_knee(const KneeArgs& a) {
    require_exists(a.curve, "curve file");
    const json cj = as_input([&] {
        std::ifstream in(a.curve);
        if (!in) throw input_error("cannot open " + a.curve.string());
        json j;
        in >> j;
        return j;
    });
    const CharacteristicCurve curve =
        as_input([&] { return CharacteristicCurve::from_json(cj.at("curve")); });
    const std::string task = cj.at("task").get<std::string>();
    const std::size_t layer = cj.at("layer").get<std::size_t>();

    const KneePoint knee = kneepoint(curve, a.gamma);
    const PrunePlan plan = make_prune_plan(task, layer, curve, knee);

    json out = plan.to_json();
    out["knee"] = knee.to_json();
    json sweep = json::array();
    for (double g : {0.1, 0.01, 0.001}) {
        const KneePoint k = kneepoint(curve, g);
        sweep.push_back({{"gamma", g},
                         {"nnz", k.nnz},
                         {"lambda", k.lambda},
                         {"rmse_val", k.rmse_val}});
    }
    out["gamma_sweep"] = sweep;

    std::ofstream of(a.out);
    if (!of) throw input_error("cannot open " + a.out.string());
    of << out.dump(2) << "\n";
    write_manifest(a.out, "knee", {{"curve", a.curve.generic_string()}, {"gamma", a.gamma}},
                   {a.curve});

    std::cout << "knee: gamma " << a.gamma << " keeps " << knee.nnz << " of "
              << curve.n_features << " filters (rmse " << knee.rmse_val << ")\n";
    return 0;
}

// ---- prune ----

struct PruneArgs {
    fs::path model, plan, out, report, data;
    std::string refit_task;
    SplitArgs split;
    int threads = 0;
};

int cmd_prune(const PruneArgs& a) {
    const NetworkIR net = load_model_checked(a.model);
    require_exists(a.plan, "plan");
    PrunePlan plan = as_input([&] { return load_plan(a.plan); });

    if (!a.refit_task.empty()) {
        if (a.data.empty())
            throw std::invalid_argument("prune: --refit-task needs --data");
        if (plan.truncation_layer < 0)
            throw std::invalid_argument("prune: cannot refit an identity plan");
        const SynthDataset ds = load_dataset_checked(a.data);
        const NamedTask nt = dataset_task(ds, a.refit_task);
        const FeatureMatrix fm = extract_gap(
            net, ds.images, static_cast<std::size_t>(plan.truncation_layer), a.threads);
        const SplitIndices splits =
            make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);
        refit_plan_head(plan, fm, nt.targets, nt.spec, splits.train);
        plan.task = a.refit_task;
    }

    const NetworkIR pruned = build_pruned_network(net, plan);
    save_model(pruned, a.out);

    const json cfg = {{"model", a.model.generic_string()},
                      {"plan", a.plan.generic_string()},
                      {"refit_task", a.refit_task},
                      {"splits", split_json(a.split)}};
    std::vector<fs::path> inputs = {a.model, a.plan};
    if (!a.data.empty()) inputs.push_back(a.data);
    write_manifest(a.out, "prune", cfg, inputs);

    const CompressionReport rep = compression_report(net, pruned);
    if (!a.report.empty()) {
        json rj = rep.to_json();
        rj["attribute"] = plan.task;
        rj["arch"] = net.name;
        std::ofstream of(a.report);
        if (!of) throw input_error("cannot open " + a.report.string());
        of << rj.dump(2) << "\n";
        write_manifest(a.report, "prune", cfg, inputs);
    }

    std::cout << "prune: params " << rep.baseline.total_params << " -> "
              << rep.pruned.total_params << " (" << std::fixed << std::setprecision(1)
              << 100.0 * rep.param_reduction << "% fewer), flops " << rep.baseline.total_flops
              << " -> " << rep.pruned.total_flops << " (" << 100.0 * rep.flop_reduction
              << "% fewer)\n";
    std::cout.unsetf(std::ios::fixed);
    return 0;
}

// ---- finetune ----

struct FinetuneArgs {
    fs::path data, model, out, history;
    std::string task;
    TrainConfig cfg;
    SplitArgs split;
};

int cmd_finetune(const FinetuneArgs& a) {
    const SynthDataset ds = load_dataset_checked(a.data);
    NetworkIR net = load_model_checked(a.model);
    const std::string task = a.task.empty() ? net.primary_task : a.task;
    if (task.empty())
        throw std::invalid_argument("finetune: model names no task, pass --task");
    const NamedTask nt = dataset_task(ds, task);

    const std::size_t outputs = net.layers.back().kind == LayerKind::Linear
                                    ? static_cast<std::size_t>(net.layers.back().out_features)
                                    : 0;
    const bool regression = nt.spec.kind == TaskKind::regression;
    if (!regression && nt.spec.kind != TaskKind::multiclass)
        throw std::invalid_argument("finetune: supports regression and multiclass heads");
    if (regression && outputs != 1)
        throw std::invalid_argument("finetune: regression task needs a single-output head");

    const SplitIndices splits =
        make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);
    if (splits.train.empty()) throw std::invalid_argument("finetune: empty training split");
    const auto& eval_rows = splits.val.empty() ? splits.train : splits.val;
    const TaskEval before =
        evaluate_network(net, ds.images, nt.targets, nt.spec.kind, eval_rows, a.cfg.threads);

    const Tensor x_train = detail::gather_images(ds.images, splits.train);
    const Tensor x_val = detail::gather_images(ds.images, splits.val);
    TrainConfig cfg = a.cfg;
    TrainDataT<float> td;
    td.x = &x_train;
    TrainDataT<float> vd;
    vd.x = &x_val;

    Tensor dense, vdense;
    std::vector<int> labels, vlabels;
    double ymean = 0.0, ystd = 1.0;
    if (regression) {
        // move the head into standardized-target space for stable steps,
        // train there, then fold the scale back
        double var = 0.0;
        for (auto i : splits.train) ymean += nt.targets.values[i];
        ymean /= static_cast<double>(splits.train.size());
        for (auto i : splits.train) {
            const double d = nt.targets.values[i] - ymean;
            var += d * d;
        }
        ystd = std::sqrt(var / static_cast<double>(splits.train.size()));
        if (ystd <= 0) ystd = 1.0;

        LayerParamsT<float>& head = net.params.back();
        for (std::size_t j = 0; j < head.weight.size(); ++j)
            head.weight[j] = static_cast<float>(head.weight[j] / ystd);
        head.bias[0] = static_cast<float>((head.bias[0] - ymean) / ystd);

        dense = Tensor({splits.train.size(), 1});
        for (std::size_t i = 0; i < splits.train.size(); ++i)
            dense.at2(i, 0) =
                static_cast<float>((nt.targets.values[splits.train[i]] - ymean) / ystd);
        td.dense = &dense;
        vdense = Tensor({splits.val.size(), 1});
        for (std::size_t i = 0; i < splits.val.size(); ++i)
            vdense.at2(i, 0) =
                static_cast<float>((nt.targets.values[splits.val[i]] - ymean) / ystd);
        vd.dense = &vdense;
        cfg.loss = LossKind::mse;
    } else {
        for (auto i : splits.train) labels.push_back(nt.targets.labels[i]);
        for (auto i : splits.val) vlabels.push_back(nt.targets.labels[i]);
        td.labels = &labels;
        vd.labels = &vlabels;
        cfg.loss = LossKind::softmax_ce;
    }

    TrainHistory hist;
    try {
        std::optional<TrainDataT<float>> val;
        if (!splits.val.empty()) val = vd;
        hist = train_sgd(net, td, cfg, val);
    } catch (const std::runtime_error& e) {
        throw numeric_error(e.what());
    }

    if (regression) {
        LayerParamsT<float>& head = net.params.back();
        for (std::size_t j = 0; j < head.weight.size(); ++j)
            head.weight[j] = static_cast<float>(head.weight[j] * ystd);
        head.bias[0] = static_cast<float>(head.bias[0] * ystd + ymean);
    }

    save_model(net, a.out);
    const fs::path hist_path = a.history.empty() ? fs::path(a.out.string() + ".history.csv")
                                                 : a.history;
    hist.write_csv(hist_path);

    const json cfg_json = {{"data", a.data.generic_string()},
                           {"model", a.model.generic_string()},
                           {"task", task},
                           {"epochs", cfg.epochs},
                           {"batch_size", cfg.batch_size},
                           {"learning_rate", cfg.learning_rate},
                           {"momentum", cfg.momentum},
                           {"weight_decay", cfg.weight_decay},
                           {"seed", cfg.seed},
                           {"splits", split_json(a.split)}};
    write_manifest(a.out, "finetune", cfg_json, {a.data, a.model});
    write_manifest(hist_path, "finetune", cfg_json, {a.data, a.model});

    const TaskEval after =
        evaluate_network(net, ds.images, nt.targets, nt.spec.kind, eval_rows, cfg.threads);
    std::cout << "finetune: " << task << " " << before.metric_name << " " << before.value
              << " -> " << after.value << " -> " << a.out.generic_string() << "\n";
    return 0;
}

// ---- report ----

struct ReportArgs {
    fs::path data, baseline, out, csv;
    std::vector<fs::path> models;
    std::string task;
    int repeats = 5;
    SplitArgs split;
    int threads = 0;
};

int cmd_report(const ReportArgs& a) {
    const SynthDataset ds = load_dataset_checked(a.data);
    const NetworkIR base = load_model_checked(a.baseline);
    const CountReport base_counts = count_network(base);

    const SplitIndices splits =
        make_splits(ds.size(), a.split.train_frac, a.split.val_frac, a.split.seed);
    const auto& eval_rows = !splits.test.empty() ? splits.test
                            : !splits.val.empty() ? splits.val
                                                  : splits.train;

    const Tensor one = detail::gather_images(ds.images, {0});
    const double base_time = median_inference_seconds(base, one, a.repeats, a.threads);

    json rows = json::array();
    struct Line {
        std::string attribute, arch, metric_name;
        double metric, flop_red, param_red, seconds;
        std::uint64_t flops, params;
    };
    std::vector<Line> lines;

    for (const auto& mp : a.models) {
        const NetworkIR net = load_model_checked(mp);
        const std::string task = a.task.empty() ? net.primary_task : a.task;
        if (task.empty())
            throw std::invalid_argument("report: model " + mp.string() +
                                        " names no task, pass --task");
        const NamedTask nt = dataset_task(ds, task);
        const TaskEval ev =
            evaluate_network(net, ds.images, nt.targets, nt.spec.kind, eval_rows, a.threads);

        CountReport counts = count_network(net);
        set_baseline(counts, base_counts);
        const double seconds = median_inference_seconds(net, one, a.repeats, a.threads);

        rows.push_back({{"attribute", task},
                        {"arch", net.name},
                        {"metric", ev.metric_name},
                        {"value", ev.value},
                        {"flops", counts.total_flops},
                        {"flop_reduction", counts.flop_reduction},
                        {"params", counts.total_params},
                        {"param_reduction", counts.param_reduction},
                        {"inference_seconds", seconds}});
        lines.push_back({task, net.name, ev.metric_name, ev.value, counts.flop_reduction,
                         counts.param_reduction, seconds, counts.total_flops,
                         counts.total_params});
    }

    const json out = {{"baseline",
                       {{"arch", base.name},
                        {"params", base_counts.total_params},
                        {"flops", base_counts.total_flops},
                        {"inference_seconds", base_time}}},
                      {"rows", rows},
                      {"eval_rows", eval_rows.size()}};
    std::ofstream of(a.out);
    if (!of) throw input_error("cannot open " + a.out.string());
    of << out.dump(2) << "\n";

    json cfg = {{"data", a.data.generic_string()},
                {"baseline", a.baseline.generic_string()},
                {"task", a.task},
                {"repeats", a.repeats},
                {"splits", split_json(a.split)}};
    std::vector<fs::path> inputs = {a.data, a.baseline};
    for (const auto& m : a.models) inputs.push_back(m);
    write_manifest(a.out, "report", cfg, inputs);

    if (!a.csv.empty()) {
        std::ofstream cf(a.csv);
        if (!cf) throw input_error("cannot open " + a.csv.string());
        cf.precision(17);
        cf << "attribute,arch,metric,value,flops,flop_reduction,params,param_reduction,"
              "inference_seconds\n";
        for (const auto& l : lines)
            cf << l.attribute << "," << l.arch << "," << l.metric_name << "," << l.metric
               << "," << l.flops << "," << l.flop_red << "," << l.params << ","
               << l.param_red << "," << l.seconds << "\n";
        write_manifest(a.csv, "report", cfg, inputs);
    }

    std::cout << "baseline " << base.name << ": params " << base_counts.total_params
              << ", flops " << base_counts.total_flops << ", " << std::scientific
              << std::setprecision(2) << base_time << "s/image\n";
    std::cout.unsetf(std::ios::scientific);
    for (const auto& l : lines)
        std::cout << l.attribute << " | " << l.arch << " | " << l.metric_name << " "
                  << std::setprecision(4) << l.metric << " | flops " << l.flops << " (-"
                  << std::setprecision(1) << std::fixed << 100 * l.flop_red
                  << "%) | params " << l.params << " (-" << 100 * l.param_red << "%)"
                  << std::defaultfloat << std::setprecision(6) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"probe a frozen conv net's pooled features and prune it per task"};
    app.set_version_flag("--version", std::string("prunekit ") + kVersion);
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic attribute dataset");
    synth->add_option("--out", sa.out, "output dataset directory")->required();
    synth->add_option("--count", sa.count, "number of images")->capture_default_str();
    synth->add_option("--size", sa.size, "square image size")->capture_default_str();
    synth->add_option("--seed", sa.seed, "generator seed")->capture_default_str();
    synth->add_option("--identities", sa.identities, "distinct identities")
        ->capture_default_str();
    synth->add_flag("--pose-grid", sa.pose_grid,
                    "render every identity at a fixed pan-angle grid");
    synth->add_option("--identity-mix", sa.identity_mix,
                      "share of each attribute latent tied to the identity")
        ->capture_default_str();
    synth->add_option("--correlate", sa.correlate,
                      "couple two attributes, attr:attr:rho (repeatable)");
    synth->add_option("--plant-model", sa.plant_model,
                      "also plant a sparse linear target on this net's features");
    synth->add_option("--plant-layer", sa.plant_layer,
                      "layer to plant on (-1 = deepest filter layer)")
        ->capture_default_str();
    synth->add_option("--plant-support", sa.plant_support, "planted support size")
        ->capture_default_str();
    synth->add_option("--plant-noise", sa.plant_noise, "relative noise on the planted target")
        ->capture_default_str();
    synth->add_option("--plant-name", sa.plant_name, "label column for the planted target")
        ->capture_default_str();
    add_threads(synth, sa.threads);
    synth->callback([&] { cmd_synth(sa); });

    TrainArgs ta;
    ta.cfg.batch_size = 0;  // full-batch gradients by default
    auto* train = app.add_subcommand("train", "train a primary network on a dataset task");
    train->add_option("--data", ta.data, "dataset directory")->required();
    train->add_option("--out", ta.out, "output model file")->required();
    train->add_option("--task", ta.task, "primary task name")->capture_default_str();
    train->add_option("--arch", ta.arch, "convnet-small or maxpair-small")
        ->capture_default_str();
    train->add_option("--epochs", ta.cfg.epochs)->capture_default_str();
    train->add_option("--batch", ta.cfg.batch_size, "batch size, 0 = full batch")
        ->capture_default_str();
    train->add_option("--lr", ta.cfg.learning_rate)->capture_default_str();
    train->add_option("--momentum", ta.cfg.momentum)->capture_default_str();
    train->add_option("--weight-decay", ta.cfg.weight_decay)->capture_default_str();
    train->add_option("--seed", ta.cfg.seed)->capture_default_str();
    train->add_option("--history", ta.history, "loss history CSV (default <out>.history.csv)");
    train->add_option("--head-init", ta.head_init, "probe (closed-form warm start) or random")
        ->check(CLI::IsMember({"probe", "random"}))
        ->capture_default_str();
    train->add_option("--refold-every", ta.refold_every,
                      "epochs between closed-form head refits, 0 = once at each end")
        ->capture_default_str();
    train->add_option("--head-ridge", ta.head_ridge,
                      "ridge strength for the closed-form head refit")
        ->capture_default_str();
    train->add_option("--stage-epochs", ta.stage_epochs,
                      "epochs per greedy bottom-up block stage, 0 = joint only")
        ->capture_default_str();
    add_split_args(train, ta.split);
    add_threads(train, ta.cfg.threads);
    train->callback([&] { cmd_train(ta); });

    ProbeArgs pa;
    auto* probe = app.add_subcommand("probe", "fit a pooled-feature linear probe for a task");
    probe->add_option("--data", pa.data, "dataset directory")->required();
    probe->add_option("--model", pa.model, "frozen model file")->required();
    probe->add_option("--task", pa.task, "task to probe")->required();
    probe->add_option("--out", pa.out, "probe JSON output")->required();
    probe->add_option("--layer", pa.layer, "feature layer (-1 = deepest filter layer)")
        ->capture_default_str();
    probe->add_flag("--scan-layers", pa.scan_layers,
                    "probe every filter layer and keep the best");
    probe->add_option("--features-out", pa.features_out, "also dump the feature matrix");
    probe->add_flag("--timing", pa.timing,
                    "time the probe against head-only finetuning to matched accuracy");
    probe->add_option("--baseline-epochs", pa.baseline_epochs, "head-only epoch cap")
        ->capture_default_str();
    probe->add_option("--baseline-lr", pa.baseline_lr, "head-only learning rate")
        ->capture_default_str();
    add_split_args(probe, pa.split);
    add_threads(probe, pa.threads);
    probe->callback([&] { cmd_probe(pa); });

    MatrixArgs ma;
    auto* matrix = app.add_subcommand("matrix", "probe every model against every task");
    matrix->add_option("--data", ma.data, "dataset directory")->required();
    matrix->add_option("--model", ma.models, "model files (repeatable)")->required();
    matrix->add_option("--task", ma.tasks, "task names (default: all)");
    matrix->add_option("--out", ma.out, "matrix JSON output")->required();
    matrix->add_option("--csv", ma.csv, "also write a CSV table");
    add_split_args(matrix, ma.split);
    add_threads(matrix, ma.threads);
    matrix->callback([&] { cmd_matrix(ma); });

    CurveArgs ca;
    auto* curve = app.add_subcommand("curve",
                                     "trace held-out error versus sparse support size");
    curve->add_option("--data", ca.data, "dataset directory")->required();
    curve->add_option("--model", ca.model, "frozen model file")->required();
    curve->add_option("--task", ca.task, "task with a continuous target")->required();
    curve->add_option("--out", ca.out, "curve JSON output")->required();
    curve->add_option("--csv", ca.csv, "also write the curve table as CSV");
    curve->add_option("--layer", ca.layer, "feature layer (-1 = probe-ranked best)")
        ->capture_default_str();
    curve->add_option("--lambda-count", ca.lambda_count, "penalty schedule length")
        ->capture_default_str();
    curve->add_option("--lambda-ratio", ca.lambda_ratio, "max/min penalty ratio")
        ->capture_default_str();
    add_split_args(curve, ca.split, 0.75, 0.25);
    add_threads(curve, ca.threads);
    curve->callback([&] { cmd_curve(ca); });

    KneeArgs ka;
    auto* knee = app.add_subcommand("knee", "pick the knee point and emit a prune plan");
    knee->add_option("--curve", ka.curve, "curve JSON from the curve command")->required();
    knee->add_option("--out", ka.out, "prune plan JSON output")->required();
    knee->add_option("--gamma", ka.gamma, "error band as a fraction of the curve range")
        ->capture_default_str();
    knee->callback([&] { cmd_knee(ka); });

    PruneArgs ra;
    auto* prune = app.add_subcommand("prune", "apply a prune plan to a model");
    prune->add_option("--model", ra.model, "model file")->required();
    prune->add_option("--plan", ra.plan, "plan JSON from the knee command")->required();
    prune->add_option("--out", ra.out, "pruned model output")->required();
    prune->add_option("--report", ra.report, "write a compression report JSON");
    prune->add_option("--refit-task", ra.refit_task,
                      "refit a classification head for this task on the kept filters");
    prune->add_option("--data", ra.data, "dataset directory (needed with --refit-task)");
    add_split_args(prune, ra.split);
    add_threads(prune, ra.threads);
    prune->callback([&] { cmd_prune(ra); });

    FinetuneArgs fa;
    auto* finetune = app.add_subcommand("finetune", "train a pruned model end to end");
    finetune->add_option("--data", fa.data, "dataset directory")->required();
    finetune->add_option("--model", fa.model, "pruned model file")->required();
    finetune->add_option("--out", fa.out, "finetuned model output")->required();
    finetune->add_option("--task", fa.task, "task (default: the model's own)");
    fa.cfg.epochs = 20;
    fa.cfg.learning_rate = 1e-3;
    fa.cfg.weight_decay = 0.0;
    finetune->add_option("--epochs", fa.cfg.epochs)->capture_default_str();
    finetune->add_option("--batch", fa.cfg.batch_size)->capture_default_str();
    finetune->add_option("--lr", fa.cfg.learning_rate)->capture_default_str();
    finetune->add_option("--momentum", fa.cfg.momentum)->capture_default_str();
    finetune->add_option("--weight-decay", fa.cfg.weight_decay)->capture_default_str();
    finetune->add_option("--seed", fa.cfg.seed)->capture_default_str();
    finetune->add_option("--history", fa.history,
                         "loss history CSV (default <out>.history.csv)");
    add_split_args(finetune, fa.split);
    add_threads(finetune, fa.cfg.threads);
    finetune->callback([&] { cmd_finetune(fa); });

    ReportArgs ga;
    auto* report = app.add_subcommand("report", "compare pruned models against a baseline");
    report->add_option("--data", ga.data, "dataset directory")->required();
    report->add_option("--baseline", ga.baseline, "unpruned reference model")->required();
    report->add_option("--model", ga.models, "models to report on (repeatable)")->required();
    report->add_option("--task", ga.task, "evaluation task (default: each model's own)");
    report->add_option("--out", ga.out, "report JSON output")->required();
    report->add_option("--csv", ga.csv, "also write a CSV table");
    report->add_option("--repeats", ga.repeats, "inference timing repeats (median)")
        ->capture_default_str();
    add_split_args(report, ga.split);
    add_threads(report, ga.threads);
    report->callback([&] { cmd_report(ga); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const input_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const ModelIoError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        const std::string m = e.what();
        const bool io = m.find("cannot open") != std::string::npos ||
                        m.find("truncated") != std::string::npos ||
                        m.find("labels.csv") != std::string::npos;
        std::cerr << (io ? "input error: " : "numerical failure: ") << m << "\n";
        return io ? 3 : 4;
    }
    return 0;
}
