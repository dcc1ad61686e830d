#pragma once

// Pooled-activation feature extraction. A feature matrix holds one row per
// image and one column per filter of some network layer, each value the
// spatial average of that filter's activation map. Stored in double so the
// downstream solvers are independent of the engine scalar.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prunekit/engine.hpp"
#include "prunekit/netir.hpp"

namespace prunekit {

struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major rows x cols
    std::vector<std::string> names;
    int source_layer = -1;

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
        return out;
    }

    FeatureMatrix select_rows(const std::vector<std::size_t>& idx) const {
        FeatureMatrix out;
        out.rows = idx.size();
        out.cols = cols;
        out.names = names;
        out.source_layer = source_layer;
        out.data.resize(out.rows * cols);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = at(idx[r], c);
        return out;
    }

    FeatureMatrix select_cols(const std::vector<std::size_t>& idx) const {
        FeatureMatrix out;
        out.rows = rows;
        out.cols = idx.size();
        out.source_layer = source_layer;
        out.data.resize(rows * idx.size());
        for (std::size_t c = 0; c < idx.size(); ++c)
            out.names.push_back(idx[c] < names.size() ? names[idx[c]] : "");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < idx.size(); ++c) out.at(r, c) = at(r, idx[c]);
        return out;
    }

    bool operator==(const FeatureMatrix&) const = default;
};

// Runs the network up to `layer_id` (inclusive) and pools that layer's output
// over its spatial extent. A 2-d captured output is taken as-is.
template <typename T>
FeatureMatrix extract_gap(const NetworkIRT<T>& net, const TensorT<T>& images,
                          std::size_t layer_id, int threads = 0) {
    if (layer_id >= net.layers.size())
        throw std::invalid_argument("extract_gap: layer id out of range");
    auto res = forward(net, images, {layer_id}, threads);
    const TensorT<T>& act = res.captured.at(layer_id);

    FeatureMatrix fm;
    fm.source_layer = static_cast<int>(layer_id);
    if (act.rank() == 4) {
        const std::size_t n = act.dim(0), c = act.dim(1), h = act.dim(2), w = act.dim(3);
        fm.rows = n;
        fm.cols = c;
        fm.data.resize(n * c);
        const double inv = 1.0 / static_cast<double>(h * w);
        for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t ci = 0; ci < c; ++ci) {
                double acc = 0.0;
                for (std::size_t yy = 0; yy < h; ++yy)
                    for (std::size_t xx = 0; xx < w; ++xx)
                        acc += static_cast<double>(act.at4(ni, ci, yy, xx));
                fm.at(ni, ci) = acc * inv;
            }
    } else if (act.rank() == 2) {
        fm.rows = act.dim(0);
        fm.cols = act.dim(1);
        fm.data.resize(fm.rows * fm.cols);
        for (std::size_t r = 0; r < fm.rows; ++r)
            for (std::size_t c = 0; c < fm.cols; ++c)
                fm.at(r, c) = static_cast<double>(act.at2(r, c));
    } else {
        throw std::invalid_argument("extract_gap: captured activation has unsupported rank");
    }
    for (std::size_t c = 0; c < fm.cols; ++c) fm.names.push_back("f" + std::to_string(c));
    return fm;
}

enum class NormKind { l1, l2 };

// One norm per output channel of a parameterized layer. An MFM channel is fed
// by two internal filters; its norm is the larger of the pair, mirroring the
// winner-take-all forward.
template <typename T>
std::vector<double> filter_norms(const NetworkIRT<T>& net, std::size_t layer_id,
                                 NormKind kind = NormKind::l2) {
    if (layer_id >= net.layers.size())
        throw std::invalid_argument("filter_norms: layer id out of range");
    const LayerSpec& s = net.layers[layer_id];
    if (!s.has_params()) throw std::invalid_argument("filter_norms: layer has no weights");
    const TensorT<T>& w = net.params[layer_id].weight;
    const std::size_t rows = w.dim(0);
    const std::size_t per = w.size() / rows;

    auto row_norm = [&](std::size_t r) {
        double acc = 0.0;
        const T* base = w.data() + r * per;
        for (std::size_t i = 0; i < per; ++i) {
            const double v = static_cast<double>(base[i]);
            acc += (kind == NormKind::l1) ? std::abs(v) : v * v;
        }
        return (kind == NormKind::l1) ? acc : std::sqrt(acc);
    };

    if (s.kind == LayerKind::MFM) {
        const std::size_t half = static_cast<std::size_t>(s.out_channels);
        std::vector<double> out(half);
        for (std::size_t c = 0; c < half; ++c)
            out[c] = std::max(row_norm(c), row_norm(c + half));
        return out;
    }
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = row_norm(r);
    return out;
}

// Pearson correlation of each feature column with y. Zero-variance columns
// (or a constant y) yield 0 rather than NaN.
inline std::vector<double> correlate_attribute(const FeatureMatrix& fm,
                                               const std::vector<double>& y) {
    if (y.size() != fm.rows)
        throw std::invalid_argument("correlate_attribute: length mismatch");
    const std::size_t n = fm.rows;
    std::vector<double> out(fm.cols, 0.0);
    if (n < 2) return out;

    double ym = 0.0;
    for (double v : y) ym += v;
    ym /= static_cast<double>(n);
    double yv = 0.0;
    for (double v : y) yv += (v - ym) * (v - ym);
    if (yv <= 0.0) return out;

    for (std::size_t c = 0; c < fm.cols; ++c) {
        double xm = 0.0;
        for (std::size_t r = 0; r < n; ++r) xm += fm.at(r, c);
        xm /= static_cast<double>(n);
        double xv = 0.0, xy = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double dx = fm.at(r, c) - xm;
            xv += dx * dx;
            xy += dx * (y[r] - ym);
        }
        out[c] = (xv > 0.0) ? xy / std::sqrt(xv * yv) : 0.0;
    }
    return out;
}

// Per-column affine map fit on one split and applied to any other.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stdev;  // zero-variance columns get stdev 1

    static Standardizer fit(const FeatureMatrix& fm) {
        Standardizer s;
        s.mean.assign(fm.cols, 0.0);
        s.stdev.assign(fm.cols, 1.0);
        if (fm.rows == 0) return s;
        for (std::size_t c = 0; c < fm.cols; ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < fm.rows; ++r) m += fm.at(r, c);
            m /= static_cast<double>(fm.rows);
            double v = 0.0;
            for (std::size_t r = 0; r < fm.rows; ++r) {
                const double d = fm.at(r, c) - m;
                v += d * d;
            }
            v /= static_cast<double>(fm.rows);
            s.mean[c] = m;
            s.stdev[c] = v > 0.0 ? std::sqrt(v) : 1.0;
        }
        return s;
    }

    FeatureMatrix apply(const FeatureMatrix& fm) const {
        if (fm.cols != mean.size())
            throw std::invalid_argument("Standardizer: column count mismatch");
        FeatureMatrix out = fm;
        for (std::size_t r = 0; r < fm.rows; ++r)
            for (std::size_t c = 0; c < fm.cols; ++c)
                out.at(r, c) = (fm.at(r, c) - mean[c]) / stdev[c];
        return out;
    }
};

inline void write_features_csv(const FeatureMatrix& fm, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    for (std::size_t c = 0; c < fm.cols; ++c) {
        if (c) out << ",";
        out << (c < fm.names.size() ? fm.names[c] : "f" + std::to_string(c));
    }
    out << "\n";
    out.precision(17);
    for (std::size_t r = 0; r < fm.rows; ++r) {
        for (std::size_t c = 0; c < fm.cols; ++c) {
            if (c) out << ",";
            out << fm.at(r, c);
        }
        out << "\n";
    }
}

// Binary form round-trips exactly: text header, then float64 little-endian.
inline void write_features_bin(const FeatureMatrix& fm, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "PKFM1 v1\n";
    out << "rows " << fm.rows << " cols " << fm.cols << " layer " << fm.source_layer << "\n";
    out << "names";
    for (const auto& n : fm.names) out << " " << n;
    out << "\nblob\n";
    out.write(reinterpret_cast<const char*>(fm.data.data()),
              static_cast<std::streamsize>(fm.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline FeatureMatrix load_features_bin(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "PKFM1 v1")
        throw std::runtime_error("bad feature file magic in " + path.string());
    FeatureMatrix fm;
    {
        if (!std::getline(in, line)) throw std::runtime_error("truncated feature header");
        std::istringstream is(line);
        std::string k1, k2, k3;
        is >> k1 >> fm.rows >> k2 >> fm.cols >> k3 >> fm.source_layer;
        if (k1 != "rows" || k2 != "cols" || k3 != "layer" || !is)
            throw std::runtime_error("bad feature dims line");
    }
    {
        if (!std::getline(in, line)) throw std::runtime_error("truncated feature header");
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key != "names") throw std::runtime_error("bad feature names line");
        std::string n;
        while (is >> n) fm.names.push_back(n);
    }
    if (!std::getline(in, line) || line != "blob")
        throw std::runtime_error("missing feature blob separator");
    fm.data.resize(fm.rows * fm.cols);
    in.read(reinterpret_cast<char*>(fm.data.data()),
            static_cast<std::streamsize>(fm.data.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != fm.data.size() * sizeof(double))
        throw std::runtime_error("feature blob truncated in " + path.string());
    return fm;
}

}  // namespace prunekit
