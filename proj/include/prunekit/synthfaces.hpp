#pragma once

// Procedural face-like image generator with ground-truth attributes, plus the
// small reference architectures trained on it. Faces are drawn analytically
// (ellipse head, eye blobs, parabolic mouth, per-identity texture grating) so
// every attribute has a known, learnable imprint on the pixels. Attribute
// draws go through a Gaussian copula, which lets tests dial in exact pairwise
// correlations between attributes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunekit/features.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/netir.hpp"
#include "prunekit/probe.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

struct AttrCorrelation {
    std::string a;
    std::string b;
    double rho = 0.0;
};

struct SynthSpec {
    std::size_t count = 256;
    int image_size = 32;
    std::uint64_t seed = 7;
    int identities = 8;
    bool pose_grid = false;  // identities x 13 fixed pan angles instead of random draws
    double identity_mix = 0.6;  // share of each attribute latent tied to the identity
    std::vector<AttrCorrelation> correlations;

    nlohmann::json to_json() const {
        nlohmann::json corr = nlohmann::json::array();
        for (const auto& c : correlations)
            corr.push_back({{"a", c.a}, {"b", c.b}, {"rho", c.rho}});
        return {{"count", count},           {"image_size", image_size},
                {"seed", seed},             {"identities", identities},
                {"pose_grid", pose_grid},   {"identity_mix", identity_mix},
                {"correlations", corr}};
    }

    static SynthSpec from_json(const nlohmann::json& j) {
        SynthSpec s;
        s.count = j.at("count").get<std::size_t>();
        s.image_size = j.at("image_size").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.identities = j.at("identities").get<int>();
        s.pose_grid = j.at("pose_grid").get<bool>();
        s.identity_mix = j.value("identity_mix", 0.6);
        for (const auto& c : j.at("correlations"))
            s.correlations.push_back({c.at("a").get<std::string>(), c.at("b").get<std::string>(),
                                      c.at("rho").get<double>()});
        return s;
    }
};

// attribute ranges and bin counts
inline constexpr double kAgeLo = 18.0, kAgeHi = 70.0;
inline constexpr int kAgeBins = 10;
inline constexpr double kPanLo = -60.0, kPanHi = 60.0;
inline constexpr int kPanBins = 9;
inline constexpr double kSmileLo = 0.0, kSmileHi = 1.0;
inline constexpr int kSmileBins = 7;
inline constexpr int kPoseGridAngles = 13;

// closed-right binning: v on an edge goes to the upper bin, out-of-range
// values clamp to the end bins
inline int bin_value(double v, double lo, double hi, int bins) {
    const double width = (hi - lo) / bins;
    int b = static_cast<int>(std::floor((v - lo) / width));
    return std::clamp(b, 0, bins - 1);
}

struct SynthDataset {
    SynthSpec spec;
    Tensor images;  // [N, 1, S, S], values in [0, 1]
    std::vector<int> identity, gender, hat;
    std::vector<double> age, pan, smile;
    std::map<std::string, std::vector<double>> extra;  // planted targets etc.

    std::size_t size() const { return identity.size(); }

    std::vector<int> age_bins() const {
        std::vector<int> out(age.size());
        for (std::size_t i = 0; i < age.size(); ++i)
            out[i] = bin_value(age[i], kAgeLo, kAgeHi, kAgeBins);
        return out;
    }
    std::vector<int> pan_bins() const {
        std::vector<int> out(pan.size());
        for (std::size_t i = 0; i < pan.size(); ++i)
            out[i] = bin_value(pan[i], kPanLo, kPanHi, kPanBins);
        return out;
    }
    std::vector<int> smile_bins() const {
        std::vector<int> out(smile.size());
        for (std::size_t i = 0; i < smile.size(); ++i)
            out[i] = bin_value(smile[i], kSmileLo, kSmileHi, kSmileBins);
        return out;
    }
};

namespace detail {

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// latent order behind the copula
inline const std::vector<std::string>& latent_names() {
    static const std::vector<std::string> names = {"age", "gender", "pan", "smile", "hat"};
    return names;
}

inline std::size_t latent_index(const std::string& name) {
    const auto& names = latent_names();
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    throw std::invalid_argument("unknown attribute '" + name + "' in correlation spec");
}

inline SquareMat copula_chol(const SynthSpec& spec) {
    const std::size_t k = latent_names().size();
    SquareMat sigma(k);
    for (std::size_t i = 0; i < k; ++i) sigma.at(i, i) = 1.0;
    for (const auto& c : spec.correlations) {
        const std::size_t i = latent_index(c.a), j = latent_index(c.b);
        if (i == j) throw std::invalid_argument("correlation pairs an attribute with itself");
        if (std::abs(c.rho) >= 1.0)
            throw std::invalid_argument("correlation magnitude must be below 1");
        sigma.at(i, j) = c.rho;
        sigma.at(j, i) = c.rho;
    }
    cholesky(sigma);  // throws if the requested matrix is not positive definite
    return sigma;
}

struct FaceAttrs {
    int identity = 0;
    double age = 40.0;
    int gender = 0;
    double pan = 0.0;
    double smile = 0.5;
    int hat = 0;
};

// stateless per-identity trait source, so the same id always renders the
// same face geometry in every dataset
inline double id_trait(int identity, int slot) {
    std::uint64_t z = 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(identity) + 1) +
                      0xbf58476d1ce4e5b9ull * (static_cast<std::uint64_t>(slot) + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;  // [0, 1)
}

inline void render_face(float* img, int s, const FaceAttrs& a, Rng& noise) {
    const double S = s;

    // per-image nuisance: framing, lighting, and background vary freely, so
    // images share structure only through the face itself
    const double jx = (noise.uniform() - 0.5) * 0.12 * S;
    const double jy = (noise.uniform() - 0.5) * 0.12 * S;
    const double sc = 0.92 + 0.16 * noise.uniform();
    const double gain = 0.85 + 0.30 * noise.uniform();
    const double lift = (noise.uniform() - 0.5) * 0.12;
    const double bg0 = 0.12 + 0.14 * noise.uniform();
    const double bg_slope = 0.07 * noise.uniform();
    const double phase_j = (noise.uniform() - 0.5) * 1.2;

    const double cx0 = S / 2.0 + jx, cy = S / 2.0 + 1.0 + jy;
    const double pan_n = a.pan / 60.0;           // [-1, 1]
    const double cx = cx0 + pan_n * S * 0.14;    // head shifts with pan
    const double shear = pan_n * 0.55;           // features slide across the face
    const double rx = sc * S * (0.26 + (a.gender ? 0.05 : -0.02));  // jaw width
    const double ry = sc * S * (0.30 + 0.07 * id_trait(a.identity, 0));
    const double age_n = (a.age - kAgeLo) / (kAgeHi - kAgeLo);  // [0, 1]
    const double contrast = 1.0 - 0.45 * age_n;

    // identity-specific geometry and texture
    const double tone = 0.56 + 0.12 * id_trait(a.identity, 1);
    const double eye_sep = 0.34 + 0.20 * id_trait(a.identity, 2);
    const double eye_sig = 0.8 + 1.0 * id_trait(a.identity, 3);
    const double eye_h = 0.22 + 0.16 * id_trait(a.identity, 4);
    const double mouth_w = 0.38 + 0.26 * id_trait(a.identity, 5);
    const double mouth_a = 0.22 + 0.16 * id_trait(a.identity, 6);
    const double brow_d = 0.10 + 0.22 * id_trait(a.identity, 7);
    const double fx = 0.5 + 1.9 * id_trait(a.identity, 8);
    const double fy = 0.3 + 1.7 * id_trait(a.identity, 9);
    const double phase = 6.28318530717958648 * id_trait(a.identity, 10) + phase_j;

    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double v = bg0 + bg_slope * (y / S);  // background gradient
            const double dx = (x - cx) / rx;
            const double dy = (y - cy) / ry;
            const bool inside = dx * dx + dy * dy <= 1.0;
            if (inside) {
                v = tone;
                v += 0.13 * std::sin(fx * x + fy * y + phase);  // identity texture

                // eyes: two dark gaussian blobs, sheared by pan
                const double ey = cy - ry * eye_h;
                const double eye_dx = rx * eye_sep;
                for (int side = -1; side <= 1; side += 2) {
                    const double ex = cx + side * eye_dx + shear * (ey - cy);
                    const double d2 = (x - ex) * (x - ex) + (y - ey) * (y - ey);
                    v -= 0.38 * std::exp(-d2 / (2.0 * eye_sig));
                }

                // brow: soft dark line above the eyes
                const double by = ey - 2.2;
                if (std::abs(x - cx) < rx * 0.7) {
                    const double d = y - by;
                    v -= brow_d * std::exp(-d * d / (2.0 * 0.5));
                }

                // mouth: parabola whose curvature tracks smile
                const double my = cy + ry * 0.42;
                const double mx = cx + shear * (my - cy);
                const double half_w = rx * mouth_w;
                if (std::abs(x - mx) <= half_w) {
                    const double t = (x - mx) / half_w;  // [-1, 1]
                    const double curve = (a.smile - 0.5) * 3.2;
                    const double yy = my + curve * (t * t - 0.5);
                    const double d = y - yy;
                    v -= mouth_a * std::exp(-d * d / (2.0 * 0.55));
                }
            }
            // hat: dark band sitting on top of the head
            const double head_top = cy - ry;
            if (a.hat && y > head_top - 3.5 && y < head_top + 0.5 &&
                std::abs(x - cx) < rx * 1.15)
                v = 0.10;

            v = 0.5 + (v - 0.5) * contrast;  // age flattens contrast
            v = v * gain + lift;             // scene illumination
            v += noise.normal() * 0.015;
            img[y * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
}

}  // namespace detail

inline SynthDataset generate(const SynthSpec& spec) {
    if (spec.image_size < 16) throw std::invalid_argument("generate: image size too small");
    if (spec.identities < 1) throw std::invalid_argument("generate: need at least one identity");

    SynthDataset ds;
    ds.spec = spec;

    std::vector<detail::FaceAttrs> attrs;
    Rng rng(spec.seed);
    if (spec.pose_grid) {
        // full identities x angles sweep; other attributes pinned per identity
        for (int id = 0; id < spec.identities; ++id) {
            const double age = kAgeLo + (kAgeHi - kAgeLo) * rng.uniform();
            const double smile = rng.uniform();
            const int gender = id % 2;
            for (int a = 0; a < kPoseGridAngles; ++a) {
                detail::FaceAttrs fa;
                fa.identity = id;
                fa.age = age;
                fa.gender = gender;
                fa.smile = smile;
                fa.hat = 0;
                fa.pan = kPanLo + (kPanHi - kPanLo) * a / double(kPoseGridAngles - 1);
                attrs.push_back(fa);
            }
        }
        ds.spec.count = attrs.size();
    } else {
        const SquareMat chol = detail::copula_chol(spec);
        const std::size_t k = detail::latent_names().size();
        // Random-effects latents: each attribute draws from an identity
        // effect and an image effect, both shaped by the same copula, so
        // attributes are identity-linked (share identity_mix^2) while every
        // pairwise attribute correlation is preserved. Identity effects are
        // orthonormalized across identities (exact sample moments); raw
        // draws would leave O(1/sqrt(identities)) spurious correlations
        // that no amount of images averages away.
        const std::size_t m = static_cast<std::size_t>(spec.identities);
        const double mix = m > 1 ? std::clamp(spec.identity_mix, 0.0, 1.0) : 0.0;
        const double rest = std::sqrt(1.0 - mix * mix);
        std::vector<std::vector<double>> eff(k, std::vector<double>(m));
        for (auto& col : eff)
            for (auto& v : col) v = rng.normal();
        for (std::size_t r = 0; r < k && m > 1; ++r) {
            auto& col = eff[r];
            double mean = 0.0;
            for (double v : col) mean += v;
            for (auto& v : col) v -= mean / static_cast<double>(m);
            for (std::size_t q = 0; q < r; ++q) {
                double d = 0.0;
                for (std::size_t i = 0; i < m; ++i) d += col[i] * eff[q][i];
                d /= static_cast<double>(m);  // prior columns have variance 1
                double n2 = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double w = col[i] - d * eff[q][i];
                    n2 += w * w;
                }
                if (n2 < 1e-12 * static_cast<double>(m)) break;  // rank exhausted
                for (std::size_t i = 0; i < m; ++i) col[i] -= d * eff[q][i];
            }
            double var = 0.0;
            for (double v : col) var += v * v;
            var /= static_cast<double>(m);
            const double s = 1.0 / std::sqrt(std::max(var, 1e-12));
            for (auto& v : col) v *= s;
        }
        std::vector<std::vector<double>> id_z(m, std::vector<double>(k, 0.0));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t c = 0; c <= r; ++c) id_z[i][r] += chol.at(r, c) * eff[c][i];
        for (std::size_t i = 0; i < spec.count; ++i) {
            std::vector<double> g(k), zi(k, 0.0);
            for (auto& v : g) v = rng.normal();
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t c = 0; c <= r; ++c) zi[r] += chol.at(r, c) * g[c];
            const int id = static_cast<int>(rng.uniform_int(0, spec.identities - 1));
            std::array<double, 5> u{};
            for (std::size_t r = 0; r < k; ++r)
                u[r] = detail::norm_cdf(mix * id_z[id][r] + rest * zi[r]);

            detail::FaceAttrs fa;
            fa.identity = id;
            fa.age = kAgeLo + (kAgeHi - kAgeLo) * u[0];
            fa.gender = u[1] >= 0.5 ? 1 : 0;
            fa.pan = kPanLo + (kPanHi - kPanLo) * u[2];
            fa.smile = u[3];
            fa.hat = u[4] >= 0.5 ? 1 : 0;
            attrs.push_back(fa);
        }
    }

    const std::size_t n = attrs.size();
    const int s = spec.image_size;
    ds.images = Tensor({n, 1, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& fa = attrs[i];
        detail::render_face(ds.images.data() + i * s * s, s, fa, rng);
        ds.identity.push_back(fa.identity);
        ds.gender.push_back(fa.gender);
        ds.hat.push_back(fa.hat);
        ds.age.push_back(fa.age);
        ds.pan.push_back(fa.pan);
        ds.smile.push_back(fa.smile);
    }
    return ds;
}

// ---- disk format: PGM images + labels.csv + spec.json ----

namespace detail {

inline void write_pgm(const float* img, int s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "P5\n" << s << " " << s << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(s) * s);
    for (std::size_t i = 0; i < row.size(); ++i)
        row[i] = static_cast<unsigned char>(
            std::clamp(std::lround(img[i] * 255.0f), 0L, 255L));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
}

inline void read_pgm(float* img, int s, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w != s || h != s || maxval != 255)
        throw std::runtime_error("unexpected image format in " + path.string());
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> row(static_cast<std::size_t>(s) * s);
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (static_cast<std::size_t>(in.gcount()) != row.size())
        throw std::runtime_error("truncated image " + path.string());
    for (std::size_t i = 0; i < row.size(); ++i) img[i] = row[i] / 255.0f;
}

inline std::string image_name(std::size_t i) {
    std::ostringstream os;
    os << "img_" << std::setw(5) << std::setfill('0') << i << ".pgm";
    return os.str();
}

}  // namespace detail

inline void write_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    const int s = ds.spec.image_size;
    for (std::size_t i = 0; i < ds.size(); ++i)
        detail::write_pgm(ds.images.data() + i * s * s, s, dir / "images" / detail::image_name(i));

    std::ofstream csv(dir / "labels.csv");
    if (!csv) throw std::runtime_error("cannot open labels.csv for writing");
    csv.precision(17);
    csv << "index,identity,gender,hat,age,age_bin,pan,pan_bin,smile,smile_bin";
    for (const auto& [name, _] : ds.extra) csv << "," << name;
    csv << "\n";
    const auto ab = ds.age_bins(), pb = ds.pan_bins(), sb = ds.smile_bins();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        csv << i << "," << ds.identity[i] << "," << ds.gender[i] << "," << ds.hat[i] << ","
            << ds.age[i] << "," << ab[i] << "," << ds.pan[i] << "," << pb[i] << ","
            << ds.smile[i] << "," << sb[i];
        for (const auto& [_, vals] : ds.extra) csv << "," << vals[i];
        csv << "\n";
    }

    std::ofstream js(dir / "spec.json");
    if (!js) throw std::runtime_error("cannot open spec.json for writing");
    js << ds.spec.to_json().dump(2) << "\n";
}

inline SynthDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream js(dir / "spec.json");
    if (!js) throw std::runtime_error("cannot open " + (dir / "spec.json").string());
    nlohmann::json j;
    js >> j;
    SynthDataset ds;
    ds.spec = SynthSpec::from_json(j);

    std::ifstream csv(dir / "labels.csv");
    if (!csv) throw std::runtime_error("cannot open " + (dir / "labels.csv").string());
    std::string line;
    if (!std::getline(csv, line)) throw std::runtime_error("empty labels.csv");
    std::vector<std::string> cols;
    {
        std::istringstream is(line);
        std::string tok;
        while (std::getline(is, tok, ',')) cols.push_back(tok);
    }
    const std::vector<std::string> known = {"index", "identity", "gender", "hat",     "age",
                                            "age_bin", "pan",      "pan_bin", "smile",
                                            "smile_bin"};
    for (const auto& c : cols)
        if (std::find(known.begin(), known.end(), c) == known.end()) ds.extra[c] = {};

    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string tok;
        std::size_t ci = 0;
        for (; std::getline(is, tok, ','); ++ci) {
            if (ci >= cols.size()) throw std::runtime_error("labels.csv row has extra fields");
            const std::string& c = cols[ci];
            if (c == "index" || c == "age_bin" || c == "pan_bin" || c == "smile_bin") continue;
            if (c == "identity") ds.identity.push_back(std::stoi(tok));
            else if (c == "gender") ds.gender.push_back(std::stoi(tok));
            else if (c == "hat") ds.hat.push_back(std::stoi(tok));
            else if (c == "age") ds.age.push_back(std::stod(tok));
            else if (c == "pan") ds.pan.push_back(std::stod(tok));
            else if (c == "smile") ds.smile.push_back(std::stod(tok));
            else ds.extra[c].push_back(std::stod(tok));
        }
        if (ci != cols.size()) throw std::runtime_error("labels.csv row has missing fields");
    }

    const std::size_t n = ds.identity.size();
    const int s = ds.spec.image_size;
    ds.images = Tensor({n, 1, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
    for (std::size_t i = 0; i < n; ++i)
        detail::read_pgm(ds.images.data() + i * s * s, s, dir / "images" / detail::image_name(i));
    return ds;
}

// ---- task wiring ----

struct NamedTask {
    TaskSpec spec;
    ProbeTargets targets;
};

inline std::vector<std::string> dataset_task_names(const SynthDataset& ds) {
    std::vector<std::string> names = {"age",     "pan",       "smile",    "identity",
                                      "gender",  "hat",       "age_bin",  "pan_bin",
                                      "smile_bin", "flags"};
    for (const auto& [name, _] : ds.extra) names.push_back(name);
    return names;
}

// Maps a label column (or planted extra column) to a typed probe task.
// "flags" bundles the two binary attributes into one multilabel task.
inline NamedTask dataset_task(const SynthDataset& ds, const std::string& name) {
    NamedTask t;
    t.spec.name = name;
    if (name == "age" || name == "pan" || name == "smile") {
        t.spec.kind = TaskKind::regression;
        t.targets.values = name == "age" ? ds.age : (name == "pan" ? ds.pan : ds.smile);
    } else if (name == "identity") {
        t.spec.kind = TaskKind::multiclass;
        t.spec.outputs = ds.spec.identities;
        t.targets.labels = ds.identity;
    } else if (name == "gender" || name == "hat") {
        t.spec.kind = TaskKind::binary;
        t.targets.labels = name == "gender" ? ds.gender : ds.hat;
    } else if (name == "age_bin" || name == "pan_bin" || name == "smile_bin") {
        t.spec.kind = TaskKind::multiclass;
        t.spec.outputs = name == "age_bin" ? kAgeBins : (name == "pan_bin" ? kPanBins : kSmileBins);
        t.targets.labels =
            name == "age_bin" ? ds.age_bins() : (name == "pan_bin" ? ds.pan_bins() : ds.smile_bins());
    } else if (name == "flags") {
        t.spec.kind = TaskKind::multilabel;
        t.spec.outputs = 2;
        for (std::size_t i = 0; i < ds.size(); ++i)
            t.targets.multilabel.push_back({ds.gender[i], ds.hat[i]});
    } else if (auto it = ds.extra.find(name); it != ds.extra.end()) {
        t.spec.kind = TaskKind::regression;
        t.targets.values = it->second;
    } else {
        throw std::invalid_argument("dataset has no task named '" + name + "'");
    }
    return t;
}

// ---- reference architectures ----

// "convnet-small": three conv/relu stages with pooling, pooled linear head.
// "maxpair-small": max-pair blocks arranged in 1x1-then-3x3 groups.
inline NetworkIR make_primary_net(const std::string& arch, std::array<int, 3> input_shape,
                                  int outputs, std::uint64_t seed) {
    std::vector<LayerSpec> layers;
    if (arch == "convnet-small") {
        layers = {
            LayerSpec::conv2d(input_shape[0], 8, 3, 1, 1),
            LayerSpec::relu(),
            LayerSpec::maxpool(2, 2),
            LayerSpec::conv2d(8, 16, 3, 1, 1),
            LayerSpec::relu(),
            LayerSpec::maxpool(2, 2),
            LayerSpec::conv2d(16, 32, 3, 1, 1),
            LayerSpec::relu(),
            LayerSpec::gap(),
            LayerSpec::linear(32, outputs),
        };
    } else if (arch == "maxpair-small") {
        layers = {
            LayerSpec::mfm(input_shape[0], 8, 3, 1, 1),
            LayerSpec::maxpool(2, 2),
            LayerSpec::mfm(8, 8, 1, 1, 0, true, 1),
            LayerSpec::mfm(8, 16, 3, 1, 1, true, 1),
            LayerSpec::maxpool(2, 2),
            LayerSpec::mfm(16, 16, 1, 1, 0, true, 2),
            LayerSpec::mfm(16, 32, 3, 1, 1, true, 2),
            LayerSpec::gap(),
            LayerSpec::linear(32, outputs),
        };
    } else {
        throw std::invalid_argument("unknown architecture '" + arch + "'");
    }
    NetworkIR net = make_network(std::move(layers), input_shape, arch);
    randomize_params(net, seed);
    require_valid(net);
    return net;
}

// ---- planted targets ----

// A target that is by construction a sparse linear function of the net's own
// pooled filter activations plus noise, so a sparse fit has a known right
// answer. Support filters are the highest-variance ones, shuffled choice
// seeded; weights are unit-scale with random signs.
struct PlantedTask {
    std::vector<double> values;
    std::vector<std::size_t> support;
    std::vector<double> weights;  // aligned with support
    double intercept = 0.0;
};

template <typename T>
PlantedTask plant_task(const NetworkIRT<T>& net, const TensorT<T>& images,
                       std::size_t layer_id, std::size_t support_size, double noise_level,
                       std::uint64_t seed, int threads = 0) {
    const FeatureMatrix fm = extract_gap(net, images, layer_id, threads);
    if (support_size == 0 || support_size > fm.cols)
        throw std::invalid_argument("plant_task: bad support size");

    std::vector<double> var(fm.cols, 0.0);
    for (std::size_t c = 0; c < fm.cols; ++c) {
        double m = 0.0;
        for (std::size_t r = 0; r < fm.rows; ++r) m += fm.at(r, c);
        m /= static_cast<double>(fm.rows);
        for (std::size_t r = 0; r < fm.rows; ++r) {
            const double d = fm.at(r, c) - m;
            var[c] += d * d;
        }
    }
    std::vector<std::size_t> order(fm.cols);
    for (std::size_t c = 0; c < fm.cols; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
    if (var[order[support_size - 1]] <= 0.0)
        throw std::runtime_error("plant_task: not enough live filters to plant on");

    PlantedTask task;
    task.support.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(support_size));
    std::sort(task.support.begin(), task.support.end());

    Rng rng(seed);
    for (std::size_t i = 0; i < support_size; ++i) {
        const double mag = 0.5 + rng.uniform();
        task.weights.push_back(rng.uniform() < 0.5 ? -mag : mag);
    }
    task.intercept = rng.uniform(-1.0, 1.0);

    std::vector<double> clean(fm.rows, task.intercept);
    for (std::size_t i = 0; i < support_size; ++i) {
        const std::size_t c = task.support[i];
        // weights act on standardized activations so every support filter matters
        double m = 0.0;
        for (std::size_t r = 0; r < fm.rows; ++r) m += fm.at(r, c);
        m /= static_cast<double>(fm.rows);
        double v = 0.0;
        for (std::size_t r = 0; r < fm.rows; ++r) v += (fm.at(r, c) - m) * (fm.at(r, c) - m);
        const double sd = std::sqrt(v / static_cast<double>(fm.rows));
        for (std::size_t r = 0; r < fm.rows; ++r)
            clean[r] += task.weights[i] * (fm.at(r, c) - m) / sd;
    }
    double cm = 0.0;
    for (double v : clean) cm += v;
    cm /= static_cast<double>(clean.size());
    double cv = 0.0;
    for (double v : clean) cv += (v - cm) * (v - cm);
    const double cstd = std::sqrt(cv / static_cast<double>(clean.size()));

    task.values = clean;
    for (auto& v : task.values) v += rng.normal() * noise_level * cstd;
    return task;
}

}  // namespace prunekit
