#pragma once

// Model container: a human-readable text header describing layers and a
// tensor table, then one contiguous little-endian float32 blob. Header and
// blob are separated by a single line reading "blob".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prunekit/netir.hpp"

namespace prunekit {

enum class ModelIoCode {
    ok,
    bad_magic,
    unsupported_version,
    bad_header,
    shape_mismatch,
    blob_truncated,
    io_failure,
};

inline const char* model_io_code_name(ModelIoCode c) {
    switch (c) {
        case ModelIoCode::ok: return "ok";
        case ModelIoCode::bad_magic: return "bad_magic";
        case ModelIoCode::unsupported_version: return "unsupported_version";
        case ModelIoCode::bad_header: return "bad_header";
        case ModelIoCode::shape_mismatch: return "shape_mismatch";
        case ModelIoCode::blob_truncated: return "blob_truncated";
        case ModelIoCode::io_failure: return "io_failure";
    }
    return "?";
}

class ModelIoError : public std::runtime_error {
  public:
    ModelIoError(ModelIoCode code, const std::string& msg)
        : std::runtime_error(std::string(model_io_code_name(code)) + ": " + msg), code_(code) {}
    ModelIoCode code() const { return code_; }

  private:
    ModelIoCode code_;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "model blob IO assumes a little-endian host");

inline std::string layer_line(const LayerSpec& s) {
    std::ostringstream os;
    os << layer_kind_name(s.kind);
    switch (s.kind) {
        case LayerKind::Conv2D:
            os << " in=" << s.in_channels << " out=" << s.out_channels << " k=" << s.kernel
               << " s=" << s.stride << " p=" << s.padding << " bias=" << (s.has_bias ? 1 : 0);
            break;
        case LayerKind::MFM:
            os << " in=" << s.in_channels << " out=" << s.out_channels
               << " conv_out=" << s.conv_out_channels << " k=" << s.kernel << " s=" << s.stride
               << " p=" << s.padding << " bias=" << (s.has_bias ? 1 : 0)
               << " group=" << s.group_id;
            break;
        case LayerKind::MaxPool2D:
            os << " w=" << s.window << " s=" << s.stride << " p=" << s.padding;
            break;
        case LayerKind::Linear:
            os << " in=" << s.in_features << " out=" << s.out_features
               << " bias=" << (s.has_bias ? 1 : 0);
            break;
        case LayerKind::ReLU:
        case LayerKind::GAP:
            break;
    }
    return os.str();
}

inline bool parse_kv(const std::string& tok, std::string& key, long long& value) {
    auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= tok.size()) return false;
    key = tok.substr(0, eq);
    try {
        std::size_t used = 0;
        value = std::stoll(tok.substr(eq + 1), &used);
        if (used != tok.size() - eq - 1) return false;
    } catch (...) {
        return false;
    }
    return true;
}

inline LayerSpec parse_layer_line(const std::string& line) {
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    LayerSpec s;
    if (kind == "conv") s.kind = LayerKind::Conv2D;
    else if (kind == "relu") s.kind = LayerKind::ReLU;
    else if (kind == "maxpool") s.kind = LayerKind::MaxPool2D;
    else if (kind == "mfm") s.kind = LayerKind::MFM;
    else if (kind == "gap") s.kind = LayerKind::GAP;
    else if (kind == "linear") s.kind = LayerKind::Linear;
    else throw ModelIoError(ModelIoCode::bad_header, "unknown layer kind '" + kind + "'");

    std::string tok;
    while (is >> tok) {
        std::string key;
        long long v = 0;
        if (!parse_kv(tok, key, v))
            throw ModelIoError(ModelIoCode::bad_header, "bad layer field '" + tok + "'");
        const int vi = static_cast<int>(v);
        if (key == "in") {
            if (s.kind == LayerKind::Linear) s.in_features = vi;
            else s.in_channels = vi;
        } else if (key == "out") {
            if (s.kind == LayerKind::Linear) s.out_features = vi;
            else s.out_channels = vi;
        } else if (key == "conv_out") s.conv_out_channels = vi;
        else if (key == "k") s.kernel = vi;
        else if (key == "s") s.stride = vi;
        else if (key == "p") s.padding = vi;
        else if (key == "w") s.window = vi;
        else if (key == "bias") s.has_bias = (v != 0);
        else if (key == "group") s.group_id = vi;
        else throw ModelIoError(ModelIoCode::bad_header, "unknown layer field '" + key + "'");
    }
    if (s.kind == LayerKind::MFM && s.conv_out_channels == 0)
        s.conv_out_channels = 2 * s.out_channels;
    return s;
}

}  // namespace detail

// Writes header + blob. Tensor order in the blob follows the tensor table:
// per parameterized layer, weight then bias.
inline void save_model(const NetworkIR& net, const std::filesystem::path& path) {
    require_valid(net);
    std::ostringstream header;
    header << "PKIR1 v1\n";
    header << "name " << (net.name.empty() ? "-" : net.name) << "\n";
    header << "primary_task " << (net.primary_task.empty() ? "-" : net.primary_task) << "\n";
    header << "input " << net.input_shape[0] << " " << net.input_shape[1] << " "
           << net.input_shape[2] << "\n";
    header << "layers " << net.layers.size() << "\n";
    for (const auto& s : net.layers) header << detail::layer_line(s) << "\n";

    struct Entry {
        std::size_t layer;
        const char* which;
        const Tensor* t;
    };
    std::vector<Entry> entries;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].has_params()) continue;
        entries.push_back({l, "weight", &net.params[l].weight});
        if (net.layers[l].has_bias) entries.push_back({l, "bias", &net.params[l].bias});
    }

    header << "tensors " << entries.size() << "\n";
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        header << e.layer << " " << e.which << " shape";
        for (auto d : e.t->shape()) header << " " << d;
        const std::uint64_t bytes = e.t->size() * sizeof(float);
        header << " offset " << offset << " bytes " << bytes << "\n";
        offset += bytes;
    }
    header << "blob\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelIoError(ModelIoCode::io_failure, "cannot open " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& e : entries) {
        out.write(reinterpret_cast<const char*>(e.t->data()),
                  static_cast<std::streamsize>(e.t->size() * sizeof(float)));
    }
    if (!out) throw ModelIoError(ModelIoCode::io_failure, "write failed for " + path.string());
}

inline NetworkIR load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelIoError(ModelIoCode::io_failure, "cannot open " + path.string());

    std::string line;
    auto next_line = [&](const char* what) -> std::string& {
        if (!std::getline(in, line))
            throw ModelIoError(ModelIoCode::bad_header, std::string("missing ") + what);
        return line;
    };

    next_line("magic line");
    {
        std::istringstream is(line);
        std::string magic, version;
        is >> magic >> version;
        if (magic != "PKIR1")
            throw ModelIoError(ModelIoCode::bad_magic, "expected PKIR1, got '" + magic + "'");
        if (version != "v1")
            throw ModelIoError(ModelIoCode::unsupported_version,
                               "expected v1, got '" + version + "'");
    }

    NetworkIR net;
    {
        std::istringstream is(next_line("name line"));
        std::string key;
        is >> key >> net.name;
        if (key != "name") throw ModelIoError(ModelIoCode::bad_header, "expected name line");
        if (net.name == "-") net.name.clear();
    }
    {
        std::istringstream is(next_line("primary_task line"));
        std::string key;
        is >> key >> net.primary_task;
        if (key != "primary_task")
            throw ModelIoError(ModelIoCode::bad_header, "expected primary_task line");
        if (net.primary_task == "-") net.primary_task.clear();
    }
    {
        std::istringstream is(next_line("input line"));
        std::string key;
        is >> key >> net.input_shape[0] >> net.input_shape[1] >> net.input_shape[2];
        if (key != "input" || !is)
            throw ModelIoError(ModelIoCode::bad_header, "expected input line");
    }
    std::size_t n_layers = 0;
    {
        std::istringstream is(next_line("layers line"));
        std::string key;
        is >> key >> n_layers;
        if (key != "layers" || !is)
            throw ModelIoError(ModelIoCode::bad_header, "expected layers line");
    }
    for (std::size_t l = 0; l < n_layers; ++l)
        net.layers.push_back(detail::parse_layer_line(next_line("layer line")));
    net.params.resize(net.layers.size());

    std::size_t n_tensors = 0;
    {
        std::istringstream is(next_line("tensors line"));
        std::string key;
        is >> key >> n_tensors;
        if (key != "tensors" || !is)
            throw ModelIoError(ModelIoCode::bad_header, "expected tensors line");
    }

    struct Entry {
        std::size_t layer;
        std::string which;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
        std::uint64_t bytes;
    };
    std::vector<Entry> entries;
    std::uint64_t expect_offset = 0;
    for (std::size_t t = 0; t < n_tensors; ++t) {
        std::istringstream is(next_line("tensor line"));
        Entry e;
        std::string tok;
        is >> e.layer >> e.which >> tok;
        if (!is || tok != "shape")
            throw ModelIoError(ModelIoCode::bad_header, "bad tensor line");
        while (is >> tok) {
            if (tok == "offset") break;
            try {
                e.shape.push_back(std::stoull(tok));
            } catch (...) {
                throw ModelIoError(ModelIoCode::bad_header, "bad tensor shape token '" + tok + "'");
            }
        }
        if (tok != "offset") throw ModelIoError(ModelIoCode::bad_header, "missing tensor offset");
        is >> e.offset >> tok >> e.bytes;
        if (!is || tok != "bytes")
            throw ModelIoError(ModelIoCode::bad_header, "missing tensor byte count");
        if (e.layer >= net.layers.size())
            throw ModelIoError(ModelIoCode::bad_header, "tensor references missing layer");
        if (e.offset != expect_offset)
            throw ModelIoError(ModelIoCode::bad_header, "non-contiguous tensor offsets");
        const std::uint64_t count = Tensor::count(e.shape);
        if (e.bytes != count * sizeof(float))
            throw ModelIoError(ModelIoCode::bad_header, "tensor byte count disagrees with shape");
        expect_offset += e.bytes;
        entries.push_back(std::move(e));
    }

    next_line("blob separator");
    if (line != "blob") throw ModelIoError(ModelIoCode::bad_header, "expected blob separator");

    for (const auto& e : entries) {
        const LayerSpec& s = net.layers[e.layer];
        std::vector<std::size_t> expect =
            (e.which == "weight") ? s.weight_shape() : s.bias_shape();
        if (e.which != "weight" && e.which != "bias")
            throw ModelIoError(ModelIoCode::bad_header, "unknown tensor role '" + e.which + "'");
        if (e.shape != expect)
            throw ModelIoError(ModelIoCode::shape_mismatch,
                               "layer " + std::to_string(e.layer) + " " + e.which + " is " +
                                   shape_string(e.shape) + ", layer spec requires " +
                                   shape_string(expect));
        Tensor t(e.shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(e.bytes));
        if (static_cast<std::uint64_t>(in.gcount()) != e.bytes)
            throw ModelIoError(ModelIoCode::blob_truncated,
                               "blob ends inside layer " + std::to_string(e.layer) + " " + e.which);
        if (e.which == "weight") net.params[e.layer].weight = std::move(t);
        else net.params[e.layer].bias = std::move(t);
    }

    auto violations = validate(net);
    if (!violations.empty())
        throw ModelIoError(ModelIoCode::shape_mismatch,
                           "loaded network fails validation: " + violations.front());
    return net;
}

}  // namespace prunekit
