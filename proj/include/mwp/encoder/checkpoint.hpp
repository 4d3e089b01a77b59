#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mwp/encoder/model.hpp"
#include "mwp/error.hpp"

// Checkpoint layout:
//   <dir>/config.json           encoder config, heads, tensor shapes, free-form metadata
//   <dir>/tensors/<name>.bin    raw little-endian float32, row-major

namespace mwp {

namespace detail {

inline void write_f32(const std::filesystem::path& path, const float* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

inline std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected * sizeof(float)) {
        throw Error(ErrorKind::io, path.string() + ": expected " + std::to_string(expected) + " floats, found " +
                                       std::to_string(bytes / sizeof(float)));
    }
    in.seekg(0);
    std::vector<float> out(expected);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
    return out;
}

}  // namespace detail

template <class T>
void save_checkpoint(const ModelBundle<T>& m, const std::filesystem::path& dir, const nlohmann::json& metadata = {}) {
    static_assert(sizeof(float) == 4);
    std::filesystem::create_directories(dir / "tensors");
    nlohmann::json shapes = nlohmann::json::object();
    for (const auto& [name, p] : m.params()) {
        shapes[name] = {p.value.rows(), p.value.cols()};
        std::vector<float> buf(static_cast<std::size_t>(p.value.size()));
        for (Eigen::Index i = 0; i < p.value.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(p.value.data()[i]);
        detail::write_f32(dir / "tensors" / (name + ".bin"), buf.data(), buf.size());
    }
    std::vector<std::string> heads;
    for (auto h : m.heads()) heads.emplace_back(head_name(h));
    nlohmann::json cfg = {{"encoder", m.config()}, {"heads", heads}, {"tensors", shapes}, {"metadata", metadata}};
    std::ofstream out(dir / "config.json");
    if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "config.json").string());
    out << cfg.dump(2) << '\n';
}

template <class T>
void load_tensor(Param<T>& p, const std::filesystem::path& file, bool transpose = false) {
    const auto rows = p.value.rows();
    const auto cols = p.value.cols();
    const auto data = detail::read_f32(file, static_cast<std::size_t>(rows * cols));
    if (!transpose) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(data[static_cast<std::size_t>(i)]);
    } else {
        // Stored as (cols x rows), e.g. an external (out, in) linear weight.
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) p.value(r, c) = static_cast<T>(data[static_cast<std::size_t>(c * rows + r)]);
    }
}

inline nlohmann::json read_checkpoint_config(const std::filesystem::path& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) throw Error(ErrorKind::io, "no checkpoint config in " + dir.string());
    return nlohmann::json::parse(in);
}

template <class T>
ModelBundle<T> load_checkpoint(const std::filesystem::path& dir) {
    const auto cfg = read_checkpoint_config(dir);
    ModelBundle<T> m(cfg.at("encoder").get<EncoderConfig>(), 0);
    for (const auto& h : cfg.at("heads")) m.add_head(parse_head(h.get<std::string>()), 0);
    for (auto& [name, p] : m.params()) {
        const auto& shape = cfg.at("tensors").at(name);
        const Eigen::Index rows = shape.at(0);
        const Eigen::Index cols = shape.at(1);
        if (rows != p.value.rows() || cols != p.value.cols()) {
            throw Error(ErrorKind::io, "shape mismatch for " + name);
        }
        load_tensor(p, dir / "tensors" / (name + ".bin"));
    }
    return m;
}

/// Name mapping from an external checkpoint (one float32 file per external
/// tensor name) onto internal parameter names.
struct PretrainedManifest {
    struct Entry {
        std::string external;
        std::string internal;
        bool transpose = false;
    };
    std::filesystem::path source_dir;
    std::vector<Entry> entries;

    static PretrainedManifest load(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw Error(ErrorKind::io, "cannot read manifest " + file.string());
        const auto j = nlohmann::json::parse(in);
        PretrainedManifest m;
        m.source_dir = j.at("source_dir").get<std::string>();
        if (m.source_dir.is_relative()) m.source_dir = file.parent_path() / m.source_dir;
        for (const auto& e : j.at("tensors")) {
            m.entries.push_back({e.at("external"), e.at("internal"), e.value("transpose", false)});
        }
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json tensors = nlohmann::json::array();
        for (const auto& e : entries) {
            tensors.push_back({{"external", e.external}, {"internal", e.internal}, {"transpose", e.transpose}});
        }
        return {{"source_dir", source_dir.string()}, {"tensors", tensors}};
    }
};

/// Manifest for HuggingFace BERT parameter names. Linear weights there are
/// stored (out, in), hence transposed.
inline PretrainedManifest bert_manifest(std::size_t layers, std::filesystem::path source_dir) {
    PretrainedManifest m;
    m.source_dir = std::move(source_dir);
    auto add = [&](std::string ext, std::string in, bool t = false) { m.entries.push_back({std::move(ext), std::move(in), t}); };
    add("bert.embeddings.word_embeddings.weight", "embeddings.token");
    add("bert.embeddings.position_embeddings.weight", "embeddings.position");
    add("bert.embeddings.token_type_embeddings.weight", "embeddings.segment");
    add("bert.embeddings.LayerNorm.weight", "embeddings.ln.gamma");
    add("bert.embeddings.LayerNorm.bias", "embeddings.ln.beta");
    for (std::size_t l = 0; l < layers; ++l) {
        const auto e = "bert.encoder.layer." + std::to_string(l) + ".";
        const auto i = "layer" + std::to_string(l) + ".";
        for (auto [ext, in] : {std::pair{"query", "q"}, {"key", "k"}, {"value", "v"}}) {
            add(e + "attention.self." + ext + ".weight", i + "attn." + in + ".weight", true);
            add(e + "attention.self." + ext + ".bias", i + "attn." + in + ".bias");
        }
        add(e + "attention.output.dense.weight", i + "attn.o.weight", true);
        add(e + "attention.output.dense.bias", i + "attn.o.bias");
        add(e + "attention.output.LayerNorm.weight", i + "ln1.gamma");
        add(e + "attention.output.LayerNorm.bias", i + "ln1.beta");
        add(e + "intermediate.dense.weight", i + "ffn.in.weight", true);
        add(e + "intermediate.dense.bias", i + "ffn.in.bias");
        add(e + "output.dense.weight", i + "ffn.out.weight", true);
        add(e + "output.dense.bias", i + "ffn.out.bias");
        add(e + "output.LayerNorm.weight", i + "ln2.gamma");
        add(e + "output.LayerNorm.bias", i + "ln2.beta");
    }
    return m;
}

/// Loads every manifest entry into the bundle; returns how many tensors were set.
template <class T>
std::size_t load_pretrained(ModelBundle<T>& m, const PretrainedManifest& manifest) {
    std::size_t loaded = 0;
    for (const auto& e : manifest.entries) {
        if (!m.params().contains(e.internal)) {
            throw Error(ErrorKind::config, "manifest maps to unknown parameter " + e.internal);
        }
        load_tensor(m.params().at(e.internal), manifest.source_dir / (e.external + ".bin"), e.transpose);
        ++loaded;
    }
    return loaded;
}

}  // namespace mwp
