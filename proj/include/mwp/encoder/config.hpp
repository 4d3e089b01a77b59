#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "mwp/error.hpp"

namespace mwp {

enum class Activation { gelu, relu, tanh };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    }
    return "gelu";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw Error(ErrorKind::config, "unknown activation '" + s + "'");
}

struct EncoderConfig {
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t hidden = 128;
    std::size_t ff = 512;
    std::size_t vocab = 0;
    std::size_t max_positions = 512;
    std::size_t segments = 2;
    double dropout = 0.1;
    double init_std = 0.02;
    double layer_norm_eps = 1e-12;
    Activation match_activation = Activation::gelu;

    /// Desk-scale preset: 4 layers, 4 heads, 128 hidden.
    static EncoderConfig toy(std::size_t vocab) {
        EncoderConfig c;
        c.vocab = vocab;
        return c;
    }

    /// BERT-base shape: 12 blocks, 12 heads, 768 hidden, 3072 feed-forward.
    static EncoderConfig base(std::size_t vocab = 30522) {
        EncoderConfig c;
        c.layers = 12;
        c.heads = 12;
        c.hidden = 768;
        c.ff = 3072;
        c.vocab = vocab;
        return c;
    }

    static EncoderConfig preset(const std::string& name, std::size_t vocab) {
        if (name == "toy") return toy(vocab);
        if (name == "base") return base(vocab);
        throw Error(ErrorKind::config, "unknown preset '" + name + "'");
    }

    std::size_t head_dim() const { return hidden / heads; }

    void validate() const {
        if (layers == 0 || heads == 0 || hidden == 0 || ff == 0) {
            throw Error(ErrorKind::config, "encoder dimensions must be positive");
        }
        if (hidden % heads != 0) {
            throw Error(ErrorKind::config, "hidden dim must be divisible by heads");
        }
        if (vocab == 0) {
            throw Error(ErrorKind::config, "vocab size not set");
        }
        if (segments < 2) {
            throw Error(ErrorKind::config, "need two segment embeddings");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw Error(ErrorKind::config, "dropout must lie in [0, 1)");
        }
    }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"layers", c.layers},
         {"heads", c.heads},
         {"hidden", c.hidden},
         {"ff", c.ff},
         {"vocab", c.vocab},
         {"max_positions", c.max_positions},
         {"segments", c.segments},
         {"dropout", c.dropout},
         {"init_std", c.init_std},
         {"layer_norm_eps", c.layer_norm_eps},
         {"match_activation", to_string(c.match_activation)}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.hidden = j.at("hidden");
    c.ff = j.at("ff");
    c.vocab = j.at("vocab");
    c.max_positions = j.value("max_positions", std::size_t{512});
    c.segments = j.value("segments", std::size_t{2});
    c.dropout = j.value("dropout", 0.1);
    c.init_std = j.value("init_std", 0.02);
    c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
    c.match_activation = parse_activation(j.value("match_activation", std::string("gelu")));
}

}  // namespace mwp
