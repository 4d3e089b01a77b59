#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mwp/encoder/config.hpp"
#include "mwp/encoder/ops.hpp"
#include "mwp/encoder/params.hpp"
#include "mwp/pretext.hpp"

namespace mwp {

enum class Head { mlm, order, qa, match, align };

inline constexpr std::array<Head, 5> kAllHeads = {Head::mlm, Head::order, Head::qa, Head::match, Head::align};

inline std::string_view head_prefix(Head h) {
    switch (h) {
    case Head::mlm: return "mlm.";
    case Head::order: return "order.";
    case Head::qa: return "qa.";
    case Head::match: return "match.";
    case Head::align: return "align.";
    }
    return "";
}

inline std::string_view head_name(Head h) {
    auto p = head_prefix(h);
    return p.substr(0, p.size() - 1);
}

inline Head parse_head(std::string_view name) {
    for (auto h : kAllHeads) {
        if (head_name(h) == name) return h;
    }
    throw Error(ErrorKind::config, "unknown head '" + std::string(name) + "'");
}

/// A parameter every instance of the head owns; used to test for presence.
inline std::string head_sentinel(Head h) {
    switch (h) {
    case Head::mlm: return "mlm.decoder.bias";
    case Head::match: return "match.out.bias";
    default: return std::string(head_prefix(h)) + "bias";
    }
}

inline constexpr std::string_view kTrunkPrefixes[] = {"embeddings.", "layer"};

/// Transformer encoder trunk plus whichever task heads a training phase needs.
/// Heads read the [CLS] state (row 0), except MLM which reads per-position states.
template <class T>
class ModelBundle {
public:
    struct LayerCache {
        Mat<T> x;
        Mat<T> q, k, v, ctx;
        std::vector<Mat<T>> probs;
        Mat<T> drop_attn;
        ops::LayerNormCache<T> ln1;
        Mat<T> x1;
        Mat<T> hidden_pre, hidden_act;
        Mat<T> drop_ffn;
        ops::LayerNormCache<T> ln2;
    };

    struct EncodeCache {
        std::vector<TokenId> ids;
        std::vector<int> positions;
        std::vector<int> segments;
        RowVec<T> key_bias;
        ops::LayerNormCache<T> ln0;
        Mat<T> drop_emb;
        std::vector<LayerCache> layers;
    };

    struct Encoded {
        Mat<T> states;  // one row per position
        EncodeCache cache;

        RowVec<T> cls() const { return states.row(0); }
    };

    ModelBundle(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        auto rng = make_rng(seed, {tag("trunk-init")});
        const auto d = static_cast<Eigen::Index>(config_.hidden);
        const auto ff = static_cast<Eigen::Index>(config_.ff);
        init_weight(params_.add("embeddings.token", static_cast<Eigen::Index>(config_.vocab), d), rng);
        init_weight(params_.add("embeddings.position", static_cast<Eigen::Index>(config_.max_positions), d), rng);
        init_weight(params_.add("embeddings.segment", static_cast<Eigen::Index>(config_.segments), d), rng);
        add_layer_norm("embeddings.ln");
        for (std::size_t l = 0; l < config_.layers; ++l) {
            const auto p = "layer" + std::to_string(l) + ".";
            for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
                init_weight(params_.add(p + n + ".weight", d, d), rng);
                params_.add(p + n + ".bias", 1, d);
            }
            add_layer_norm(p + "ln1");
            init_weight(params_.add(p + "ffn.in.weight", d, ff), rng);
            params_.add(p + "ffn.in.bias", 1, ff);
            init_weight(params_.add(p + "ffn.out.weight", ff, d), rng);
            params_.add(p + "ffn.out.bias", 1, d);
            add_layer_norm(p + "ln2");
        }
        bind();
    }

    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;
    ModelBundle(ModelBundle&&) noexcept = default;
    ModelBundle& operator=(ModelBundle&&) noexcept = default;

    const EncoderConfig& config() const { return config_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    bool has_head(Head h) const { return params_.contains(head_sentinel(h)); }

    void add_head(Head h, std::uint64_t seed) {
        if (has_head(h)) return;
        auto rng = make_rng(seed, {tag("head-init"), static_cast<std::uint64_t>(h)});
        const auto d = static_cast<Eigen::Index>(config_.hidden);
        const std::string p(head_prefix(h));
        switch (h) {
        case Head::mlm:
            init_weight(params_.add(p + "transform.weight", d, d), rng);
            params_.add(p + "transform.bias", 1, d);
            add_layer_norm(p + "ln");
            init_weight(params_.add(p + "decoder.weight", d, static_cast<Eigen::Index>(config_.vocab)), rng);
            params_.add(p + "decoder.bias", 1, static_cast<Eigen::Index>(config_.vocab));
            break;
        case Head::order:
        case Head::align:
            init_weight(params_.add(p + "weight", d, 1), rng);
            params_.add(p + "bias", 1, 1);
            break;
        case Head::qa:
            init_weight(params_.add(p + "weight", d, static_cast<Eigen::Index>(kNumOptions)), rng);
            params_.add(p + "bias", 1, static_cast<Eigen::Index>(kNumOptions));
            break;
        case Head::match:
            init_weight(params_.add(p + "hidden.weight", 2 * d, d), rng);
            params_.add(p + "hidden.bias", 1, d);
            init_weight(params_.add(p + "out.weight", d, 1), rng);
            params_.add(p + "out.bias", 1, 1);
            break;
        }
    }

    void drop_head(Head h) { params_.erase_prefix(head_prefix(h)); }

    /// Fine-tuning starts from the trunk alone.
    void discard_self_supervised_heads() {
        drop_head(Head::mlm);
        drop_head(Head::order);
        drop_head(Head::align);
    }

    std::size_t trunk_parameter_count() const {
        std::size_t n = 0;
        for (auto prefix : kTrunkPrefixes) n += params_.count(prefix);
        return n;
    }

    std::size_t parameter_count() const { return params_.count(); }

    std::vector<Head> heads() const {
        std::vector<Head> out;
        for (auto h : kAllHeads) {
            if (has_head(h)) out.push_back(h);
        }
        return out;
    }

    void zero_grad() { params_.zero_grad(); }

    /// Runs the trunk. Dropout is active only when `dropout_rng` is given.
    Encoded encode(const EncodedInput& in, Rng* dropout_rng = nullptr, bool keep_cache = true) const {
        check_input(in);
        const auto n = static_cast<Eigen::Index>(in.size());
        const auto d = static_cast<Eigen::Index>(config_.hidden);
        const auto dh = static_cast<Eigen::Index>(config_.head_dim());
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        const T eps = static_cast<T>(config_.layer_norm_eps);
        const double p_drop = config_.dropout;

        Encoded out;
        auto& cache = out.cache;

        Mat<T> e(n, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            e.row(i) = emb_token_->value.row(in.ids[ii]) + emb_position_->value.row(in.positions[ii]) +
                       emb_segment_->value.row(in.segments[ii]);
        }
        RowVec<T> key_bias = RowVec<T>::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!in.mask[static_cast<std::size_t>(i)]) key_bias(i) = T(-1e9);
        }

        ops::LayerNormCache<T> ln0;
        Mat<T> x = ops::layer_norm(e, *emb_ln_gamma_, *emb_ln_beta_, eps, &ln0);
        Mat<T> drop_emb = ops::dropout_mask<T>(n, d, p_drop, dropout_rng);
        ops::apply_mask(x, drop_emb);

        if (keep_cache) {
            cache.ids = in.ids;
            cache.positions = in.positions;
            cache.segments = in.segments;
            cache.key_bias = key_bias;
            cache.ln0 = std::move(ln0);
            cache.drop_emb = std::move(drop_emb);
            cache.layers.resize(config_.layers);
        }

        for (std::size_t l = 0; l < config_.layers; ++l) {
            const auto& L = layers_[l];
            LayerCache lc;
            lc.q = ops::affine(x, *L.q_w, *L.q_b);
            lc.k = ops::affine(x, *L.k_w, *L.k_b);
            lc.v = ops::affine(x, *L.v_w, *L.v_b);
            lc.ctx.resize(n, d);
            lc.probs.resize(config_.heads);
            for (std::size_t h = 0; h < config_.heads; ++h) {
                const auto c0 = static_cast<Eigen::Index>(h) * dh;
                Mat<T> s = (lc.q.middleCols(c0, dh) * lc.k.middleCols(c0, dh).transpose()) * scale;
                s.rowwise() += key_bias;
                ops::softmax_rows(s);
                lc.ctx.middleCols(c0, dh).noalias() = s * lc.v.middleCols(c0, dh);
                lc.probs[h] = std::move(s);
            }
            Mat<T> a = ops::affine(lc.ctx, *L.o_w, *L.o_b);
            lc.drop_attn = ops::dropout_mask<T>(n, d, p_drop, dropout_rng);
            ops::apply_mask(a, lc.drop_attn);
            Mat<T> x1 = ops::layer_norm<T>(x + a, *L.ln1_g, *L.ln1_b, eps, &lc.ln1);

            lc.hidden_pre = ops::affine(x1, *L.in_w, *L.in_b);
            lc.hidden_act = ops::activate(lc.hidden_pre, Activation::gelu);
            Mat<T> g = ops::affine(lc.hidden_act, *L.out_w, *L.out_b);
            lc.drop_ffn = ops::dropout_mask<T>(n, d, p_drop, dropout_rng);
            ops::apply_mask(g, lc.drop_ffn);
            Mat<T> x2 = ops::layer_norm<T>(x1 + g, *L.ln2_g, *L.ln2_b, eps, &lc.ln2);

            if (keep_cache) {
                lc.x = std::move(x);
                lc.x1 = std::move(x1);
                cache.layers[l] = std::move(lc);
            }
            x = std::move(x2);
        }
        out.states = std::move(x);
        return out;
    }

    /// Backpropagates d(loss)/d(states) through the trunk, accumulating into grads.
    void encode_backward(const EncodeCache& cache, const Mat<T>& dstates) {
        const auto dh = static_cast<Eigen::Index>(config_.head_dim());
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        Mat<T> dx = dstates;
        for (std::size_t li = config_.layers; li-- > 0;) {
            auto& L = layers_[li];
            const auto& lc = cache.layers[li];

            Mat<T> dr2 = ops::layer_norm_backward(dx, lc.ln2, *L.ln2_g, *L.ln2_b);
            Mat<T> dg = dr2;
            ops::apply_mask(dg, lc.drop_ffn);
            Mat<T> dact = ops::affine_backward(dg, lc.hidden_act, *L.out_w, *L.out_b);
            Mat<T> dpre = ops::activate_backward(dact, lc.hidden_pre, Activation::gelu);
            Mat<T> dx1 = dr2 + ops::affine_backward(dpre, lc.x1, *L.in_w, *L.in_b);

            Mat<T> dr1 = ops::layer_norm_backward(dx1, lc.ln1, *L.ln1_g, *L.ln1_b);
            Mat<T> da = dr1;
            ops::apply_mask(da, lc.drop_attn);
            Mat<T> dctx = ops::affine_backward(da, lc.ctx, *L.o_w, *L.o_b);

            Mat<T> dq(dctx.rows(), dctx.cols());
            Mat<T> dk(dctx.rows(), dctx.cols());
            Mat<T> dv(dctx.rows(), dctx.cols());
            for (std::size_t h = 0; h < config_.heads; ++h) {
                const auto c0 = static_cast<Eigen::Index>(h) * dh;
                const auto& P = lc.probs[h];
                const auto dctx_h = dctx.middleCols(c0, dh);
                Mat<T> dP = dctx_h * lc.v.middleCols(c0, dh).transpose();
                dv.middleCols(c0, dh).noalias() = P.transpose() * dctx_h;
                Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dP.array() * P.array()).rowwise().sum();
                Mat<T> dS = P.array() * (dP.colwise() - row_dot).array();
                dq.middleCols(c0, dh).noalias() = (dS * lc.k.middleCols(c0, dh)) * scale;
                dk.middleCols(c0, dh).noalias() = (dS.transpose() * lc.q.middleCols(c0, dh)) * scale;
            }
            dx = dr1;
            dx += ops::affine_backward(dq, lc.x, *L.q_w, *L.q_b);
            dx += ops::affine_backward(dk, lc.x, *L.k_w, *L.k_b);
            dx += ops::affine_backward(dv, lc.x, *L.v_w, *L.v_b);
        }
        ops::apply_mask(dx, cache.drop_emb);
        Mat<T> de = ops::layer_norm_backward(dx, cache.ln0, *emb_ln_gamma_, *emb_ln_beta_);
        for (Eigen::Index i = 0; i < de.rows(); ++i) {
            const auto ii = static_cast<std::size_t>(i);
            emb_token_->grad.row(cache.ids[ii]) += de.row(i);
            emb_position_->grad.row(cache.positions[ii]) += de.row(i);
            emb_segment_->grad.row(cache.segments[ii]) += de.row(i);
        }
    }

    /// Copies every parameter value (used for best-epoch snapshots).
    std::vector<Mat<T>> snapshot() const {
        std::vector<Mat<T>> out;
        out.reserve(params_.tensors());
        for (const auto& [_, p] : params_) out.push_back(p.value);
        return out;
    }

    void restore(const std::vector<Mat<T>>& values) {
        if (values.size() != params_.tensors()) {
            throw Error(ErrorKind::invalid_argument, "snapshot does not match parameter layout");
        }
        std::size_t i = 0;
        for (auto& [_, p] : params_) p.value = values[i++];
    }

private:
    struct LayerRefs {
        Param<T>*q_w, *q_b, *k_w, *k_b, *v_w, *v_b, *o_w, *o_b;
        Param<T>*ln1_g, *ln1_b, *in_w, *in_b, *out_w, *out_b, *ln2_g, *ln2_b;
    };

    void init_weight(Param<T>& p, Rng& rng) { truncated_normal(p.value, config_.init_std, rng); }

    void add_layer_norm(const std::string& prefix) {
        params_.add(prefix + ".gamma", 1, static_cast<Eigen::Index>(config_.hidden)).value.setOnes();
        params_.add(prefix + ".beta", 1, static_cast<Eigen::Index>(config_.hidden));
    }

    void bind() {
        emb_token_ = &params_.at("embeddings.token");
        emb_position_ = &params_.at("embeddings.position");
        emb_segment_ = &params_.at("embeddings.segment");
        emb_ln_gamma_ = &params_.at("embeddings.ln.gamma");
        emb_ln_beta_ = &params_.at("embeddings.ln.beta");
        layers_.clear();
        for (std::size_t l = 0; l < config_.layers; ++l) {
            const auto p = "layer" + std::to_string(l) + ".";
            auto at = [&](const std::string& n) { return &params_.at(p + n); };
            layers_.push_back({at("attn.q.weight"), at("attn.q.bias"), at("attn.k.weight"), at("attn.k.bias"),
                               at("attn.v.weight"), at("attn.v.bias"), at("attn.o.weight"), at("attn.o.bias"),
                               at("ln1.gamma"), at("ln1.beta"), at("ffn.in.weight"), at("ffn.in.bias"),
                               at("ffn.out.weight"), at("ffn.out.bias"), at("ln2.gamma"), at("ln2.beta")});
        }
    }

    void check_input(const EncodedInput& in) const {
        const auto n = in.size();
        if (n == 0) throw Error(ErrorKind::invalid_argument, "empty encoder input");
        if (in.segments.size() != n || in.positions.size() != n || in.mask.size() != n) {
            throw Error(ErrorKind::invalid_argument, "encoder input fields differ in length");
        }
        if (n > config_.max_positions) {
            throw Error(ErrorKind::length_overflow,
                        "input of " + std::to_string(n) + " tokens exceeds " + std::to_string(config_.max_positions));
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (in.ids[i] < 0 || static_cast<std::size_t>(in.ids[i]) >= config_.vocab) {
                throw Error(ErrorKind::invalid_argument, "token id out of vocab range");
            }
            if (in.positions[i] < 0 || static_cast<std::size_t>(in.positions[i]) >= config_.max_positions) {
                throw Error(ErrorKind::length_overflow, "position id out of range");
            }
            if (in.segments[i] < 0 || static_cast<std::size_t>(in.segments[i]) >= config_.segments) {
                throw Error(ErrorKind::invalid_argument, "segment id out of range");
            }
        }
    }

    EncoderConfig config_;
    ParamStore<T> params_;
    Param<T>* emb_token_ = nullptr;
    Param<T>* emb_position_ = nullptr;
    Param<T>* emb_segment_ = nullptr;
    Param<T>* emb_ln_gamma_ = nullptr;
    Param<T>* emb_ln_beta_ = nullptr;
    std::vector<LayerRefs> layers_;
};

}  // namespace mwp
