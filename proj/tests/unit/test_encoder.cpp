#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "mwp/encoder.hpp"

using namespace mwp;

namespace {

EncodedInput small_input(std::size_t n, TokenId base = 6) {
    EncodedInput in;
    for (std::size_t i = 0; i < n; ++i) in.push(base + static_cast<TokenId>(i % 5), i < n / 2 ? 0 : 1, 0);
    in.renumber();
    return in;
}

EncoderConfig tiny(std::size_t vocab = 20) {
    EncoderConfig c;
    c.layers = 2;
    c.heads = 2;
    c.hidden = 8;
    c.ff = 16;
    c.vocab = vocab;
    c.max_positions = 16;
    return c;
}

}  // namespace

TEST(Encoder, OutputShapeAndDeterminism) {
    ModelBundle<float> m(tiny(), 1);
    const auto in = small_input(7);
    const auto a = m.encode(in);
    EXPECT_EQ(a.states.rows(), 7);
    EXPECT_EQ(a.states.cols(), 8);
    EXPECT_TRUE(a.states.allFinite());
    EXPECT_TRUE(a.states.isApprox(m.encode(in).states));
    Rng r1(3), r2(3);
    EXPECT_TRUE(m.encode(in, &r1).states.isApprox(m.encode(in, &r2).states));
    Rng r3(4);
    EXPECT_FALSE(m.encode(in, &r3).states.isApprox(a.states));
}

TEST(Encoder, SameSeedSameWeights) {
    ModelBundle<float> a(tiny(), 5), b(tiny(), 5), c(tiny(), 6);
    EXPECT_TRUE(a.params().at("layer0.attn.q.weight").value.isApprox(b.params().at("layer0.attn.q.weight").value));
    EXPECT_FALSE(a.params().at("layer0.attn.q.weight").value.isApprox(c.params().at("layer0.attn.q.weight").value));
}

TEST(Encoder, RejectsBadInputs) {
    ModelBundle<float> m(tiny(), 1);
    EXPECT_THROW(m.encode(EncodedInput{}), Error);
    auto in = small_input(3);
    in.ids[1] = 99;
    EXPECT_THROW(m.encode(in), Error);
    try {
        m.encode(small_input(17));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::length_overflow);
    }
}

TEST(Encoder, PositionIdsMatter) {
    ModelBundle<float> m(tiny(), 1);
    auto in = small_input(6);
    const auto a = m.encode(in).states;
    std::fill(in.positions.begin(), in.positions.end(), 0);
    EXPECT_FALSE(a.isApprox(m.encode(in).states));
}

TEST(Encoder, HeadsAttachAndDetach) {
    ModelBundle<float> m(tiny(), 1);
    const auto trunk = m.trunk_parameter_count();
    EXPECT_TRUE(m.heads().empty());
    for (auto h : kAllHeads) m.add_head(h, 2);
    EXPECT_EQ(m.heads().size(), kAllHeads.size());
    EXPECT_GT(m.parameter_count(), trunk);
    m.discard_self_supervised_heads();
    EXPECT_FALSE(m.has_head(Head::mlm));
    EXPECT_FALSE(m.has_head(Head::order));
    EXPECT_FALSE(m.has_head(Head::align));
    EXPECT_TRUE(m.has_head(Head::qa));
    EXPECT_TRUE(m.has_head(Head::match));
    EXPECT_EQ(m.trunk_parameter_count(), trunk);
    for (auto h : kAllHeads) EXPECT_EQ(parse_head(head_name(h)), h);
}

TEST(Encoder, QaProbabilitiesSumToOne) {
    ModelBundle<double> m(tiny(), 1);
    m.add_head(Head::qa, 1);
    const auto p = qa_forward(m, RowVec<double>(m.encode(small_input(5)).cls()));
    double s = 0;
    for (double v : p) {
        EXPECT_GT(v, 0.0);
        s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Encoder, MlmLossWithoutTargetsIsInvalid) {
    ModelBundle<double> m(tiny(), 1);
    m.add_head(Head::mlm, 1);
    const auto e = m.encode(small_input(4));
    const auto l = mlm_loss(m, e.states, {}, true);
    EXPECT_FALSE(l.valid);
    EXPECT_EQ(l.loss, 0.0);
}

TEST(Encoder, BceMatchesDirectFormula) {
    for (double z : {-30.0, -2.0, 0.0, 0.7, 25.0}) {
        for (double y : {0.0, 1.0}) {
            const auto [loss, d] = ops::bce_with_logit(z, y);
            const double s = 1.0 / (1.0 + std::exp(-z));
            // 1 - sigmoid(z) written as sigmoid(-z) so the reference keeps precision for large z
            const double ref = -(y * std::log(s) + (1 - y) * std::log(1.0 / (1.0 + std::exp(z))));
            EXPECT_NEAR(loss, ref, 1e-9 * std::max(1.0, ref));
            EXPECT_NEAR(d, s - y, 1e-12);
        }
    }
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
    Rng rng(13);
    const std::size_t vocab = 24;
    auto m = fixtures::grad_check_model(vocab, 7);
    const auto c = fixtures::grad_check_case(vocab, rng);
    for (const auto& e : fixtures::grad_check(m, c, 60, rng)) {
        EXPECT_LE(e.rel, 1e-3) << e.name << "[" << e.index << "] analytic " << e.analytic << " numeric " << e.numeric;
    }
}

TEST(Encoder, DropoutGradientsMatchWithFixedMask) {
    // Same dropout draws for every evaluation: reseed the generator each time.
    auto cfg = tiny(12);
    cfg.dropout = 0.2;
    cfg.init_std = 0.3;
    ModelBundle<double> m(cfg, 3);
    m.add_head(Head::qa, 3);
    const auto in = small_input(6);
    auto loss = [&](bool backward) {
        Rng r(99);
        auto e = m.encode(in, &r, backward);
        const auto l = qa_loss(m, RowVec<double>(e.cls()), 1, backward);
        if (backward) {
            Mat<double> d = Mat<double>::Zero(e.states.rows(), e.states.cols());
            d.row(0) = l.dinput;
            m.encode_backward(e.cache, d);
        }
        return l.loss;
    };
    m.zero_grad();
    loss(true);
    auto& w = m.params().at("layer1.ffn.in.weight");
    for (Eigen::Index i = 0; i < 20; ++i) {
        const double orig = w.value.data()[i];
        w.value.data()[i] = orig + 1e-5;
        const double up = loss(false);
        w.value.data()[i] = orig - 1e-5;
        const double down = loss(false);
        w.value.data()[i] = orig;
        EXPECT_LE(fixtures::relative_error(w.grad.data()[i], (up - down) / 2e-5), 1e-4);
    }
}

TEST(Encoder, SnapshotRestore) {
    ModelBundle<float> m(tiny(), 1);
    const auto snap = m.snapshot();
    const auto before = m.encode(small_input(5)).states;
    m.params().at("layer0.ffn.in.weight").value.setConstant(0.5f);
    EXPECT_FALSE(m.encode(small_input(5)).states.isApprox(before));
    m.restore(snap);
    EXPECT_TRUE(m.encode(small_input(5)).states.isApprox(before));
    m.add_head(Head::qa, 1);
    EXPECT_THROW(m.restore(snap), Error);
}

TEST(Encoder, CheckpointRoundTrip) {
    ModelBundle<float> m(tiny(), 4);
    m.add_head(Head::qa, 4);
    m.add_head(Head::match, 4);
    const auto dir = std::filesystem::temp_directory_path() / "mwp_ckpt_rt";
    std::filesystem::remove_all(dir);
    save_checkpoint(m, dir, {{"note", "x"}});
    auto back = load_checkpoint<float>(dir);
    EXPECT_EQ(back.heads(), m.heads());
    for (const auto& [name, p] : m.params()) EXPECT_TRUE(p.value.isApprox(back.params().at(name).value)) << name;
    EXPECT_EQ(read_checkpoint_config(dir)["metadata"]["note"], "x");
    const auto in = small_input(6);
    EXPECT_TRUE(m.encode(in).states.isApprox(back.encode(in).states));
    std::filesystem::remove_all(dir);
}

TEST(Encoder, ConfigJsonRoundTrip) {
    auto c = EncoderConfig::base();
    c.match_activation = Activation::tanh;
    nlohmann::json j = c;
    const auto back = j.get<EncoderConfig>();
    EXPECT_EQ(back.layers, 12u);
    EXPECT_EQ(back.hidden, 768u);
    EXPECT_EQ(back.ff, 3072u);
    EXPECT_EQ(back.match_activation, Activation::tanh);
    EXPECT_THROW(EncoderConfig::preset("huge", 10), Error);
}
