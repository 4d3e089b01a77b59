#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mwp/corpus.hpp"
#include "mwp/error.hpp"
#include "mwp/random.hpp"
#include "mwp/tokenizer.hpp"

namespace mwp {

inline constexpr std::size_t kMaxPositions = 512;

enum Segment : int { kQuestionSegment = 0, kRationaleSegment = 1 };

/// One encoder pass worth of input. All four vectors have the same length.
struct EncodedInput {
    std::vector<TokenId> ids;
    std::vector<int> segments;
    std::vector<int> positions;
    std::vector<std::uint8_t> mask;

    std::size_t size() const { return ids.size(); }

    void push(TokenId id, int segment, int position) {
        ids.push_back(id);
        segments.push_back(segment);
        positions.push_back(position);
        mask.push_back(1);
    }

    /// Rewrites position ids as 0..n-1.
    void renumber() { std::iota(positions.begin(), positions.end(), 0); }

    bool operator==(const EncodedInput&) const = default;
};

enum class OrderLabel : std::uint8_t { preserved = 0, swapped = 1 };
enum class MatchLabel : std::uint8_t { matched = 0, mismatched = 1 };

struct MlmTarget {
    std::size_t position;
    TokenId original;

    bool operator==(const MlmTarget&) const = default;
};

struct PretextSample {
    EncodedInput input;
    std::vector<MlmTarget> mlm_targets;  // sorted by position
    std::optional<OrderLabel> order_label;
    std::optional<MatchLabel> match_label;

    bool operator==(const PretextSample&) const = default;
};

using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
    if (sink) {
        sink->push_back(std::move(message));
    }
}

// ---------------------------------------------------------------------------
// Input assembly

/// [CLS] question [SEP] rationale [SEP]. Segment 0 covers [CLS], the question
/// and the first [SEP]; segment 1 covers the rationale and the closing [SEP].
/// With an empty rationale the layout is [CLS] question [SEP].
/// Overlong inputs lose rationale tokens from the end first, then question tokens.
inline EncodedInput assemble_ss_input(const std::vector<TokenId>& question,
                                      const std::vector<std::vector<TokenId>>& steps, const SpecialIds& sp,
                                      std::size_t max_len = kMaxPositions, Warnings* warnings = nullptr) {
    std::vector<TokenId> rationale;
    for (const auto& s : steps) {
        rationale.insert(rationale.end(), s.begin(), s.end());
    }
    std::size_t q_len = question.size();
    if (q_len + 2 > max_len) {
        q_len = max_len - 2;
        warn(warnings, "question of " + std::to_string(question.size()) + " tokens truncated to " +
                           std::to_string(q_len));
    }
    std::size_t r_len = rationale.size();
    if (r_len > 0 && q_len + 3 + r_len > max_len) {
        r_len = max_len > q_len + 3 ? max_len - q_len - 3 : 0;
    }

    EncodedInput in;
    in.push(sp.cls, kQuestionSegment, 0);
    for (std::size_t i = 0; i < q_len; ++i) in.push(question[i], kQuestionSegment, 0);
    in.push(sp.sep, kQuestionSegment, 0);
    if (r_len > 0) {
        for (std::size_t i = 0; i < r_len; ++i) in.push(rationale[i], kRationaleSegment, 0);
        in.push(sp.sep, kRationaleSegment, 0);
    }
    in.renumber();
    return in;
}

inline std::vector<std::vector<TokenId>> encode_steps(const RationaleSteps& steps, const Tokenizer& tok) {
    std::vector<std::vector<TokenId>> out;
    out.reserve(steps.size());
    for (const auto& s : steps.steps) out.push_back(tok.encode(s));
    return out;
}

inline EncodedInput assemble_ss_input(std::string_view question, const RationaleSteps& steps, const Tokenizer& tok,
                                      std::size_t max_len = kMaxPositions, Warnings* warnings = nullptr) {
    if (detail::trim(question).empty()) {
        throw Error(ErrorKind::invalid_argument, "empty question");
    }
    return assemble_ss_input(tok.encode(question), encode_steps(steps, tok), tok.specials(), max_len, warnings);
}

// ---------------------------------------------------------------------------
// Masked language modelling

enum class MaskReplacement { mask_only, bert_80_10_10 };
enum class MaskScope { chosen_span, whole_sequence };

struct MlmOptions {
    double ratio = 0.15;
    MaskReplacement replacement = MaskReplacement::mask_only;
    MaskScope scope = MaskScope::chosen_span;
    std::size_t vocab_size = 0;  // needed only for bert_80_10_10
};

inline bool is_structural(TokenId id, const SpecialIds& sp) { return id == sp.cls || id == sp.sep || id == sp.pad; }

/// Positions of maskable content tokens carrying `segment`.
inline std::vector<std::size_t> content_span(const EncodedInput& in, int segment, const SpecialIds& sp) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in.segments[i] == segment && in.mask[i] && !is_structural(in.ids[i], sp)) {
            out.push_back(i);
        }
    }
    return out;
}

inline std::size_t mask_count(std::size_t span_len, double ratio) {
    if (span_len == 0) return 0;
    const auto n = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(span_len)));
    return std::clamp<std::size_t>(n, 1, span_len);
}

/// Picks the question or the rationale span uniformly (falling back to the other
/// one when empty) and masks round(ratio * span) tokens of it, at least one.
inline PretextSample apply_mlm_mask(const EncodedInput& input, const SpecialIds& sp, Rng& rng,
                                    const MlmOptions& opts = {}) {
    PretextSample out;
    out.input = input;

    const auto question = content_span(input, kQuestionSegment, sp);
    const auto rationale = content_span(input, kRationaleSegment, sp);
    const bool pick_rationale = coin(rng);
    const auto* span = pick_rationale ? &rationale : &question;
    if (span->empty()) {
        span = pick_rationale ? &question : &rationale;
    }
    if (span->empty()) {
        return out;
    }

    std::size_t n = 0;
    if (opts.scope == MaskScope::chosen_span) {
        n = mask_count(span->size(), opts.ratio);
    } else {
        n = std::min(span->size(), mask_count(question.size() + rationale.size(), opts.ratio));
    }

    std::vector<std::size_t> chosen = *span;
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(n);
    std::sort(chosen.begin(), chosen.end());

    for (auto pos : chosen) {
        out.mlm_targets.push_back({pos, input.ids[pos]});
        TokenId replacement = sp.mask;
        if (opts.replacement == MaskReplacement::bert_80_10_10) {
            const double u = std::uniform_real_distribution<double>{0.0, 1.0}(rng);
            if (u >= 0.8 && u < 0.9 && opts.vocab_size > 0) {
                do {
                    replacement = static_cast<TokenId>(uniform_index(rng, opts.vocab_size));
                } while (sp.contains(replacement));
            } else if (u >= 0.9) {
                replacement = input.ids[pos];
            }
        }
        out.input.ids[pos] = replacement;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reasoning order prediction

enum class OrderVariant { rop, nrop };

template <class Step>
struct OrderSample {
    std::vector<Step> steps;
    OrderLabel label = OrderLabel::preserved;
    std::size_t first = 0;  // swapped pair, meaningful only when label == swapped
    std::size_t second = 0;
};

/// With probability 1/2 returns the steps unchanged; otherwise swaps one pair,
/// any i<j for ROP or neighbours (i, i+1) for NROP. Returns nullopt when fewer
/// than two steps are available.
template <class Step>
std::optional<OrderSample<Step>> make_order_sample(const std::vector<Step>& steps, OrderVariant variant, Rng& rng) {
    const auto n = steps.size();
    if (n < 2) {
        return std::nullopt;
    }
    OrderSample<Step> out;
    out.steps = steps;
    if (coin(rng)) {
        out.label = OrderLabel::preserved;
        return out;
    }
    std::size_t i = 0;
    std::size_t j = 1;
    if (variant == OrderVariant::nrop) {
        i = uniform_index(rng, n - 1);
        j = i + 1;
    } else {
        // Enumerate pairs i<j row by row.
        auto k = uniform_index(rng, n * (n - 1) / 2);
        i = 0;
        while (k >= n - 1 - i) {
            k -= n - 1 - i;
            ++i;
        }
        j = i + 1 + k;
    }
    std::swap(out.steps[i], out.steps[j]);
    out.label = OrderLabel::swapped;
    out.first = i;
    out.second = j;
    return out;
}

// ---------------------------------------------------------------------------
// Question-rationale alignment

struct QraItem {
    std::vector<TokenId> question;
    std::vector<std::vector<TokenId>> steps;
};

inline std::vector<TokenId> mask_numbers(std::vector<TokenId> ids, const Tokenizer& tok) {
    for (auto& id : ids) {
        if (tok.is_number(id)) {
            id = tok.specials().num;
        }
    }
    return ids;
}

/// Per item, with probability 1/2 the rationale is replaced by another batch
/// member's (label mismatched). Every number token becomes [NUM].
inline std::vector<PretextSample> make_qra_samples(const std::vector<QraItem>& batch, const Tokenizer& tok, Rng& rng,
                                                   std::size_t max_len = kMaxPositions, Warnings* warnings = nullptr) {
    std::vector<PretextSample> out;
    out.reserve(batch.size());
    if (batch.size() < 2) {
        warn(warnings, "QRA batch of size 1 cannot form negatives; all labels matched");
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t source = i;
        if (batch.size() >= 2 && coin(rng)) {
            source = uniform_index(rng, batch.size() - 1);
            if (source >= i) ++source;
        }
        std::vector<std::vector<TokenId>> steps;
        for (const auto& s : batch[source].steps) steps.push_back(mask_numbers(s, tok));
        PretextSample s;
        s.input = assemble_ss_input(mask_numbers(batch[i].question, tok), steps, tok.specials(), max_len, warnings);
        s.match_label = source == i ? MatchLabel::matched : MatchLabel::mismatched;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-epoch regeneration

struct PretextConfig {
    bool mlm = true;
    std::optional<OrderVariant> order;  // ROP or NROP, none when absent
    bool qra = false;
    bool include_rationales = true;
    std::size_t regenerate_every = 2;  // k: order/QRA draws change every k epochs
    std::size_t qra_batch = 16;
    std::size_t max_len = kMaxPositions;
    MlmOptions mlm_options;
};

/// Tokenized problems ready for pretext sampling.
class PretextDataset {
public:
    PretextDataset(const std::vector<Problem>& problems, const Tokenizer& tok, PretextConfig config)
        : tok_(&tok), config_(std::move(config)) {
        items_.reserve(problems.size());
        for (const auto& p : problems) {
            QraItem item;
            item.question = tok.encode(p.question);
            if (config_.include_rationales) {
                item.steps = encode_steps(split_rationale(p.rationale), tok);
            }
            items_.push_back(std::move(item));
        }
        if (config_.mlm_options.vocab_size == 0) {
            config_.mlm_options.vocab_size = tok.vocab().size();
        }
    }

    std::size_t size() const { return items_.size(); }
    const PretextConfig& config() const { return config_; }
    const Tokenizer& tokenizer() const { return *tok_; }
    const QraItem& item(std::size_t i) const { return items_.at(i); }

private:
    const Tokenizer* tok_;
    PretextConfig config_;
    std::vector<QraItem> items_;
};

struct EpochSamples {
    std::size_t epoch = 0;
    std::vector<PretextSample> samples;      // MLM and/or order samples, one per problem
    std::vector<PretextSample> qra_samples;  // empty unless QRA is enabled
};

/// Builds one problem's MLM/order sample for `epoch`. Masks are redrawn every
/// epoch; swap draws only change when epoch / k changes.
inline PretextSample make_epoch_sample(const PretextDataset& data, std::size_t index, std::size_t epoch,
                                       std::uint64_t seed, Warnings* warnings = nullptr) {
    const auto& cfg = data.config();
    const auto& item = data.item(index);
    const auto cycle = epoch / std::max<std::size_t>(cfg.regenerate_every, 1);
    const auto& sp = data.tokenizer().specials();

    std::optional<OrderLabel> label;
    const std::vector<std::vector<TokenId>>* steps = &item.steps;
    std::optional<OrderSample<std::vector<TokenId>>> ordered;
    if (cfg.order) {
        auto order_rng = make_rng(seed, {tag("order"), cycle, index});
        ordered = make_order_sample(item.steps, *cfg.order, order_rng);
        if (ordered) {
            steps = &ordered->steps;
            label = ordered->label;
        }
    }
    auto input = assemble_ss_input(item.question, *steps, sp, cfg.max_len, warnings);
    PretextSample sample;
    if (cfg.mlm) {
        auto mask_rng = make_rng(seed, {tag("mlm"), epoch, index});
        sample = apply_mlm_mask(input, sp, mask_rng, cfg.mlm_options);
    } else {
        sample.input = std::move(input);
    }
    sample.order_label = label;
    return sample;
}

inline EpochSamples regenerate_epoch_samples(const PretextDataset& data, std::size_t epoch, std::uint64_t seed,
                                             Warnings* warnings = nullptr) {
    EpochSamples out;
    out.epoch = epoch;
    out.samples.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.samples.push_back(make_epoch_sample(data, i, epoch, seed, warnings));
    }
    const auto& cfg = data.config();
    if (cfg.qra && data.size() > 0) {
        const auto cycle = epoch / std::max<std::size_t>(cfg.regenerate_every, 1);
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = make_rng(seed, {tag("qra-batches"), cycle});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const auto bs = std::max<std::size_t>(cfg.qra_batch, 1);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            std::vector<QraItem> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) {
                batch.push_back(data.item(order[k]));
            }
            auto rng = make_rng(seed, {tag("qra"), cycle, start});
            auto samples = make_qra_samples(batch, data.tokenizer(), rng, cfg.max_len, warnings);
            out.qra_samples.insert(out.qra_samples.end(), std::make_move_iterator(samples.begin()),
                                   std::make_move_iterator(samples.end()));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// On-disk sample cache: "MWPS" magic, u32 version, u64 count, then one
// length-prefixed record per sample (all integers little-endian).

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_i32(std::string& buf, std::int32_t v) { put_u32(buf, static_cast<std::uint32_t>(v)); }

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw Error(ErrorKind::io, "truncated sample cache");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::uint8_t encode_label(const std::optional<OrderLabel>& l) {
    return l ? static_cast<std::uint8_t>(*l) : 0xff;
}
inline std::uint8_t encode_label(const std::optional<MatchLabel>& l) {
    return l ? static_cast<std::uint8_t>(*l) : 0xff;
}

}  // namespace detail

inline std::string serialize_sample(const PretextSample& s) {
    std::string rec;
    const auto n = static_cast<std::uint32_t>(s.input.size());
    detail::put_u32(rec, n);
    for (auto id : s.input.ids) detail::put_i32(rec, id);
    for (auto seg : s.input.segments) rec.push_back(static_cast<char>(seg));
    for (auto pos : s.input.positions) detail::put_u32(rec, static_cast<std::uint32_t>(pos));
    for (auto m : s.input.mask) rec.push_back(static_cast<char>(m));
    detail::put_u32(rec, static_cast<std::uint32_t>(s.mlm_targets.size()));
    for (const auto& t : s.mlm_targets) {
        detail::put_u32(rec, static_cast<std::uint32_t>(t.position));
        detail::put_i32(rec, t.original);
    }
    rec.push_back(static_cast<char>(detail::encode_label(s.order_label)));
    rec.push_back(static_cast<char>(detail::encode_label(s.match_label)));
    return rec;
}

inline PretextSample deserialize_sample(std::string_view rec) {
    detail::ByteReader r(rec);
    PretextSample s;
    const auto n = r.u32();
    s.input.ids.resize(n);
    s.input.segments.resize(n);
    s.input.positions.resize(n);
    s.input.mask.resize(n);
    for (auto& id : s.input.ids) id = r.i32();
    for (auto& seg : s.input.segments) seg = r.u8();
    for (auto& pos : s.input.positions) pos = static_cast<int>(r.u32());
    for (auto& m : s.input.mask) m = r.u8();
    const auto m = r.u32();
    for (std::uint32_t i = 0; i < m; ++i) {
        const auto pos = r.u32();
        const auto id = r.i32();
        s.mlm_targets.push_back({pos, id});
    }
    if (auto l = r.u8(); l != 0xff) s.order_label = static_cast<OrderLabel>(l);
    if (auto l = r.u8(); l != 0xff) s.match_label = static_cast<MatchLabel>(l);
    if (!r.done()) throw Error(ErrorKind::io, "trailing bytes in sample record");
    return s;
}

inline constexpr std::uint32_t kSampleCacheVersion = 1;

inline void write_sample_cache(const std::string& path, const std::vector<PretextSample>& samples) {
    std::string buf = "MWPS";
    detail::put_u32(buf, kSampleCacheVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        const auto rec = serialize_sample(s);
        detail::put_u32(buf, static_cast<std::uint32_t>(rec.size()));
        buf += rec;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<PretextSample> read_sample_cache(const std::string& path) {
    const auto data = read_file(path);
    detail::ByteReader r(data);
    if (r.bytes(4) != "MWPS") throw Error(ErrorKind::io, path + " is not a sample cache");
    if (r.u32() != kSampleCacheVersion) throw Error(ErrorKind::io, path + ": unsupported cache version");
    const auto count = r.u32();
    std::vector<PretextSample> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u32();
        out.push_back(deserialize_sample(r.bytes(len)));
    }
    return out;
}

inline std::string variant_name(const PretextConfig& cfg) {
    std::string name;
    if (cfg.mlm) name += "mlm";
    if (cfg.order) name += *cfg.order == OrderVariant::rop ? "+rop" : "+nrop";
    if (cfg.qra) name += "+qra";
    if (!cfg.include_rationales) name += "-norat";
    return name.empty() ? "none" : name;
}

/// Cache file name for one epoch of samples.
inline std::string sample_cache_key(const std::string& corpus_hash, std::uint64_t seed, std::size_t epoch,
                                    const PretextConfig& cfg) {
    return corpus_hash + "-s" + std::to_string(seed) + "-e" + std::to_string(epoch) + "-" + variant_name(cfg) + "-k" +
           std::to_string(cfg.regenerate_every) + "-L" + std::to_string(cfg.max_len) + "-q" +
           std::to_string(cfg.qra_batch) + ".bin";
}

}  // namespace mwp
