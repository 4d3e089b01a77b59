#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mwp/error.hpp"

namespace mwp {

using TokenId = int;

struct SpecialIds {
    TokenId pad = 0;
    TokenId unk = 1;
    TokenId cls = 2;
    TokenId sep = 3;
    TokenId mask = 4;
    TokenId num = 5;

    bool contains(TokenId id) const {
        return id == pad || id == unk || id == cls || id == sep || id == mask || id == num;
    }
};

inline constexpr std::array<std::string_view, 6> kSpecialTokens = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[NUM]"};

/// Token <-> id table. [PAD] is always id 0. Serialized as one token per line,
/// line number = id.
class Vocab {
public:
    Vocab() {
        for (auto s : kSpecialTokens) {
            add(std::string(s));
        }
        resolve_specials();
    }

    TokenId add(const std::string& token) {
        if (auto it = index_.find(token); it != index_.end()) {
            return it->second;
        }
        const auto id = static_cast<TokenId>(tokens_.size());
        tokens_.push_back(token);
        index_.emplace(token, id);
        return id;
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    TokenId id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? specials_.unk : it->second;
    }

    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    const SpecialIds& specials() const { return specials_; }
    bool is_special(TokenId id) const { return specials_.contains(id); }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) {
            throw Error(ErrorKind::io, "cannot write vocab " + path);
        }
        for (const auto& t : tokens_) {
            out << t << '\n';
        }
    }

    /// Loads a vocab file. Missing special tokens (other than [PAD], which must
    /// be on line 0) are appended at the end.
    static Vocab load(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            throw Error(ErrorKind::io, "cannot read vocab " + path);
        }
        Vocab v;
        v.tokens_.clear();
        v.index_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            const auto id = static_cast<TokenId>(v.tokens_.size());
            v.tokens_.push_back(line);
            v.index_.emplace(line, id);
        }
        if (v.tokens_.empty() || v.tokens_.front() != "[PAD]") {
            throw Error(ErrorKind::config, "vocab " + path + " must start with [PAD]");
        }
        for (auto s : kSpecialTokens) {
            v.add(std::string(s));
        }
        v.resolve_specials();
        return v;
    }

private:
    void resolve_specials() {
        specials_.pad = index_.at("[PAD]");
        specials_.unk = index_.at("[UNK]");
        specials_.cls = index_.at("[CLS]");
        specials_.sep = index_.at("[SEP]");
        specials_.mask = index_.at("[MASK]");
        specials_.num = index_.at("[NUM]");
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    SpecialIds specials_;
};

/// True iff the token is digits, optionally with one decimal point or with
/// comma thousands separators. A leading "##" continuation marker is ignored.
inline bool is_number_token(std::string_view tok) {
    if (tok.starts_with("##")) {
        tok.remove_prefix(2);
    }
    auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
    std::size_t i = 0;
    std::size_t lead = 0;
    while (i < tok.size() && is_digit(tok[i])) {
        ++i;
        ++lead;
    }
    if (lead == 0) {
        return false;
    }
    if (i < tok.size() && tok[i] == ',') {
        if (lead > 3) {
            return false;
        }
        while (i < tok.size() && tok[i] == ',') {
            std::size_t group = 0;
            ++i;
            while (i < tok.size() && is_digit(tok[i])) {
                ++i;
                ++group;
            }
            if (group != 3) {
                return false;
            }
        }
    }
    if (i < tok.size() && tok[i] == '.') {
        ++i;
        std::size_t frac = 0;
        while (i < tok.size() && is_digit(tok[i])) {
            ++i;
            ++frac;
        }
        if (frac == 0) {
            return false;
        }
    }
    return i == tok.size();
}

/// Text -> token ids. Implementations are read-only after construction.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
    virtual const Vocab& vocab() const = 0;

    std::vector<TokenId> encode(std::string_view text) const {
        const auto pieces = tokenize(text);
        std::vector<TokenId> ids;
        ids.reserve(pieces.size());
        const auto& v = vocab();
        for (const auto& p : pieces) {
            TokenId id = v.id(p);
            // Raw text never yields a special id, even if it spells one out.
            if (v.is_special(id)) {
                id = v.specials().unk;
            }
            ids.push_back(id);
        }
        return ids;
    }

    const SpecialIds& specials() const { return vocab().specials(); }
    bool is_number(TokenId id) const { return is_number_token(vocab().token(id)); }
};

namespace detail {

inline bool is_ascii_alpha(unsigned char c) { return std::isalpha(c) != 0; }
inline bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

inline std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xe) return 3;
    if ((lead >> 3) == 0x1e) return 4;
    return 1;
}

/// Lexes a number starting at `i`: digits, optional comma thousands groups
/// (only when the leading group has at most 3 digits), optional decimal part.
inline std::size_t lex_number(std::string_view s, std::size_t i) {
    const std::size_t start = i;
    while (i < s.size() && is_ascii_digit(s[i])) ++i;
    if (i - start <= 3) {
        while (i + 3 < s.size() && s[i] == ',' && is_ascii_digit(s[i + 1]) &&
               is_ascii_digit(s[i + 2]) && is_ascii_digit(s[i + 3]) &&
               (i + 4 >= s.size() || !is_ascii_digit(s[i + 4]))) {
            i += 4;
        }
    }
    if (i + 1 < s.size() && s[i] == '.' && is_ascii_digit(s[i + 1])) {
        ++i;
        while (i < s.size() && is_ascii_digit(s[i])) ++i;
    }
    return i;
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

}  // namespace detail

/// Desk-scale tokenizer: lowercases, splits on whitespace, keeps letter runs and
/// numbers together and emits every other character as its own token.
class BasicTokenizer final : public Tokenizer {
public:
    BasicTokenizer() = default;
    explicit BasicTokenizer(Vocab vocab) : vocab_(std::move(vocab)) {}

    static std::vector<std::string> split(std::string_view text) {
        std::vector<std::string> out;
        std::size_t i = 0;
        while (i < text.size()) {
            const auto c = static_cast<unsigned char>(text[i]);
            if (detail::is_space(c)) {
                ++i;
            } else if (detail::is_ascii_digit(c)) {
                const auto end = detail::lex_number(text, i);
                out.emplace_back(text.substr(i, end - i));
                i = end;
            } else if (detail::is_ascii_alpha(c)) {
                auto end = i;
                while (end < text.size() && detail::is_ascii_alpha(static_cast<unsigned char>(text[end]))) {
                    ++end;
                }
                out.push_back(detail::lower(text.substr(i, end - i)));
                i = end;
            } else {
                const auto len = std::min(detail::utf8_length(c), text.size() - i);
                out.emplace_back(text.substr(i, len));
                i += len;
            }
        }
        return out;
    }

    std::vector<std::string> tokenize(std::string_view text) const override { return split(text); }
    const Vocab& vocab() const override { return vocab_; }

    /// Builds a vocab from corpus text: tokens ordered by descending frequency,
    /// ties broken lexicographically; tokens seen fewer than `min_count` times map to [UNK].
    template <class Range>
    static BasicTokenizer build(const Range& texts, std::size_t min_count = 1) {
        std::map<std::string, std::size_t> counts;
        for (const auto& t : texts) {
            for (auto& tok : split(t)) {
                ++counts[tok];
            }
        }
        std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        Vocab v;
        for (const auto& [tok, n] : sorted) {
            if (n >= min_count) {
                v.add(tok);
            }
        }
        if (!v.contains(";")) v.add(";");  // candidate separator in answer layouts
        return BasicTokenizer(std::move(v));
    }

private:
    Vocab vocab_;
};

/// Adapter for an external WordPiece vocabulary (BERT-style): punctuation is
/// split off, words are lowercased, then greedily matched longest-prefix-first
/// with "##" continuation pieces.
class WordPieceTokenizer final : public Tokenizer {
public:
    explicit WordPieceTokenizer(Vocab vocab, bool lowercase = true, std::size_t max_word_chars = 100)
        : vocab_(std::move(vocab)), lowercase_(lowercase), max_word_chars_(max_word_chars) {}

    static WordPieceTokenizer from_file(const std::string& path, bool lowercase = true) {
        return WordPieceTokenizer(Vocab::load(path), lowercase);
    }

    std::vector<std::string> tokenize(std::string_view text) const override {
        std::vector<std::string> out;
        for (const auto& word : basic_split(text)) {
            wordpiece(word, out);
        }
        return out;
    }

    const Vocab& vocab() const override { return vocab_; }

private:
    std::vector<std::string> basic_split(std::string_view text) const {
        std::vector<std::string> words;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty()) {
                words.push_back(lowercase_ ? detail::lower(cur) : cur);
                cur.clear();
            }
        };
        std::size_t i = 0;
        while (i < text.size()) {
            const auto c = static_cast<unsigned char>(text[i]);
            if (detail::is_space(c)) {
                flush();
                ++i;
            } else if (c < 0x80 && std::ispunct(c)) {
                flush();
                words.emplace_back(1, static_cast<char>(c));
                ++i;
            } else {
                const auto len = std::min(detail::utf8_length(c), text.size() - i);
                cur.append(text.substr(i, len));
                i += len;
            }
        }
        flush();
        return words;
    }

    void wordpiece(const std::string& word, std::vector<std::string>& out) const {
        if (word.size() > max_word_chars_) {
            out.emplace_back("[UNK]");
            return;
        }
        std::vector<std::string> pieces;
        std::size_t start = 0;
        while (start < word.size()) {
            std::size_t end = word.size();
            std::string match;
            while (start < end) {
                std::string candidate = word.substr(start, end - start);
                if (start > 0) {
                    candidate = "##" + candidate;
                }
                if (vocab_.contains(candidate)) {
                    match = std::move(candidate);
                    break;
                }
                --end;
            }
            if (match.empty()) {
                out.emplace_back("[UNK]");
                return;
            }
            pieces.push_back(std::move(match));
            start = end;
        }
        out.insert(out.end(), pieces.begin(), pieces.end());
    }

    Vocab vocab_;
    bool lowercase_;
    std::size_t max_word_chars_;
};

}  // namespace mwp
