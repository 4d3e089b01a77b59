#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "mwp/corpus.hpp"
#include "mwp/random.hpp"
#include "mwp/tokenizer.hpp"

// Generated multi-step arithmetic word problems. Rationale steps chain named
// intermediate values ("a = 7", "b = a + 5", ...), so step order is visible
// from content alone.

namespace mwp::fixtures {

inline constexpr std::array<const char*, 8> kNames = {"tom", "ann", "raj", "lee", "mia", "sam", "ivy", "max"};
inline constexpr std::array<const char*, 6> kItems = {"apples", "coins", "books", "pens", "cards", "stamps"};
inline constexpr std::array<char, 6> kVars = {'a', 'b', 'c', 'd', 'e', 'f'};

struct SyntheticOptions {
    std::size_t min_steps = 2;  // arithmetic operations after the initial value
    std::size_t max_steps = 4;
};

inline Problem synthetic_problem(Rng& rng, std::size_t index, const SyntheticOptions& opts = {}) {
    const std::string name = kNames[uniform_index(rng, kNames.size())];
    const std::string item = kItems[uniform_index(rng, kItems.size())];
    const auto n_ops = opts.min_steps + uniform_index(rng, opts.max_steps - opts.min_steps + 1);

    long value = 2 + static_cast<long>(uniform_index(rng, 20));
    std::string question = name + " has " + std::to_string(value) + " " + item + " .";
    std::vector<std::string> steps{std::string(1, kVars[0]) + " = " + std::to_string(value)};
    for (std::size_t k = 0; k < n_ops; ++k) {
        const std::string prev(1, kVars[k]);
        const std::string cur(1, kVars[k + 1]);
        const auto op = uniform_index(rng, 3);
        if (op == 0) {
            const long x = 1 + static_cast<long>(uniform_index(rng, 9));
            question += " then " + name + " gets " + std::to_string(x) + " more .";
            steps.push_back(cur + " = " + prev + " + " + std::to_string(x));
            value += x;
        } else if (op == 1 && value > 2) {
            const long x = 1 + static_cast<long>(uniform_index(rng, static_cast<std::size_t>(std::min<long>(value - 1, 9))));
            question += " then " + name + " loses " + std::to_string(x) + " .";
            steps.push_back(cur + " = " + prev + " - " + std::to_string(x));
            value -= x;
        } else {
            const long x = 2 + static_cast<long>(uniform_index(rng, 2));
            question += " then the " + item + " are multiplied by " + std::to_string(x) + " .";
            steps.push_back(cur + " = " + prev + " * " + std::to_string(x));
            value *= x;
        }
    }
    question += " how many " + item + " does " + name + " have ?";
    steps.push_back("answer is " + std::to_string(value));

    std::array<std::string, kNumOptions> values;
    std::vector<long> used{value};
    const auto correct = uniform_index(rng, kNumOptions);
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        if (i == correct) {
            values[i] = std::to_string(value);
            continue;
        }
        long d = value;
        while (std::find(used.begin(), used.end(), d) != used.end() || d < 0) {
            d = value + static_cast<long>(uniform_index(rng, 21)) - 10;
        }
        used.push_back(d);
        values[i] = std::to_string(d);
    }

    Problem p;
    p.id = "syn-" + std::to_string(index);
    p.question = question;
    p.options = lettered_options(values);
    p.correct = label_letter(correct);
    std::string rationale;
    for (std::size_t i = 0; i < steps.size(); ++i) rationale += (i ? "\n" : "") + steps[i];
    p.rationale = rationale;
    return p;
}

inline std::vector<Problem> synthetic_corpus(std::size_t n, std::uint64_t seed, const SyntheticOptions& opts = {}) {
    auto rng = make_rng(seed, {tag("synthetic")});
    std::vector<Problem> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic_problem(rng, i, opts));
    return out;
}

inline std::vector<std::string> corpus_texts(const std::vector<Problem>& problems) {
    std::vector<std::string> texts;
    for (const auto& p : problems) {
        texts.push_back(p.question);
        texts.push_back(p.rationale);
        for (const auto& o : p.options) texts.push_back(o);
    }
    return texts;
}

inline BasicTokenizer synthetic_tokenizer(const std::vector<Problem>& problems) {
    return BasicTokenizer::build(corpus_texts(problems));
}

/// Problem with arbitrary candidate strings (random letters and digits).
inline Problem random_problem(Rng& rng, std::size_t index) {
    static const std::string alphabet = "0123456789abcdefghij";
    auto word = [&] {
        std::string w;
        const auto len = 1 + uniform_index(rng, 4);
        for (std::size_t i = 0; i < len; ++i) w += alphabet[uniform_index(rng, alphabet.size())];
        return w;
    };
    std::array<std::string, kNumOptions> values;
    for (auto& v : values) v = word();
    Problem p;
    p.id = "rnd-" + std::to_string(index);
    p.question = "what is " + word() + " plus " + word() + " ?";
    p.options = lettered_options(values);
    p.correct = label_letter(uniform_index(rng, kNumOptions));
    p.rationale = word() + "\n" + word();
    return p;
}

}  // namespace mwp::fixtures
