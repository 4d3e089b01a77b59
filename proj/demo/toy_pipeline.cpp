// End-to-end run of the mwp command set on generated AQuA-style problems.
//   toy_pipeline [workdir]   (default: ./toy_run)
// Writes train/dev/test JSONL, then prepare -> selfsup -> finetune -> permtest
// -> difficulty -> report, all on the toy preset.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mwp/cli.hpp"

using namespace mwp;
namespace fs = std::filesystem;

namespace {

Problem make_problem(Rng& rng, std::size_t idx) {
    static const char* names[] = {"tom", "ann", "raj", "mia"};
    const std::string name = names[uniform_index(rng, 4)];
    long v = 3 + static_cast<long>(uniform_index(rng, 15));
    const long add = 1 + static_cast<long>(uniform_index(rng, 9));
    const long mul = 2 + static_cast<long>(uniform_index(rng, 3));
    const long answer = (v + add) * mul;

    Problem p;
    p.id = "toy-" + std::to_string(idx);
    p.question = name + " has " + std::to_string(v) + " coins , finds " + std::to_string(add) +
                 " more and then the coins are multiplied by " + std::to_string(mul) + " . how many coins now ?";
    p.rationale = "a = " + std::to_string(v) + "\nb = a + " + std::to_string(add) + "\nc = b * " +
                  std::to_string(mul) + "\nanswer is " + std::to_string(answer);
    std::array<std::string, kNumOptions> values;
    const auto correct = uniform_index(rng, kNumOptions);
    for (std::size_t i = 0; i < kNumOptions; ++i) {
        const long offset = static_cast<long>(i) - static_cast<long>(correct);
        values[i] = std::to_string(answer + 3 * offset);
    }
    p.options = lettered_options(values);
    p.correct = label_letter(correct);
    return p;
}

int step(std::vector<std::string> args) {
    args.insert(args.begin(), "mwp");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::cout << "$";
    for (const auto& a : args) std::cout << ' ' << a;
    std::cout << std::endl;
    return cli::run_command(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path wd = argc > 1 ? argv[1] : "toy_run";
    fs::create_directories(wd / "data");
    auto rng = make_rng(2024, {tag("demo")});
    std::vector<Problem> all;
    for (std::size_t i = 0; i < 260; ++i) all.push_back(make_problem(rng, i));
    write_jsonl({all.begin(), all.begin() + 200}, (wd / "data" / "train.jsonl").string());
    write_jsonl({all.begin() + 200, all.begin() + 230}, (wd / "data" / "dev.jsonl").string());
    write_jsonl({all.begin() + 230, all.end()}, (wd / "data" / "test.jsonl").string());

    const std::string w = wd.string();
    const std::vector<std::vector<std::string>> pipeline = {
        {"prepare", "--workdir", w, "--data", "data", "--ext-dev-samples", "40"},
        {"selfsup", "--workdir", w, "--losses", "MLM,NROP", "--epochs", "2", "--lr", "1e-3", "--max-len", "128",
         "--out", "selfsup"},
        {"finetune", "--workdir", w, "--init", "selfsup/final", "--scheme", "SEP-NC", "--epochs", "3", "--lr", "1e-4",
         "--track-test", "--out", "finetune"},
        {"permtest", "--workdir", w, "--model", "finetune/best", "--scheme", "SEP-NC", "--out", "permtest"},
        {"difficulty", "--workdir", w, "--dump", "finetune/predictions_test.jsonl", "--out", "difficulty"},
        {"report", "--workdir", w, "--inputs", "permtest/consistency.json,difficulty/difficulty.json", "--out",
         "report"},
    };
    for (const auto& args : pipeline) {
        if (const int rc = step(args); rc != 0) return rc;
    }
    std::cout << "report: " << (wd / "report" / "report.md").string() << '\n';
    return 0;
}
