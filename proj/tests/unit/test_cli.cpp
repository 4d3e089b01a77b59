#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mwp/cli.hpp"
#include "synthetic.hpp"

using namespace mwp;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "mwp");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run_command(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

nlohmann::json last_error(const std::string& err) {
    const auto pos = err.rfind("{\"error\"");
    return pos == std::string::npos ? nlohmann::json{} : nlohmann::json::parse(err.substr(pos));
}

// One prepared workdir shared by the tests below.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / "mwp_cli_unit";
        fs::remove_all(root_);
        fs::create_directories(root_ / "data");
        const auto all = fixtures::synthetic_corpus(90, 8);
        write_jsonl({all.begin(), all.begin() + 60}, (root_ / "data" / "train.jsonl").string());
        write_jsonl({all.begin() + 60, all.begin() + 75}, (root_ / "data" / "dev.jsonl").string());
        write_jsonl({all.begin() + 75, all.end()}, (root_ / "data" / "test.jsonl").string());
        const auto r = run({"prepare", "--workdir", root_.string(), "--data", "data", "--ext-dev-samples", "10",
                            "--seed", "3"});
        prepared_ = r.code == 0;
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    void SetUp() override { ASSERT_TRUE(prepared_); }

    static std::string wd() { return root_.string(); }

    static inline fs::path root_;
    static inline bool prepared_ = false;
};

}  // namespace

TEST_F(CliTest, PrepareWritesFoldsAndStatistics) {
    for (const char* f : {"train", "dev", "ext_dev", "test"}) EXPECT_TRUE(fs::exists(root_ / "folds" / (std::string(f) + ".jsonl")));
    const auto splits = read_json(root_ / "splits.json");
    EXPECT_EQ(splits["folds"]["ext_dev"].size(), 25u);
    EXPECT_EQ(splits["folds"]["train"].size(), 50u);
    const auto dist = read_json(root_ / "distribution.json");
    double sum = 0;
    for (const auto& [k, v] : dist["folds"]["test"]["distribution"].items()) sum += v.get<double>();
    EXPECT_NEAR(sum, 100.0, 1e-9);
    EXPECT_TRUE(dist.contains("constant_a_test_accuracy"));
    EXPECT_GT(dist["rationale_question_token_ratio"].get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(root_ / "experiment.json"));
}

TEST_F(CliTest, TrainEvaluateAndReport) {
    auto r = run({"selfsup", "--workdir", wd(), "--losses", "MLM,NROP", "--epochs", "1", "--limit", "16", "--lr",
                  "1e-3", "--max-len", "128", "--out", "ss"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(root_ / "ss" / "final" / "config.json"));
    EXPECT_TRUE(fs::exists(root_ / "ss" / "losses.csv"));

    r = run({"finetune", "--workdir", wd(), "--init", "ss/final", "--scheme", "sep-nc", "--epochs", "2", "--lr",
             "1e-3", "--limit", "16", "--track-test", "--out", "ft"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto result = read_json(root_ / "ft" / "result.json");
    EXPECT_EQ(result["scheme"], "SEP-NC");
    EXPECT_EQ(result["val_split"], "extdev");
    EXPECT_TRUE(fs::exists(root_ / "ft" / "predictions_test.jsonl"));
    EXPECT_TRUE(fs::exists(root_ / "ft" / "best" / "config.json"));

    r = run({"eval", "--workdir", wd(), "--model", "ft/best", "--out", "ev"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto acc = read_json(root_ / "ev" / "accuracy.json");
    EXPECT_EQ(acc["scheme"], "SEP-C");  // default scheme for a match-head checkpoint
    EXPECT_EQ(acc["problems"], 15);

    r = run({"eval", "--workdir", wd(), "--dump", "ft/predictions_test.jsonl", "--out", "ev2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_DOUBLE_EQ(read_json(root_ / "ev2" / "accuracy.json")["accuracy"].get<double>(),
                     result["test_accuracy"].get<double>());

    r = run({"permtest", "--workdir", wd(), "--model", "ft/best", "--scheme", "SEP-NC", "--out", "pt"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto cons = read_json(root_ / "pt" / "consistency.json");
    EXPECT_LE(cons["consistency"].get<double>(), cons["accuracy"].get<double>());
    r = run({"permtest", "--workdir", wd(), "--dump", "pt/perm_predictions.jsonl", "--out", "pt2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_json(root_ / "pt2" / "consistency.json")["consistency"], cons["consistency"]);

    r = run({"difficulty", "--workdir", wd(), "--dump", "ft/predictions_test.jsonl", "--out", "df"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto diff = read_json(root_ / "df" / "difficulty.json");
    EXPECT_EQ(diff["problems"], 15);
    EXPECT_NEAR(diff["histogram"]["D1"].get<double>() / 15.0, diff["accuracy"].get<double>(), 1e-12);

    r = run({"embed", "--workdir", wd(), "--model", "ft/best", "--limit", "0", "--out", "em"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(root_ / "em" / "projection.csv"));

    r = run({"plot", "--workdir", wd(), "--input", "ft/trajectory.csv", "--y", "val_acc,test_acc", "--out", "traj.svg"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream svg(root_ / "traj.svg");
    std::string text((std::istreambuf_iterator<char>(svg)), {});
    EXPECT_NE(text.find("<polyline"), std::string::npos);

    r = run({"report", "--workdir", wd(), "--inputs", "ev/accuracy.json,pt/consistency.json,df/difficulty.json",
             "--out", "rep"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = read_json(root_ / "rep" / "report.json");
    EXPECT_EQ(rep["accuracy"].size(), 1u);
    EXPECT_EQ(rep["consistency"].size(), 1u);
    EXPECT_EQ(rep["difficulty"].size(), 1u);
}

TEST_F(CliTest, ConfigFileIsOverriddenByFlags) {
    {
        std::ofstream cfg(root_ / "ss.cfg");
        cfg << "# selfsup settings\nepochs = 1\nlosses = MLM\nlimit = 8\nlr = 0.01\nmax-len = 64\n";
    }
    auto r = run({"selfsup", "--workdir", wd(), "--config", "ss.cfg", "--lr", "0.002", "--out", "cfgrun"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto exp = read_json(root_ / "cfgrun" / "experiment.json");
    // Options are recorded as given.
    EXPECT_DOUBLE_EQ(std::stod(exp["options"]["lr"].get<std::string>()), 0.002);
    EXPECT_EQ(exp["options"]["losses"], "MLM");
    EXPECT_EQ(exp["options"]["epochs"], "1");

    {
        std::ofstream cfg(root_ / "bad.cfg");
        cfg << "bogus = 1\n";
    }
    r = run({"selfsup", "--workdir", wd(), "--config", "bad.cfg"});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(last_error(r.err)["error"]["kind"], "config");
}

TEST_F(CliTest, ErrorsAreMachineReadable) {
    auto r = run({"frobnicate"});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(last_error(r.err)["error"]["kind"], "unknown-command");

    r = run({"eval", "--workdir", wd(), "--fold", "nosuchfold", "--dump", "x.jsonl"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(last_error(r.err)["error"]["kind"], "io");
    EXPECT_EQ(last_error(r.err)["error"]["command"], "eval");

    {
        std::ofstream dump(root_ / "partial.jsonl");
        dump << R"({"problem_id":"syn-75#permA","scores":[1,0,0,0,0],"correct":"A"})" << '\n';
    }
    r = run({"permtest", "--workdir", wd(), "--dump", "partial.jsonl", "--out", "ptx"});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(last_error(r.err)["error"]["kind"], "partial-coverage");

    r = run({"finetune", "--workdir", wd(), "--scheme", "NOPE"});
    EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, ReportWithoutInputsHasMetadataOnly) {
    const auto r = run({"report", "--workdir", wd(), "--seed", "9", "--out", "empty_rep"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = read_json(root_ / "empty_rep" / "report.json");
    EXPECT_EQ(rep["metadata"]["seed"], 9);
    EXPECT_TRUE(rep["accuracy"].empty());
}

TEST(CliBinary, ExitCodes) {
    const char* exe = std::getenv("MWP_CLI");
    if (!exe) GTEST_SKIP() << "MWP_CLI not set";
    EXPECT_EQ(std::system((std::string(exe) + " --help > /dev/null 2>&1").c_str()), 0);
    const int rc = std::system((std::string(exe) + " nonsense > /dev/null 2>&1").c_str());
    EXPECT_EQ(WEXITSTATUS(rc), 2);
}
