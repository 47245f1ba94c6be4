#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "rseq/rseq.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

// Per-process scratch directory, removed at exit.
struct ScratchDir {
    fs::path path = fs::temp_directory_path() / ("rseq_cli_" + std::to_string(::getpid()));
    ScratchDir() { fs::create_directories(path); }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

fs::path scratch() {
    static const ScratchDir dir;
    return dir.path;
}

// Runs the CLI from the source tree so shipped configs resolve their data.
Result run_cli(const std::string& args) {
    static int counter = 0;
    const auto capture = scratch() / ("out_" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string("cd '") + RSEQ_SOURCE_DIR + "' && '" + RSEQ_CLI_PATH + "' " + args + " > '" +
                            capture.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(capture);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string strip_wall(const std::string& log) {
    return std::regex_replace(log, std::regex(" wall_ms=[0-9]+"), "");
}

std::map<std::string, std::string> fields(const std::string& line) {
    std::map<std::string, std::string> f;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq != std::string::npos) f[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return f;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

// One short character-model run shared by the tests below.
class TrainedRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = scratch() / "char1";
        result_ = run_cli("train --config configs/charlm_smoke.cfg --max-epochs 1 --out '" + dir_.string() + "'");
    }
    static fs::path dir_;
    static Result result_;
};
fs::path TrainedRun::dir_;
Result TrainedRun::result_;

}  // namespace

TEST_F(TrainedRun, ProducesLogCheckpointAndConfig) {
    ASSERT_EQ(result_.code, 0) << result_.out;
    EXPECT_TRUE(fs::exists(dir_ / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(dir_ / "config.cfg"));
    const auto log = lines(read(dir_ / "metrics.log"));
    ASSERT_EQ(log.size(), 2u);
    const std::regex row(
        R"(step=\d+ epoch=1 split=(train|val) loss=\S+ metric=\S+ lr=\S+ wall_ms=\d+)");
    for (const auto& l : log) EXPECT_TRUE(std::regex_match(l, row)) << l;
    EXPECT_EQ(fields(log[0])["split"], "train");
    EXPECT_EQ(fields(log[1])["split"], "val");
}

TEST_F(TrainedRun, SameSeedGivesIdenticalLog) {
    ASSERT_EQ(result_.code, 0);
    const auto again = scratch() / "char1_again";
    ASSERT_EQ(run_cli("train --config configs/charlm_smoke.cfg --max-epochs 1 --out '" + again.string() + "'").code, 0);
    EXPECT_EQ(strip_wall(read(dir_ / "metrics.log")), strip_wall(read(again / "metrics.log")));
    EXPECT_EQ(read(dir_ / "checkpoint.bin"), read(again / "checkpoint.bin"));
}

TEST_F(TrainedRun, EvalReproducesFinalValidationLoss) {
    ASSERT_EQ(result_.code, 0);
    const auto log = lines(read(dir_ / "metrics.log"));
    const double logged = std::stod(fields(log.back())["loss"]);
    const auto a = run_cli("eval --checkpoint '" + (dir_ / "checkpoint.bin").string() + "' --split val");
    ASSERT_EQ(a.code, 0) << a.out;
    const auto out = lines(a.out);
    ASSERT_GE(out.size(), 2u);
    EXPECT_EQ(fields(out[0])["metric"], "nll");
    EXPECT_NEAR(std::stod(fields(out[0])["value"]), logged, 1e-6);
    EXPECT_EQ(fields(out[1])["metric"], "bpc");
    const auto b = run_cli("eval --checkpoint '" + (dir_ / "checkpoint.bin").string() + "' --split val");
    EXPECT_EQ(a.out, b.out);
}

TEST_F(TrainedRun, EchoedConfigReproducesTheRun) {
    ASSERT_EQ(result_.code, 0);
    const auto cfg = rseq::kv::parse(read(dir_ / "config.cfg"));
    std::map<std::string, std::string> m(cfg.begin(), cfg.end());
    EXPECT_EQ(m["max_epochs"], "1");
    EXPECT_EQ(m["d_model"], "64");
    EXPECT_EQ(m["dropout"], "0.15");
    EXPECT_NE(m["vocab_size"], "0");
}

TEST_F(TrainedRun, EvalWithMismatchedModelExitsTwo) {
    ASSERT_EQ(result_.code, 0);
    const auto r = run_cli("eval --checkpoint '" + (dir_ / "checkpoint.bin").string() + "' d_model=32 num_heads=2");
    EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, UntrainedModelLossIsNearLogV) {
    const auto dir = scratch() / "untrained";
    ASSERT_EQ(run_cli("train --config configs/charlm_smoke.cfg --max-epochs 0 --out '" + dir.string() + "'").code, 0);
    const auto r = run_cli("eval --checkpoint '" + (dir / "checkpoint.bin").string() + "'");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto cfg = rseq::kv::parse(read(dir / "config.cfg"));
    double V = 0;
    for (const auto& [k, v] : cfg)
        if (k == "vocab_size") V = std::stod(v);
    const double loss = std::stod(fields(lines(r.out)[0])["value"]);
    EXPECT_NEAR(loss, std::log(V), 0.05 * std::log(V));
}

TEST(Cli, FlagsBeatOverridesBeatFile) {
    const auto dir = scratch() / "precedence";
    const auto r = run_cli("train --config configs/charlm_smoke.cfg --max-epochs 0 --seed 5 seed=7 d_model=32 --out '" +
                        dir.string() + "'");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto text = read(dir / "config.cfg");
    EXPECT_NE(text.find("seed = 5\n"), std::string::npos);
    EXPECT_NE(text.find("d_model = 32\n"), std::string::npos);
}

TEST(Cli, InvalidConfigExitsTwo) {
    const auto dir = (scratch() / "bad").string();
    EXPECT_EQ(run_cli("train --config configs/charlm_smoke.cfg no_such_key=1 --out " + dir).code, 2);
    EXPECT_EQ(run_cli("train --config configs/charlm_smoke.cfg num_heads=5 --out " + dir).code, 2);
    EXPECT_EQ(run_cli("train --config configs/charlm_smoke.cfg dropout=abc --out " + dir).code, 2);
    EXPECT_EQ(run_cli("train --config configs/charlm_smoke.cfg lr=1.5 --out " + dir).code, 2);
    EXPECT_EQ(run_cli("train --config configs/does_not_exist.cfg --out " + dir).code, 2);
    EXPECT_EQ(run_cli("train --config configs/music_paper.cfg --out " + dir).code, 2);
    EXPECT_EQ(run_cli("train --precision f16").code, 2);
}

TEST(Cli, NumericFaultExitsThree) {
    const auto dir = scratch() / "blowup";
    const auto r = run_cli("train --config configs/charlm_smoke.cfg --max-epochs 1 optimizer=sgd lr=1e30 lr_candidates= "
                        "clip_norm=0 --out '" + dir.string() + "'");
    EXPECT_EQ(r.code, 3) << r.out;
    // The initial checkpoint is still loadable.
    EXPECT_NO_THROW(rseq::load_checkpoint<float>(dir / "checkpoint.bin"));
}

TEST(Cli, GradcheckPassesAndListsEveryGroupOnce) {
    const auto r = run_cli("gradcheck");
    EXPECT_EQ(r.code, 0) << r.out;
    std::map<std::string, int> seen;
    for (const auto& l : lines(r.out)) {
        const auto f = fields(l);
        if (f.count("group")) ++seen[f.at("group")];
    }
    for (const auto& g : rseq::layer_parameter_groups()) EXPECT_EQ(seen[g], 1) << g;
    EXPECT_NE(r.out.find("gradcheck: PASS"), std::string::npos);
}

TEST(Cli, CorruptedBackwardRuleFailsGradcheck) {
    const auto r = run_cli("gradcheck gc_corrupt_op=relu gc_seeds=2");
    EXPECT_EQ(r.code, 1) << r.out;
    EXPECT_NE(r.out.find("offenders="), std::string::npos);
    EXPECT_NE(r.out.find("ffn.W1"), std::string::npos);
}

TEST(Cli, CopyTaskRunsAndReportsAccuracy) {
    const auto dir = scratch() / "copy";
    const auto r = run_cli("train --config configs/copy_smoke.cfg --max-epochs 1 steps_per_epoch=3 eval_sequences=32 --out '" +
                        dir.string() + "'");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto e = run_cli("eval --checkpoint '" + (dir / "checkpoint.bin").string() + "' --split test");
    ASSERT_EQ(e.code, 0) << e.out;
    EXPECT_NE(e.out.find("metric=accuracy value="), std::string::npos);
}

TEST(Cli, PixelTaskRuns) {
    const auto dir = scratch() / "digits";
    const auto r = run_cli("train --config configs/mnist_smoke.cfg --max-epochs 1 synth_count=128 --out '" + dir.string() +
                        "'");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(read(dir / "metrics.log").find("split=val"), std::string::npos);
}

TEST(Cli, ResumeAppendsToLog) {
    const auto dir = scratch() / "resume";
    const auto base = "train --config configs/copy_smoke.cfg steps_per_epoch=2 eval_sequences=32 --out '" + dir.string() + "'";
    ASSERT_EQ(run_cli(std::string(base) + " --max-epochs 1").code, 0);
    const auto r = run_cli(std::string(base) + " --max-epochs 2 --checkpoint '" + (dir / "checkpoint.bin").string() + "'");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto log = lines(read(dir / "metrics.log"));
    ASSERT_EQ(log.size(), 4u);
    EXPECT_EQ(fields(log[3])["epoch"], "2");
}

TEST(Cli, MnistPaperConfigEncodesEightByThirtyTwo) {
    const auto cfg = rseq::kv::parse(read(fs::path(RSEQ_SOURCE_DIR) / "configs/mnist_paper.cfg"));
    std::map<std::string, std::string> m(cfg.begin(), cfg.end());
    EXPECT_EQ(m["num_layers"], "8");
    EXPECT_EQ(m["d_model"], "32");
}
