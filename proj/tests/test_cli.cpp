#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cnf/cli.hpp"

using namespace cnf;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        dir_ = fs::temp_directory_path() /
               ("cnf-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
        fs::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(dir_, ec);
    }
    const fs::path& path() const { return dir_; }

private:
    static inline int counter_ = 0;
    fs::path dir_;
};

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

} // namespace

TEST(Cli, UnknownSubcommandIsUsageError) {
    const CliResult r = run({"frobnicate"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("usage error"), std::string::npos);
}

TEST(Cli, UnknownFlagIsUsageError) {
    const CliResult r = run({"synth-data", "--bananas", "3"});
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, HelpExitsZero) {
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, SynthDataCountingContract) {
    TempDir tmp;
    const std::string out_dir = (tmp.path() / "d").string();
    const CliResult r =
        run({"synth-data", "--out", out_dir, "--n", "50", "--side", "32", "--seed", "7"});
    EXPECT_EQ(r.code, 0) << r.err;

    std::size_t pgms = 0;
    for (const auto& e : fs::directory_iterator(out_dir))
        if (e.path().extension() == ".pgm") ++pgms;
    EXPECT_EQ(pgms, 200u);

    const DatasetManifest m = load_manifest(fs::path(out_dir) / "manifest.csv");
    EXPECT_EQ(m.entries.size(), 200u);
}

TEST(Cli, MissingConfigIsDataError) {
    const CliResult r = run({"train", "--config", "/nonexistent/nope.ini"});
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, BadConfigSyntaxIsDataError) {
    TempDir tmp;
    write_file(tmp.path() / "bad.ini", "[train]\nepochs == 5\n");
    const CliResult r = run({"train", "--config", (tmp.path() / "bad.ini").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, InspectPrintsTableThreeNumbers) {
    TempDir tmp;
    write_file(tmp.path() / "arch.ini",
               "[model]\n"
               "input = 1x128x128\n"
               "classes = 4\n"
               "layers = conv(32,3,same), relu, conv(32,3,valid), relu, pool(2,max), "
               "conv(64,3,valid), relu, pool(2,max), conv(64,3,valid), relu, pool(2,max), "
               "flatten, dense(64), relu, dense(4), softmax\n");
    const CliResult r = run({"inspect", "--config", (tmp.path() / "arch.ini").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    for (const char* token :
         {"320", "9248", "18496", "36928", "802880", "260", "(32, 128, 128)",
          "(32, 126, 126)", "(32, 63, 63)", "(64, 61, 61)", "(64, 30, 30)",
          "(64, 28, 28)", "(64, 14, 14)", "(12544)", "(64)", "(4)", "868132"}) {
        EXPECT_NE(r.out.find(token), std::string::npos) << "missing " << token << "\n"
                                                        << r.out;
    }
}

TEST(Cli, TrainZeroLearningRateFlatHistory) {
    TempDir tmp;
    const std::string data_dir = (tmp.path() / "d").string();
    ASSERT_EQ(run({"synth-data", "--out", data_dir, "--n", "4", "--side", "16", "--seed",
                   "3"})
                  .code,
              0);
    write_file(tmp.path() / "run.ini",
               "[data]\nmanifest = d/manifest.csv\nside = 16\nsplit = 0.5\nseed = 1\n"
               "[model]\ninput = 1x16x16\nclasses = 4\n"
               "layers = flatten, dense(4), softmax\n"
               "[train]\nepochs = 3\nbatch_size = 64\noptimizer = sgd\nlr = 0\nseed = 5\n"
               "early_stopping = false\n"
               "[output]\ndir = out\n");
    const CliResult r = run({"train", "--config", (tmp.path() / "run.ini").string()});
    EXPECT_EQ(r.code, 0) << r.err;

    std::ifstream hist(tmp.path() / "out" / "history.csv");
    std::string line;
    std::getline(hist, line); // header
    std::vector<double> losses;
    while (std::getline(hist, line)) {
        const auto c1 = line.find(','), c2 = line.find(',', line.find(',') + 1);
        losses.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    }
    ASSERT_EQ(losses.size(), 3u);
    EXPECT_NEAR(losses[0], losses[1], 1e-12);
    EXPECT_NEAR(losses[1], losses[2], 1e-12);
}

TEST(Cli, TrainEvalInspectPipeline) {
    TempDir tmp;
    const std::string data_dir = (tmp.path() / "d").string();
    ASSERT_EQ(run({"synth-data", "--out", data_dir, "--n", "12", "--side", "16", "--seed",
                   "11"})
                  .code,
              0);
    write_file(tmp.path() / "run.ini",
               "[data]\nmanifest = d/manifest.csv\nside = 16\nsplit = 0.75\nseed = 2\n"
               "[model]\ninput = 1x16x16\nclasses = 4\n"
               "layers = conv(4,3,same), relu, pool(2,max), flatten, dense(4), softmax\n"
               "[train]\nepochs = 2\nbatch_size = 8\nlr = 0.002\nseed = 9\n"
               "[output]\ndir = out\n");
    const CliResult train = run({"train", "--config", (tmp.path() / "run.ini").string()});
    ASSERT_EQ(train.code, 0) << train.err;
    EXPECT_TRUE(fs::exists(tmp.path() / "out" / "model.ckpt"));
    EXPECT_TRUE(fs::exists(tmp.path() / "out" / "history.csv"));

    const CliResult eval =
        run({"eval", "--checkpoint", (tmp.path() / "out" / "model.ckpt").string(),
             "--manifest", (fs::path(data_dir) / "manifest.csv").string(), "--out",
             (tmp.path() / "confusion.csv").string()});
    EXPECT_EQ(eval.code, 0) << eval.err;
    EXPECT_NE(eval.out.find("precision"), std::string::npos);
    EXPECT_TRUE(fs::exists(tmp.path() / "confusion.csv"));

    const CliResult inspect =
        run({"inspect", "--checkpoint", (tmp.path() / "out" / "model.ckpt").string()});
    EXPECT_EQ(inspect.code, 0) << inspect.err;
    EXPECT_NE(inspect.out.find("conv(4,3,same)"), std::string::npos);
}

TEST(Cli, EvalOnMissingCheckpointIsDataError) {
    const CliResult r =
        run({"eval", "--checkpoint", "/nope.ckpt", "--manifest", "/nope.csv"});
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, PrepareWritesManifestsAndStats) {
    TempDir tmp;
    const std::string data_dir = (tmp.path() / "d").string();
    ASSERT_EQ(run({"synth-data", "--out", data_dir, "--n", "6", "--side", "16", "--seed",
                   "13"})
                  .code,
              0);
    write_file(tmp.path() / "prep.ini",
               "[data]\nmanifest = d/manifest.csv\nside = 16\nsplit = 0.5\nseed = 4\n"
               "aug_enable = true\naug_hflip = true\naug_multiplier = 2\n"
               "[output]\ndir = out\n");
    const CliResult r = run({"prepare", "--config", (tmp.path() / "prep.ini").string()});
    EXPECT_EQ(r.code, 0) << r.err;

    const DatasetManifest train_m =
        load_manifest(tmp.path() / "out" / "train_manifest.csv");
    const DatasetManifest val_m = load_manifest(tmp.path() / "out" / "val_manifest.csv");
    // 24 samples split in half, then 2 augmented copies per training original
    EXPECT_EQ(train_m.entries.size(), 12u * 3u);
    EXPECT_EQ(val_m.entries.size(), 12u);
    EXPECT_TRUE(fs::exists(tmp.path() / "out" / "stats.txt"));
    EXPECT_NO_THROW(load_norm_stats(tmp.path() / "out" / "stats.txt"));
}
