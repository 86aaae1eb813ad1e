#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const std::string kTiny =
    " --set train_size=96 --set val_size=48 --set test_size=48 --set pretrain_epochs=1 --set budget=8"
    " --set window=4 --set subnet_batches=1 --set batch_size=32 --set finetune_epochs=1 --set eval_every=2";

struct Result {
    int code;
    std::string err;
};

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("archtune_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p / "cwd");
    fs::create_directories(p / "root");
    return p;
}

Result run(const fs::path& base, const std::string& args) {
    const fs::path err = base / "stderr.txt";
    const std::string cmd = "cd '" + (base / "cwd").string() + "' && ARCHTUNE_RUN_ROOT='" + (base / "root").string() +
                            "' '" ARCHTUNE_CLI "' " + args + " >/dev/null 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::ostringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::size_t entries(const fs::path& p) {
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(p), fs::directory_iterator{}));
}

}  // namespace

TEST(Cli, MalformedOverrideIsConfigError) {
    const auto base = scratch("malformed");
    const Result r = run(base, "run-all --set gamma=two");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("gamma"), std::string::npos);
    EXPECT_EQ(entries(base / "root"), 0u);
}

TEST(Cli, UnknownKeyAndCommandAreConfigErrors) {
    const auto base = scratch("unknown");
    EXPECT_EQ(run(base, "search --set colour=blue").code, 2);
    EXPECT_EQ(run(base, "train").code, 2);
    EXPECT_EQ(run(base, "search --config missing.cfg").code, 2);
}

TEST(Cli, WritesOnlyInsideRunDirectory) {
    const auto base = scratch("confined");
    const Result r = run(base, "run-all --set oracle=true --seed 4" + kTiny);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(entries(base / "cwd"), 0u);
    ASSERT_EQ(entries(base / "root"), 1u);
    const fs::path dir = fs::directory_iterator(base / "root")->path();
    EXPECT_EQ(dir.filename().string().substr(dir.filename().string().size() - 3), "-s4");
    EXPECT_TRUE(fs::exists(dir / "report.txt"));
    EXPECT_TRUE(fs::exists(dir / "config.resolved"));
}

TEST(Cli, CorruptedCheckpointExitsWithSearchPhase) {
    const auto base = scratch("corrupt");
    const std::string dir = (base / "root" / "run").string();
    ASSERT_EQ(run(base, "gen-data --run-dir " + dir + kTiny).code, 0);
    ASSERT_EQ(run(base, "pretrain --run-dir " + dir + kTiny).code, 0);
    {
        std::fstream f(dir + "/source.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(300);
        f.put('\x01');
    }
    const Result r = run(base, "run-all --run-dir " + dir + kTiny);
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("search"), std::string::npos) << r.err;
}
