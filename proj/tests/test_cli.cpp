#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "idkl/train.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
};

Outcome run(const std::string& args, const fs::path& cwd) {
    const fs::path log = cwd / "stdout.txt";
    const std::string cmd = "cd '" + cwd.string() + "' && IDKL_LOG=error '" + std::string(IDKL_CLI_PATH) + "' " + args +
                            " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(log);
    r.out.assign(std::istreambuf_iterator<char>(is), {});
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Small model and data so the subprocess runs stay quick.
const char* kTinyData = R"({"n_identities": 4, "images_per_modality": 4, "height": 16, "width": 8})";
const char* kTinyRun = R"({"model": {"widths": [4, 4, 8, 8, 8], "num_identities": 4},
  "optim": {"optimizer": "adam", "lr": 0.001},
  "train": {"P": 2, "K": 2, "epochs": 2}, "paths": {"data": "data", "out": "run"}})";

class Cli : public ::testing::Test {
 protected:
    void SetUp() override {
        write(dir.path() / "data.json", kTinyData);
        write(dir.path() / "run.json", kTinyRun);
    }
    void make_data() { ASSERT_EQ(run("gen-data --config data.json --out data", dir.path()).code, 0); }
    idkl::test::TempDir dir{"cli"};
};

}  // namespace

TEST_F(Cli, GenDataDefaultSpecWrites256Files) {
    const Outcome r = run("gen-data --out full", dir.path());
    ASSERT_EQ(r.code, 0) << r.out;
    std::size_t idkt = 0;
    for (const auto& e : fs::directory_iterator(dir.path() / "full")) idkt += e.path().extension() == ".idkt";
    EXPECT_EQ(idkt, 256u);
    EXPECT_TRUE(fs::exists(dir.path() / "full" / "manifest.csv"));
    EXPECT_NE(r.out.find("256"), std::string::npos);
}

TEST_F(Cli, GenDataIsReproducible) {
    ASSERT_EQ(run("gen-data --config data.json --out a", dir.path()).code, 0);
    ASSERT_EQ(run("gen-data --config data.json --out b", dir.path()).code, 0);
    for (const auto& e : fs::directory_iterator(dir.path() / "a")) {
        EXPECT_EQ(slurp(e.path()), slurp(dir.path() / "b" / e.path().filename()));
    }
}

TEST_F(Cli, GenDataRejectsInvalidSpec) {
    write(dir.path() / "bad.json", R"({"n_identities": 0})");
    const Outcome r = run("gen-data --config bad.json --out x", dir.path());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find(">= 1"), std::string::npos) << r.out;
    EXPECT_EQ(run("gen-data --config nope.json", dir.path()).code, 2);
}

TEST_F(Cli, TrainSmokeRunAndSchema) {
    make_data();
    const auto start = std::chrono::steady_clock::now();
    const Outcome r = run("train --config run.json", dir.path());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_LT(secs, 60.0);
    std::ifstream m(dir.path() / "run" / "metrics.csv");
    std::string line;
    std::getline(m, line);
    EXPECT_EQ(line, idkl::train::kMetricsHeader);
    std::size_t rows = 0;
    while (std::getline(m, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
    }
    EXPECT_EQ(rows, 2u * 2u);  // 4 identities / P=2 batches per epoch
    EXPECT_TRUE(fs::exists(dir.path() / "run" / "checkpoint.bin"));
}

TEST_F(Cli, TrainIsBitIdentical) {
    make_data();
    ASSERT_EQ(run("train --config run.json --out r1", dir.path()).code, 0);
    ASSERT_EQ(run("train --config run.json --out r2", dir.path()).code, 0);
    for (const char* f : {"metrics.csv", "epochs.csv", "checkpoint.bin", "checkpoint.index.csv"}) {
        EXPECT_EQ(slurp(dir.path() / "r1" / f), slurp(dir.path() / "r2" / f)) << f;
    }
    ASSERT_EQ(run("train --config run.json --out r3 --seed 5", dir.path()).code, 0);
    EXPECT_NE(slurp(dir.path() / "r1" / "metrics.csv"), slurp(dir.path() / "r3" / "metrics.csv"));
}

TEST_F(Cli, TrainDisableAndPrintConfig) {
    const Outcome p = run("train --config run.json --disable ip tgsa csa --print-config", dir.path());
    ASSERT_EQ(p.code, 0) << p.out;
    EXPECT_NE(p.out.find("\"tgsa\""), std::string::npos);
    EXPECT_NE(p.out.find("\"lambda2\": 0.6"), std::string::npos);
    EXPECT_EQ(run("train --config run.json --disable everything", dir.path()).code, 2);
    write(dir.path() / "typo.json", R"({"train": {"epoch": 2}})");
    EXPECT_EQ(run("train --config typo.json", dir.path()).code, 2);
}

TEST_F(Cli, TrainWithoutDataFails) {
    EXPECT_EQ(run("train --config run.json --data missing", dir.path()).code, 2);
}

TEST_F(Cli, EvalReportsAndIsRepeatable) {
    make_data();
    ASSERT_EQ(run("train --config run.json", dir.path()).code, 0);
    const Outcome a = run("eval --checkpoint run/checkpoint --data data", dir.path());
    ASSERT_EQ(a.code, 0) << a.out;
    const std::string first = slurp(dir.path() / "run" / "eval.json");
    const Outcome b = run("eval --checkpoint run/checkpoint --data data --threads 3", dir.path());
    ASSERT_EQ(b.code, 0) << b.out;
    EXPECT_EQ(first, slurp(dir.path() / "run" / "eval.json"));
    EXPECT_NE(a.out.find("rank-1"), std::string::npos);
    std::ifstream csv(dir.path() / "run" / "eval.csv");
    std::string header, r1, r2;
    std::getline(csv, header);
    std::getline(csv, r1);
    std::getline(csv, r2);
    EXPECT_EQ(header, "checkpoint,data,n_queries,rank1,rank5,rank10,map");
    EXPECT_EQ(r1, r2);
}

TEST_F(Cli, EvalMissingCheckpoint) {
    make_data();
    EXPECT_EQ(run("eval --checkpoint nowhere/checkpoint --data data", dir.path()).code, 2);
}

TEST_F(Cli, EvalIncompatibleCheckpoint) {
    make_data();
    ASSERT_EQ(run("train --config run.json", dir.path()).code, 0);
    std::string sidecar = slurp(dir.path() / "run" / "checkpoint.json");
    const auto pos = sidecar.find("\"widths\"");
    ASSERT_NE(pos, std::string::npos);
    write(dir.path() / "run" / "checkpoint.json", R"({"widths": [4, 4, 8, 8, 16], "num_identities": 4})");
    EXPECT_EQ(run("eval --checkpoint run/checkpoint --data data", dir.path()).code, 2);
}

TEST_F(Cli, EvalWithMismatchedChannelsFails) {
    make_data();
    ASSERT_EQ(run("train --config run.json", dir.path()).code, 0);
    write(dir.path() / "gray.json", R"({"n_identities": 4, "images_per_modality": 4, "channels": 1, "height": 16, "width": 8})");
    ASSERT_EQ(run("gen-data --config gray.json --out gray", dir.path()).code, 0);
    EXPECT_EQ(run("eval --checkpoint run/checkpoint --data gray", dir.path()).code, 2);
}

TEST_F(Cli, NumericFailureExitCode) {
    make_data();
    write(dir.path() / "blowup.json", R"({"model": {"widths": [4, 4, 8, 8, 8], "num_identities": 4},
      "optim": {"optimizer": "sgd", "lr": 1e300}, "train": {"P": 2, "K": 2, "epochs": 3},
      "paths": {"data": "data", "out": "boom"}})");
    const Outcome r = run("train --config blowup.json", dir.path());
    EXPECT_EQ(r.code, 3) << r.out;
    EXPECT_NE(r.out.find("numeric failure"), std::string::npos);
}

TEST_F(Cli, GradcheckDefaultPasses) {
    const Outcome r = run("gradcheck --instances 1", dir.path());
    EXPECT_EQ(r.code, 0) << r.out;
    for (const char* term : {"L_b", "L_ip", "L_tgsa", "L_csa", "L_mdr", "total"}) {
        EXPECT_NE(r.out.find(term), std::string::npos) << term;
    }
}

TEST_F(Cli, GradcheckFailureExitsOne) {
    // A step this large makes the central differences inaccurate.
    const Outcome r = run("gradcheck --instances 1 --step 0.5", dir.path());
    EXPECT_EQ(r.code, 1) << r.out;
    EXPECT_NE(r.out.find("failed terms"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
    EXPECT_NE(run("", dir.path()).code, 0);
    EXPECT_NE(run("eval", dir.path()).code, 0);
    EXPECT_NE(run("frobnicate", dir.path()).code, 0);
}
