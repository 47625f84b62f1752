#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// End-to-end checks of the command-line pipeline against the built binary.

#include "dstc/dataset.hpp"
#include "dstc/eval.hpp"
#include "dstc/model.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("dstc_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DSTC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string quick_train_args(const std::string& data, const std::string& out) {
    return "train --data " + data + " --out " + out +
           " --seed 5 --stage1-epochs 2 --stage2-epochs 2 --batch-size 32 --embed-dim 16"
           " --stage2-weights 1,1,1,1 --metric euc";
}

} // namespace

TEST_CASE("synth writes the five dataset files and round-trips") {
    TempDir dir;
    const std::string out = dir.file("data");
    const int rc = run_cli("synth --classes 3 --n-per-class 20 --dx 10 --dy 8 --seed 7 --out " + out);
    REQUIRE(rc == 0);
    for (const char* name : {"x.feat", "y.feat", "labels.bin", "split.bin", "manifest.txt"}) {
        CHECK(fs::exists(fs::path(out) / name));
    }
    const dstc::PairedDataset data = dstc::load_dataset((fs::path(out) / "manifest.txt").string());
    CHECK(data.size() == 60);
    CHECK(data.num_classes == 3);
    CHECK(data.dim_x() == 10);
}

TEST_CASE("synth is byte-identical across runs with the same flags") {
    TempDir dir;
    const std::string out1 = dir.file("a");
    const std::string out2 = dir.file("b");
    const std::string flags = "synth --classes 3 --n-per-class 10 --dx 6 --dy 5 --seed 11 --out ";
    REQUIRE(run_cli(flags + out1) == 0);
    REQUIRE(run_cli(flags + out2) == 0);
    for (const char* name : {"x.feat", "y.feat", "labels.bin", "split.bin"}) {
        CHECK(file_bytes((fs::path(out1) / name).string()) ==
              file_bytes((fs::path(out2) / name).string()));
    }
}

TEST_CASE("synth reports an io error for an unwritable directory") {
    const int rc = run_cli("synth --classes 2 --n-per-class 4 --out /proc/nope/data");
    CHECK(rc == 3);
}

TEST_CASE("train produces model, history, val report, and resolved config") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 30 --dx 10 --dy 8 --seed 3 --out " + data) == 0);
    const std::string out = dir.file("run1");
    const std::string manifest = (fs::path(data) / "manifest.txt").string();
    REQUIRE(run_cli(quick_train_args(manifest, out)) == 0);

    for (const char* name : {"model.bin", "history.csv", "val_report.csv", "config.json"}) {
        CHECK(fs::exists(fs::path(out) / name));
    }
    const dstc::DstcModel model = dstc::load_model((fs::path(out) / "model.bin").string());
    CHECK(model.num_classes == 3);
    CHECK(model.embed_dim == 16);
}

TEST_CASE("stage2 weight flags land in the resolved config") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 20 --dx 8 --dy 6 --seed 2 --out " + data) == 0);
    const std::string out = dir.file("run");
    REQUIRE(run_cli("train --data " + (fs::path(data) / "manifest.txt").string() + " --out " + out +
                    " --seed 1 --stage1-epochs 1 --stage2-epochs 1 --batch-size 16 --embed-dim 16"
                    " --stage2-weights 1,1,0,0") == 0);
    const std::string cfg = file_bytes(out + "/config.json");
    CHECK(cfg.find("\"alpha\": 1.0") != std::string::npos);
    CHECK(cfg.find("\"beta\": 1.0") != std::string::npos);
    CHECK(cfg.find("\"gamma\": 0.0") != std::string::npos);
    CHECK(cfg.find("\"delta\": 0.0") != std::string::npos);
}

TEST_CASE("ablate rows without ce still run stage 1 and produce results") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 20 --dx 8 --dy 6 --seed 5 --out " + data) == 0);
    const std::string out = dir.file("abl");
    REQUIRE(run_cli("ablate --data " + (fs::path(data) / "manifest.txt").string() + " --out " + out +
                    " --rows 1,2 --train-metrics euc --seed 3 --stage1-epochs 2 --stage2-epochs 2") == 0);
    std::ifstream is(out + "/ablation.csv");
    std::string header, row1, row2;
    REQUIRE(std::getline(is, header));
    REQUIRE(std::getline(is, row1));
    REQUIRE(std::getline(is, row2));
    CHECK(row1.rfind("1,0,1,0,0,0,euclidean", 0) == 0); // PT only, ce off
    CHECK(row2.rfind("2,0,0,1,0,0,euclidean", 0) == 0); // DSTC only, ce off
}

TEST_CASE("missing manifest fails with the io exit code and names the path") {
    TempDir dir;
    const int rc = run_cli("train --data " + dir.file("missing_manifest") + " --out " + dir.file("o"));
    CHECK(rc == 3);
}

TEST_CASE("eval prints reports for both metrics and writes csv files") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 30 --dx 10 --dy 8 --seed 4 --out " + data) == 0);
    const std::string manifest = (fs::path(data) / "manifest.txt").string();
    const std::string run = dir.file("run");
    REQUIRE(run_cli(quick_train_args(manifest, run)) == 0);

    const std::string report_dir = dir.file("reports");
    const int rc = run_cli("eval --model " + run + "/model.bin --data " + manifest +
                           " --direction both --metric euc,cos --out " + report_dir);
    REQUIRE(rc == 0);
    CHECK(fs::exists(fs::path(report_dir) / "report_both_euclidean.csv"));
    CHECK(fs::exists(fs::path(report_dir) / "report_both_cosine.csv"));
}

TEST_CASE("eval rejects a model/data dimension mismatch") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 30 --dx 10 --dy 8 --seed 4 --out " + data) == 0);
    const std::string other = dir.file("other");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 30 --dx 12 --dy 8 --seed 4 --out " + other) == 0);
    const std::string run = dir.file("run");
    REQUIRE(run_cli(quick_train_args((fs::path(data) / "manifest.txt").string(), run)) == 0);

    const int rc = run_cli("eval --model " + run + "/model.bin --data " +
                           (fs::path(other) / "manifest.txt").string());
    CHECK(rc != 0);
}

TEST_CASE("train determinism: identical seeds give identical model files") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 30 --dx 10 --dy 8 --seed 9 --out " + data) == 0);
    const std::string manifest = (fs::path(data) / "manifest.txt").string();
    const std::string r1 = dir.file("r1");
    const std::string r2 = dir.file("r2");
    REQUIRE(run_cli(quick_train_args(manifest, r1)) == 0);
    REQUIRE(run_cli(quick_train_args(manifest, r2)) == 0);
    CHECK(file_bytes(r1 + "/model.bin") == file_bytes(r2 + "/model.bin"));
    CHECK(file_bytes(r1 + "/history.csv") == file_bytes(r2 + "/history.csv"));
}

TEST_CASE("ablate emits a table-shaped csv for the requested rows") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 3 --n-per-class 20 --dx 10 --dy 8 --seed 13 --out " + data) == 0);
    const std::string manifest = (fs::path(data) / "manifest.txt").string();
    const std::string out = dir.file("ablation");
    const int rc = run_cli("ablate --data " + manifest + " --out " + out +
                           " --rows 3,4 --train-metrics euc --seed 2"
                           " --stage1-epochs 2 --stage2-epochs 2");
    REQUIRE(rc == 0);

    std::ifstream is(out + "/ablation.csv");
    std::string header;
    REQUIRE(std::getline(is, header));
    CHECK(header.find("row,ce,pt,dstc,cpt,cdstc,train_metric") == 0);
    CHECK(header.find("classavg_both") != std::string::npos);
    std::size_t rows = 0;
    std::string line;
    while (std::getline(is, line)) {
        ++rows;
    }
    CHECK(rows == 2);
}

TEST_CASE("ablate rejects duplicate rows") {
    TempDir dir;
    const std::string data = dir.file("data");
    REQUIRE(run_cli("synth --classes 2 --n-per-class 10 --dx 6 --dy 5 --seed 14 --out " + data) == 0);
    const int rc = run_cli("ablate --data " + (fs::path(data) / "manifest.txt").string() + " --out " +
                           dir.file("abl") + " --rows 3,3");
    CHECK(rc == 2);
}

TEST_CASE("gradcheck passes by default and respects shape flags") {
    TempDir dir;
    const std::string log = dir.file("gradcheck.log");
    const std::string cmd = std::string(DSTC_CLI_PATH) +
                            " gradcheck --dims 5 --batch 4 --trials 1 --seed 1 > " + log + " 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const std::string out = file_bytes(log);
    CHECK(out.find("trials=1") != std::string::npos);
    CHECK(out.find("dims<=5") != std::string::npos);
    CHECK(out.find("batch=4") != std::string::npos);
    CHECK(out.find("combined") != std::string::npos);
}

TEST_CASE("gradcheck with the hidden perturbation hook fails") {
    const int rc = run_cli("gradcheck --dims 5 --batch 4 --trials 1 --seed 1 --perturb-bug");
    CHECK(rc != 0);
}

TEST_CASE("unknown flags exit with the config code") {
    CHECK(run_cli("synth --does-not-exist 1 --out /tmp/x") == 2);
    CHECK(run_cli("") == 2);
}
