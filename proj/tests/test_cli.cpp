#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kCli = TGPST_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tgpst_cli_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("simulate writes deterministic outputs") {
  TempDir a, b;
  REQUIRE(run("simulate --n 12 --seed 3 --out-dir " + a.path.string()) == 0);
  REQUIRE(run("simulate --n 12 --seed 3 --out-dir " + b.path.string()) == 0);
  REQUIRE(slurp(a.file("tensors.tgpst")) == slurp(b.file("tensors.tgpst")));
  REQUIRE(slurp(a.file("labels.txt")) == slurp(b.file("labels.txt")));
  REQUIRE(slurp(a.file("ground_truth_model.txt")) ==
          slurp(b.file("ground_truth_model.txt")));
  REQUIRE(slurp(a.file("manifest.txt")).find("config_hash") !=
          std::string::npos);

  TempDir c;
  REQUIRE(run("simulate --n 12 --seed 4 --out-dir " + c.path.string()) == 0);
  REQUIRE(slurp(a.file("labels.txt")) != slurp(c.file("labels.txt")));
}

TEST_CASE("validation failures exit with code 2") {
  TempDir dir;
  REQUIRE(run("simulate --n 0 --out-dir " + dir.path.string()) == 2);
  REQUIRE(run("bogus-subcommand") == 2);
  REQUIRE(run("train --labels only") == 2);  // missing required --tensors
  REQUIRE(run("evaluate --labels " + dir.file("nope.txt")) == 2);
}

TEST_CASE("missing input files exit with the runtime code") {
  TempDir dir;
  REQUIRE(run("train --tensors " + dir.file("no.tgpst") + " --labels " +
              dir.file("no.txt")) == 1);
  REQUIRE(run("predict --model " + dir.file("no_model.txt") +
              " --train-tensors x --train-labels y --tensors z --out " +
              dir.file("p.csv")) == 1);
}

TEST_CASE("evaluate on perfect predictions reports the exact metrics") {
  TempDir dir;
  {
    std::ofstream labels(dir.file("labels.txt"));
    labels << "1.5\n-2.0\n0.25\n-0.75\n3.0\n";
  }
  fs::copy_file(dir.file("labels.txt"), dir.file("pred.txt"));
  REQUIRE(run("evaluate --labels " + dir.file("labels.txt") +
              " --predictions " + dir.file("pred.txt") + " --out " +
              dir.file("metrics.csv")) == 0);
  const std::string csv = slurp(dir.file("metrics.csv"));
  REQUIRE(csv.find("RMSE,R2,MSLL,TSS") == 0);
  const std::string row = csv.substr(csv.find("\r\n") + 2);
  REQUIRE(row.rfind("0,1,", 0) == 0);           // RMSE 0, R2 1
  REQUIRE(row.find(",1\r\n") != std::string::npos);  // TSS 1
}

TEST_CASE("the pipeline runs end to end on a small simulation") {
  TempDir dir;
  REQUIRE(run("simulate --n 20 --seed 6 --out-dir " + dir.path.string()) ==
          0);
  REQUIRE(run("train --tensors " + dir.file("tensors.tgpst") + " --labels " +
              dir.file("labels.txt") + " --model-out " + dir.file("m.txt") +
              " --report-out " + dir.file("report.csv") +
              " --max-iter 2 --val-fraction 0 --seed 1") == 0);
  REQUIRE(slurp(dir.file("report.csv"))
              .find("iteration,loss,param_delta,step_size") == 0);

  REQUIRE(run("predict --model " + dir.file("m.txt") + " --train-tensors " +
              dir.file("tensors.tgpst") + " --train-labels " +
              dir.file("labels.txt") + " --tensors " +
              dir.file("tensors.tgpst") + " --out " + dir.file("pred.csv")) ==
          0);
  const std::string pred = slurp(dir.file("pred.csv"));
  REQUIRE(pred.find("index,mean,variance") == 0);

  REQUIRE(run("evaluate --model " + dir.file("m.txt") + " --train-tensors " +
              dir.file("tensors.tgpst") + " --train-labels " +
              dir.file("labels.txt") + " --tensors " +
              dir.file("tensors.tgpst") + " --labels " +
              dir.file("labels.txt") + " --out " + dir.file("metrics.csv")) ==
          0);
  REQUIRE(slurp(dir.file("metrics.csv")).find("RMSE,R2,MSLL,TSS") == 0);

  REQUIRE(run("explain --model " + dir.file("m.txt") + " --tensors " +
              dir.file("tensors.tgpst") + " --labels " +
              dir.file("labels.txt") + " --out-prefix " +
              dir.file("explain")) == 0);
  REQUIRE(slurp(dir.file("explain_channel_expvar.csv")).find("channel,") ==
          0);
  REQUIRE(slurp(dir.file("explain_feature_map_expvar.csv"))
              .find("feature_map,") == 0);
  REQUIRE(slurp(dir.file("explain_feature_maps.csv"))
              .find("feature_map,row,col,weight") == 0);

  // Inputs are never mutated: the tensor file still matches a fresh copy.
  TempDir again;
  REQUIRE(run("simulate --n 20 --seed 6 --out-dir " + again.path.string()) ==
          0);
  REQUIRE(slurp(dir.file("tensors.tgpst")) ==
          slurp(again.file("tensors.tgpst")));
}

TEST_CASE("train --split and evaluate --split use the same partition") {
  TempDir dir;
  REQUIRE(run("simulate --n 24 --seed 8 --out-dir " + dir.path.string()) ==
          0);
  REQUIRE(run("train --tensors " + dir.file("tensors.tgpst") + " --labels " +
              dir.file("labels.txt") + " --model-out " + dir.file("m.txt") +
              " --split 0.75 --split-seed 5 --max-iter 2 --val-fraction 0"
              " --seed 1") == 0);
  REQUIRE(run("evaluate --model " + dir.file("m.txt") + " --tensors " +
              dir.file("tensors.tgpst") + " --labels " +
              dir.file("labels.txt") +
              " --split 0.75 --split-seed 5 --out " +
              dir.file("metrics.csv")) == 0);
  REQUIRE(slurp(dir.file("metrics.csv")).find("RMSE,R2,MSLL,TSS") == 0);
}
