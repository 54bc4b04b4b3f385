#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "iman/cli.hpp"

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  std::vector<const char*> argv;
  argv.push_back("iman");
  for (const auto& a : args) argv.push_back(a.c_str());
  return iman::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const char* kTinyConfig = R"(
# tiny end-to-end configuration
model.d_model = 8
model.num_heads = 2
model.num_layers = 1
model.prompt_len = 1
model.cafa_num_param = 3
model.stem_channels = 2
model.patch_size = 4
model.image_channels = 1
model.image_height = 8
model.image_width = 8
model.ebv_dim = 3
model.normal_dim = 4
model.mlp_ratio = 2
train.batch_size = 8
train.epochs = 2
train.learning_rate = 0.001
data.n_samples = 40
sweep.seeds = 1,2
sweep.scenario.m00 = 0,0,0,0,0
sweep.scenario.m40 = 0.4,0.4,0.4,0.4,0.4
)";

struct TempTree {
  fs::path root;
  TempTree() : root(fs::temp_directory_path() / "iman_cli_test") {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
  std::string path(const char* name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("cli pipeline: synth, train, eval, sweep") {
  TempTree tmp;
  const std::string config = tmp.path("run.cfg");
  std::ofstream(config) << kTinyConfig;

  CHECK(run({"synth", "--config", config, "--out", tmp.path("data"), "--seed", "3"}) == 0);
  CHECK(fs::exists(tmp.root / "data" / "meta.csv"));
  CHECK(fs::exists(tmp.root / "data" / "table.csv"));
  CHECK(fs::exists(tmp.root / "data" / "SAMPLE_0.bin"));
  CHECK(fs::exists(tmp.root / "data" / "config.resolved"));

  CHECK(run({"train", "--config", config, "--data", tmp.path("data"), "--out", tmp.path("run"),
             "--seed", "3"}) == 0);
  CHECK(fs::exists(tmp.root / "run" / "model.ckpt"));
  CHECK(fs::exists(tmp.root / "run" / "history.csv"));

  CHECK(run({"eval", "--model", tmp.path("run") + "/model.ckpt", "--data", tmp.path("data"),
             "--split", "test", "--out", tmp.path("eval")}) == 0);
  const std::string eval_csv = read_file(tmp.root / "eval" / "eval.csv");
  CHECK(eval_csv.find("split,accuracy,f1,recall,precision,auc,tp,fp,tn,fn") == 0);
  CHECK(eval_csv.find("test,") != std::string::npos);

  CHECK(run({"sweep", "--config", config, "--data", tmp.path("data"), "--out", tmp.path("sweep"),
             "--seed", "3", "--jobs", "2"}) == 0);
  const std::string sweep_csv = read_file(tmp.root / "sweep" / "sweep.csv");
  CHECK(sweep_csv.find("scenario,seed,accuracy,f1,recall,precision,auc,train_minutes") == 0);
  CHECK(sweep_csv.find("m00,1,") != std::string::npos);
  CHECK(sweep_csv.find("m40,2,") != std::string::npos);
}

TEST_CASE("cli determinism: synth and train outputs are byte-identical across runs") {
  TempTree tmp;
  const std::string config = tmp.path("run.cfg");
  std::ofstream(config) << kTinyConfig;

  CHECK(run({"synth", "--config", config, "--out", tmp.path("d1"), "--seed", "11"}) == 0);
  CHECK(run({"synth", "--config", config, "--out", tmp.path("d2"), "--seed", "11"}) == 0);
  for (const char* name : {"meta.csv", "table.csv", "SAMPLE_0.bin", "SAMPLE_17.bin",
                           "config.resolved"})
    CHECK(read_file(tmp.root / "d1" / name) == read_file(tmp.root / "d2" / name));

  CHECK(run({"train", "--config", config, "--data", tmp.path("d1"), "--out", tmp.path("r1"),
             "--seed", "11"}) == 0);
  CHECK(run({"train", "--config", config, "--data", tmp.path("d1"), "--out", tmp.path("r2"),
             "--seed", "11"}) == 0);
  CHECK(read_file(tmp.root / "r1" / "model.ckpt") == read_file(tmp.root / "r2" / "model.ckpt"));
  CHECK(read_file(tmp.root / "r1" / "history.csv") == read_file(tmp.root / "r2" / "history.csv"));

  // Different seed, different artifacts.
  CHECK(run({"synth", "--config", config, "--out", tmp.path("d3"), "--seed", "12"}) == 0);
  CHECK(read_file(tmp.root / "d1" / "SAMPLE_0.bin") != read_file(tmp.root / "d3" / "SAMPLE_0.bin"));
}

TEST_CASE("cli synth honors config-level missingness rates") {
  TempTree tmp;
  const std::string config = tmp.path("run.cfg");
  std::ofstream(config) << kTinyConfig << "data.missing_rates = 0.5,0,0,0,0\n";
  CHECK(run({"synth", "--config", config, "--out", tmp.path("data"), "--seed", "4"}) == 0);
  const std::string table = read_file(tmp.root / "data" / "table.csv");
  std::size_t ones = 0;
  for (std::size_t pos = table.find('\n') + 1; pos < table.size();) {
    const auto eol = table.find('\n', pos);
    const std::string row = table.substr(pos, eol - pos);
    if (row.size() > 2 && row[row.find(',') + 1] == '1') ++ones;
    pos = eol + 1;
  }
  CHECK(ones == 20);  // round(40 * 0.5)
}

TEST_CASE("cli rejects bad usage with exit code 1") {
  TempTree tmp;
  CHECK(run({"transmogrify"}) == 1);
  CHECK(run({"synth"}) == 1);  // missing --out
  CHECK(run({"synth", "--out", tmp.path("x"), "--frobnicate"}) == 1);

  const std::string bad_config = tmp.path("bad.cfg");
  std::ofstream(bad_config) << "model.banana = 7\n";
  CHECK(run({"synth", "--config", bad_config, "--out", tmp.path("y")}) == 1);

  const std::string malformed = tmp.path("malformed.cfg");
  std::ofstream(malformed) << "model.d_model\n";
  CHECK(run({"synth", "--config", malformed, "--out", tmp.path("z")}) == 1);
}

TEST_CASE("cli help exits zero on every subcommand") {
  CHECK(run({"--help"}) == 0);
  for (const char* sub : {"synth", "train", "eval", "sweep", "gradcheck", "selftest"})
    CHECK(run({sub, "--help"}) == 0);
}

TEST_CASE("cli selftest passes") { CHECK(run({"selftest", "--seed", "2"}) == 0); }
