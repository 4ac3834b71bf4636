#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "sitfuse/error.hpp"
#include "sitfuse/experiment.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::temp_directory_path() / "sitfuse_cli_test";

// Small but complete settings so the pipeline runs in seconds.
const std::string kFast =
    " --set train_envs=4 test_envs=3 eval.start_min=4 samples_per_env=64 affinity_samples=200 train.iterations=60"
    " train.batch_size=32 train.milestones=[30,50] eval.episodes_per_task=8 analyze_samples_per_env=16";

int run(const std::string& args) {
  const std::string cmd = std::string(SITFUSE_CLI_PATH) + " " + args + " > " + (kScratch / "stdout.txt").string() +
                          " 2> " + (kScratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Scratch {
  Scratch() {
    fs::remove_all(kScratch);
    fs::create_directories(kScratch);
  }
};

}  // namespace

TEST_CASE("argument and configuration errors exit with 2") {
  Scratch s;
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("gen --bogus") == 2);
  CHECK(run("gen --set train.iterations=-5 --out " + kScratch.string()) == 2);
  CHECK(slurp(kScratch / "stderr.txt").find("iterations") != std::string::npos);
  CHECK(run("gen --set map.width=3 --out " + kScratch.string()) == 2);
  CHECK(run("gen --config " + (kScratch / "missing.json").string()) == 2);
  std::ofstream(kScratch / "broken.json") << "{ not json";
  CHECK(run("gen --config " + (kScratch / "broken.json").string()) == 2);
  CHECK(run("robust --mode sideways --out " + kScratch.string()) == 2);
  CHECK(run("gen --set train.arch.gate_input=concat --out " + kScratch.string()) == 2);
  CHECK(slurp(kScratch / "stderr.txt").find("train.arch") != std::string::npos);
  CHECK(run("--help") == 0);
}

TEST_CASE("missing inputs exit with 3") {
  Scratch s;
  const std::string out = " --out " + (kScratch / "run").string();
  CHECK(run("affinity" + out) == 3);
  CHECK(run("eval --rule oracle" + out) == 3);
  CHECK(run("gen" + kFast + out) == 0);
  CHECK(run("eval --rule policy --checkpoint " + (kScratch / "nowhere").string() + kFast + out) == 3);
  CHECK(run("table " + (kScratch / "absent.json").string()) == 3);
}

TEST_CASE("gen writes the suite") {
  Scratch s;
  const fs::path out = kScratch / "gen";
  REQUIRE(run("gen --seed 5 --out " + out.string()) == 0);
  std::size_t maps = 0;
  for (const auto& entry : fs::directory_iterator(out / "suite"))
    if (entry.path().filename() != "manifest.json") ++maps;
  CHECK(maps == 24);
  const auto manifest = nlohmann::json::parse(slurp(out / "suite" / "manifest.json"));
  CHECK(manifest["format"] == "sitfuse-suite/1");
  CHECK(manifest["train"].size() == 16);
  CHECK(manifest["test"].size() == 8);
  CHECK(nlohmann::json::parse(slurp(kScratch / "stdout.txt"))["train"] == 16);

  // The suite read back equals a fresh generation.
  const auto c = sitfuse::load_experiment("", {"seed=5"});
  const auto fresh = sitfuse::generate_suite(c);
  const auto back = sitfuse::read_suite(out / "suite");
  REQUIRE(back.test.size() == fresh.test.size());
  for (std::size_t i = 0; i < back.test.size(); ++i) {
    CHECK(back.test[i].id == fresh.test[i].id);
    CHECK(back.test[i].map == fresh.test[i].map);
  }
}

TEST_CASE("config file and overrides") {
  Scratch s;
  std::ofstream(kScratch / "exp.json") << R"({"seed": 9, "train": {"iterations": 10}, "models": {"tiny": {"scheme": "concat"}}})";
  const auto c = sitfuse::load_experiment((kScratch / "exp.json").string(), {"train.batch_size=16"});
  CHECK(c.seed == 9);
  CHECK(c.train.iterations == 10);
  CHECK(c.train.batch_size == 16);
  CHECK(sitfuse::model_config(c, "tiny").scheme == sitfuse::Scheme::concat);
  CHECK(sitfuse::model_config(c, "feature_fusion").scheme == sitfuse::Scheme::feature_fusion);
  CHECK_THROWS(sitfuse::model_config(c, "nonexistent"));
  CHECK(sitfuse::load_experiment("", {"train.architecture.gate_input=concat"}).train.arch.gate_input ==
        sitfuse::GateInput::concat);
  CHECK_THROWS_AS(sitfuse::load_experiment("", {"percept.window=3"}), sitfuse::ConfigError);
  CHECK_THROWS_AS(sitfuse::load_experiment("", {"models.af.lamda_aff=0.1"}), sitfuse::ConfigError);

  auto moved = c;
  moved.out_dir = "elsewhere";
  CHECK(sitfuse::config_digest(moved) == sitfuse::config_digest(c));
  moved.seed = 10;
  CHECK(sitfuse::config_digest(moved) != sitfuse::config_digest(c));
  CHECK(sitfuse::config_digest(c).size() == 16);

  const auto round = sitfuse::experiment_from_json(sitfuse::to_json(c));
  CHECK(sitfuse::to_json(round) == sitfuse::to_json(c));

  nlohmann::json doc = {{"a", 1}};
  sitfuse::apply_override(doc, "b.c=[1,2]");
  sitfuse::apply_override(doc, "d=hello");
  CHECK(doc["b"]["c"] == nlohmann::json::array({1, 2}));
  CHECK(doc["d"] == "hello");
  CHECK_THROWS(sitfuse::apply_override(doc, "novalue"));
}

TEST_CASE("pipeline smoke run") {
  Scratch s;
  const fs::path out = kScratch / "pipe";
  const std::string common = kFast + " --out " + out.string();
  REQUIRE(run("gen" + common) == 0);
  REQUIRE(run("affinity" + common) == 0);
  const auto affinity = nlohmann::json::parse(slurp(out / "affinity.json"));
  CHECK(affinity["names"].size() == 10);

  REQUIRE(run("train --model af" + common) == 0);
  CHECK(fs::exists(out / "models" / "af.json"));
  CHECK(fs::exists(out / "models" / "af.bin"));
  const std::string curve = slurp(out / "models" / "af_loss.csv");
  CHECK(curve.rfind("# config_digest=", 0) == 0);
  CHECK(curve.find("iteration,ce_fused,ce_branch_mean,lbl,affinity,total,lr\n") != std::string::npos);

  REQUIRE(run("eval --model af" + common) == 0);
  REQUIRE(run("eval --rule random" + common) == 0);
  REQUIRE(run("eval --rule oracle" + common) == 0);
  REQUIRE(run("eval --model af --rule majority" + common) == 0);
  REQUIRE(run("eval --model af --rule topk --k 2" + common) == 0);
  REQUIRE(run("eval --model af --rule branch --k 0" + common) == 0);
  const auto oracle = nlohmann::json::parse(slurp(out / "eval" / "oracle.json"));
  CHECK(oracle["average"] == 1.0);
  CHECK(oracle["episode_count"] == 32);
  CHECK(oracle["model"] == "oracle");
  for (const char* f : {"af.json", "af.csv", "random.json", "af_majority.json", "af_topk2.json", "af_branch0.json"})
    CHECK(fs::exists(out / "eval" / f));

  REQUIRE(run("robust --model af --mode renormalize" + common) == 0);
  REQUIRE(run("robust --model af --mode zero_noise" + common) == 0);
  CHECK(fs::exists(out / "robust" / "af_renormalize.csv"));
  CHECK(fs::exists(out / "robust" / "af_zero_noise.csv"));
  REQUIRE(run("analyze --model af" + common) == 0);
  CHECK(fs::exists(out / "analyze" / "af_bands.csv"));
  CHECK(fs::exists(out / "analyze" / "af_extremes.csv"));

  REQUIRE(run("table " + (out / "eval" / "random.json").string() + " " + (out / "eval" / "af.json").string() +
              " --out " + (out / "table").string()) == 0);
  const std::string csv = slurp(out / "table.csv");
  CHECK(csv.rfind("task,random,af\n", 0) == 0);
  CHECK(csv.find("average,") != std::string::npos);
  CHECK(slurp(kScratch / "stdout.txt") == slurp(out / "table.txt"));

  // Regularized and gateless models train too; a gateless model with a regularizer does not.
  REQUIRE(run("train --model af_taff" + common) == 0);
  REQUIRE(run("train --model blackbox" + common) == 0);
  CHECK(run("train --model blackbox --set models.blackbox.lambda_aff=0.1" + common) == 2);
  CHECK(run("robust --model blackbox --mode renormalize" + common) == 2);
  CHECK(run("train --model nonexistent" + common) == 2);
}

TEST_CASE("an untrained checkpoint performs poorly") {
  Scratch s;
  const fs::path out = kScratch / "untrained";
  const std::string common = kFast + " --set train.iterations=1 test_envs=6 eval.episodes_per_task=32 --out " + out.string();
  REQUIRE(run("gen" + common) == 0);
  REQUIRE(run("train --model af" + common) == 0);
  REQUIRE(run("eval --model af" + common) == 0);
  CHECK(nlohmann::json::parse(slurp(out / "eval" / "af.json"))["average"].get<double>() < 0.3);
}

TEST_CASE("gradcheck command") {
  Scratch s;
  REQUIRE(run("gradcheck --configs 4 --seed 3") == 0);
  const auto r = nlohmann::json::parse(slurp(kScratch / "stdout.txt"));
  CHECK(r["pass"] == true);
  CHECK(r["max_relative_error"].get<double>() < 1e-4);
}
