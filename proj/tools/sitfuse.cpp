// Command-line driver for the situational fusion experiments.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sitfuse/error.hpp"
#include "sitfuse/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config, "experiment JSON config");
  cmd->add_option("--set", common.sets, "dotted override, e.g. train.iterations=200")->take_all();
  cmd->add_option("--seed", common.seed, "global seed");
  cmd->add_option("--out", common.out, "output directory");
}

sitfuse::ExperimentConfig resolve(const Common& common) {
  std::vector<std::string> overrides = common.sets;
  if (common.seed) overrides.push_back("seed=" + std::to_string(*common.seed));
  if (common.out) overrides.push_back("out_dir=" + nlohmann::json(*common.out).dump());
  return sitfuse::load_experiment(common.config, overrides);
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sitfuse: situational fusion of visual representations on gridworld navigation"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen", "generate the train/test environment suite");
  add_common(gen, common);

  auto* affinity = app.add_subcommand("affinity", "estimate the representation affinity matrix");
  add_common(affinity, common);

  std::string model = "af";
  auto* train = app.add_subcommand("train", "train a model (name from config.models or a scheme name)");
  add_common(train, common);
  train->add_option("--model", model, "model name");

  sitfuse::EvalRequest request;
  auto* eval = app.add_subcommand("eval", "evaluate a model or decision rule on the test split");
  add_common(eval, common);
  eval->add_option("--model", request.model, "trained model name");
  eval->add_option("--checkpoint", request.checkpoint, "explicit checkpoint prefix");
  eval->add_option("--rule", request.rule, "policy, random, oracle, majority, topk, uniform_mix, branch");
  eval->add_option("--k", request.k, "top-k size or branch index");

  std::string mode = "renormalize";
  auto* robust = app.add_subcommand("robust", "success rate while dropping representations");
  add_common(robust, common);
  robust->add_option("--model", model, "trained model name");
  robust->add_option("--mode", mode, "renormalize or zero_noise");

  auto* analyze = app.add_subcommand("analyze", "gate analytics by openness band");
  add_common(analyze, common);
  analyze->add_option("--model", model, "trained model name");

  std::vector<std::string> reports;
  std::string table_out = "table";
  auto* table = app.add_subcommand("table", "comparison table from evaluation reports");
  table->add_option("reports", reports, "EvalReport JSON files, one column each")->required();
  table->add_option("--out", table_out, "output prefix for .csv and .txt");

  int configurations = 20;
  std::uint64_t gc_seed = 7;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
  gradcheck->add_option("--configs", configurations, "number of random configurations");
  gradcheck->add_option("--seed", gc_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      print(sitfuse::cmd_gen(resolve(common)));
    } else if (affinity->parsed()) {
      print(sitfuse::cmd_affinity(resolve(common)));
    } else if (train->parsed()) {
      print(sitfuse::cmd_train(resolve(common), model));
    } else if (eval->parsed()) {
      print(sitfuse::cmd_eval(resolve(common), request));
    } else if (robust->parsed()) {
      const auto drop = sitfuse::drop_mode_from_string(mode);
      print(sitfuse::cmd_robust(resolve(common), model, drop));
    } else if (analyze->parsed()) {
      print(sitfuse::cmd_analyze(resolve(common), model));
    } else if (table->parsed()) {
      const auto result = sitfuse::cmd_table(reports, table_out);
      std::cout << result.at("text").get<std::string>();
    } else if (gradcheck->parsed()) {
      const auto result = sitfuse::cmd_gradcheck(gc_seed, configurations);
      print(result);
      if (!result.at("pass").get<bool>()) return kExitData;
    }
  } catch (const sitfuse::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sitfuse::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
