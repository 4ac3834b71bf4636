#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitfuse/eval.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/losses.hpp"
#include "sitfuse/percept.hpp"
#include "sitfuse/train.hpp"

namespace sitfuse {

/// One JSON document drives every command.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs";
  int train_envs = 16;
  int test_envs = 8;
  GenerationParams map;
  PerceptConfig percept;
  int samples_per_env = 256;
  int affinity_samples = 1000;
  double affinity_ridge = 1e-3;
  TrainConfig train;
  /// Named models: partial TrainConfig overrides applied on top of `train`.
  std::map<std::string, nlohmann::json> models;
  EvalConfig eval;
  std::vector<int> robust_ks;  // empty means 0..n-1
  int analyze_samples_per_env = 128;
  int analyze_extremes = 4;
};

ExperimentConfig default_experiment();
nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults. Throws ConfigError on malformed values.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
void validate(const ExperimentConfig& c);

/// Applies "a.b.c=value" to a JSON document; the value is parsed as JSON, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads `path` (empty: defaults), applies overrides and the optional seed/out overrides.
ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides);

/// 16 hex digits of FNV-1a over the canonical config dump, output directory excluded.
std::string config_digest(const ExperimentConfig& c);

struct Suite {
  std::vector<Environment> train;
  std::vector<Environment> test;
};

/// Train ids are 0..train_envs-1, test ids follow; each map has its own derived seed.
Suite generate_suite(const ExperimentConfig& c);
RepresentationBank make_bank(const ExperimentConfig& c);
TrainConfig model_config(const ExperimentConfig& c, const std::string& model);
AffinityEstimate compute_affinity(const ExperimentConfig& c, const Suite& suite, const RepresentationBank& bank);

/// Paths under out_dir used by the commands.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path suite_dir() const { return root / "suite"; }
  std::filesystem::path affinity() const { return root / "affinity.json"; }
  std::filesystem::path model_prefix(const std::string& name) const { return root / "models" / name; }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path robust_dir() const { return root / "robust"; }
  std::filesystem::path analyze_dir() const { return root / "analyze"; }
};

void write_suite(const Suite& suite, const ExperimentConfig& c, const std::filesystem::path& dir);
/// Throws DataError when the manifest or a map is missing or malformed.
Suite read_suite(const std::filesystem::path& dir);

struct EvalRequest {
  std::string rule = "policy";  // policy, random, oracle, majority, topk, uniform_mix, branch
  std::string model;            // checkpoint name under models/, required by learned rules
  std::string checkpoint;       // explicit checkpoint prefix, overrides `model`
  int k = 1;                    // top-k size or branch index
};

// Commands: each writes its artifacts under out_dir and returns a short JSON summary.
nlohmann::json cmd_gen(const ExperimentConfig& c);
nlohmann::json cmd_affinity(const ExperimentConfig& c);
nlohmann::json cmd_train(const ExperimentConfig& c, const std::string& model);
nlohmann::json cmd_eval(const ExperimentConfig& c, const EvalRequest& request);
nlohmann::json cmd_robust(const ExperimentConfig& c, const std::string& model, DropMode mode);
nlohmann::json cmd_analyze(const ExperimentConfig& c, const std::string& model);
/// Columns follow `reports` order. Throws DataError on mismatched task sets.
nlohmann::json cmd_table(const std::vector<std::string>& reports, const std::filesystem::path& out_prefix);
nlohmann::json cmd_gradcheck(std::uint64_t seed, int configurations, double tolerance = 1e-4);

DropMode drop_mode_from_string(std::string_view name);

struct TableResult {
  std::string csv;
  std::string text;
};
TableResult comparison_table(const std::vector<EvalReport>& reports);

}  // namespace sitfuse
