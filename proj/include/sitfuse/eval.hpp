#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitfuse/fusion.hpp"
#include "sitfuse/parallel.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/percept.hpp"
#include "sitfuse/rng.hpp"

namespace sitfuse {

struct EvalConfig {
  int max_steps = 39;
  int goal_radius = kDefaultGoalRadius;
  int episodes_per_task = 64;
  StartBand band{6, 32};
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EpisodeStart {
  std::size_t env_index = 0;
  NodeId start = kNoNode;
  ObjectClass target = ObjectClass::chair;
  std::uint64_t seed = 0;
};

/// Frozen start set: episodes_per_task starts per class, drawn once from cfg.seed.
/// Environments without a valid start for a class are skipped for that class.
/// Throws DataError when a class has no valid start anywhere.
std::vector<EpisodeStart> sample_start_set(std::span<const Environment> envs, const EvalConfig& cfg);

/// What a controller sees at every step.
struct StepView {
  const Environment& env;
  const AgentState& state;
  const RepresentationSet& reps;
  const DistanceMap& distances;
  Rng& rng;
};

struct Decision {
  Action action = Action::Stop;
  std::vector<double> gate;
};

/// A policy or decision rule. Must be safe to call concurrently.
using Controller = std::function<Decision(const StepView&)>;

Controller policy_controller(const FusionPolicy& policy);
/// Drops k representations per step, resampled every step from the decision stream.
Controller robust_controller(const FusionPolicy& policy, int k, DropMode mode);
Controller oracle_controller();
Controller random_controller();
Controller branch_controller(const FusionPolicy& policy, std::size_t branch);
Controller majority_controller(const FusionPolicy& policy);
Controller uniform_mix_controller(const FusionPolicy& policy);
Controller top_k_controller(const FusionPolicy& policy, std::vector<std::size_t> branch_rank, std::size_t k);

struct EpisodeResult {
  int env_id = 0;
  NodeId start = kNoNode;
  ObjectClass target = ObjectClass::chair;
  int steps = 0;
  bool stopped = false;
  bool success = false;
  int final_distance = 0;  // graph steps to the nearest target instance
  std::vector<std::vector<double>> gates;
  std::vector<NodeId> trajectory;
};

/// Greedy episode until Stop or the step budget; success iff the terminal node lies within
/// goal_radius graph steps of a target instance, however the episode ended.
EpisodeResult rollout(const Controller& controller, const Environment& env, const RepresentationBank& bank,
                      const EpisodeStart& start, const EvalConfig& cfg);

struct EvalReport {
  std::string model;
  std::array<double, kObjectClassCount> success{};
  std::array<int, kObjectClassCount> episodes{};
  double average = 0.0;
  int episode_count = 0;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::vector<EpisodeResult> results;  // not serialized
};

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
std::string to_csv(const EvalReport& report);

EvalReport evaluate(const Controller& controller, std::span<const Environment> envs, const RepresentationBank& bank,
                    std::span<const EpisodeStart> starts, const EvalConfig& cfg);

struct RobustnessPoint {
  int dropped = 0;
  double success = 0.0;
  std::array<double, kObjectClassCount> per_task{};
};

/// Success rate for each drop count in `ks`. Throws ConfigError for k >= n or for
/// renormalize mode on a gateless scheme.
std::vector<RobustnessPoint> robustness_drop(const FusionPolicy& policy, std::span<const int> ks, DropMode mode,
                                             std::span<const Environment> envs, const RepresentationBank& bank,
                                             std::span<const EpisodeStart> starts, const EvalConfig& cfg);

std::string robustness_csv(std::span<const RobustnessPoint> curve);

inline constexpr int kOpennessBands = 4;  // 1, 2, 3, 4+
std::string_view openness_band_label(int band);
int openness_band(int openness);

struct GateSample {
  int env_id = 0;
  NodeId node = kNoNode;
  Cell cell;
  ObjectClass target = ObjectClass::chair;
  double weight = 0.0;
};

struct GateAnalytics {
  /// shares[band][domain]: fraction of positions in the band whose top domain is `domain`.
  std::array<std::array<double, kDomainCount>, kOpennessBands> shares{};
  std::array<int, kOpennessBands> counts{};
  std::vector<std::vector<GateSample>> top;     // per branch, highest weights first
  std::vector<std::vector<GateSample>> bottom;  // per branch, lowest weights first
  std::vector<double> mean_gate;
};

/// Samples positions per environment, records gate vectors, the top domain (gate mass summed per
/// domain and divided by the domain's extractor count) and openness band.
GateAnalytics gate_analytics(const FusionPolicy& policy, std::span<const Environment> envs,
                             const RepresentationBank& bank, int samples_per_env, std::uint64_t seed,
                             std::size_t extremes = 4);

std::string gate_bands_csv(const GateAnalytics& analytics);
std::string gate_extremes_csv(const GateAnalytics& analytics, const std::vector<std::string>& branch_names);

}  // namespace sitfuse
