#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitfuse/eval.hpp"
#include "sitfuse/fusion.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/losses.hpp"
#include "sitfuse/percept.hpp"

namespace sitfuse {

enum class Split : std::uint8_t { train, test };
std::string_view to_string(Split split);

struct DatasetRow {
  int env_id = 0;
  NodeId node = kNoNode;
  ObjectClass target = ObjectClass::chair;
  RepresentationSet reps;
  Action label = Action::Stop;
};

struct ImitationDataset {
  Split split = Split::train;
  int goal_radius = kDefaultGoalRadius;
  std::vector<DatasetRow> rows;
  /// Environments skipped because a class was missing, one message each.
  std::vector<std::string> rejected;

  std::size_t size() const { return rows.size(); }
  std::vector<int> env_ids() const;
};

/// Uniform (node, target class) states per environment, labelled by the oracle. Environments
/// lacking any class are rejected and reported; DataError when nothing is left.
ImitationDataset build_dataset(std::span<const Environment> envs, const RepresentationBank& bank,
                               int samples_per_env, std::uint64_t seed, Split split = Split::train,
                               int goal_radius = kDefaultGoalRadius);

/// Recomputes every label with the oracle; returns the number of mismatching rows.
std::size_t verify_labels(const ImitationDataset& dataset, std::span<const Environment> envs);

struct TrainConfig {
  Scheme scheme = Scheme::action_fusion;
  int iterations = 2000;
  int batch_size = 128;
  double learning_rate = 1e-3;
  std::vector<int> milestones = {1000, 1600};
  double decay = 0.1;
  double lambda_lbl = 0.0;
  double lambda_aff = 0.0;
  LblVariant lbl_variant = LblVariant::batch_mean;
  bool detach_branches = true;
  std::uint64_t seed = 0;
  int log_every = 50;
  /// Iterations at the start during which the gating network is not updated.
  int gate_warmup = 0;
  Architecture arch;

  LrSchedule schedule() const { return {learning_rate, milestones, decay}; }
  LossOptions loss_options() const { return {lambda_lbl, lambda_aff, lbl_variant, detach_branches}; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Throws ConfigError for non-positive iterations or batch, bad milestones, or
/// regularizer weights on a gateless scheme.
void validate(const TrainConfig& c);

struct CurvePoint {
  int iteration = 0;
  double ce_fused = 0.0;
  double ce_branch_mean = 0.0;
  double lbl = 0.0;
  double affinity = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double smoothed_ce = 0.0;  // exponential moving average of ce_fused
};

struct TrainResult {
  FusionPolicy policy;
  std::vector<CurvePoint> curve;
};

/// Minibatch Adam over every network with the composite loss; the gate joins after `gate_warmup`. Deterministic given the config:
/// parameters are seeded from it and batches come from a fixed shuffling stream.
/// Throws DataError when the loss turns non-finite.
TrainResult train_policy(const ImitationDataset& dataset, const BankLayout& layout, const TrainConfig& config,
                         const AffinityMatrix* affinity = nullptr);

std::string loss_curve_csv(std::span<const CurvePoint> curve);

struct BranchScore {
  std::size_t branch = 0;
  std::string name;
  double success = 0.0;
};

/// Success of every branch executed alone, best first; ties keep branch order.
std::vector<BranchScore> rank_branches(const FusionPolicy& policy, std::span<const Environment> envs,
                                       const RepresentationBank& bank, std::span<const EpisodeStart> starts,
                                       const EvalConfig& cfg);

std::vector<std::size_t> rank_order(std::span<const BranchScore> scores);

}  // namespace sitfuse
