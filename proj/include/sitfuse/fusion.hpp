#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/numcore.hpp"
#include "sitfuse/percept.hpp"

namespace sitfuse {

enum class Scheme : std::uint8_t { blackbox, concat, feature_fusion, action_fusion };
std::string_view to_string(Scheme scheme);
Scheme scheme_from_string(std::string_view name);
inline bool uses_gate(Scheme s) { return s == Scheme::feature_fusion || s == Scheme::action_fusion; }

/// What the gating network sees: every representation plus the raw observation, or raw only.
enum class GateInput : std::uint8_t { concat, raw_only };

struct Architecture {
  int branch_hidden = 32;
  int gate_hidden = 64;
  int head_hidden = 64;
  std::vector<int> blackbox_hidden = {128, 64};
  GateInput gate_input = GateInput::raw_only;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

/// Dimensions a policy is built against.
struct BankLayout {
  std::vector<std::string> names;
  std::vector<Domain> domains;
  std::vector<int> dims;
  int raw_dim = 0;

  static BankLayout of(const RepresentationBank& bank);
  std::size_t size() const { return dims.size(); }
  int total_dim() const;
};

using ActionDistribution = std::array<double, kActionCount>;

struct GateOutput {
  std::vector<double> scores;   // h
  std::vector<double> weights;  // g = softmax(h)
};

/// Representations lost at a step. `renormalize` masks their fusion weights and rescales
/// the survivors; `zero_fill` only zeroes their vectors. Either way dropped vectors are zeroed.
enum class DropMode : std::uint8_t { renormalize, zero_fill };

struct DropMask {
  std::vector<char> dropped;
  DropMode mode = DropMode::renormalize;
  bool any() const;
};

class FusionPolicy {
 public:
  FusionPolicy() = default;
  FusionPolicy(Scheme scheme, BankLayout layout, Architecture arch, std::uint64_t seed);

  Scheme scheme() const { return scheme_; }
  const BankLayout& layout() const { return layout_; }
  const Architecture& architecture() const { return arch_; }
  std::size_t branch_count() const { return branches_.size(); }

  /// Throws ConfigError for gateless schemes.
  GateOutput gate(const RepresentationSet& reps) const;
  /// Softmax of branch i's logits. Throws ConfigError outside action fusion or for a bad index.
  ActionDistribution branch_predict(std::size_t i, const RepresentationSet& reps) const;
  std::vector<ActionDistribution> branch_candidates(const RepresentationSet& reps) const;
  ActionDistribution concat_predict(const RepresentationSet& reps) const;
  ActionDistribution blackbox_predict(const RepresentationSet& reps) const;

  /// The scheme's action distribution, optionally under representation loss.
  ActionDistribution distribution(const RepresentationSet& reps, const DropMask* drop = nullptr,
                                  GateOutput* gate_out = nullptr) const;
  Action act(const RepresentationSet& reps) const;

  // Input assembly shared with the loss code.
  std::vector<double> branch_input(std::size_t i, const RepresentationSet& reps) const;
  std::vector<double> gate_input(const RepresentationSet& reps) const;
  std::vector<double> concat_input(const RepresentationSet& reps) const;
  std::vector<double> blackbox_input(const RepresentationSet& reps) const;

  DenseNet& branch(std::size_t i) { return branches_.at(i); }
  const DenseNet& branch(std::size_t i) const { return branches_.at(i); }
  DenseNet& gating() { return gating_; }
  const DenseNet& gating() const { return gating_; }
  /// Shared head for concat / feature fusion, or the black-box network.
  DenseNet& head() { return head_; }
  const DenseNet& head() const { return head_; }

  /// Every network owning parameters, in a fixed order (branches, gate, head).
  std::vector<DenseNet*> networks();
  std::vector<const DenseNet*> networks() const;
  std::size_t param_count() const;
  void zero_grad();

 private:
  Scheme scheme_ = Scheme::action_fusion;
  BankLayout layout_;
  Architecture arch_;
  std::vector<DenseNet> branches_;
  DenseNet gating_;
  DenseNet head_;
};

/// a = sum_i g_i * candidate_i. Throws ConfigError on a length mismatch.
ActionDistribution fuse_actions(std::span<const double> gate, std::span<const ActionDistribution> candidates);
ActionDistribution fuse_actions(const GateOutput& gate, std::span<const ActionDistribution> candidates);

/// Concatenation of g_i * r_i blocks (the head input before the task one-hot).
std::vector<double> fuse_features(std::span<const double> gate, const RepresentationSet& reps);

/// Lowest-index argmax.
Action argmax_action(const ActionDistribution& dist);

/// Plurality over per-candidate argmax; ties by summed probability, then action order.
Action majority_vote(std::span<const ActionDistribution> candidates);

/// Majority vote over the first k branches of `branch_rank` (best first).
/// Throws ConfigError when the rank is empty or k is out of range.
Action top_k_vote(std::span<const ActionDistribution> candidates, std::span<const std::size_t> branch_rank,
                  std::size_t k);

/// Equal-weight mixture of the candidates.
ActionDistribution uniform_mix(std::span<const ActionDistribution> candidates);

/// Writes <prefix>.json (manifest) and <prefix>.bin (parameters).
void save_policy(const FusionPolicy& policy, const std::string& prefix, const nlohmann::json& extra);
FusionPolicy load_policy(const std::string& prefix, nlohmann::json* manifest_out = nullptr);

}  // namespace sitfuse
