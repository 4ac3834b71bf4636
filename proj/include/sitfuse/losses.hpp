#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sitfuse/fusion.hpp"
#include "sitfuse/numcore.hpp"
#include "sitfuse/percept.hpp"

namespace sitfuse {

/// Pairwise representation affinity F, entries in [0, 1], symmetric with unit diagonal.
class AffinityMatrix {
 public:
  AffinityMatrix() = default;
  /// Row-major n x n values. Asymmetric input is symmetrized as (F + F^T) / 2; entries must be
  /// finite, within [0, 1], with a unit diagonal. Throws ConfigError otherwise.
  AffinityMatrix(std::vector<std::string> names, std::vector<double> values);

  static AffinityMatrix identity(std::vector<std::string> names);
  static AffinityMatrix all_ones(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * size() + j]; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<double> values_;
};

nlohmann::json to_json(const AffinityMatrix& f);
AffinityMatrix affinity_from_json(const nlohmann::json& j);

struct ScalarLoss {
  double value = 0.0;
  std::vector<double> grad;
};

/// g^T F g and its gradient (F + F^T) g.
ScalarLoss affinity_loss(std::span<const double> gate, const AffinityMatrix& f);

/// Population standard deviation over mean, with its gradient (zero where the std vanishes).
ScalarLoss coefficient_of_variation(std::span<const double> values);

enum class LblVariant : std::uint8_t { batch_mean, per_example };

struct BatchLoss {
  double value = 0.0;
  std::vector<std::vector<double>> grads;  // one per gate vector
};

/// batch_mean: CV of the per-branch mean gate weight. per_example: mean of CV(g_b).
BatchLoss load_balance_loss(std::span<const std::vector<double>> gates, LblVariant variant = LblVariant::batch_mean);

struct AffinityEstimate {
  AffinityMatrix matrix;
  std::vector<double> raw;  // row-major explained-variance ratios before symmetrization
  std::vector<std::string> warnings;
};

/// For every ordered pair (i, j) a ridge map from representation i to j is fit on even
/// rows and scored on odd rows; the held-out explained-variance ratio, clipped to [0, 1],
/// is the raw affinity. Constant representations get zero off-diagonal affinity and a warning.
AffinityEstimate estimate_affinity(const std::vector<std::string>& names, std::span<const RepresentationSet> samples,
                                   double ridge = 1e-3);

struct BatchItem {
  const RepresentationSet* reps = nullptr;
  Action label = Action::Stop;
};

struct LossOptions {
  double lambda_lbl = 0.0;
  double lambda_aff = 0.0;
  LblVariant lbl_variant = LblVariant::batch_mean;
  /// When true the fused cross-entropy does not reach the branch networks.
  bool detach_branches = true;
};

struct LossBreakdown {
  double ce_fused = 0.0;
  std::vector<double> ce_branches;
  double lbl = 0.0;
  double affinity = 0.0;
  double total = 0.0;
  double lambda_lbl = 0.0;
  double lambda_aff = 0.0;

  double ce_branch_sum() const;
  double ce_branch_mean() const;
};

/// Composite imitation objective over a batch. With `compute_gradients` the policy's
/// gradient stores are zeroed and then filled. Throws ConfigError for a non-zero regularizer
/// weight on a gateless scheme, or λ_aff > 0 without F.
LossBreakdown total_loss(FusionPolicy& policy, std::span<const BatchItem> batch, const AffinityMatrix* f,
                         const LossOptions& options, bool compute_gradients = true);

/// Finite-difference check of total_loss gradients over every parameter. Branch networks are
/// checked against the branch cross-entropy sum when detached, against the total otherwise.
GradCheckResult check_loss_gradients(FusionPolicy& policy, std::span<const BatchItem> batch, const AffinityMatrix* f,
                                     const LossOptions& options, double h = 1e-5);

}  // namespace sitfuse
