#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sitfuse {

enum class Activation : std::uint8_t { relu, identity };

struct LayerShape {
  int in = 0;
  int out = 0;
  Activation activation = Activation::identity;
};

/// Fully connected network with explicit forward/backward passes. Parameters live in one
/// flat store (per layer: weights row-major out x in, then bias) with a matching gradient store.
class DenseNet {
 public:
  /// Per-layer inputs and pre-activations recorded by forward() for backward().
  struct Cache {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
  };

  DenseNet() = default;
  explicit DenseNet(std::vector<LayerShape> layers);
  /// sizes = {in, hidden..., out}; hidden layers use `hidden`, the last layer is linear.
  DenseNet(const std::vector<int>& sizes, Activation hidden);

  const std::vector<LayerShape>& layers() const { return layers_; }
  int input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  int output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  void initialize(std::uint64_t seed);
  void zero_grad();

  /// Throws ConfigError on a dimension mismatch.
  std::vector<double> forward(std::span<const double> input, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for dL/d(output) and returns dL/d(input).
  std::vector<double> backward(const Cache& cache, std::span<const double> grad_output);

  nlohmann::json architecture() const;
  static DenseNet from_architecture(const nlohmann::json& j);

 private:
  std::vector<LayerShape> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  std::vector<double> grads_;
};

/// Subtract-max softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Vector-Jacobian product of softmax: dL/dlogits from probabilities and dL/dprobs.
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// -log p[label] with p clamped at 1e-12; gradient with respect to the probabilities.
LossGrad cross_entropy(std::span<const double> probs, int label);
/// Cross-entropy of softmax(logits); gradient with respect to the logits.
LossGrad softmax_cross_entropy(std::span<const double> logits, int label);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t param_count, AdamConfig cfg);

  /// One bias-corrected update with step size `lr`.
  void step(std::span<double> params, std::span<const double> grads, double lr);
  void step(std::span<double> params, std::span<const double> grads) { step(params, grads, cfg_.learning_rate); }
  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t steps_ = 0;
};

/// Step decay: base * factor^(number of milestones <= iteration).
struct LrSchedule {
  double base = 1e-3;
  std::vector<int> milestones;
  double factor = 0.1;
  double at(int iteration) const;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a| + |n|, floor); the floor keeps near-zero pairs from dominating.
double relative_error(double analytic, double numeric, double floor = 1e-7);

/// Central differences of `objective` over every entry of `params` (restored afterwards),
/// compared against `analytic`.
GradCheckResult grad_check(const std::function<double()>& objective, std::span<double> params,
                           std::span<const double> analytic, double h = 1e-5);

/// Checks a network's backward pass with the scalar objective w . net(input) for a fixed random w.
GradCheckResult grad_check(DenseNet& net, std::span<const double> input, std::uint64_t seed, double h = 1e-5);

/// Flat little-endian float64 blob.
void write_param_blob(const std::string& path, std::span<const double> values);
std::vector<double> read_param_blob(const std::string& path);

}  // namespace sitfuse
