#include "sitfuse/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "sitfuse/error.hpp"

namespace sitfuse {

AffinityMatrix::AffinityMatrix(std::vector<std::string> names, std::vector<double> values)
    : names_(std::move(names)), values_(std::move(values)) {
  const std::size_t n = names_.size();
  if (values_.size() != n * n) throw ConfigError("affinity matrix must be n x n for n names");
  for (double v : values_)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ConfigError("affinity entries must lie in [0, 1]");
  for (std::size_t i = 0; i < n; ++i) {
    if (values_[i * n + i] != 1.0) throw ConfigError("affinity diagonal must be 1");
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (values_[i * n + j] + values_[j * n + i]);
      values_[i * n + j] = s;
      values_[j * n + i] = s;
    }
  }
}

AffinityMatrix AffinityMatrix::identity(std::vector<std::string> names) {
  const std::size_t n = names.size();
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return AffinityMatrix(std::move(names), std::move(v));
}

AffinityMatrix AffinityMatrix::all_ones(std::vector<std::string> names) {
  const std::size_t n = names.size();
  return AffinityMatrix(std::move(names), std::vector<double>(n * n, 1.0));
}

nlohmann::json to_json(const AffinityMatrix& f) { return {{"names", f.names()}, {"values", f.values()}}; }

AffinityMatrix affinity_from_json(const nlohmann::json& j) {
  try {
    std::vector<double> values;
    const auto& v = j.at("values");
    // Accept both flat row-major and nested rows.
    if (!v.empty() && v.front().is_array()) {
      for (const auto& row : v)
        for (const auto& x : row) values.push_back(x.get<double>());
    } else {
      values = v.get<std::vector<double>>();
    }
    return AffinityMatrix(j.at("names").get<std::vector<std::string>>(), std::move(values));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed affinity document: ") + e.what());
  }
}

ScalarLoss affinity_loss(std::span<const double> gate, const AffinityMatrix& f) {
  const std::size_t n = f.size();
  if (gate.size() != n) throw ConfigError("gate length does not match the affinity matrix");
  ScalarLoss out;
  out.grad.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    double col = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += f(i, j) * gate[j];
      col += f(j, i) * gate[j];
    }
    out.value += gate[i] * row;
    out.grad[i] = row + col;
  }
  return out;
}

ScalarLoss coefficient_of_variation(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw ConfigError("coefficient of variation of an empty vector");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (!(mean > 0.0)) throw ConfigError("coefficient of variation needs a positive mean");
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::sqrt(var);
  ScalarLoss out;
  out.value = sd / mean;
  out.grad.assign(n, 0.0);
  if (sd > 0.0)
    for (std::size_t i = 0; i < n; ++i)
      out.grad[i] = (values[i] - mean) / (n * sd * mean) - sd / (mean * mean * n);
  return out;
}

BatchLoss load_balance_loss(std::span<const std::vector<double>> gates, LblVariant variant) {
  if (gates.empty()) throw ConfigError("load-balancing loss needs a non-empty batch");
  const std::size_t n = gates.front().size();
  const double inv_b = 1.0 / static_cast<double>(gates.size());
  BatchLoss out;
  if (variant == LblVariant::batch_mean) {
    std::vector<double> mean(n, 0.0);
    for (const auto& g : gates) {
      if (g.size() != n) throw ConfigError("gate vectors differ in length");
      for (std::size_t i = 0; i < n; ++i) mean[i] += g[i] * inv_b;
    }
    ScalarLoss cv = coefficient_of_variation(mean);
    out.value = cv.value;
    for (double& v : cv.grad) v *= inv_b;
    out.grads.assign(gates.size(), cv.grad);
  } else {
    for (const auto& g : gates) {
      ScalarLoss cv = coefficient_of_variation(g);
      out.value += cv.value * inv_b;
      for (double& v : cv.grad) v *= inv_b;
      out.grads.push_back(std::move(cv.grad));
    }
  }
  return out;
}

AffinityEstimate estimate_affinity(const std::vector<std::string>& names, std::span<const RepresentationSet> samples,
                                   double ridge) {
  const std::size_t n = names.size();
  if (samples.size() < 4) throw ConfigError("affinity estimation needs at least 4 samples");
  if (!(ridge > 0.0)) throw ConfigError("ridge strength must be positive");
  using Eigen::MatrixXd;

  std::vector<MatrixXd> train(n);
  std::vector<MatrixXd> test(n);
  const std::size_t n_train = (samples.size() + 1) / 2;
  const std::size_t n_test = samples.size() / 2;
  for (std::size_t r = 0; r < n; ++r) {
    const int dim = static_cast<int>(samples.front().features.at(r).size());
    train[r].resize(static_cast<Eigen::Index>(n_train), dim);
    test[r].resize(static_cast<Eigen::Index>(n_test), dim);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const auto& f = samples[s].features.at(r);
      if (static_cast<int>(f.size()) != dim) throw ConfigError("representation dims vary across samples");
      auto& target = s % 2 == 0 ? train[r] : test[r];
      for (int d = 0; d < dim; ++d) target(static_cast<Eigen::Index>(s / 2), d) = f[d];
    }
  }

  AffinityEstimate est;
  std::vector<char> degenerate(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const MatrixXd centered = train[r].rowwise() - train[r].colwise().mean();
    if (centered.squaredNorm() / static_cast<double>(n_train) < 1e-12) {
      degenerate[r] = 1;
      est.warnings.push_back("representation '" + names[r] + "' is constant over the sample; affinities set to 0");
    }
  }

  est.raw.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    est.raw[i * n + i] = 1.0;
    if (degenerate[i]) continue;
    const Eigen::RowVectorXd x_mean = train[i].colwise().mean();
    const MatrixXd x = train[i].rowwise() - x_mean;
    const MatrixXd xt = test[i].rowwise() - x_mean;
    MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += ridge * static_cast<double>(n_train);
    const Eigen::LDLT<MatrixXd> solver(gram);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || degenerate[j]) continue;
      const Eigen::RowVectorXd y_mean = train[j].colwise().mean();
      const MatrixXd y = train[j].rowwise() - y_mean;
      const MatrixXd yt = test[j].rowwise() - y_mean;
      const MatrixXd w = solver.solve(x.transpose() * y);
      const double sse = (yt - xt * w).squaredNorm();
      const double sst = (yt.rowwise() - yt.colwise().mean()).squaredNorm();
      const double r2 = sst > 0.0 ? 1.0 - sse / sst : 0.0;
      est.raw[i * n + j] = std::clamp(r2, 0.0, 1.0);
    }
  }
  est.matrix = AffinityMatrix(names, est.raw);
  return est;
}

double LossBreakdown::ce_branch_sum() const { return std::accumulate(ce_branches.begin(), ce_branches.end(), 0.0); }

double LossBreakdown::ce_branch_mean() const {
  return ce_branches.empty() ? 0.0 : ce_branch_sum() / static_cast<double>(ce_branches.size());
}

namespace {

double fused_ce_term(double prob, double& grad_scale) {
  if (prob > kProbabilityFloor) {
    grad_scale = -1.0 / prob;
    return -std::log(prob);
  }
  grad_scale = 0.0;
  return -std::log(kProbabilityFloor);
}

}  // namespace

LossBreakdown total_loss(FusionPolicy& policy, std::span<const BatchItem> batch, const AffinityMatrix* f,
                         const LossOptions& options, bool compute_gradients) {
  if (batch.empty()) throw ConfigError("loss needs a non-empty batch");
  const Scheme scheme = policy.scheme();
  const bool gated = uses_gate(scheme);
  if (!gated && (options.lambda_lbl != 0.0 || options.lambda_aff != 0.0))
    throw ConfigError("regularizer weights must be zero for the gateless scheme '" + std::string(to_string(scheme)) + "'");
  if (options.lambda_aff != 0.0 && f == nullptr) throw ConfigError("affinity regularization needs an affinity matrix");
  if (f && gated && f->size() != policy.branch_count() && f->size() != policy.layout().size())
    throw ConfigError("affinity matrix size does not match the bank");

  if (compute_gradients) policy.zero_grad();
  const std::size_t batch_size = batch.size();
  const double inv_b = 1.0 / static_cast<double>(batch_size);
  const std::size_t n = policy.layout().size();

  LossBreakdown out;
  out.lambda_lbl = options.lambda_lbl;
  out.lambda_aff = options.lambda_aff;
  if (scheme == Scheme::action_fusion) out.ce_branches.assign(n, 0.0);

  // Gate-side quantities are kept until the batch-level load-balancing gradient is known.
  std::vector<DenseNet::Cache> gate_caches(gated ? batch_size : 0);
  std::vector<std::vector<double>> gates(gated ? batch_size : 0);
  std::vector<std::vector<double>> gate_grads(gated ? batch_size : 0);

  for (std::size_t b = 0; b < batch_size; ++b) {
    const RepresentationSet& reps = *batch[b].reps;
    const int y = static_cast<int>(batch[b].label);

    if (scheme == Scheme::blackbox || scheme == Scheme::concat) {
      DenseNet& net = policy.head();
      DenseNet::Cache cache;
      const auto in = scheme == Scheme::blackbox ? policy.blackbox_input(reps) : policy.concat_input(reps);
      LossGrad ce = softmax_cross_entropy(net.forward(in, compute_gradients ? &cache : nullptr), y);
      out.ce_fused += ce.loss * inv_b;
      if (compute_gradients) {
        for (double& v : ce.grad) v *= inv_b;
        net.backward(cache, ce.grad);
      }
      continue;
    }

    DenseNet& gate_net = policy.gating();
    const std::vector<double> scores = gate_net.forward(policy.gate_input(reps), compute_gradients ? &gate_caches[b] : nullptr);
    gates[b] = softmax(scores);
    const std::vector<double>& g = gates[b];
    for (double w : g)
      if (!std::isfinite(w)) throw DataError("gate output is not finite");
    std::vector<double> dg(n, 0.0);

    if (scheme == Scheme::action_fusion) {
      std::vector<DenseNet::Cache> caches(n);
      std::vector<std::vector<double>> probs(n);
      double fused_y = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto logits = policy.branch(i).forward(policy.branch_input(i, reps), compute_gradients ? &caches[i] : nullptr);
        probs[i] = softmax(logits);
        out.ce_branches[i] += -std::log(std::max(probs[i][y], kProbabilityFloor)) * inv_b;
        fused_y += g[i] * probs[i][y];
      }
      double scale = 0.0;
      out.ce_fused += fused_ce_term(fused_y, scale) * inv_b;
      for (std::size_t i = 0; i < n; ++i) dg[i] = scale * probs[i][y] * inv_b;
      if (compute_gradients) {
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> dz(probs[i]);
          dz[y] -= 1.0;
          for (double& v : dz) v *= inv_b;
          if (!options.detach_branches) {
            std::vector<double> dp(kActionCount, 0.0);
            dp[y] = scale * g[i] * inv_b;
            const auto extra = softmax_backward(probs[i], dp);
            for (int a = 0; a < kActionCount; ++a) dz[a] += extra[a];
          }
          policy.branch(i).backward(caches[i], dz);
        }
      }
    } else {
      DenseNet& head = policy.head();
      std::vector<double> in = fuse_features(g, reps);
      in.insert(in.end(), reps.task.begin(), reps.task.end());
      DenseNet::Cache cache;
      LossGrad ce = softmax_cross_entropy(head.forward(in, compute_gradients ? &cache : nullptr), y);
      out.ce_fused += ce.loss * inv_b;
      if (compute_gradients) {
        for (double& v : ce.grad) v *= inv_b;
        const std::vector<double> din = head.backward(cache, ce.grad);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto& r = reps.features[i];
          for (std::size_t d = 0; d < r.size(); ++d) dg[i] += din[offset + d] * r[d];
          offset += r.size();
        }
      }
    }

    if (f) {
      ScalarLoss aff = affinity_loss(g, *f);
      out.affinity += aff.value * inv_b;
      for (std::size_t i = 0; i < n; ++i) dg[i] += options.lambda_aff * aff.grad[i] * inv_b;
    }
    gate_grads[b] = std::move(dg);
  }

  if (gated) {
    BatchLoss lbl = load_balance_loss(gates, options.lbl_variant);
    out.lbl = lbl.value;
    if (compute_gradients) {
      DenseNet& gate_net = policy.gating();
      for (std::size_t b = 0; b < batch_size; ++b) {
        for (std::size_t i = 0; i < n; ++i) gate_grads[b][i] += options.lambda_lbl * lbl.grads[b][i];
        gate_net.backward(gate_caches[b], softmax_backward(gates[b], gate_grads[b]));
      }
    }
  }

  out.total = out.ce_fused + out.ce_branch_sum() + options.lambda_lbl * out.lbl + options.lambda_aff * out.affinity;
  if (!std::isfinite(out.total)) throw DataError("loss is not finite");
  return out;
}

GradCheckResult check_loss_gradients(FusionPolicy& policy, std::span<const BatchItem> batch, const AffinityMatrix* f,
                                     const LossOptions& options, double h) {
  total_loss(policy, batch, f, options, true);
  GradCheckResult worst;
  auto networks = policy.networks();
  for (std::size_t k = 0; k < networks.size(); ++k) {
    const bool is_branch = policy.scheme() == Scheme::action_fusion && k < policy.branch_count();
    const bool branch_only = is_branch && options.detach_branches;
    auto objective = [&] {
      const LossBreakdown l = total_loss(policy, batch, f, options, false);
      return branch_only ? l.ce_branch_sum() : l.total;
    };
    const std::vector<double> analytic(networks[k]->grads().begin(), networks[k]->grads().end());
    const GradCheckResult r = grad_check(objective, networks[k]->params(), analytic, h);
    if (r.max_relative_error > worst.max_relative_error) {
      worst.max_relative_error = r.max_relative_error;
      worst.worst_index = r.worst_index;
    }
    worst.checked += r.checked;
  }
  return worst;
}

}  // namespace sitfuse
