#include "sitfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "sitfuse/error.hpp"
#include "sitfuse/parallel.hpp"

namespace sitfuse {

namespace {

constexpr double kCurveSmoothing = 0.9;

std::string_view lbl_variant_name(LblVariant v) { return v == LblVariant::batch_mean ? "batch_mean" : "per_example"; }

LblVariant lbl_variant_from(const std::string& name) {
  if (name == "batch_mean") return LblVariant::batch_mean;
  if (name == "per_example") return LblVariant::per_example;
  throw ConfigError("unknown LBL variant '" + name + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

const Environment& find_env(std::span<const Environment> envs, int id) {
  for (const Environment& e : envs)
    if (e.id == id) return e;
  throw DataError("dataset references unknown environment " + std::to_string(id));
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::vector<int> ImitationDataset::env_ids() const {
  std::set<int> ids;
  for (const DatasetRow& r : rows) ids.insert(r.env_id);
  return {ids.begin(), ids.end()};
}

ImitationDataset build_dataset(std::span<const Environment> envs, const RepresentationBank& bank, int samples_per_env,
                               std::uint64_t seed, Split split, int goal_radius) {
  if (samples_per_env < 1) throw ConfigError("samples_per_env must be positive");
  if (goal_radius < 0) throw ConfigError("goal radius must be non-negative");
  ImitationDataset data;
  data.split = split;
  data.goal_radius = goal_radius;

  std::vector<std::size_t> accepted;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    std::string missing;
    for (ObjectClass cls : kObjectClasses)
      if (!envs[e].map.has_class(cls)) missing += (missing.empty() ? "" : ",") + std::string(to_string(cls));
    if (missing.empty())
      accepted.push_back(e);
    else
      data.rejected.push_back("environment " + std::to_string(envs[e].id) + " lacks " + missing);
  }
  if (accepted.empty()) throw DataError("no environment contains every object class");

  std::vector<std::vector<DatasetRow>> per_env(accepted.size());
  parallel_for(accepted.size(), [&](std::size_t k) {
    const Environment& env = envs[accepted[k]];
    std::array<DistanceMap, kObjectClassCount> dist;
    for (ObjectClass cls : kObjectClasses) dist[static_cast<int>(cls)] = shortest_distances(env.graph, cls, goal_radius);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(env.id)));
    auto& rows = per_env[k];
    rows.reserve(samples_per_env);
    while (static_cast<int>(rows.size()) < samples_per_env) {
      const NodeId node = static_cast<NodeId>(rng.index(env.graph.node_count()));
      const ObjectClass cls = kObjectClasses[rng.index(kObjectClassCount)];
      const DistanceMap& d = dist[static_cast<int>(cls)];
      if (d[node] == kUnreachable) continue;
      DatasetRow row;
      row.env_id = env.id;
      row.node = node;
      row.target = cls;
      row.label = optimal_action(env.graph, d, AgentState{node, 0, cls, false});
      row.reps = bank.extract({env.graph, env.map, node, cls, rng});
      rows.push_back(std::move(row));
    }
  });
  for (auto& rows : per_env)
    for (auto& r : rows) data.rows.push_back(std::move(r));
  return data;
}

std::size_t verify_labels(const ImitationDataset& dataset, std::span<const Environment> envs) {
  std::size_t wrong = 0;
  for (const DatasetRow& r : dataset.rows) {
    const Environment& env = find_env(envs, r.env_id);
    if (optimal_action(env.graph, AgentState{r.node, 0, r.target, false}, dataset.goal_radius) != r.label) ++wrong;
  }
  return wrong;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"scheme", to_string(c.scheme)},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"milestones", c.milestones},
       {"decay", c.decay},
       {"lambda_lbl", c.lambda_lbl},
       {"lambda_aff", c.lambda_aff},
       {"lbl_variant", lbl_variant_name(c.lbl_variant)},
       {"detach_branches", c.detach_branches},
       {"seed", c.seed},
       {"log_every", c.log_every},
       {"gate_warmup", c.gate_warmup},
       {"architecture", c.arch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("scheme")) c.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.milestones = j.value("milestones", c.milestones);
  c.decay = j.value("decay", c.decay);
  c.lambda_lbl = j.value("lambda_lbl", c.lambda_lbl);
  c.lambda_aff = j.value("lambda_aff", c.lambda_aff);
  if (j.contains("lbl_variant")) c.lbl_variant = lbl_variant_from(j.at("lbl_variant").get<std::string>());
  c.detach_branches = j.value("detach_branches", c.detach_branches);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  c.gate_warmup = j.value("gate_warmup", c.gate_warmup);
  if (j.contains("architecture")) c.arch = j.at("architecture").get<Architecture>();
}

void validate(const TrainConfig& c) {
  if (c.iterations <= 0) throw ConfigError("iterations must be positive");
  if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(c.decay > 0.0) || c.decay > 1.0) throw ConfigError("decay must lie in (0, 1]");
  if (!std::is_sorted(c.milestones.begin(), c.milestones.end())) throw ConfigError("milestones must be ascending");
  if (c.lambda_lbl < 0.0 || c.lambda_aff < 0.0) throw ConfigError("regularizer weights must be non-negative");
  if (!uses_gate(c.scheme) && (c.lambda_lbl != 0.0 || c.lambda_aff != 0.0))
    throw ConfigError("regularizer weights must be zero for the gateless scheme '" + std::string(to_string(c.scheme)) + "'");
  if (c.log_every <= 0) throw ConfigError("log_every must be positive");
  if (c.gate_warmup < 0 || c.gate_warmup >= c.iterations) throw ConfigError("gate_warmup must lie in [0, iterations)");
}

TrainResult train_policy(const ImitationDataset& dataset, const BankLayout& layout, const TrainConfig& config,
                         const AffinityMatrix* affinity) {
  validate(config);
  if (static_cast<std::size_t>(config.batch_size) > dataset.size())
    throw ConfigError("batch_size exceeds the dataset size");
  if (config.lambda_aff > 0.0 && affinity == nullptr) throw ConfigError("lambda_aff > 0 needs an affinity matrix");

  TrainResult result{FusionPolicy(config.scheme, layout, config.arch, derive_seed(config.seed, 0xB0)), {}};
  FusionPolicy& policy = result.policy;
  std::vector<AdamState> optimizers;
  for (DenseNet* net : policy.networks()) optimizers.emplace_back(net->param_count(), AdamConfig{});

  const LrSchedule schedule = config.schedule();
  const LossOptions options = config.loss_options();
  Rng shuffler(derive_seed(config.seed, 0x5A));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<BatchItem> batch(config.batch_size);
  double smoothed = 0.0;

  for (int it = 0; it < config.iterations; ++it) {
    for (BatchItem& item : batch) {
      if (cursor == order.size()) {
        shuffler.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const DatasetRow& row = dataset.rows[order[cursor++]];
      item = {&row.reps, row.label};
    }
    LossBreakdown loss;
    try {
      loss = total_loss(policy, batch, affinity, options, true);
    } catch (const DataError&) {
      throw DataError("training diverged at iteration " + std::to_string(it) + ": loss is not finite");
    }
    const double lr = schedule.at(it);
    auto nets = policy.networks();
    const bool gate_frozen = it < config.gate_warmup;
    for (std::size_t k = 0; k < nets.size(); ++k) {
      if (gate_frozen && nets[k] == &policy.gating()) continue;
      optimizers[k].step(nets[k]->params(), nets[k]->grads(), lr);
      for (double w : nets[k]->params())
        if (!std::isfinite(w))
          throw DataError("training diverged at iteration " + std::to_string(it) + ": parameters are not finite");
    }

    smoothed = it == 0 ? loss.ce_fused : kCurveSmoothing * smoothed + (1.0 - kCurveSmoothing) * loss.ce_fused;
    if (it % config.log_every == 0 || it + 1 == config.iterations)
      result.curve.push_back(
          {it, loss.ce_fused, loss.ce_branch_mean(), loss.lbl, loss.affinity, loss.total, lr, smoothed});
  }
  return result;
}

std::string loss_curve_csv(std::span<const CurvePoint> curve) {
  std::ostringstream out;
  out << "iteration,ce_fused,ce_branch_mean,lbl,affinity,total,lr\n";
  for (const CurvePoint& p : curve) {
    char lr[32];
    std::snprintf(lr, sizeof lr, "%.8g", p.lr);
    out << p.iteration << ',' << fmt(p.ce_fused) << ',' << fmt(p.ce_branch_mean) << ',' << fmt(p.lbl) << ','
        << fmt(p.affinity) << ',' << fmt(p.total) << ',' << lr << "\n";
  }
  return out.str();
}

std::vector<BranchScore> rank_branches(const FusionPolicy& policy, std::span<const Environment> envs,
                                       const RepresentationBank& bank, std::span<const EpisodeStart> starts,
                                       const EvalConfig& cfg) {
  if (policy.scheme() != Scheme::action_fusion) throw ConfigError("branch ranking needs an action-fusion policy");
  std::vector<BranchScore> scores;
  for (std::size_t i = 0; i < policy.branch_count(); ++i) {
    const EvalReport r = evaluate(branch_controller(policy, i), envs, bank, starts, cfg);
    scores.push_back({i, policy.layout().names[i], r.average});
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const BranchScore& a, const BranchScore& b) { return a.success > b.success; });
  return scores;
}

std::vector<std::size_t> rank_order(std::span<const BranchScore> scores) {
  std::vector<std::size_t> order;
  for (const BranchScore& s : scores) order.push_back(s.branch);
  return order;
}

}  // namespace sitfuse
