#include "sitfuse/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <thread>

#include "sitfuse/error.hpp"
#include "sitfuse/parallel.hpp"

namespace sitfuse {

namespace {

struct GoalMaps {
  DistanceMap instance;
  DistanceMap goal;
};

GoalMaps goal_maps(const NavGraph& graph, ObjectClass cls, int radius) {
  GoalMaps maps;
  maps.goal = shortest_distances(graph, cls, radius);
  maps.instance = instance_distances(graph, cls);
  return maps;
}

EpisodeResult run_episode(const Controller& controller, const Environment& env, const RepresentationBank& bank,
                          const EpisodeStart& start, const EvalConfig& cfg, const GoalMaps& maps) {
  EpisodeResult result;
  result.env_id = env.id;
  result.start = start.start;
  result.target = start.target;
  AgentState state{start.start, 0, start.target, false};
  Rng noise(derive_seed(start.seed, 1));
  Rng decisions(derive_seed(start.seed, 2));
  result.trajectory.push_back(state.position);
  while (!state.stopped && state.steps_taken < cfg.max_steps) {
    const RepresentationSet reps = bank.extract({env.graph, env.map, state.position, state.target, noise});
    Decision d = controller(StepView{env, state, reps, maps.goal, decisions});
    if (!d.gate.empty()) result.gates.push_back(std::move(d.gate));
    state = step(env.graph, state, d.action);
    if (!is_stop(d.action)) result.trajectory.push_back(state.position);
  }
  result.steps = state.steps_taken;
  result.stopped = state.stopped;
  result.final_distance = maps.instance[state.position];
  result.success = result.final_distance <= cfg.goal_radius;
  return result;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

Decision from_distribution(const FusionPolicy& policy, const RepresentationSet& reps, const DropMask* drop) {
  Decision d;
  if (uses_gate(policy.scheme())) {
    GateOutput g;
    d.action = argmax_action(policy.distribution(reps, drop, &g));
    d.gate = std::move(g.weights);
  } else {
    d.action = argmax_action(policy.distribution(reps, drop));
  }
  return d;
}

}  // namespace

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"max_steps", c.max_steps},
       {"goal_radius", c.goal_radius},
       {"episodes_per_task", c.episodes_per_task},
       {"start_min", c.band.min_distance},
       {"start_max", c.band.max_distance},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  c.max_steps = j.value("max_steps", c.max_steps);
  c.goal_radius = j.value("goal_radius", c.goal_radius);
  c.episodes_per_task = j.value("episodes_per_task", c.episodes_per_task);
  c.band.min_distance = j.value("start_min", c.band.min_distance);
  c.band.max_distance = j.value("start_max", c.band.max_distance);
  c.seed = j.value("seed", c.seed);
}

std::vector<EpisodeStart> sample_start_set(std::span<const Environment> envs, const EvalConfig& cfg) {
  if (envs.empty()) throw ConfigError("no evaluation environments");
  if (cfg.episodes_per_task < 1) throw ConfigError("episodes_per_task must be positive");
  if (cfg.max_steps < 1 || cfg.goal_radius < 0) throw ConfigError("invalid step budget or goal radius");
  std::vector<EpisodeStart> starts;
  Rng rng(derive_seed(cfg.seed, 0x57A27));
  for (ObjectClass cls : kObjectClasses) {
    std::vector<std::size_t> usable;
    for (std::size_t e = 0; e < envs.size(); ++e) {
      if (!envs[e].map.has_class(cls)) continue;
      try {
        sample_start(envs[e].graph, envs[e].map, cls, 0, cfg.band);
        usable.push_back(e);
      } catch (const DataError&) {
      }
    }
    if (usable.empty())
      throw DataError("no environment offers a valid start for class '" + std::string(to_string(cls)) + "'");
    for (int k = 0; k < cfg.episodes_per_task; ++k) {
      EpisodeStart s;
      s.env_index = usable[rng.index(usable.size())];
      s.target = cls;
      s.start = sample_start(envs[s.env_index].graph, envs[s.env_index].map, cls, rng.next(), cfg.band);
      s.seed = rng.next();
      starts.push_back(s);
    }
  }
  return starts;
}

Controller policy_controller(const FusionPolicy& policy) {
  return [&policy](const StepView& v) { return from_distribution(policy, v.reps, nullptr); };
}

Controller robust_controller(const FusionPolicy& policy, int k, DropMode mode) {
  const int n = static_cast<int>(policy.layout().size());
  if (k < 0 || k >= n) throw ConfigError("drop count must satisfy 0 <= k < n");
  if (mode == DropMode::renormalize && !uses_gate(policy.scheme()))
    throw ConfigError("renormalize mode is undefined for gateless schemes");
  return [&policy, k, mode, n](const StepView& v) {
    if (k == 0) return from_distribution(policy, v.reps, nullptr);
    DropMask mask{std::vector<char>(n, 0), mode};
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    v.rng.shuffle(std::span<int>(order));
    for (int i = 0; i < k; ++i) mask.dropped[order[i]] = 1;
    return from_distribution(policy, v.reps, &mask);
  };
}

Controller oracle_controller() {
  return [](const StepView& v) { return Decision{optimal_action(v.env.graph, v.distances, v.state), {}}; };
}

Controller random_controller() {
  return [](const StepView& v) { return Decision{static_cast<Action>(v.rng.index(kActionCount)), {}}; };
}

Controller branch_controller(const FusionPolicy& policy, std::size_t branch) {
  if (branch >= policy.branch_count()) throw ConfigError("branch index out of range");
  return [&policy, branch](const StepView& v) {
    return Decision{argmax_action(policy.branch_predict(branch, v.reps)), {}};
  };
}

Controller majority_controller(const FusionPolicy& policy) {
  if (policy.scheme() != Scheme::action_fusion) throw ConfigError("majority vote needs an action-fusion policy");
  return [&policy](const StepView& v) { return Decision{majority_vote(policy.branch_candidates(v.reps)), {}}; };
}

Controller uniform_mix_controller(const FusionPolicy& policy) {
  if (policy.scheme() != Scheme::action_fusion) throw ConfigError("uniform mixing needs an action-fusion policy");
  return [&policy](const StepView& v) { return Decision{argmax_action(uniform_mix(policy.branch_candidates(v.reps))), {}}; };
}

Controller top_k_controller(const FusionPolicy& policy, std::vector<std::size_t> branch_rank, std::size_t k) {
  if (policy.scheme() != Scheme::action_fusion) throw ConfigError("top-k vote needs an action-fusion policy");
  if (branch_rank.size() != policy.branch_count()) throw ConfigError("branch ranking missing or incomplete");
  if (k < 1 || k > branch_rank.size()) throw ConfigError("k out of range");
  return [&policy, rank = std::move(branch_rank), k](const StepView& v) {
    return Decision{top_k_vote(policy.branch_candidates(v.reps), rank, k), {}};
  };
}

EpisodeResult rollout(const Controller& controller, const Environment& env, const RepresentationBank& bank,
                      const EpisodeStart& start, const EvalConfig& cfg) {
  if (start.start < 0 || start.start >= env.graph.node_count()) throw ConfigError("invalid start node");
  return run_episode(controller, env, bank, start, cfg, goal_maps(env.graph, start.target, cfg.goal_radius));
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json tasks = nlohmann::json::object();
  for (ObjectClass cls : kObjectClasses) {
    const int c = static_cast<int>(cls);
    tasks[std::string(to_string(cls))] = {{"success", r.success[c]}, {"episodes", r.episodes[c]}};
  }
  return {{"model", r.model},     {"tasks", tasks},
          {"average", r.average}, {"episode_count", r.episode_count},
          {"config_digest", r.config_digest}, {"seed", r.seed}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.model = j.at("model").get<std::string>();
    for (ObjectClass cls : kObjectClasses) {
      const auto& t = j.at("tasks").at(std::string(to_string(cls)));
      r.success[static_cast<int>(cls)] = t.at("success").get<double>();
      r.episodes[static_cast<int>(cls)] = t.at("episodes").get<int>();
    }
    r.average = j.at("average").get<double>();
    r.episode_count = j.at("episode_count").get<int>();
    r.config_digest = j.value("config_digest", std::string());
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "# model=" << r.model << " config_digest=" << r.config_digest << " seed=" << r.seed << "\n";
  out << "task,success_rate,episodes\n";
  for (ObjectClass cls : kObjectClasses)
    out << to_string(cls) << ',' << fmt(r.success[static_cast<int>(cls)]) << ',' << r.episodes[static_cast<int>(cls)] << "\n";
  out << "average," << fmt(r.average) << ',' << r.episode_count << "\n";
  return out.str();
}

unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SITFUSE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) hw = std::min(hw, static_cast<unsigned>(cap));
  }
  return hw;
}

EvalReport evaluate(const Controller& controller, std::span<const Environment> envs, const RepresentationBank& bank,
                    std::span<const EpisodeStart> starts, const EvalConfig& cfg) {
  std::map<std::pair<std::size_t, int>, GoalMaps> maps;
  for (const EpisodeStart& s : starts) {
    if (s.env_index >= envs.size()) throw ConfigError("start references a missing environment");
    const auto key = std::make_pair(s.env_index, static_cast<int>(s.target));
    if (!maps.count(key)) maps.emplace(key, goal_maps(envs[s.env_index].graph, s.target, cfg.goal_radius));
  }
  EvalReport report;
  report.seed = cfg.seed;
  report.results.resize(starts.size());
  parallel_for(starts.size(), [&](std::size_t i) {
    const EpisodeStart& s = starts[i];
    report.results[i] = run_episode(controller, envs[s.env_index], bank, s, cfg,
                                    maps.at(std::make_pair(s.env_index, static_cast<int>(s.target))));
  });
  std::array<int, kObjectClassCount> wins{};
  for (const EpisodeResult& r : report.results) {
    ++report.episodes[static_cast<int>(r.target)];
    wins[static_cast<int>(r.target)] += r.success;
  }
  for (int c = 0; c < kObjectClassCount; ++c)
    report.success[c] = report.episodes[c] ? static_cast<double>(wins[c]) / report.episodes[c] : 0.0;
  double sum = 0.0;
  for (double s : report.success) sum += s;
  report.average = sum / kObjectClassCount;
  report.episode_count = static_cast<int>(starts.size());
  return report;
}

std::vector<RobustnessPoint> robustness_drop(const FusionPolicy& policy, std::span<const int> ks, DropMode mode,
                                             std::span<const Environment> envs, const RepresentationBank& bank,
                                             std::span<const EpisodeStart> starts, const EvalConfig& cfg) {
  std::vector<RobustnessPoint> curve;
  for (int k : ks) {
    const EvalReport r = evaluate(robust_controller(policy, k, mode), envs, bank, starts, cfg);
    curve.push_back({k, r.average, r.success});
  }
  return curve;
}

std::string robustness_csv(std::span<const RobustnessPoint> curve) {
  std::ostringstream out;
  out << "dropped,success";
  for (ObjectClass cls : kObjectClasses) out << ',' << to_string(cls);
  out << "\n";
  for (const RobustnessPoint& p : curve) {
    out << p.dropped << ',' << fmt(p.success);
    for (double s : p.per_task) out << ',' << fmt(s);
    out << "\n";
  }
  return out.str();
}

std::string_view openness_band_label(int band) {
  static constexpr std::array<std::string_view, kOpennessBands> labels = {"1", "2", "3", "4+"};
  return labels.at(band);
}

int openness_band(int openness) { return std::clamp(openness, 1, kOpennessBands) - 1; }

GateAnalytics gate_analytics(const FusionPolicy& policy, std::span<const Environment> envs,
                             const RepresentationBank& bank, int samples_per_env, std::uint64_t seed,
                             std::size_t extremes) {
  if (!uses_gate(policy.scheme())) throw ConfigError("gate analytics need a gated scheme");
  if (samples_per_env < 1) throw ConfigError("samples_per_env must be positive");
  const std::size_t n = policy.layout().size();
  std::array<int, kDomainCount> domain_size{};
  for (Domain d : policy.layout().domains) ++domain_size[static_cast<int>(d)];

  GateAnalytics out;
  out.mean_gate.assign(n, 0.0);
  std::array<std::array<int, kDomainCount>, kOpennessBands> tally{};
  std::vector<std::vector<GateSample>> samples(n);
  int total = 0;
  for (const Environment& env : envs) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(env.id)));
    for (int s = 0; s < samples_per_env; ++s) {
      const NodeId node = static_cast<NodeId>(rng.index(env.graph.node_count()));
      ObjectClass target = kObjectClasses[rng.index(kObjectClassCount)];
      for (int tries = 0; !env.map.has_class(target) && tries < kObjectClassCount; ++tries)
        target = kObjectClasses[(static_cast<int>(target) + 1) % kObjectClassCount];
      const RepresentationSet reps = bank.extract({env.graph, env.map, node, target, rng});
      const GateOutput g = policy.gate(reps);
      std::array<double, kDomainCount> mass{};
      for (std::size_t i = 0; i < n; ++i) {
        mass[static_cast<int>(policy.layout().domains[i])] += g.weights[i];
        out.mean_gate[i] += g.weights[i];
        samples[i].push_back({env.id, node, env.graph.cell(node), target, g.weights[i]});
      }
      int top = -1;
      for (int d = 0; d < kDomainCount; ++d) {
        if (domain_size[d] == 0) continue;
        mass[d] /= domain_size[d];
        if (top < 0 || mass[d] > mass[top]) top = d;
      }
      const int band = openness_band(openness(env.graph, node, kOpennessBands));
      ++tally[band][top];
      ++out.counts[band];
      ++total;
    }
  }
  for (double& m : out.mean_gate) m /= std::max(total, 1);
  for (int b = 0; b < kOpennessBands; ++b)
    for (int d = 0; d < kDomainCount; ++d)
      out.shares[b][d] = out.counts[b] ? static_cast<double>(tally[b][d]) / out.counts[b] : 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    auto& v = samples[i];
    std::stable_sort(v.begin(), v.end(), [](const GateSample& a, const GateSample& b) { return a.weight > b.weight; });
    const std::size_t k = std::min(extremes, v.size());
    out.top.emplace_back(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k));
    out.bottom.emplace_back(v.rbegin(), v.rbegin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

std::string gate_bands_csv(const GateAnalytics& a) {
  std::ostringstream out;
  out << "band,domain,share,positions\n";
  for (int b = 0; b < kOpennessBands; ++b)
    for (int d = 0; d < kDomainCount; ++d)
      out << openness_band_label(b) << ',' << to_string(static_cast<Domain>(d)) << ',' << fmt(a.shares[b][d]) << ','
          << a.counts[b] << "\n";
  return out.str();
}

std::string gate_extremes_csv(const GateAnalytics& a, const std::vector<std::string>& branch_names) {
  std::ostringstream out;
  out << "branch,rank_kind,rank,env_id,x,y,target,weight\n";
  auto emit = [&](std::size_t i, const char* kind, const std::vector<GateSample>& list) {
    for (std::size_t r = 0; r < list.size(); ++r) {
      const GateSample& s = list[r];
      out << branch_names.at(i) << ',' << kind << ',' << r + 1 << ',' << s.env_id << ',' << s.cell.x << ',' << s.cell.y
          << ',' << to_string(s.target) << ',' << fmt(s.weight) << "\n";
    }
  };
  for (std::size_t i = 0; i < a.top.size(); ++i) {
    emit(i, "top", a.top[i]);
    emit(i, "bottom", a.bottom[i]);
  }
  return out.str();
}

}  // namespace sitfuse
