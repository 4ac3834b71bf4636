#include "sitfuse/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "sitfuse/error.hpp"
#include "sitfuse/parallel.hpp"

namespace sitfuse {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSuiteFormat = "sitfuse-suite/1";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string stamp(const ExperimentConfig& c) {
  return "# config_digest=" + config_digest(c) + " seed=" + std::to_string(c.seed) + "\n";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string env_file(Split split, int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.json", std::string(to_string(split)).c_str(), id);
  return buf;
}

struct Context {
  Suite suite;
  RepresentationBank bank;
};

Context load_context(const ExperimentConfig& c) {
  Layout layout{c.out_dir};
  return {read_suite(layout.suite_dir()), make_bank(c)};
}

FusionPolicy load_model(const ExperimentConfig& c, const std::string& model, const std::string& checkpoint) {
  const std::string prefix = checkpoint.empty() ? Layout{c.out_dir}.model_prefix(model).string() : checkpoint;
  if (!fs::exists(prefix + ".json")) throw DataError("checkpoint not found: " + prefix + ".json");
  return load_policy(prefix);
}

void check_layout(const FusionPolicy& policy, const RepresentationBank& bank) {
  const BankLayout want = BankLayout::of(bank);
  if (policy.layout().names != want.names || policy.layout().dims != want.dims ||
      policy.layout().raw_dim != want.raw_dim)
    throw DataError("checkpoint was trained against a different representation bank");
}

nlohmann::json report_json(const EvalReport& r) { return to_json(r); }

}  // namespace

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.map.width = 32;
  c.map.height = 32;
  c.map.room_count = 5;
  c.map.room_min = 5;
  c.map.room_max = 10;
  c.map.objects_per_class = 2;
  c.eval.band = {8, 20};
  c.percept.occupancy_window = 5;
  c.models = {
      {"af", {{"scheme", "action_fusion"}}},
      {"af_taff", {{"scheme", "action_fusion"}, {"lambda_aff", 0.1}}},
      {"af_lbl", {{"scheme", "action_fusion"}, {"lambda_lbl", 0.1}}},
      {"ff", {{"scheme", "feature_fusion"}}},
      {"concat", {{"scheme", "concat"}}},
      {"blackbox", {{"scheme", "blackbox"}}},
  };
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json models = nlohmann::json::object();
  for (const auto& [name, overrides] : c.models) models[name] = overrides;
  return {{"seed", c.seed},
          {"out_dir", c.out_dir},
          {"train_envs", c.train_envs},
          {"test_envs", c.test_envs},
          {"map", c.map},
          {"percept", c.percept},
          {"samples_per_env", c.samples_per_env},
          {"affinity_samples", c.affinity_samples},
          {"affinity_ridge", c.affinity_ridge},
          {"train", c.train},
          {"models", models},
          {"eval", c.eval},
          {"robust_ks", c.robust_ks},
          {"analyze_samples_per_env", c.analyze_samples_per_env},
          {"analyze_extremes", c.analyze_extremes}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c = default_experiment();
  try {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.train_envs = j.value("train_envs", c.train_envs);
    c.test_envs = j.value("test_envs", c.test_envs);
    if (j.contains("map")) c.map = j.at("map").get<GenerationParams>();
    if (j.contains("percept")) c.percept = j.at("percept").get<PerceptConfig>();
    c.samples_per_env = j.value("samples_per_env", c.samples_per_env);
    c.affinity_samples = j.value("affinity_samples", c.affinity_samples);
    c.affinity_ridge = j.value("affinity_ridge", c.affinity_ridge);
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("models")) {
      for (const auto& [name, overrides] : j.at("models").items()) {
        if (!overrides.is_object()) throw ConfigError("model '" + name + "' must map to an object");
        c.models[name] = overrides;
      }
    }
    if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
    c.robust_ks = j.value("robust_ks", c.robust_ks);
    c.analyze_samples_per_env = j.value("analyze_samples_per_env", c.analyze_samples_per_env);
    c.analyze_extremes = j.value("analyze_extremes", c.analyze_extremes);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  return c;
}

void validate(const ExperimentConfig& c) {
  if (c.train_envs < 1 || c.test_envs < 1) throw ConfigError("both splits need at least one environment");
  if (c.samples_per_env < 1) throw ConfigError("samples_per_env must be positive");
  if (c.affinity_samples < 4) throw ConfigError("affinity_samples must be at least 4");
  if (!(c.affinity_ridge > 0.0)) throw ConfigError("affinity_ridge must be positive");
  if (c.analyze_samples_per_env < 1 || c.analyze_extremes < 0) throw ConfigError("invalid analytics sizes");
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  // Surfaces map and bank errors before any work starts.
  GridMap probe = generate_environment(derive_seed(c.seed, 0xC0FFEE), c.map);
  (void)probe;
  const RepresentationBank bank = make_bank(c);
  for (const auto& [name, overrides] : c.models) validate(model_config(c, name));
  for (int k : c.robust_ks)
    if (k < 0 || k >= static_cast<int>(bank.size())) throw ConfigError("robust_ks entries must satisfy 0 <= k < n");
  if (c.eval.episodes_per_task < 1 || c.eval.max_steps < 1 || c.eval.goal_radius < 0)
    throw ConfigError("invalid evaluation settings");
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override: " + assignment);
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

namespace {

// Reports the first key of `given` that the canonical dump does not know, so typos fail loudly.
void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix) {
  if (!given.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    reject_unknown(value, known.at(key), path);
  }
}

}  // namespace

ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = to_json(default_experiment());
  if (!path.empty()) {
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("malformed config " + path + ": " + e.what());
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    doc.merge_patch(file);
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  ExperimentConfig c = experiment_from_json(doc);
  const nlohmann::json canonical = to_json(c);
  nlohmann::json rest = doc;
  rest.erase("models");
  reject_unknown(rest, canonical, "");
  if (doc.contains("models") && doc["models"].is_object())
    for (const auto& [name, model] : doc["models"].items())
      reject_unknown(model, canonical.at("train"), "models." + name);
  validate(c);
  return c;
}

std::string config_digest(const ExperimentConfig& c) {
  char buf[17];
  nlohmann::json doc = to_json(c);
  doc.erase("out_dir");
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(doc.dump())));
  return buf;
}

Suite generate_suite(const ExperimentConfig& c) {
  Suite suite;
  const int total = c.train_envs + c.test_envs;
  std::vector<Environment> all(total);
  parallel_for(static_cast<std::size_t>(total), [&](std::size_t i) {
    all[i] = make_environment(static_cast<int>(i), generate_environment(derive_seed(c.seed, 0xE4, i), c.map));
  });
  for (int i = 0; i < total; ++i) (i < c.train_envs ? suite.train : suite.test).push_back(std::move(all[i]));
  return suite;
}

RepresentationBank make_bank(const ExperimentConfig& c) { return RepresentationBank(c.percept); }

TrainConfig model_config(const ExperimentConfig& c, const std::string& model) {
  nlohmann::json doc = c.train;
  if (auto it = c.models.find(model); it != c.models.end()) {
    doc.merge_patch(it->second);
  } else {
    try {
      doc["scheme"] = std::string(to_string(scheme_from_string(model)));
    } catch (const ConfigError&) {
      throw ConfigError("unknown model '" + model + "'");
    }
  }
  TrainConfig t;
  try {
    t = doc.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid train settings for '" + model + "': " + e.what());
  }
  t.seed = derive_seed(c.seed, t.seed);
  return t;
}

AffinityEstimate compute_affinity(const ExperimentConfig& c, const Suite& suite, const RepresentationBank& bank) {
  if (suite.train.empty()) throw DataError("affinity estimation needs training environments");
  std::vector<RepresentationSet> samples;
  samples.reserve(c.affinity_samples);
  Rng rng(derive_seed(c.seed, 0xAF));
  for (int s = 0; s < c.affinity_samples; ++s) {
    const Environment& env = suite.train[rng.index(suite.train.size())];
    const NodeId node = static_cast<NodeId>(rng.index(env.graph.node_count()));
    const ObjectClass cls = kObjectClasses[rng.index(kObjectClassCount)];
    samples.push_back(bank.extract({env.graph, env.map, node, cls, rng}));
  }
  return estimate_affinity(bank.names(), samples, c.affinity_ridge);
}

void write_suite(const Suite& suite, const ExperimentConfig& c, const fs::path& dir) {
  nlohmann::json manifest = {{"format", kSuiteFormat},
                             {"config_digest", config_digest(c)},
                             {"seed", c.seed},
                             {"map", c.map},
                             {"train", nlohmann::json::array()},
                             {"test", nlohmann::json::array()}};
  auto emit = [&](const std::vector<Environment>& envs, Split split) {
    for (const Environment& e : envs) {
      const std::string name = env_file(split, e.id);
      nlohmann::json doc = {{"id", e.id}, {"split", to_string(split)}, {"map", to_json(e.map)}};
      write_text(dir / name, doc.dump() + "\n");
      manifest[std::string(to_string(split))].push_back(name);
    }
  };
  emit(suite.train, Split::train);
  emit(suite.test, Split::test);
  write_json(dir / "manifest.json", manifest);
}

Suite read_suite(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw DataError("environment suite not found at " + dir.string() + " (run gen first)");
  const nlohmann::json manifest = read_json(manifest_path);
  Suite suite;
  std::set<int> ids;
  try {
    if (manifest.at("format") != kSuiteFormat) throw DataError("unsupported suite format");
    for (const char* split : {"train", "test"}) {
      for (const auto& name : manifest.at(split)) {
        const nlohmann::json doc = read_json(dir / name.get<std::string>());
        const int id = doc.at("id").get<int>();
        if (!ids.insert(id).second) throw DataError("environment id " + std::to_string(id) + " appears twice");
        Environment env = make_environment(id, grid_map_from_json(doc.at("map")));
        (std::string(split) == "train" ? suite.train : suite.test).push_back(std::move(env));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed suite: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed suite: ") + e.what());
  }
  return suite;
}

nlohmann::json cmd_gen(const ExperimentConfig& c) {
  const Suite suite = generate_suite(c);
  const Layout layout{c.out_dir};
  write_suite(suite, c, layout.suite_dir());
  return {{"train", suite.train.size()}, {"test", suite.test.size()}, {"dir", layout.suite_dir().string()}};
}

nlohmann::json cmd_affinity(const ExperimentConfig& c) {
  const Context ctx = load_context(c);
  const AffinityEstimate est = compute_affinity(c, ctx.suite, ctx.bank);
  nlohmann::json doc = to_json(est.matrix);
  doc["raw"] = est.raw;
  doc["warnings"] = est.warnings;
  doc["samples"] = c.affinity_samples;
  doc["config_digest"] = config_digest(c);
  doc["seed"] = c.seed;
  const Layout layout{c.out_dir};
  write_json(layout.affinity(), doc);
  return {{"path", layout.affinity().string()}, {"warnings", est.warnings}};
}

nlohmann::json cmd_train(const ExperimentConfig& c, const std::string& model) {
  const TrainConfig tc = model_config(c, model);
  const Context ctx = load_context(c);
  const Layout layout{c.out_dir};
  std::optional<AffinityMatrix> affinity;
  if (tc.lambda_aff > 0.0) {
    if (!fs::exists(layout.affinity())) throw DataError("affinity matrix not found (run affinity first)");
    affinity = affinity_from_json(read_json(layout.affinity()));
    if (affinity->names() != ctx.bank.names()) throw DataError("affinity matrix does not match the bank");
  }
  const ImitationDataset data =
      build_dataset(ctx.suite.train, ctx.bank, c.samples_per_env, derive_seed(c.seed, 0xDA7A), Split::train,
                    c.eval.goal_radius);
  const TrainResult result = train_policy(data, BankLayout::of(ctx.bank), tc, affinity ? &*affinity : nullptr);
  const std::string prefix = layout.model_prefix(model).string();
  fs::create_directories(layout.model_prefix(model).parent_path());
  save_policy(result.policy, prefix,
              {{"model", model}, {"train", tc}, {"config_digest", config_digest(c)}, {"seed", c.seed},
               {"rejected_environments", data.rejected}});
  write_text(prefix + "_loss.csv", stamp(c) + loss_curve_csv(result.curve));
  const CurvePoint& last = result.curve.back();
  return {{"checkpoint", prefix}, {"rows", data.size()}, {"final_ce", last.ce_fused},
          {"smoothed_ce", last.smoothed_ce}, {"rejected", data.rejected}};
}

nlohmann::json cmd_eval(const ExperimentConfig& c, const EvalRequest& req) {
  const Context ctx = load_context(c);
  const std::vector<EpisodeStart> starts = sample_start_set(ctx.suite.test, c.eval);
  std::optional<FusionPolicy> policy;
  std::string label = req.rule;
  const bool learned = req.rule != "random" && req.rule != "oracle";
  if (learned) {
    if (req.model.empty() && req.checkpoint.empty()) throw ConfigError("rule '" + req.rule + "' needs a model");
    policy = load_model(c, req.model, req.checkpoint);
    check_layout(*policy, ctx.bank);
    label = req.model.empty() ? fs::path(req.checkpoint).filename().string() : req.model;
    if (req.rule != "policy") label += "_" + req.rule;
  }
  Controller controller;
  if (req.rule == "policy") {
    controller = policy_controller(*policy);
  } else if (req.rule == "random") {
    controller = random_controller();
  } else if (req.rule == "oracle") {
    controller = oracle_controller();
  } else if (req.rule == "majority") {
    controller = majority_controller(*policy);
  } else if (req.rule == "uniform_mix") {
    controller = uniform_mix_controller(*policy);
  } else if (req.rule == "branch") {
    if (req.k < 0) throw ConfigError("branch index must be non-negative");
    controller = branch_controller(*policy, static_cast<std::size_t>(req.k));
    label += std::to_string(req.k);
  } else if (req.rule == "topk") {
    if (policy->scheme() != Scheme::action_fusion) throw ConfigError("top-k vote needs an action-fusion policy");
    const auto scores = rank_branches(*policy, ctx.suite.test, ctx.bank, starts, c.eval);
    controller = top_k_controller(*policy, rank_order(scores), static_cast<std::size_t>(std::max(req.k, 0)));
    label += std::to_string(req.k);
  } else {
    throw ConfigError("unknown rule '" + req.rule + "'");
  }
  EvalReport report = evaluate(controller, ctx.suite.test, ctx.bank, starts, c.eval);
  report.model = label;
  report.config_digest = config_digest(c);
  report.seed = c.seed;
  const Layout layout{c.out_dir};
  write_json(layout.eval_dir() / (label + ".json"), report_json(report));
  write_text(layout.eval_dir() / (label + ".csv"), to_csv(report));
  return {{"model", label}, {"average", report.average}, {"episodes", report.episode_count}};
}

DropMode drop_mode_from_string(std::string_view name) {
  if (name == "renormalize") return DropMode::renormalize;
  if (name == "zero_noise" || name == "zero_fill") return DropMode::zero_fill;
  throw ConfigError("unknown drop mode '" + std::string(name) + "'");
}

nlohmann::json cmd_robust(const ExperimentConfig& c, const std::string& model, DropMode mode) {
  const Context ctx = load_context(c);
  const FusionPolicy policy = load_model(c, model, "");
  check_layout(policy, ctx.bank);
  std::vector<int> ks = c.robust_ks;
  if (ks.empty())
    for (int k = 0; k < static_cast<int>(ctx.bank.size()); ++k) ks.push_back(k);
  const std::vector<EpisodeStart> starts = sample_start_set(ctx.suite.test, c.eval);
  const auto curve = robustness_drop(policy, ks, mode, ctx.suite.test, ctx.bank, starts, c.eval);
  const std::string mode_name = mode == DropMode::renormalize ? "renormalize" : "zero_noise";
  const Layout layout{c.out_dir};
  const fs::path base = layout.robust_dir() / (model + "_" + mode_name);
  write_text(base.string() + ".csv", stamp(c) + robustness_csv(curve));
  nlohmann::json points = nlohmann::json::array();
  for (const RobustnessPoint& p : curve) points.push_back({{"dropped", p.dropped}, {"success", p.success}, {"per_task", p.per_task}});
  write_json(base.string() + ".json", {{"model", model}, {"mode", mode_name}, {"curve", points},
                                       {"config_digest", config_digest(c)}, {"seed", c.seed}});
  return {{"model", model}, {"mode", mode_name}, {"curve", points}};
}

nlohmann::json cmd_analyze(const ExperimentConfig& c, const std::string& model) {
  const Context ctx = load_context(c);
  const FusionPolicy policy = load_model(c, model, "");
  check_layout(policy, ctx.bank);
  const GateAnalytics a = gate_analytics(policy, ctx.suite.test, ctx.bank, c.analyze_samples_per_env,
                                         derive_seed(c.seed, 0x6A7E), static_cast<std::size_t>(c.analyze_extremes));
  const Layout layout{c.out_dir};
  const fs::path base = layout.analyze_dir() / model;
  write_text(base.string() + "_bands.csv", stamp(c) + gate_bands_csv(a));
  write_text(base.string() + "_extremes.csv", stamp(c) + gate_extremes_csv(a, ctx.bank.names()));
  nlohmann::json shares = nlohmann::json::object();
  for (int b = 0; b < kOpennessBands; ++b) {
    nlohmann::json row = nlohmann::json::object();
    for (int d = 0; d < kDomainCount; ++d) row[std::string(to_string(static_cast<Domain>(d)))] = a.shares[b][d];
    shares[std::string(openness_band_label(b))] = row;
  }
  write_json(base.string() + "_gates.json", {{"model", model}, {"shares", shares}, {"counts", a.counts},
                                             {"mean_gate", a.mean_gate}, {"names", ctx.bank.names()},
                                             {"config_digest", config_digest(c)}, {"seed", c.seed}});
  return {{"model", model}, {"shares", shares}};
}

TableResult comparison_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ConfigError("table needs at least one report");
  std::vector<std::string> rows;
  for (ObjectClass cls : kObjectClasses) rows.emplace_back(to_string(cls));
  rows.emplace_back("average");
  auto cell = [&](const EvalReport& r, std::size_t row) {
    if (row < kObjectClassCount) return r.success[row];
    double sum = 0.0;
    for (double s : r.success) sum += s;
    return sum / kObjectClassCount;
  };

  TableResult out;
  std::ostringstream csv;
  csv << "task";
  for (const EvalReport& r : reports) csv << ',' << r.model;
  csv << "\n";
  for (std::size_t row = 0; row < rows.size(); ++row) {
    csv << rows[row];
    for (const EvalReport& r : reports) csv << ',' << fmt(cell(r, row));
    csv << "\n";
  }
  out.csv = csv.str();

  std::size_t first = 7;
  for (const auto& r : rows) first = std::max(first, r.size());
  std::vector<std::size_t> widths;
  for (const EvalReport& r : reports) widths.push_back(std::max<std::size_t>(r.model.size(), 6));
  std::ostringstream text;
  text << std::left << std::setw(static_cast<int>(first)) << "task";
  for (std::size_t k = 0; k < reports.size(); ++k)
    text << "  " << std::right << std::setw(static_cast<int>(widths[k])) << reports[k].model;
  text << "\n";
  for (std::size_t row = 0; row < rows.size(); ++row) {
    text << std::left << std::setw(static_cast<int>(first)) << rows[row];
    for (std::size_t k = 0; k < reports.size(); ++k) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", 100.0 * cell(reports[k], row));
      text << "  " << std::right << std::setw(static_cast<int>(widths[k])) << buf;
    }
    text << "\n";
  }
  out.text = text.str();
  return out;
}

nlohmann::json cmd_table(const std::vector<std::string>& paths, const fs::path& out_prefix) {
  if (paths.empty()) throw ConfigError("table needs at least one report");
  std::vector<EvalReport> reports;
  std::optional<std::set<std::string>> tasks;
  for (const std::string& p : paths) {
    const nlohmann::json doc = read_json(p);
    std::set<std::string> names;
    if (doc.contains("tasks") && doc.at("tasks").is_object())
      for (const auto& [name, _] : doc.at("tasks").items()) names.insert(name);
    if (tasks && *tasks != names) throw DataError("report " + p + " covers a different task set");
    tasks = names;
    reports.push_back(eval_report_from_json(doc));
  }
  const TableResult t = comparison_table(reports);
  write_text(out_prefix.string() + ".csv", t.csv);
  write_text(out_prefix.string() + ".txt", t.text);
  return {{"csv", out_prefix.string() + ".csv"}, {"text", t.text}};
}

nlohmann::json cmd_gradcheck(std::uint64_t seed, int configurations, double tolerance) {
  if (configurations < 1) throw ConfigError("configurations must be positive");
  constexpr std::array<Scheme, 4> schemes = {Scheme::blackbox, Scheme::concat, Scheme::feature_fusion,
                                             Scheme::action_fusion};
  nlohmann::json runs = nlohmann::json::array();
  double worst = 0.0;
  for (int k = 0; k < configurations; ++k) {
    Rng rng(derive_seed(seed, 0x6C, static_cast<std::uint64_t>(k)));
    const Scheme scheme = schemes[k % schemes.size()];
    BankLayout layout;
    const int n = static_cast<int>(rng.integer(2, 4));
    for (int i = 0; i < n; ++i) {
      layout.names.push_back("r" + std::to_string(i));
      layout.domains.push_back(static_cast<Domain>(i % kDomainCount));
      layout.dims.push_back(static_cast<int>(rng.integer(1, 4)));
    }
    layout.raw_dim = static_cast<int>(rng.integer(2, 5));
    Architecture arch;
    arch.branch_hidden = 4;
    arch.gate_hidden = 5;
    arch.head_hidden = 6;
    arch.blackbox_hidden = {6, 5};
    arch.gate_input = rng.uniform() < 0.5 ? GateInput::concat : GateInput::raw_only;
    FusionPolicy policy(scheme, layout, arch, rng.next());

    std::vector<RepresentationSet> sets(3);
    std::vector<BatchItem> batch;
    for (RepresentationSet& s : sets) {
      for (int d : layout.dims) {
        std::vector<double> v(d);
        for (double& x : v) x = rng.normal();
        s.features.push_back(std::move(v));
      }
      s.raw_obs.resize(layout.raw_dim);
      for (double& x : s.raw_obs) x = rng.normal();
      s.task[rng.index(kObjectClassCount)] = 1.0;
      batch.push_back({&s, static_cast<Action>(rng.index(kActionCount))});
    }
    LossOptions opts;
    std::vector<double> values(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) values[i * n + j] = values[j * n + i] = i == j ? 1.0 : rng.uniform();
    const AffinityMatrix f(layout.names, values);
    if (uses_gate(scheme)) {
      opts.lambda_lbl = rng.uniform(0.05, 1.0);
      opts.lambda_aff = rng.uniform(0.05, 1.0);
      opts.lbl_variant = rng.uniform() < 0.5 ? LblVariant::batch_mean : LblVariant::per_example;
      opts.detach_branches = rng.uniform() < 0.5;
    }
    const GradCheckResult r = check_loss_gradients(policy, batch, uses_gate(scheme) ? &f : nullptr, opts);
    worst = std::max(worst, r.max_relative_error);
    runs.push_back({{"scheme", to_string(scheme)}, {"representations", n}, {"max_relative_error", r.max_relative_error},
                    {"checked", r.checked}});
  }
  return {{"configurations", runs}, {"max_relative_error", worst}, {"tolerance", tolerance}, {"pass", worst < tolerance}};
}

}  // namespace sitfuse
