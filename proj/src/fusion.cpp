#include "sitfuse/fusion.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "sitfuse/error.hpp"
#include "sitfuse/rng.hpp"

namespace sitfuse {

namespace {

constexpr std::array<std::string_view, 4> kSchemeNames = {"blackbox", "concat", "feature_fusion", "action_fusion"};

ActionDistribution to_distribution(const std::vector<double>& logits) {
  const std::vector<double> p = softmax(logits);
  ActionDistribution out{};
  std::copy(p.begin(), p.end(), out.begin());
  return out;
}

void append(std::vector<double>& out, std::span<const double> block) { out.insert(out.end(), block.begin(), block.end()); }

// Survivor weights rescaled to sum to one; uniform over survivors if they carry no mass.
void mask_and_renormalize(std::vector<double>& g, const std::vector<char>& dropped) {
  double total = 0.0;
  std::size_t survivors = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (dropped[i]) {
      g[i] = 0.0;
    } else {
      total += g[i];
      ++survivors;
    }
  }
  if (survivors == 0) throw ConfigError("every representation was dropped");
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!dropped[i]) g[i] = total > 0.0 ? g[i] / total : 1.0 / survivors;
}

}  // namespace

std::string_view to_string(Scheme scheme) { return kSchemeNames[static_cast<int>(scheme)]; }

Scheme scheme_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kSchemeNames.size(); ++i)
    if (kSchemeNames[i] == name) return static_cast<Scheme>(i);
  throw ConfigError("unknown scheme '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = {{"branch_hidden", a.branch_hidden},
       {"gate_hidden", a.gate_hidden},
       {"head_hidden", a.head_hidden},
       {"blackbox_hidden", a.blackbox_hidden},
       {"gate_input", a.gate_input == GateInput::concat ? "concat" : "raw_only"}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  a.branch_hidden = j.value("branch_hidden", a.branch_hidden);
  a.gate_hidden = j.value("gate_hidden", a.gate_hidden);
  a.head_hidden = j.value("head_hidden", a.head_hidden);
  a.blackbox_hidden = j.value("blackbox_hidden", a.blackbox_hidden);
  const std::string gi =
      j.value("gate_input", std::string(a.gate_input == GateInput::concat ? "concat" : "raw_only"));
  if (gi != "concat" && gi != "raw_only") throw ConfigError("gate_input must be concat or raw_only");
  a.gate_input = gi == "concat" ? GateInput::concat : GateInput::raw_only;
}

BankLayout BankLayout::of(const RepresentationBank& bank) {
  BankLayout layout;
  for (const ExtractorSpec& s : bank.specs()) {
    layout.names.push_back(s.name);
    layout.domains.push_back(s.domain);
    layout.dims.push_back(s.dim);
  }
  layout.raw_dim = bank.raw_dim();
  return layout;
}

int BankLayout::total_dim() const {
  int total = 0;
  for (int d : dims) total += d;
  return total;
}

bool DropMask::any() const { return std::find(dropped.begin(), dropped.end(), 1) != dropped.end(); }

FusionPolicy::FusionPolicy(Scheme scheme, BankLayout layout, Architecture arch, std::uint64_t seed)
    : scheme_(scheme), layout_(std::move(layout)), arch_(std::move(arch)) {
  if (layout_.size() == 0) throw ConfigError("policy needs at least one representation");
  const int task = kObjectClassCount;
  const int n = static_cast<int>(layout_.size());
  if (scheme_ == Scheme::action_fusion) {
    for (int i = 0; i < n; ++i) {
      branches_.emplace_back(std::vector<int>{layout_.dims[i] + task, arch_.branch_hidden, kActionCount}, Activation::relu);
      branches_.back().initialize(derive_seed(seed, 1, static_cast<std::uint64_t>(i)));
    }
  }
  if (uses_gate(scheme_)) {
    const int gate_in = (arch_.gate_input == GateInput::concat ? layout_.total_dim() : 0) + layout_.raw_dim + task;
    gating_ = DenseNet(std::vector<int>{gate_in, arch_.gate_hidden, n}, Activation::relu);
    gating_.initialize(derive_seed(seed, 2));
  }
  if (scheme_ == Scheme::concat || scheme_ == Scheme::feature_fusion) {
    head_ = DenseNet(std::vector<int>{layout_.total_dim() + task, arch_.head_hidden, kActionCount}, Activation::relu);
    head_.initialize(derive_seed(seed, 3));
  } else if (scheme_ == Scheme::blackbox) {
    std::vector<int> sizes{layout_.raw_dim + task};
    sizes.insert(sizes.end(), arch_.blackbox_hidden.begin(), arch_.blackbox_hidden.end());
    sizes.push_back(kActionCount);
    head_ = DenseNet(sizes, Activation::relu);
    head_.initialize(derive_seed(seed, 3));
  }
}

std::vector<double> FusionPolicy::branch_input(std::size_t i, const RepresentationSet& reps) const {
  std::vector<double> in(reps.features.at(i));
  append(in, reps.task);
  return in;
}

std::vector<double> FusionPolicy::gate_input(const RepresentationSet& reps) const {
  std::vector<double> in;
  if (arch_.gate_input == GateInput::concat)
    for (const auto& f : reps.features) append(in, f);
  append(in, reps.raw_obs);
  append(in, reps.task);
  return in;
}

std::vector<double> FusionPolicy::concat_input(const RepresentationSet& reps) const {
  std::vector<double> in;
  for (const auto& f : reps.features) append(in, f);
  append(in, reps.task);
  return in;
}

std::vector<double> FusionPolicy::blackbox_input(const RepresentationSet& reps) const {
  std::vector<double> in(reps.raw_obs);
  append(in, reps.task);
  return in;
}

GateOutput FusionPolicy::gate(const RepresentationSet& reps) const {
  if (!uses_gate(scheme_)) throw ConfigError("scheme '" + std::string(to_string(scheme_)) + "' has no gate");
  GateOutput out;
  out.scores = gating_.forward(gate_input(reps));
  out.weights = softmax(out.scores);
  return out;
}

ActionDistribution FusionPolicy::branch_predict(std::size_t i, const RepresentationSet& reps) const {
  if (scheme_ != Scheme::action_fusion) throw ConfigError("branch predictions exist only for action fusion");
  if (i >= branches_.size()) throw ConfigError("branch index out of range");
  return to_distribution(branches_[i].forward(branch_input(i, reps)));
}

std::vector<ActionDistribution> FusionPolicy::branch_candidates(const RepresentationSet& reps) const {
  std::vector<ActionDistribution> out;
  out.reserve(branches_.size());
  for (std::size_t i = 0; i < branches_.size(); ++i) out.push_back(branch_predict(i, reps));
  return out;
}

ActionDistribution FusionPolicy::concat_predict(const RepresentationSet& reps) const {
  if (scheme_ != Scheme::concat) throw ConfigError("concat_predict requires the concat scheme");
  return to_distribution(head_.forward(concat_input(reps)));
}

ActionDistribution FusionPolicy::blackbox_predict(const RepresentationSet& reps) const {
  if (scheme_ != Scheme::blackbox) throw ConfigError("blackbox_predict requires the blackbox scheme");
  return to_distribution(head_.forward(blackbox_input(reps)));
}

ActionDistribution FusionPolicy::distribution(const RepresentationSet& reps, const DropMask* drop,
                                              GateOutput* gate_out) const {
  const bool dropping = drop && drop->any();
  if (dropping && drop->dropped.size() != layout_.size()) throw ConfigError("drop mask length mismatch");
  if (dropping && drop->mode == DropMode::renormalize && !uses_gate(scheme_))
    throw ConfigError("renormalize mode is undefined for gateless schemes");

  const RepresentationSet* view = &reps;
  RepresentationSet damaged;
  if (dropping) {
    damaged = reps;
    for (std::size_t i = 0; i < layout_.size(); ++i)
      if (drop->dropped[i]) std::fill(damaged.features[i].begin(), damaged.features[i].end(), 0.0);
    view = &damaged;
  }

  switch (scheme_) {
    case Scheme::blackbox:
      return blackbox_predict(*view);
    case Scheme::concat:
      return concat_predict(*view);
    case Scheme::feature_fusion:
    case Scheme::action_fusion: {
      GateOutput g = gate(*view);
      if (dropping && drop->mode == DropMode::renormalize) mask_and_renormalize(g.weights, drop->dropped);
      ActionDistribution out;
      if (scheme_ == Scheme::action_fusion) {
        out = fuse_actions(g.weights, branch_candidates(*view));
      } else {
        std::vector<double> in = fuse_features(g.weights, *view);
        append(in, view->task);
        out = to_distribution(head_.forward(in));
      }
      if (gate_out) *gate_out = std::move(g);
      return out;
    }
  }
  throw ConfigError("unknown scheme");
}

Action FusionPolicy::act(const RepresentationSet& reps) const { return argmax_action(distribution(reps)); }

std::vector<DenseNet*> FusionPolicy::networks() {
  std::vector<DenseNet*> out;
  for (DenseNet& b : branches_) out.push_back(&b);
  if (gating_.param_count() > 0) out.push_back(&gating_);
  if (head_.param_count() > 0) out.push_back(&head_);
  return out;
}

std::vector<const DenseNet*> FusionPolicy::networks() const {
  std::vector<const DenseNet*> out;
  for (const DenseNet& b : branches_) out.push_back(&b);
  if (gating_.param_count() > 0) out.push_back(&gating_);
  if (head_.param_count() > 0) out.push_back(&head_);
  return out;
}

std::size_t FusionPolicy::param_count() const {
  std::size_t total = 0;
  for (const DenseNet* n : networks()) total += n->param_count();
  return total;
}

void FusionPolicy::zero_grad() {
  for (DenseNet* n : networks()) n->zero_grad();
}

ActionDistribution fuse_actions(std::span<const double> gate, std::span<const ActionDistribution> candidates) {
  if (gate.size() != candidates.size()) throw ConfigError("gate and candidate counts differ");
  ActionDistribution out{};
  for (std::size_t i = 0; i < gate.size(); ++i)
    for (int a = 0; a < kActionCount; ++a) out[a] += gate[i] * candidates[i][a];
  return out;
}

ActionDistribution fuse_actions(const GateOutput& gate, std::span<const ActionDistribution> candidates) {
  return fuse_actions(gate.weights, candidates);
}

std::vector<double> fuse_features(std::span<const double> gate, const RepresentationSet& reps) {
  if (gate.size() != reps.features.size()) throw ConfigError("gate and representation counts differ");
  std::vector<double> out;
  for (std::size_t i = 0; i < gate.size(); ++i)
    for (double v : reps.features[i]) out.push_back(gate[i] * v);
  return out;
}

Action argmax_action(const ActionDistribution& dist) {
  return static_cast<Action>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

Action majority_vote(std::span<const ActionDistribution> candidates) {
  if (candidates.empty()) throw ConfigError("majority vote needs at least one candidate");
  std::array<int, kActionCount> votes{};
  std::array<double, kActionCount> mass{};
  for (const ActionDistribution& c : candidates) {
    ++votes[static_cast<int>(argmax_action(c))];
    for (int a = 0; a < kActionCount; ++a) mass[a] += c[a];
  }
  int best = 0;
  for (int a = 1; a < kActionCount; ++a)
    if (votes[a] > votes[best] || (votes[a] == votes[best] && mass[a] > mass[best])) best = a;
  return static_cast<Action>(best);
}

Action top_k_vote(std::span<const ActionDistribution> candidates, std::span<const std::size_t> branch_rank,
                  std::size_t k) {
  if (branch_rank.empty()) throw ConfigError("top-k vote needs a branch ranking");
  if (branch_rank.size() != candidates.size()) throw ConfigError("branch ranking does not cover every branch");
  if (k < 1 || k > candidates.size()) throw ConfigError("k out of range");
  std::vector<ActionDistribution> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(candidates[branch_rank[i]]);
  return majority_vote(chosen);
}

ActionDistribution uniform_mix(std::span<const ActionDistribution> candidates) {
  if (candidates.empty()) throw ConfigError("uniform mix needs at least one candidate");
  const std::vector<double> g(candidates.size(), 1.0 / candidates.size());
  return fuse_actions(g, candidates);
}

void save_policy(const FusionPolicy& policy, const std::string& prefix, const nlohmann::json& extra) {
  const std::filesystem::path blob_path = prefix + ".bin";
  nlohmann::json nets = nlohmann::json::array();
  std::vector<double> flat;
  const auto networks = policy.networks();
  for (std::size_t k = 0; k < networks.size(); ++k) {
    std::string role;
    if (policy.scheme() == Scheme::action_fusion && k < policy.branch_count())
      role = "branch:" + policy.layout().names[k];
    else if (&policy.gating() == networks[k])
      role = "gate";
    else
      role = "head";
    nets.push_back({{"role", role}, {"offset", flat.size()}, {"count", networks[k]->param_count()},
                    {"layers", networks[k]->architecture()}});
    flat.insert(flat.end(), networks[k]->params().begin(), networks[k]->params().end());
  }
  nlohmann::json domains = nlohmann::json::array();
  for (Domain d : policy.layout().domains) domains.push_back(to_string(d));
  nlohmann::json manifest = {
      {"format", "sitfuse-policy/1"},
      {"scheme", to_string(policy.scheme())},
      {"architecture", policy.architecture()},
      {"layout", {{"names", policy.layout().names}, {"domains", domains}, {"dims", policy.layout().dims},
                  {"raw_dim", policy.layout().raw_dim}}},
      {"networks", nets},
      {"param_count", flat.size()},
      {"blob", blob_path.filename().string()},
  };
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  write_param_blob(blob_path.string(), flat);
  std::ofstream out(prefix + ".json", std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint manifest '" + prefix + ".json'");
  out << manifest.dump(2) << '\n';
}

FusionPolicy load_policy(const std::string& prefix, nlohmann::json* manifest_out) {
  std::ifstream in(prefix + ".json");
  if (!in) throw DataError("checkpoint manifest '" + prefix + ".json' not found");
  nlohmann::json manifest;
  try {
    in >> manifest;
    BankLayout layout;
    layout.names = manifest.at("layout").at("names").get<std::vector<std::string>>();
    for (const auto& d : manifest.at("layout").at("domains")) layout.domains.push_back(domain_from_string(d.get<std::string>()));
    layout.dims = manifest.at("layout").at("dims").get<std::vector<int>>();
    layout.raw_dim = manifest.at("layout").at("raw_dim").get<int>();
    FusionPolicy policy(scheme_from_string(manifest.at("scheme").get<std::string>()), layout,
                        manifest.at("architecture").get<Architecture>(), 0);
    const std::filesystem::path blob = std::filesystem::path(prefix).parent_path() / manifest.at("blob").get<std::string>();
    const std::vector<double> flat = read_param_blob(blob.string());
    if (flat.size() != policy.param_count() || flat.size() != manifest.at("param_count").get<std::size_t>())
      throw DataError("checkpoint parameter count does not match its architecture");
    auto networks = policy.networks();
    const auto& nets = manifest.at("networks");
    if (nets.size() != networks.size()) throw DataError("checkpoint network list does not match scheme");
    for (std::size_t k = 0; k < networks.size(); ++k) {
      if (DenseNet::from_architecture(nets[k].at("layers")).param_count() != networks[k]->param_count())
        throw DataError("checkpoint network shape mismatch");
      const std::size_t offset = nets[k].at("offset").get<std::size_t>();
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), networks[k]->param_count(),
                  networks[k]->params().begin());
    }
    if (manifest_out) *manifest_out = manifest;
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

}  // namespace sitfuse
