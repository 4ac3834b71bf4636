#include "sitfuse/percept.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "sitfuse/error.hpp"

namespace sitfuse {

namespace {

constexpr std::array<std::string_view, kDomainCount> kDomainNames = {"2D", "3D", "semantic"};
constexpr std::array<std::string_view, 8> kKindNames = {"depth_rays",      "obstacle_patch", "openness",
                                                        "class_counts",    "target_bearing", "occupancy_patch",
                                                        "edge_map",        "random_projection"};

struct BaseEntry {
  const char* name;
  Domain domain;
  ExtractorKind kind;
};

constexpr std::array<BaseEntry, 8> kBaseBank = {{
    {"depth_rays", Domain::three_d, ExtractorKind::depth_rays},
    {"obstacle_patch", Domain::three_d, ExtractorKind::obstacle_patch},
    {"openness", Domain::three_d, ExtractorKind::openness},
    {"class_counts", Domain::semantic, ExtractorKind::class_counts},
    {"target_bearing", Domain::semantic, ExtractorKind::target_bearing},
    {"occupancy_patch", Domain::two_d, ExtractorKind::occupancy_patch},
    {"edge_map", Domain::two_d, ExtractorKind::edge_map},
    {"random_projection", Domain::two_d, ExtractorKind::random_projection},
}};

// Parents cloned, in order, once the base bank is exhausted.
constexpr std::array<int, 8> kCloneOrder = {0, 4, 1, 3, 5, 6, 7, 2};

bool wall_at(const NavGraph& graph, Cell c) { return graph.node_at(c) == kNoNode; }

// Sector index of the bearing from `from` to `to`, clockwise from north.
int bearing_bin(Cell from, Cell to) {
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  double deg = std::atan2(dx, -dy) * 180.0 / std::numbers::pi;
  if (deg < 0) deg += 360.0;
  return static_cast<int>(std::floor((deg + 22.5) / 45.0)) % kDirectionCount;
}

}  // namespace

std::string_view to_string(Domain domain) { return kDomainNames[static_cast<int>(domain)]; }

Domain domain_from_string(std::string_view name) {
  for (int i = 0; i < kDomainCount; ++i)
    if (kDomainNames[i] == name) return static_cast<Domain>(i);
  throw ConfigError("unknown domain '" + std::string(name) + "'");
}

std::string_view to_string(ExtractorKind kind) { return kKindNames[static_cast<int>(kind)]; }

ExtractorKind extractor_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == name) return static_cast<ExtractorKind>(i);
  throw ConfigError("unknown extractor kind '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ExtractorSpec& spec) {
  j = {{"name", spec.name},
       {"domain", to_string(spec.domain)},
       {"kind", to_string(spec.kind)},
       {"dim", spec.dim},
       {"noise_sigma", spec.noise_sigma}};
  j["clone_of"] = spec.clone_of ? nlohmann::json(*spec.clone_of) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ExtractorSpec& spec) {
  spec.name = j.at("name").get<std::string>();
  spec.domain = domain_from_string(j.at("domain").get<std::string>());
  spec.kind = extractor_kind_from_string(j.at("kind").get<std::string>());
  spec.dim = j.at("dim").get<int>();
  spec.noise_sigma = j.value("noise_sigma", 0.0);
  if (j.contains("clone_of") && !j["clone_of"].is_null()) spec.clone_of = j["clone_of"].get<std::string>();
}

void to_json(nlohmann::json& j, const PerceptConfig& c) {
  j = {{"extractor_count", c.extractor_count}, {"ray_cap", c.ray_cap},
       {"obstacle_window", c.obstacle_window}, {"obstacle_cap", c.obstacle_cap},
       {"count_window", c.count_window},       {"occupancy_window", c.occupancy_window},
       {"projection_dim", c.projection_dim},   {"projection_seed", c.projection_seed},
       {"visibility_radius", c.visibility_radius}, {"openness_cap", c.openness_cap},
       {"raw_window", c.raw_window},           {"raw_noise", c.raw_noise},
       {"noise_sigma", c.noise_sigma},         {"extractors", c.extractors}};
}

void from_json(const nlohmann::json& j, PerceptConfig& c) {
  c.extractor_count = j.value("extractor_count", c.extractor_count);
  c.ray_cap = j.value("ray_cap", c.ray_cap);
  c.obstacle_window = j.value("obstacle_window", c.obstacle_window);
  c.obstacle_cap = j.value("obstacle_cap", c.obstacle_cap);
  c.count_window = j.value("count_window", c.count_window);
  c.occupancy_window = j.value("occupancy_window", c.occupancy_window);
  c.projection_dim = j.value("projection_dim", c.projection_dim);
  c.projection_seed = j.value("projection_seed", c.projection_seed);
  c.visibility_radius = j.value("visibility_radius", c.visibility_radius);
  c.openness_cap = j.value("openness_cap", c.openness_cap);
  c.raw_window = j.value("raw_window", c.raw_window);
  c.raw_noise = j.value("raw_noise", c.raw_noise);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  if (j.contains("extractors")) c.extractors = j["extractors"].get<std::vector<ExtractorSpec>>();
}

int kind_dim(ExtractorKind kind, const PerceptConfig& cfg) {
  switch (kind) {
    case ExtractorKind::depth_rays:
    case ExtractorKind::target_bearing:
      return kDirectionCount;
    case ExtractorKind::obstacle_patch:
      return cfg.obstacle_window * cfg.obstacle_window;
    case ExtractorKind::openness:
      return 1;
    case ExtractorKind::class_counts:
      return kObjectClassCount;
    case ExtractorKind::occupancy_patch:
    case ExtractorKind::edge_map:
      return cfg.occupancy_window * cfg.occupancy_window;
    case ExtractorKind::random_projection:
      return cfg.projection_dim;
  }
  return 0;
}

std::vector<ExtractorSpec> register_default_bank(const PerceptConfig& cfg) {
  if (cfg.extractor_count < 6) throw ConfigError("the representation bank needs at least 6 extractors");
  std::vector<ExtractorSpec> specs;
  for (int i = 0; i < cfg.extractor_count && i < static_cast<int>(kBaseBank.size()); ++i) {
    const BaseEntry& e = kBaseBank[i];
    specs.push_back({e.name, e.domain, e.kind, kind_dim(e.kind, cfg), cfg.noise_sigma, std::nullopt});
  }
  for (int k = 0; static_cast<int>(specs.size()) < cfg.extractor_count; ++k) {
    const BaseEntry& parent = kBaseBank[kCloneOrder[k % kCloneOrder.size()]];
    const int round = k / static_cast<int>(kCloneOrder.size());
    std::string name = std::string(parent.name) + "_clone" + (round == 0 ? "" : std::to_string(round + 1));
    specs.push_back({std::move(name), parent.domain, parent.kind, kind_dim(parent.kind, cfg), cfg.noise_sigma,
                     std::string(parent.name)});
  }
  validate_bank(specs, cfg);
  return specs;
}

void validate_bank(const std::vector<ExtractorSpec>& specs, const PerceptConfig& cfg) {
  std::set<std::string> names;
  for (const ExtractorSpec& s : specs)
    if (!names.insert(s.name).second) throw ConfigError("duplicate extractor name '" + s.name + "'");
  for (const ExtractorSpec& s : specs) {
    if (s.dim < 1) throw ConfigError("extractor '" + s.name + "' has dim < 1");
    if (s.dim != kind_dim(s.kind, cfg))
      throw ConfigError("extractor '" + s.name + "' declares dim " + std::to_string(s.dim) + " but its kind yields " +
                        std::to_string(kind_dim(s.kind, cfg)));
    if (!(s.noise_sigma >= 0.0)) throw ConfigError("extractor '" + s.name + "' has negative noise");
    if (s.clone_of) {
      auto parent = std::find_if(specs.begin(), specs.end(), [&](const ExtractorSpec& p) { return p.name == *s.clone_of; });
      if (parent == specs.end()) throw ConfigError("clone '" + s.name + "' references unknown '" + *s.clone_of + "'");
      if (parent->kind != s.kind) throw ConfigError("clone '" + s.name + "' differs in kind from its parent");
    }
  }
}

RepresentationBank::RepresentationBank(PerceptConfig cfg)
    : RepresentationBank(cfg, cfg.extractors.empty() ? register_default_bank(cfg) : cfg.extractors) {}

RepresentationBank::RepresentationBank(PerceptConfig cfg, std::vector<ExtractorSpec> specs)
    : cfg_(std::move(cfg)), specs_(std::move(specs)) {
  if (cfg_.ray_cap < 1 || cfg_.obstacle_cap < 1 || cfg_.openness_cap < 1 || cfg_.visibility_radius < 1)
    throw ConfigError("percept caps must be positive");
  for (int w : {cfg_.obstacle_window, cfg_.count_window, cfg_.occupancy_window, cfg_.raw_window})
    if (w < 1 || w % 2 == 0) throw ConfigError("percept windows must be odd and positive");
  if (cfg_.projection_dim < 1) throw ConfigError("projection_dim must be positive");
  if (specs_.empty()) throw ConfigError("empty representation bank");
  validate_bank(specs_, cfg_);
  const int in = cfg_.occupancy_window * cfg_.occupancy_window;
  Rng rng(cfg_.projection_seed);
  projection_.resize(static_cast<std::size_t>(cfg_.projection_dim) * in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : projection_) w = rng.normal() * scale;
}

std::vector<std::string> RepresentationBank::names() const {
  std::vector<std::string> out;
  for (const auto& s : specs_) out.push_back(s.name);
  return out;
}

std::vector<int> RepresentationBank::dims() const {
  std::vector<int> out;
  for (const auto& s : specs_) out.push_back(s.dim);
  return out;
}

int RepresentationBank::raw_dim() const { return cfg_.raw_window * cfg_.raw_window * (1 + kObjectClassCount); }

int RepresentationBank::total_dim() const {
  int total = 0;
  for (const auto& s : specs_) total += s.dim;
  return total;
}

std::vector<double> RepresentationBank::compute(ExtractorKind kind, const GridMap& map, const NavGraph& graph,
                                                NodeId position, ObjectClass target) const {
  const Cell at = graph.cell(position);
  std::vector<double> out;
  switch (kind) {
    case ExtractorKind::depth_rays: {
      for (int d : ray_depths(map, at, cfg_.ray_cap)) out.push_back(static_cast<double>(d) / cfg_.ray_cap);
      break;
    }
    case ExtractorKind::obstacle_patch: {
      const int r = cfg_.obstacle_window / 2;
      const int cap = cfg_.obstacle_cap;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const Cell c{at.x + dx, at.y + dy};
          int nearest = cap;
          if (!map.is_floor(c)) {
            nearest = 0;
          } else {
            for (int oy = -cap; oy <= cap; ++oy)
              for (int ox = -cap; ox <= cap; ++ox)
                if (!map.is_floor({c.x + ox, c.y + oy})) nearest = std::min(nearest, std::max(std::abs(ox), std::abs(oy)));
          }
          out.push_back(static_cast<double>(nearest) / cap);
        }
      break;
    }
    case ExtractorKind::openness:
      out.push_back(static_cast<double>(openness(graph, position, cfg_.openness_cap)) / cfg_.openness_cap);
      break;
    case ExtractorKind::class_counts: {
      out.assign(kObjectClassCount, 0.0);
      const int r = cfg_.count_window / 2;
      for (const ObjectInstance& o : map.objects())
        if (std::abs(o.position.x - at.x) <= r && std::abs(o.position.y - at.y) <= r)
          out[static_cast<int>(o.cls)] += 1.0;
      break;
    }
    case ExtractorKind::target_bearing: {
      out.assign(kDirectionCount, 0.0);
      const int v = cfg_.visibility_radius;
      for (const ObjectInstance& o : map.objects()) {
        if (o.cls != target) continue;
        const int dist = std::max(std::abs(o.position.x - at.x), std::abs(o.position.y - at.y));
        if (dist > v || !line_of_sight(map, at, o.position)) continue;
        const double weight = 1.0 - static_cast<double>(dist) / (v + 1);
        if (dist == 0) {
          for (double& b : out) b += weight;
        } else {
          out[bearing_bin(at, o.position)] += weight;
        }
      }
      break;
    }
    case ExtractorKind::occupancy_patch:
    case ExtractorKind::edge_map:
    case ExtractorKind::random_projection: {
      const int r = cfg_.occupancy_window / 2;
      std::vector<double> patch;
      std::vector<double> edges;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const Cell c{at.x + dx, at.y + dy};
          const bool wall = !map.is_floor(c);
          patch.push_back(wall ? 1.0 : 0.0);
          bool edge = false;
          if (!wall)
            for (Direction d : {Direction::N, Direction::E, Direction::S, Direction::W})
              edge = edge || !map.is_floor(c + offset(d));
          edges.push_back(edge ? 1.0 : 0.0);
        }
      if (kind == ExtractorKind::occupancy_patch) {
        out = std::move(patch);
      } else if (kind == ExtractorKind::edge_map) {
        out = std::move(edges);
      } else {
        const std::size_t in = patch.size();
        out.assign(cfg_.projection_dim, 0.0);
        for (int k = 0; k < cfg_.projection_dim; ++k)
          for (std::size_t i = 0; i < in; ++i) out[k] += projection_[k * in + i] * patch[i];
      }
      break;
    }
  }
  return out;
}

RepresentationSet RepresentationBank::extract_impl(const GridMap& map, const NavGraph& graph, NodeId position,
                                                   ObjectClass target, Rng* noise) const {
  RepresentationSet set;
  set.features.reserve(specs_.size());
  for (const ExtractorSpec& s : specs_) {
    std::vector<double> v = compute(s.kind, map, graph, position, target);
    if (noise && s.noise_sigma > 0)
      for (double& x : v) x += s.noise_sigma * noise->normal();
    set.features.push_back(std::move(v));
  }

  const Cell at = graph.cell(position);
  const int r = cfg_.raw_window / 2;
  const int channels = 1 + kObjectClassCount;
  set.raw_obs.assign(static_cast<std::size_t>(raw_dim()), 0.0);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const std::size_t base = (static_cast<std::size_t>(dy + r) * cfg_.raw_window + (dx + r)) * channels;
      set.raw_obs[base] = map.is_floor({at.x + dx, at.y + dy}) ? 0.0 : 1.0;
    }
  for (const ObjectInstance& o : map.objects()) {
    const int dx = o.position.x - at.x;
    const int dy = o.position.y - at.y;
    if (std::abs(dx) > r || std::abs(dy) > r) continue;
    const std::size_t base = (static_cast<std::size_t>(dy + r) * cfg_.raw_window + (dx + r)) * channels;
    set.raw_obs[base + 1 + static_cast<int>(o.cls)] = 1.0;
  }
  if (noise && cfg_.raw_noise > 0)
    for (double& x : set.raw_obs) x += cfg_.raw_noise * noise->normal();

  set.task[static_cast<int>(target)] = 1.0;
  return set;
}

RepresentationSet RepresentationBank::extract(const ObservationContext& ctx) const {
  return extract_impl(ctx.map, ctx.graph, ctx.position, ctx.target, &ctx.noise);
}

RepresentationSet RepresentationBank::extract_noiseless(const GridMap& map, const NavGraph& graph, NodeId position,
                                                        ObjectClass target) const {
  return extract_impl(map, graph, position, target, nullptr);
}

std::array<int, kDirectionCount> ray_depths(const GridMap& map, Cell position, int cap) {
  std::array<int, kDirectionCount> depths{};
  for (int d = 0; d < kDirectionCount; ++d) {
    const Cell o = offset(static_cast<Direction>(d));
    int k = 1;
    while (k < cap && map.is_floor({position.x + k * o.x, position.y + k * o.y})) ++k;
    depths[d] = k;
  }
  return depths;
}

int openness(const NavGraph& graph, NodeId position, int cap) {
  const Cell at = graph.cell(position);
  int best = cap;
  for (Direction d : {Direction::N, Direction::E, Direction::S, Direction::W}) {
    const Cell o = offset(d);
    int k = 1;
    while (k < best && !wall_at(graph, {at.x + k * o.x, at.y + k * o.y})) ++k;
    best = std::min(best, k);
  }
  return best;
}

bool line_of_sight(const GridMap& map, Cell from, Cell to) {
  // Bresenham; endpoints are not tested.
  int x = from.x;
  int y = from.y;
  const int dx = std::abs(to.x - from.x);
  const int dy = -std::abs(to.y - from.y);
  const int sx = from.x < to.x ? 1 : -1;
  const int sy = from.y < to.y ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x == to.x && y == to.y) return true;
    if (!(x == from.x && y == from.y) && !map.is_floor({x, y})) return false;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

}  // namespace sitfuse
