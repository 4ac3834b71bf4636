#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/rng.hpp"

namespace sitfuse {

enum class Domain : std::uint8_t { two_d, three_d, semantic };
inline constexpr int kDomainCount = 3;
std::string_view to_string(Domain domain);
Domain domain_from_string(std::string_view name);

/// Signal an extractor computes from simulator ground truth.
enum class ExtractorKind : std::uint8_t {
  depth_rays,         // 8 ray casts, cells to first wall, capped and normalized
  obstacle_patch,     // per-cell distance to nearest wall over a small window
  openness,           // lateral openness scalar
  class_counts,       // per-class instance counts in a window
  target_bearing,     // bearing-binned histogram of visible target instances
  occupancy_patch,    // flattened wall/floor window
  edge_map,           // floor cells bordering a wall within the window
  random_projection,  // fixed random projection of the occupancy window
};
std::string_view to_string(ExtractorKind kind);
ExtractorKind extractor_kind_from_string(std::string_view name);

struct ExtractorSpec {
  std::string name;
  Domain domain = Domain::three_d;
  ExtractorKind kind = ExtractorKind::depth_rays;
  int dim = 1;
  double noise_sigma = 0.0;
  std::optional<std::string> clone_of;
};

/// Geometry knobs shared by every extractor.
struct PerceptConfig {
  int extractor_count = 10;
  int ray_cap = 8;
  int obstacle_window = 5;
  int obstacle_cap = 3;
  int count_window = 7;
  int occupancy_window = 7;
  int projection_dim = 16;
  std::uint64_t projection_seed = 0x5EED;
  int visibility_radius = 10;
  int openness_cap = 6;
  int raw_window = 7;
  double raw_noise = 0.05;
  double noise_sigma = 0.05;
  /// Optional explicit bank; empty means the default bank.
  std::vector<ExtractorSpec> extractors;
};

void to_json(nlohmann::json& j, const ExtractorSpec& spec);
void from_json(const nlohmann::json& j, ExtractorSpec& spec);
void to_json(nlohmann::json& j, const PerceptConfig& cfg);
void from_json(const nlohmann::json& j, PerceptConfig& cfg);

/// Output dimension an extractor kind produces under `cfg`.
int kind_dim(ExtractorKind kind, const PerceptConfig& cfg);

/// The shipped bank: 3D {depth_rays, obstacle_patch, openness}, semantic {class_counts,
/// target_bearing}, 2D {occupancy_patch, edge_map, random_projection}, then clones.
/// Throws ConfigError when extractor_count < 6 or names collide.
std::vector<ExtractorSpec> register_default_bank(const PerceptConfig& cfg);

/// Validates names, dims, noise and clone references. Throws ConfigError.
void validate_bank(const std::vector<ExtractorSpec>& specs, const PerceptConfig& cfg);

/// Per-step features: one vector per extractor (registry order), the raw local
/// observation, and a one-hot of the commanded target class.
struct RepresentationSet {
  std::vector<std::vector<double>> features;
  std::vector<double> raw_obs;
  std::array<double, kObjectClassCount> task{};
};

struct ObservationContext {
  const NavGraph& graph;
  const GridMap& map;
  NodeId position;
  ObjectClass target;
  Rng& noise;
};

class RepresentationBank {
 public:
  RepresentationBank() = default;
  explicit RepresentationBank(PerceptConfig cfg);
  RepresentationBank(PerceptConfig cfg, std::vector<ExtractorSpec> specs);

  const std::vector<ExtractorSpec>& specs() const { return specs_; }
  const PerceptConfig& config() const { return cfg_; }
  std::size_t size() const { return specs_.size(); }
  std::vector<std::string> names() const;
  std::vector<int> dims() const;
  int raw_dim() const;
  /// Sum of all feature dims.
  int total_dim() const;

  RepresentationSet extract(const ObservationContext& ctx) const;
  /// Extraction with every noise term switched off.
  RepresentationSet extract_noiseless(const GridMap& map, const NavGraph& graph, NodeId position,
                                      ObjectClass target) const;

  /// Noiseless output of one extractor kind.
  std::vector<double> compute(ExtractorKind kind, const GridMap& map, const NavGraph& graph, NodeId position,
                              ObjectClass target) const;

 private:
  RepresentationSet extract_impl(const GridMap& map, const NavGraph& graph, NodeId position, ObjectClass target,
                                 Rng* noise) const;

  PerceptConfig cfg_;
  std::vector<ExtractorSpec> specs_;
  std::vector<double> projection_;  // projection_dim x occupancy_window^2, row-major
};

/// Cells from `position` to the first wall along each of the 8 directions (wall-adjacent = 1).
std::array<int, kDirectionCount> ray_depths(const GridMap& map, Cell position, int cap);

/// Distance in cells to the closest wall along N, E, S, W (wall-adjacent = 1).
/// Walls are cells without a graph node.
int openness(const NavGraph& graph, NodeId position, int cap = 1 << 20);

/// True when no wall lies on the rasterized segment between the two cells.
bool line_of_sight(const GridMap& map, Cell from, Cell to);

}  // namespace sitfuse
