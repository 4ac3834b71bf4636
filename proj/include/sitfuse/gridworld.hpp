#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sitfuse {

enum class Terrain : std::uint8_t { wall, floor };

enum class ObjectClass : std::uint8_t { chair, table, bed, door };
inline constexpr int kObjectClassCount = 4;
inline constexpr std::array<ObjectClass, kObjectClassCount> kObjectClasses = {
    ObjectClass::chair, ObjectClass::table, ObjectClass::bed, ObjectClass::door};

std::string_view to_string(ObjectClass cls);
ObjectClass object_class_from_string(std::string_view name);

/// Octagonal directions in the fixed tie-break order used by the oracle.
enum class Direction : std::uint8_t { N, NE, E, SE, S, SW, W, NW };
inline constexpr int kDirectionCount = 8;

/// The 8 moves (same numbering as Direction) followed by Stop.
enum class Action : std::uint8_t { N, NE, E, SE, S, SW, W, NW, Stop };
inline constexpr int kActionCount = 9;

std::string_view to_string(Direction dir);
std::string_view to_string(Action action);
Direction opposite(Direction dir);
inline Action move(Direction dir) { return static_cast<Action>(dir); }
inline bool is_stop(Action action) { return action == Action::Stop; }
/// Direction of a move action; precondition: !is_stop(action).
inline Direction direction_of(Action action) { return static_cast<Direction>(action); }
inline bool is_diagonal(Direction dir) { return static_cast<int>(dir) % 2 == 1; }

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend Cell operator+(Cell a, Cell b) { return {a.x + b.x, a.y + b.y}; }
};

/// Unit offset of a direction; y grows southwards.
Cell offset(Direction dir);

struct ObjectInstance {
  ObjectClass cls = ObjectClass::chair;
  Cell position;
  friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

struct Room {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  bool contains(Cell c) const { return c.x >= x && c.x < x + width && c.y >= y && c.y < y + height; }
  Cell center() const { return {x + width / 2, y + height / 2}; }
  friend bool operator==(const Room&, const Room&) = default;
};

struct GenerationParams {
  int width = 24;
  int height = 24;
  int room_count = 4;
  int objects_per_class = 1;
  int room_min = 4;
  int room_max = 8;
  int max_retries = 64;
  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

void to_json(nlohmann::json& j, const GenerationParams& p);
void from_json(const nlohmann::json& j, GenerationParams& p);

/// Rectangular cell map. Out-of-bounds cells read as wall.
class GridMap {
 public:
  GridMap() = default;
  GridMap(int width, int height, std::vector<Terrain> cells, std::vector<ObjectInstance> objects,
          std::vector<Room> rooms, std::uint64_t seed = 0, GenerationParams params = {});

  /// Builds a map from text rows ('#' wall, anything else floor). Handy for hand-made fixtures.
  static GridMap from_rows(const std::vector<std::string>& rows, std::vector<ObjectInstance> objects = {},
                           std::vector<Room> rooms = {});

  int width() const { return width_; }
  int height() const { return height_; }
  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  Terrain at(Cell c) const { return in_bounds(c) ? cells_[index(c)] : Terrain::wall; }
  bool is_floor(Cell c) const { return at(c) == Terrain::floor; }
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.y) * width_ + c.x; }
  const std::vector<Terrain>& cells() const { return cells_; }
  const std::vector<ObjectInstance>& objects() const { return objects_; }
  const std::vector<Room>& rooms() const { return rooms_; }
  std::uint64_t seed() const { return seed_; }
  const GenerationParams& params() const { return params_; }
  int floor_count() const;
  bool has_class(ObjectClass cls) const;
  std::vector<std::string> rows() const;

  friend bool operator==(const GridMap&, const GridMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Terrain> cells_;
  std::vector<ObjectInstance> objects_;
  std::vector<Room> rooms_;
  std::uint64_t seed_ = 0;
  GenerationParams params_;
};

nlohmann::json to_json(const GridMap& map);
GridMap grid_map_from_json(const nlohmann::json& j);

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

/// Octagonal traversal graph over floor cells. Node ids follow row-major cell order.
class NavGraph {
 public:
  NavGraph() = default;
  explicit NavGraph(const GridMap& map);

  int node_count() const { return static_cast<int>(cells_.size()); }
  int width() const { return width_; }
  int height() const { return height_; }
  Cell cell(NodeId node) const { return cells_[node]; }
  NodeId node_at(Cell c) const;
  /// Target of the arc leaving `node` along `dir`, or kNoNode.
  NodeId neighbor(NodeId node, Direction dir) const { return arcs_[node * kDirectionCount + static_cast<int>(dir)]; }
  int out_degree(NodeId node) const;
  int edge_count() const;
  /// Bit i set when an instance of class i sits on the node.
  std::uint8_t object_mask(NodeId node) const { return labels_[node]; }
  std::vector<NodeId> instance_nodes(ObjectClass cls) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Cell> cells_;
  std::vector<NodeId> node_of_cell_;
  std::vector<NodeId> arcs_;
  std::vector<std::uint8_t> labels_;
};

NavGraph build_graph(const GridMap& map);

struct AgentState {
  NodeId position = kNoNode;
  int steps_taken = 0;
  ObjectClass target = ObjectClass::chair;
  bool stopped = false;
};

using DistanceMap = std::vector<int>;
inline constexpr int kUnreachable = std::numeric_limits<int>::max();
inline constexpr int kDefaultGoalRadius = 3;

/// Graph distance from every node to its nearest instance of `cls`.
DistanceMap instance_distances(const NavGraph& graph, ObjectClass cls);

/// Distance to the goal region: nodes within `goal_radius` of an instance have 0.
/// Throws DataError when the class has no instance.
DistanceMap shortest_distances(const NavGraph& graph, ObjectClass cls, int goal_radius = kDefaultGoalRadius);

/// Stop at distance 0, otherwise the first direction (N, NE, ..., NW) that
/// decreases the distance by one. Throws DataError for unreachable goals.
Action optimal_action(const NavGraph& graph, const DistanceMap& distances, const AgentState& state);
Action optimal_action(const NavGraph& graph, const AgentState& state, int goal_radius = kDefaultGoalRadius);

/// Moves along an existing arc; missing arcs are collisions that still cost a step.
/// Stop marks the state terminal without consuming a step.
AgentState step(const NavGraph& graph, const AgentState& state, Action action);

struct StartBand {
  int min_distance = 6;
  int max_distance = 32;
};

/// Uniform start among nodes inside a room holding the target class whose distance
/// to the nearest instance lies in the band. Throws DataError when none qualifies.
NodeId sample_start(const NavGraph& graph, const GridMap& map, ObjectClass cls, std::uint64_t seed,
                    StartBand band = {});

/// Rooms, L-shaped corridors, objects scattered inside rooms. Throws ConfigError on bad
/// params and DataError when no valid map was produced within params.max_retries.
GridMap generate_environment(std::uint64_t seed, const GenerationParams& params);

/// Map plus its derived graph; what the rest of the pipeline passes around.
struct Environment {
  int id = 0;
  GridMap map;
  NavGraph graph;
};

Environment make_environment(int id, GridMap map);

}  // namespace sitfuse
