#include "sitfuse/gridworld.hpp"

#include <algorithm>
#include <deque>
#include <string>

#include "sitfuse/error.hpp"
#include "sitfuse/rng.hpp"

namespace sitfuse {

namespace {

constexpr std::array<Cell, kDirectionCount> kOffsets = {
    Cell{0, -1}, Cell{1, -1}, Cell{1, 0}, Cell{1, 1}, Cell{0, 1}, Cell{-1, 1}, Cell{-1, 0}, Cell{-1, -1}};

constexpr std::array<std::string_view, kObjectClassCount> kClassNames = {"chair", "table", "bed", "door"};
constexpr std::array<std::string_view, kActionCount> kActionNames = {"N", "NE", "E", "SE", "S",
                                                                     "SW", "W", "NW", "Stop"};

bool floor_connected(const GridMap& map) {
  const int total = map.floor_count();
  if (total == 0) return false;
  const NavGraph graph(map);
  std::vector<char> seen(graph.node_count(), 0);
  std::deque<NodeId> queue{0};
  seen[0] = 1;
  int reached = 1;
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    for (int d = 0; d < kDirectionCount; ++d) {
      const NodeId v = graph.neighbor(u, static_cast<Direction>(d));
      if (v != kNoNode && !seen[v]) {
        seen[v] = 1;
        ++reached;
        queue.push_back(v);
      }
    }
  }
  return reached == total;
}

void validate(const GenerationParams& p) {
  if (p.width < 16 || p.height < 16) throw ConfigError("grid must be at least 16x16");
  if (p.room_count < 2) throw ConfigError("room_count must be >= 2");
  if (p.objects_per_class < 1) throw ConfigError("objects_per_class must be >= 1");
  if (p.room_min < 2 || p.room_max < p.room_min) throw ConfigError("room size range invalid");
  if (p.room_max > std::min(p.width, p.height) - 2) throw ConfigError("room_max does not fit in the grid");
  if (p.max_retries < 1) throw ConfigError("max_retries must be >= 1");
}

std::optional<GridMap> try_generate(std::uint64_t seed, std::uint64_t attempt, const GenerationParams& p) {
  Rng rng(derive_seed(seed, attempt));
  std::vector<Room> rooms;
  for (int tries = 0; tries < 400 && static_cast<int>(rooms.size()) < p.room_count; ++tries) {
    Room r;
    r.width = rng.integer(p.room_min, p.room_max);
    r.height = rng.integer(p.room_min, p.room_max);
    r.x = rng.integer(1, p.width - 1 - r.width);
    r.y = rng.integer(1, p.height - 1 - r.height);
    // Keep a wall of at least one cell between rooms.
    const bool overlaps = std::any_of(rooms.begin(), rooms.end(), [&](const Room& o) {
      return r.x <= o.x + o.width && o.x <= r.x + r.width && r.y <= o.y + o.height && o.y <= r.y + r.height;
    });
    if (!overlaps) rooms.push_back(r);
  }
  if (static_cast<int>(rooms.size()) < p.room_count) return std::nullopt;

  std::vector<Terrain> cells(static_cast<std::size_t>(p.width) * p.height, Terrain::wall);
  auto carve = [&](Cell c) { cells[static_cast<std::size_t>(c.y) * p.width + c.x] = Terrain::floor; };
  for (const Room& r : rooms)
    for (int y = r.y; y < r.y + r.height; ++y)
      for (int x = r.x; x < r.x + r.width; ++x) carve({x, y});

  for (std::size_t i = 1; i < rooms.size(); ++i) {
    const Cell a = rooms[i - 1].center();
    const Cell b = rooms[i].center();
    const bool horizontal_first = rng.uniform() < 0.5;
    const Cell corner = horizontal_first ? Cell{b.x, a.y} : Cell{a.x, b.y};
    auto line = [&](Cell from, Cell to) {
      Cell c = from;
      const int sx = (to.x > from.x) - (to.x < from.x);
      const int sy = (to.y > from.y) - (to.y < from.y);
      carve(c);
      while (!(c == to)) {
        c.x += sx;
        c.y += sy;
        carve(c);
      }
    };
    line(a, corner);
    line(corner, b);
  }

  // Every class gets objects_per_class instances; the first room_count draws seed one per room.
  std::vector<ObjectClass> pool;
  for (ObjectClass cls : kObjectClasses)
    for (int k = 0; k < p.objects_per_class; ++k) pool.push_back(cls);
  while (pool.size() < rooms.size()) pool.push_back(kObjectClasses[rng.index(kObjectClassCount)]);
  rng.shuffle(std::span<ObjectClass>(pool));

  std::vector<ObjectInstance> objects;
  auto occupied = [&](Cell c) {
    return std::any_of(objects.begin(), objects.end(), [&](const ObjectInstance& o) { return o.position == c; });
  };
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const Room& room = rooms[k < rooms.size() ? k : rng.index(rooms.size())];
    Cell c;
    int guard = 0;
    do {
      c = {room.x + rng.integer(0, room.width - 1), room.y + rng.integer(0, room.height - 1)};
    } while (occupied(c) && ++guard < 64);
    if (occupied(c)) return std::nullopt;
    objects.push_back({pool[k], c});
  }

  GridMap map(p.width, p.height, std::move(cells), std::move(objects), std::move(rooms), seed, p);
  if (!floor_connected(map)) return std::nullopt;
  return map;
}

}  // namespace

std::string_view to_string(ObjectClass cls) { return kClassNames[static_cast<int>(cls)]; }

ObjectClass object_class_from_string(std::string_view name) {
  for (int i = 0; i < kObjectClassCount; ++i)
    if (kClassNames[i] == name) return kObjectClasses[i];
  throw ConfigError("unknown object class '" + std::string(name) + "'");
}

std::string_view to_string(Direction dir) { return kActionNames[static_cast<int>(dir)]; }
std::string_view to_string(Action action) { return kActionNames[static_cast<int>(action)]; }
Direction opposite(Direction dir) { return static_cast<Direction>((static_cast<int>(dir) + 4) % kDirectionCount); }
Cell offset(Direction dir) { return kOffsets[static_cast<int>(dir)]; }

void to_json(nlohmann::json& j, const GenerationParams& p) {
  j = {{"width", p.width},         {"height", p.height},     {"room_count", p.room_count},
       {"objects_per_class", p.objects_per_class}, {"room_min", p.room_min}, {"room_max", p.room_max},
       {"max_retries", p.max_retries}};
}

void from_json(const nlohmann::json& j, GenerationParams& p) {
  p.width = j.value("width", p.width);
  p.height = j.value("height", p.height);
  p.room_count = j.value("room_count", p.room_count);
  p.objects_per_class = j.value("objects_per_class", p.objects_per_class);
  p.room_min = j.value("room_min", p.room_min);
  p.room_max = j.value("room_max", p.room_max);
  p.max_retries = j.value("max_retries", p.max_retries);
}

GridMap::GridMap(int width, int height, std::vector<Terrain> cells, std::vector<ObjectInstance> objects,
                 std::vector<Room> rooms, std::uint64_t seed, GenerationParams params)
    : width_(width),
      height_(height),
      cells_(std::move(cells)),
      objects_(std::move(objects)),
      rooms_(std::move(rooms)),
      seed_(seed),
      params_(params) {
  if (width_ <= 0 || height_ <= 0 || cells_.size() != static_cast<std::size_t>(width_) * height_)
    throw ConfigError("cell array does not match map dimensions");
  for (const ObjectInstance& o : objects_)
    if (!is_floor(o.position)) throw ConfigError("object placed on a wall cell");
}

GridMap GridMap::from_rows(const std::vector<std::string>& rows, std::vector<ObjectInstance> objects,
                           std::vector<Room> rooms) {
  if (rows.empty()) throw ConfigError("empty map");
  const int width = static_cast<int>(rows.front().size());
  std::vector<Terrain> cells;
  for (const std::string& row : rows) {
    if (static_cast<int>(row.size()) != width) throw ConfigError("ragged map rows");
    for (char c : row) cells.push_back(c == '#' ? Terrain::wall : Terrain::floor);
  }
  return GridMap(width, static_cast<int>(rows.size()), std::move(cells), std::move(objects), std::move(rooms));
}

int GridMap::floor_count() const {
  return static_cast<int>(std::count(cells_.begin(), cells_.end(), Terrain::floor));
}

bool GridMap::has_class(ObjectClass cls) const {
  return std::any_of(objects_.begin(), objects_.end(), [&](const ObjectInstance& o) { return o.cls == cls; });
}

std::vector<std::string> GridMap::rows() const {
  std::vector<std::string> out(height_, std::string(width_, '#'));
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (is_floor({x, y})) out[y][x] = '.';
  return out;
}

nlohmann::json to_json(const GridMap& map) {
  nlohmann::json objects = nlohmann::json::array();
  for (const ObjectInstance& o : map.objects())
    objects.push_back({{"class", to_string(o.cls)}, {"x", o.position.x}, {"y", o.position.y}});
  nlohmann::json rooms = nlohmann::json::array();
  for (const Room& r : map.rooms()) rooms.push_back({{"x", r.x}, {"y", r.y}, {"w", r.width}, {"h", r.height}});
  return {{"width", map.width()}, {"height", map.height()}, {"seed", map.seed()},   {"params", map.params()},
          {"cells", map.rows()},  {"objects", objects},      {"rooms", rooms}};
}

GridMap grid_map_from_json(const nlohmann::json& j) {
  try {
    std::vector<ObjectInstance> objects;
    for (const auto& o : j.at("objects"))
      objects.push_back({object_class_from_string(o.at("class").get<std::string>()),
                         {o.at("x").get<int>(), o.at("y").get<int>()}});
    std::vector<Room> rooms;
    for (const auto& r : j.at("rooms"))
      rooms.push_back({r.at("x").get<int>(), r.at("y").get<int>(), r.at("w").get<int>(), r.at("h").get<int>()});
    const auto rows = j.at("cells").get<std::vector<std::string>>();
    GridMap shape = GridMap::from_rows(rows);
    if (shape.width() != j.at("width").get<int>() || shape.height() != j.at("height").get<int>())
      throw DataError("environment dimensions disagree with cell rows");
    return GridMap(shape.width(), shape.height(), shape.cells(), std::move(objects), std::move(rooms),
                   j.at("seed").get<std::uint64_t>(), j.at("params").get<GenerationParams>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed environment document: ") + e.what());
  }
}

NavGraph::NavGraph(const GridMap& map) : width_(map.width()), height_(map.height()) {
  node_of_cell_.assign(static_cast<std::size_t>(width_) * height_, kNoNode);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (map.is_floor({x, y})) {
        node_of_cell_[map.index({x, y})] = static_cast<NodeId>(cells_.size());
        cells_.push_back({x, y});
      }
  arcs_.assign(cells_.size() * kDirectionCount, kNoNode);
  labels_.assign(cells_.size(), 0);
  for (std::size_t n = 0; n < cells_.size(); ++n) {
    const Cell c = cells_[n];
    for (int d = 0; d < kDirectionCount; ++d) {
      const Direction dir = static_cast<Direction>(d);
      const Cell o = offset(dir);
      const Cell next = c + o;
      if (!map.is_floor(next)) continue;
      // No corner cutting: both axis-aligned cells of a diagonal step must be free.
      if (is_diagonal(dir) && !(map.is_floor({c.x + o.x, c.y}) && map.is_floor({c.x, c.y + o.y}))) continue;
      arcs_[n * kDirectionCount + d] = node_of_cell_[map.index(next)];
    }
  }
  for (const ObjectInstance& o : map.objects()) labels_[node_at(o.position)] |= 1u << static_cast<int>(o.cls);
}

NodeId NavGraph::node_at(Cell c) const {
  if (c.x < 0 || c.y < 0 || c.x >= width_ || c.y >= height_) return kNoNode;
  return node_of_cell_[static_cast<std::size_t>(c.y) * width_ + c.x];
}

int NavGraph::out_degree(NodeId node) const {
  int degree = 0;
  for (int d = 0; d < kDirectionCount; ++d) degree += neighbor(node, static_cast<Direction>(d)) != kNoNode;
  return degree;
}

int NavGraph::edge_count() const {
  return static_cast<int>(std::count_if(arcs_.begin(), arcs_.end(), [](NodeId v) { return v != kNoNode; }));
}

std::vector<NodeId> NavGraph::instance_nodes(ObjectClass cls) const {
  std::vector<NodeId> nodes;
  const std::uint8_t bit = 1u << static_cast<int>(cls);
  for (NodeId n = 0; n < node_count(); ++n)
    if (labels_[n] & bit) nodes.push_back(n);
  return nodes;
}

NavGraph build_graph(const GridMap& map) { return NavGraph(map); }

DistanceMap instance_distances(const NavGraph& graph, ObjectClass cls) {
  DistanceMap dist(graph.node_count(), kUnreachable);
  std::deque<NodeId> queue;
  for (NodeId n : graph.instance_nodes(cls)) {
    dist[n] = 0;
    queue.push_back(n);
  }
  // Arcs are symmetric, so a forward BFS from the instances gives distances to them.
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    for (int d = 0; d < kDirectionCount; ++d) {
      const NodeId v = graph.neighbor(u, static_cast<Direction>(d));
      if (v != kNoNode && dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

DistanceMap shortest_distances(const NavGraph& graph, ObjectClass cls, int goal_radius) {
  if (goal_radius < 0) throw ConfigError("goal radius must be non-negative");
  if (graph.instance_nodes(cls).empty())
    throw DataError("no instance of class '" + std::string(to_string(cls)) + "' in environment");
  DistanceMap dist = instance_distances(graph, cls);
  for (int& d : dist)
    if (d != kUnreachable) d = std::max(0, d - goal_radius);
  return dist;
}

Action optimal_action(const NavGraph& graph, const DistanceMap& distances, const AgentState& state) {
  const int here = distances.at(state.position);
  if (here == kUnreachable) throw DataError("goal unreachable from current position");
  if (here == 0) return Action::Stop;
  for (int d = 0; d < kDirectionCount; ++d) {
    const NodeId v = graph.neighbor(state.position, static_cast<Direction>(d));
    if (v != kNoNode && distances[v] == here - 1) return move(static_cast<Direction>(d));
  }
  throw DataError("distance map inconsistent with graph");
}

Action optimal_action(const NavGraph& graph, const AgentState& state, int goal_radius) {
  return optimal_action(graph, shortest_distances(graph, state.target, goal_radius), state);
}

AgentState step(const NavGraph& graph, const AgentState& state, Action action) {
  AgentState next = state;
  if (state.stopped) return next;
  if (is_stop(action)) {
    next.stopped = true;
    return next;
  }
  const NodeId v = graph.neighbor(state.position, direction_of(action));
  if (v != kNoNode) next.position = v;
  ++next.steps_taken;
  return next;
}

NodeId sample_start(const NavGraph& graph, const GridMap& map, ObjectClass cls, std::uint64_t seed,
                    StartBand band) {
  if (band.min_distance < 0 || band.max_distance < band.min_distance) throw ConfigError("invalid start band");
  if (!map.has_class(cls)) throw DataError("class '" + std::string(to_string(cls)) + "' absent from environment");
  const DistanceMap dist = instance_distances(graph, cls);
  std::vector<NodeId> candidates;
  for (const Room& room : map.rooms()) {
    const bool holds_class = std::any_of(map.objects().begin(), map.objects().end(), [&](const ObjectInstance& o) {
      return o.cls == cls && room.contains(o.position);
    });
    if (!holds_class) continue;
    for (int y = room.y; y < room.y + room.height; ++y)
      for (int x = room.x; x < room.x + room.width; ++x) {
        const NodeId n = graph.node_at({x, y});
        if (n != kNoNode && dist[n] >= band.min_distance && dist[n] <= band.max_distance) candidates.push_back(n);
      }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.empty()) throw DataError("no start node satisfies the room and distance constraints");
  Rng rng(seed);
  return candidates[rng.index(candidates.size())];
}

GridMap generate_environment(std::uint64_t seed, const GenerationParams& params) {
  validate(params);
  for (int attempt = 0; attempt < params.max_retries; ++attempt)
    if (auto map = try_generate(seed, static_cast<std::uint64_t>(attempt), params)) return std::move(*map);
  throw DataError("environment generation failed after " + std::to_string(params.max_retries) + " attempts");
}

Environment make_environment(int id, GridMap map) {
  Environment env{id, std::move(map), {}};
  env.graph = NavGraph(env.map);
  return env;
}

}  // namespace sitfuse
