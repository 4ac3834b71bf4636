#include <algorithm>
#include <deque>
#include <set>

#include "doctest.h"
#include "sitfuse/error.hpp"
#include "sitfuse/gridworld.hpp"
#include "sitfuse/rng.hpp"

using namespace sitfuse;

namespace {

// Independent adjacency straight from the cell grid, used by the brute-force oracles below.
bool can_move(const GridMap& m, Cell a, int dx, int dy) {
  const Cell b{a.x + dx, a.y + dy};
  if (!m.is_floor(a) || !m.is_floor(b)) return false;
  if (dx != 0 && dy != 0) return m.is_floor({a.x + dx, a.y}) && m.is_floor({a.x, a.y + dy});
  return true;
}

constexpr int kInf = 1 << 28;

// Floyd-Warshall over floor cells.
std::vector<std::vector<int>> all_pairs(const GridMap& m, std::vector<Cell>& cells) {
  cells.clear();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.is_floor({x, y})) cells.push_back({x, y});
  const std::size_t n = cells.size();
  std::vector<std::vector<int>> d(n, std::vector<int>(n, kInf));
  for (std::size_t i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const int dx = cells[j].x - cells[i].x, dy = cells[j].y - cells[i].y;
      if (std::abs(dx) <= 1 && std::abs(dy) <= 1 && (dx || dy) && can_move(m, cells[i], dx, dy)) d[i][j] = 1;
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

GridMap random_small_map(Rng& rng, int w, int h) {
  std::vector<std::string> rows(h, std::string(w, '.'));
  for (auto& r : rows)
    for (char& c : r)
      if (rng.uniform() < 0.3) c = '#';
  std::vector<ObjectInstance> objects;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (rows[y][x] == '.' && rng.uniform() < 0.08) objects.push_back({ObjectClass::chair, {x, y}});
  return GridMap::from_rows(rows, objects);
}

bool floor_connected(const GridMap& m) {
  std::vector<Cell> cells;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.is_floor({x, y})) cells.push_back({x, y});
  if (cells.empty()) return false;
  std::set<std::pair<int, int>> seen{{cells[0].x, cells[0].y}};
  std::deque<Cell> queue{cells[0]};
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if ((dx || dy) && can_move(m, c, dx, dy) && seen.insert({c.x + dx, c.y + dy}).second)
          queue.push_back({c.x + dx, c.y + dy});
  }
  return seen.size() == cells.size();
}

}  // namespace

TEST_CASE("generated map satisfies every map invariant") {
  GenerationParams p;
  const GridMap m = generate_environment(7, p);
  CHECK(m.width() == 24);
  CHECK(m.height() == 24);
  CHECK(m.rooms().size() >= 4);
  for (ObjectClass cls : kObjectClasses) CHECK(m.has_class(cls));
  for (const ObjectInstance& o : m.objects()) CHECK(m.is_floor(o.position));
  for (const Room& r : m.rooms()) {
    const bool has_object = std::any_of(m.objects().begin(), m.objects().end(),
                                        [&](const ObjectInstance& o) { return r.contains(o.position); });
    CHECK(has_object);
  }
  CHECK(floor_connected(m));
}

TEST_CASE("generation is deterministic and seed dependent") {
  GenerationParams p;
  CHECK(generate_environment(11, p) == generate_environment(11, p));
  CHECK(generate_environment(11, p).cells() != generate_environment(12, p).cells());
}

TEST_CASE("invalid generation params are rejected") {
  GenerationParams p;
  p.room_count = 0;
  CHECK_THROWS_AS(generate_environment(1, p), ConfigError);
  p = {};
  p.width = 10;
  CHECK_THROWS_AS(generate_environment(1, p), ConfigError);
  p = {};
  p.objects_per_class = 0;
  CHECK_THROWS_AS(generate_environment(1, p), ConfigError);
}

TEST_CASE("impossible layouts fail loudly after the retry budget") {
  GenerationParams p;
  p.width = 16;
  p.height = 16;
  p.room_count = 12;
  p.room_min = 8;
  p.room_max = 8;
  p.max_retries = 3;
  CHECK_THROWS_AS(generate_environment(1, p), DataError);
}

TEST_CASE("map JSON round trip") {
  const GridMap m = generate_environment(3, GenerationParams{});
  CHECK(grid_map_from_json(to_json(m)) == m);
}

TEST_CASE("graph on small hand-made maps") {
  SUBCASE("3x3 all floor") {
    const NavGraph g(GridMap::from_rows({"...", "...", "..."}));
    CHECK(g.node_count() == 9);
    CHECK(g.out_degree(g.node_at({1, 1})) == 8);
  }
  SUBCASE("2x2 with the NE cell walled blocks the corner-cutting diagonal") {
    const NavGraph g(GridMap::from_rows({".#", ".."}));
    const NodeId nw = g.node_at({0, 0}), sw = g.node_at({0, 1}), se = g.node_at({1, 1});
    CHECK(g.node_count() == 3);
    CHECK(g.neighbor(nw, Direction::SE) == kNoNode);
    CHECK(g.neighbor(se, Direction::NW) == kNoNode);
    CHECK(g.neighbor(nw, Direction::S) == sw);
    CHECK(g.neighbor(sw, Direction::E) == se);
    CHECK(g.edge_count() == 4);
  }
  SUBCASE("single floor cell") {
    const NavGraph g(GridMap::from_rows({"###", "#.#", "###"}));
    CHECK(g.node_count() == 1);
    CHECK(g.edge_count() == 0);
  }
}

TEST_CASE("graph symmetry and no-corner-cut hold on generated maps") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GridMap m = generate_environment(seed, GenerationParams{});
    const NavGraph g(m);
    CHECK(g.node_count() == m.floor_count());
    for (NodeId u = 0; u < g.node_count(); ++u)
      for (int d = 0; d < kDirectionCount; ++d) {
        const Direction dir = static_cast<Direction>(d);
        const NodeId v = g.neighbor(u, dir);
        const Cell o = offset(dir);
        CHECK((v != kNoNode) == can_move(m, g.cell(u), o.x, o.y));
        if (v != kNoNode) CHECK(g.neighbor(v, opposite(dir)) == u);
      }
  }
}

TEST_CASE("goal distances") {
  SUBCASE("5x1 corridor with the object at one end") {
    const GridMap m = GridMap::from_rows({"....."}, {{ObjectClass::bed, {4, 0}}});
    const NavGraph g(m);
    const DistanceMap d = shortest_distances(g, ObjectClass::bed, 3);
    CHECK(d[g.node_at({0, 0})] == 1);
    CHECK(d[g.node_at({1, 0})] == 0);
    CHECK(d[g.node_at({4, 0})] == 0);
  }
  SUBCASE("missing class is an error") {
    const NavGraph g(GridMap::from_rows({"..."}, {{ObjectClass::bed, {0, 0}}}));
    CHECK_THROWS_AS(shortest_distances(g, ObjectClass::door), DataError);
  }
  SUBCASE("unreachable nodes stay infinite") {
    const GridMap m = GridMap::from_rows({".#."}, {{ObjectClass::door, {0, 0}}});
    const NavGraph g(m);
    CHECK(shortest_distances(g, ObjectClass::door, 0)[g.node_at({2, 0})] == kUnreachable);
  }
}

TEST_CASE("BFS distances match brute-force all-pairs search on small maps") {
  Rng rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const GridMap m = random_small_map(rng, 3 + static_cast<int>(rng.index(6)), 3 + static_cast<int>(rng.index(6)));
    if (m.objects().empty()) continue;
    const NavGraph g(m);
    std::vector<Cell> cells;
    const auto ap = all_pairs(m, cells);
    for (int radius : {0, 1, 3}) {
      const DistanceMap d = shortest_distances(g, ObjectClass::chair, radius);
      for (std::size_t i = 0; i < cells.size(); ++i) {
        // Goal set: every cell within `radius` of an instance; distance is the nearest goal cell.
        int best = kInf;
        for (std::size_t j = 0; j < cells.size(); ++j) {
          int to_instance = kInf;
          for (const ObjectInstance& o : m.objects()) {
            const auto k = std::find(cells.begin(), cells.end(), o.position) - cells.begin();
            to_instance = std::min(to_instance, ap[j][k]);
          }
          if (to_instance <= radius) best = std::min(best, ap[i][j]);
        }
        const int got = d[g.node_at(cells[i])];
        CHECK((got == kUnreachable ? kInf : got) == best);
        ++compared;
      }
    }
  }
  CHECK(compared > 500);
}

TEST_CASE("optimal action examples") {
  SUBCASE("within the goal radius the oracle stops") {
    const GridMap m = GridMap::from_rows({"....."}, {{ObjectClass::bed, {4, 0}}});
    const NavGraph g(m);
    CHECK(optimal_action(g, AgentState{g.node_at({2, 0}), 0, ObjectClass::bed, false}) == Action::Stop);
  }
  SUBCASE("straight corridor heads east") {
    const GridMap m = GridMap::from_rows({"........"}, {{ObjectClass::bed, {7, 0}}});
    const NavGraph g(m);
    CHECK(optimal_action(g, AgentState{g.node_at({0, 0}), 0, ObjectClass::bed, false}) == Action::E);
  }
  SUBCASE("equal N and E successors resolve to N") {
    // Ring around a pillar: from the SW corner both ways round to the NE corner cost 4.
    const GridMap m = GridMap::from_rows({"...", ".#.", "..."}, {{ObjectClass::door, {2, 0}}});
    const NavGraph g(m);
    const DistanceMap d = shortest_distances(g, ObjectClass::door, 0);
    const NodeId start = g.node_at({0, 2});
    REQUIRE(d[start] == 4);
    REQUIRE(d[g.neighbor(start, Direction::N)] == d[start] - 1);
    REQUIRE(d[g.neighbor(start, Direction::E)] == d[start] - 1);
    CHECK(optimal_action(g, d, AgentState{start, 0, ObjectClass::door, false}) == Action::N);
  }
  SUBCASE("unreachable goal is an error") {
    const GridMap m = GridMap::from_rows({".#."}, {{ObjectClass::door, {0, 0}}});
    const NavGraph g(m);
    CHECK_THROWS_AS(optimal_action(g, AgentState{g.node_at({2, 0}), 0, ObjectClass::door, false}, 0), DataError);
  }
}

TEST_CASE("step semantics") {
  const GridMap m = GridMap::from_rows({"...", "..."});
  const NavGraph g(m);
  const AgentState s{g.node_at({0, 1}), 0, ObjectClass::chair, false};
  const AgentState east = step(g, s, Action::E);
  CHECK(g.cell(east.position) == Cell{1, 1});
  CHECK(east.steps_taken == 1);
  const AgentState blocked = step(g, s, Action::S);
  CHECK(blocked.position == s.position);
  CHECK(blocked.steps_taken == 1);
  const AgentState stopped = step(g, s, Action::Stop);
  CHECK(stopped.stopped);
  CHECK(stopped.steps_taken == 0);
  CHECK(step(g, stopped, Action::E).position == s.position);
}

TEST_CASE("greedy oracle rollouts take exactly d(start) moves") {
  GenerationParams p;
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    const Environment env = make_environment(0, generate_environment(seed, p));
    Rng rng(seed);
    const ObjectClass cls = kObjectClasses[rng.index(kObjectClassCount)];
    const DistanceMap d = shortest_distances(env.graph, cls);
    const NodeId start = static_cast<NodeId>(rng.index(env.graph.node_count()));
    REQUIRE(d[start] != kUnreachable);
    AgentState s{start, 0, cls, false};
    int guard = 0;
    while (!s.stopped && guard++ < 10000) s = step(env.graph, s, optimal_action(env.graph, d, s));
    CHECK(s.stopped);
    CHECK(s.steps_taken == d[start]);
    CHECK(d[s.position] == 0);
  }
}

TEST_CASE("start sampling respects the band and the room rule") {
  const GridMap m = generate_environment(5, GenerationParams{});
  const NavGraph g(m);
  for (StartBand band : {StartBand{6, 32}, StartBand{3, 12}}) {
    for (ObjectClass cls : kObjectClasses) {
      const DistanceMap inst = instance_distances(g, cls);
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        NodeId s;
        try {
          s = sample_start(g, m, cls, seed, band);
        } catch (const DataError&) {
          continue;
        }
        CHECK(inst[s] >= band.min_distance);
        CHECK(inst[s] <= band.max_distance);
        const Cell c = g.cell(s);
        const bool in_room_with_target = std::any_of(m.rooms().begin(), m.rooms().end(), [&](const Room& r) {
          return r.contains(c) && std::any_of(m.objects().begin(), m.objects().end(), [&](const ObjectInstance& o) {
                   return o.cls == cls && r.contains(o.position);
                 });
        });
        CHECK(in_room_with_target);
      }
    }
  }
  const GridMap bare = GridMap::from_rows({"...."}, {{ObjectClass::chair, {0, 0}}}, {{0, 0, 4, 1}});
  CHECK_THROWS_AS(sample_start(NavGraph(bare), bare, ObjectClass::bed, 1), DataError);
}
