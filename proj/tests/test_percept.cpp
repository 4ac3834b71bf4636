#include <cmath>
#include <set>

#include "doctest.h"
#include "sitfuse/error.hpp"
#include "sitfuse/percept.hpp"

using namespace sitfuse;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::size_t index_of(const RepresentationBank& bank, const std::string& name) {
  const auto names = bank.names();
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

}  // namespace

TEST_CASE("default bank layout") {
  const auto specs = register_default_bank(PerceptConfig{});
  CHECK(specs.size() == 10);
  std::set<Domain> domains;
  std::set<std::string> names;
  for (const auto& s : specs) {
    domains.insert(s.domain);
    names.insert(s.name);
  }
  CHECK(domains.size() == 3);
  CHECK(names.size() == 10);
  CHECK(std::count_if(specs.begin(), specs.end(), [](const ExtractorSpec& s) { return s.clone_of.has_value(); }) == 2);
}

TEST_CASE("bank size limits and validation") {
  PerceptConfig cfg;
  cfg.extractor_count = 5;
  CHECK_THROWS_AS(register_default_bank(cfg), ConfigError);
  cfg.extractor_count = 6;
  CHECK(register_default_bank(cfg).size() == 6);
  cfg.extractor_count = 20;
  CHECK(register_default_bank(cfg).size() == 20);

  auto specs = register_default_bank(PerceptConfig{});
  specs[1].name = specs[0].name;
  CHECK_THROWS_AS(validate_bank(specs, PerceptConfig{}), ConfigError);
  specs = register_default_bank(PerceptConfig{});
  specs.back().clone_of = "nope";
  CHECK_THROWS_AS(validate_bank(specs, PerceptConfig{}), ConfigError);
  specs = register_default_bank(PerceptConfig{});
  specs[0].noise_sigma = -1.0;
  CHECK_THROWS_AS(validate_bank(specs, PerceptConfig{}), ConfigError);
}

TEST_CASE("ray depths in a 3x3 room with its walls") {
  const GridMap m = GridMap::from_rows({"###", "#.#", "###"});
  for (int d : ray_depths(m, {1, 1}, 8)) CHECK(d == 1);
  const GridMap open = GridMap::from_rows({"#######", "#.....#", "#######"});
  const auto rays = ray_depths(open, {1, 1}, 8);
  CHECK(rays[static_cast<int>(Direction::E)] == 5);
  CHECK(rays[static_cast<int>(Direction::W)] == 1);
  CHECK(ray_depths(open, {1, 1}, 3)[static_cast<int>(Direction::E)] == 3);
}

TEST_CASE("openness") {
  SUBCASE("1-cell corridor") {
    const NavGraph g(GridMap::from_rows({"#######", "#.....#", "#######"}));
    CHECK(openness(g, g.node_at({3, 1})) == 1);
  }
  SUBCASE("centre of a 9x9 room (walls included)") {
    std::vector<std::string> rows(9, "#.......#");
    rows.front() = rows.back() = "#########";
    const NavGraph g(GridMap::from_rows(rows));
    CHECK(openness(g, g.node_at({4, 4})) == 4);
    CHECK(openness(g, g.node_at({1, 4})) == 1);
  }
}

TEST_CASE("semantic histogram is zero without a visible target") {
  const GridMap m = GridMap::from_rows({".....", ".....", "....."}, {{ObjectClass::chair, {4, 2}}});
  const NavGraph g(m);
  const RepresentationBank bank{PerceptConfig{}};
  const auto zero = bank.compute(ExtractorKind::target_bearing, m, g, g.node_at({0, 0}), ObjectClass::bed);
  for (double v : zero) CHECK(v == 0.0);
  const auto seen = bank.compute(ExtractorKind::target_bearing, m, g, g.node_at({0, 2}), ObjectClass::chair);
  CHECK(seen[static_cast<int>(Direction::E)] > 0.0);

  const GridMap blocked = GridMap::from_rows({"..#..", "..#..", "..#.."}, {{ObjectClass::chair, {4, 1}}});
  const NavGraph gb(blocked);
  for (double v : bank.compute(ExtractorKind::target_bearing, blocked, gb, gb.node_at({0, 1}), ObjectClass::chair))
    CHECK(v == 0.0);
}

TEST_CASE("extraction determinism, dimensions and finiteness") {
  const GridMap m = generate_environment(9, GenerationParams{});
  const NavGraph g(m);
  const RepresentationBank bank{PerceptConfig{}};
  for (NodeId n = 0; n < g.node_count(); n += 7) {
    Rng a(42), b(42);
    const auto ra = bank.extract({g, m, n, ObjectClass::table, a});
    const auto rb = bank.extract({g, m, n, ObjectClass::table, b});
    CHECK(ra.features == rb.features);
    CHECK(ra.raw_obs == rb.raw_obs);
    REQUIRE(ra.features.size() == bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
      CHECK(static_cast<int>(ra.features[i].size()) == bank.specs()[i].dim);
      for (double v : ra.features[i]) CHECK(std::isfinite(v));
    }
    CHECK(static_cast<int>(ra.raw_obs.size()) == bank.raw_dim());
    CHECK(ra.task[static_cast<int>(ObjectClass::table)] == 1.0);
    const auto q1 = bank.extract_noiseless(m, g, n, ObjectClass::table);
    const auto q2 = bank.extract_noiseless(m, g, n, ObjectClass::table);
    CHECK(q1.features == q2.features);
  }
}

TEST_CASE("clones match their parent without noise and correlate with it under small noise") {
  const GridMap m = generate_environment(4, GenerationParams{});
  const NavGraph g(m);
  PerceptConfig cfg;
  const RepresentationBank bank{cfg};
  for (const auto& spec : bank.specs()) {
    if (!spec.clone_of) continue;
    const std::size_t c = index_of(bank, spec.name), p = index_of(bank, *spec.clone_of);
    for (NodeId n = 0; n < g.node_count(); n += 11) {
      const auto r = bank.extract_noiseless(m, g, n, ObjectClass::door);
      CHECK(r.features[c] == r.features[p]);
    }
  }
  std::vector<double> previous = {0.0};
  for (double sigma : {0.2, 0.05, 0.005}) {
    cfg.noise_sigma = sigma;
    const RepresentationBank noisy{cfg};
    const std::size_t c = index_of(noisy, "depth_rays_clone"), p = index_of(noisy, "depth_rays");
    std::vector<double> a, b;
    Rng rng(1);
    for (int s = 0; s < 1000; ++s) {
      const NodeId n = static_cast<NodeId>(rng.index(g.node_count()));
      const auto r = noisy.extract({g, m, n, ObjectClass::chair, rng});
      a.push_back(r.features[p][0]);
      b.push_back(r.features[c][0]);
    }
    const double rho = correlation(a, b);
    CHECK(rho > previous.back());
    previous.push_back(rho);
  }
  CHECK(previous.back() > 0.99);
}

TEST_CASE("percept config JSON round trip") {
  PerceptConfig cfg;
  cfg.extractor_count = 12;
  cfg.noise_sigma = 0.1;
  cfg.extractors = register_default_bank(cfg);
  const nlohmann::json j = cfg;
  const PerceptConfig back = j.get<PerceptConfig>();
  CHECK(back.extractor_count == 12);
  CHECK(back.extractors.size() == 12);
  CHECK(back.extractors.back().clone_of == cfg.extractors.back().clone_of);
  CHECK(RepresentationBank(back).names() == RepresentationBank(cfg).names());
}
