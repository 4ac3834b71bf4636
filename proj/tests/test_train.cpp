#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "sitfuse/error.hpp"
#include "sitfuse/train.hpp"

using namespace sitfuse;

namespace {

std::vector<Environment> make_envs(int count, int first_id, std::uint64_t seed) {
  GenerationParams p;
  p.objects_per_class = 2;
  std::vector<Environment> envs;
  for (int i = 0; i < count; ++i)
    envs.push_back(make_environment(first_id + i, generate_environment(derive_seed(seed, static_cast<std::uint64_t>(i)), p)));
  return envs;
}

const RepresentationBank& bank() {
  static const RepresentationBank b{PerceptConfig{}};
  return b;
}

Architecture small_arch() {
  Architecture a;
  a.branch_hidden = 8;
  a.gate_hidden = 8;
  a.head_hidden = 8;
  a.blackbox_hidden = {16, 8};
  return a;
}

std::vector<std::uint8_t> blob(const FusionPolicy& p) {
  std::vector<std::uint8_t> out;
  for (const DenseNet* net : p.networks()) {
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(net->params().data());
    out.insert(out.end(), bytes, bytes + net->params().size() * sizeof(double));
  }
  return out;
}

}  // namespace

TEST_CASE("dataset construction") {
  const auto envs = make_envs(16, 0, 1);
  const ImitationDataset d = build_dataset(envs, bank(), 256, 2);
  CHECK(d.size() == 16 * 256);
  CHECK(d.rejected.empty());
  CHECK(verify_labels(d, envs) == 0);
  CHECK(d.env_ids().size() == 16);
  for (const DatasetRow& r : d.rows) {
    CHECK(r.reps.features.size() == bank().size());
    CHECK(shortest_distances(envs[r.env_id].graph, r.target)[r.node] != kUnreachable);
  }

  const ImitationDataset again = build_dataset(envs, bank(), 256, 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.rows[i].node == again.rows[i].node);
    CHECK(d.rows[i].reps.features == again.rows[i].reps.features);
  }

  // Every label class appears, Stop included.
  std::set<Action> labels;
  for (const DatasetRow& r : d.rows) labels.insert(r.label);
  CHECK(labels.count(Action::Stop) == 1);
  CHECK(labels.size() >= 5);

  // A corrupted label is caught.
  ImitationDataset bad = d;
  bad.rows[7].label = bad.rows[7].label == Action::N ? Action::S : Action::N;
  CHECK(verify_labels(bad, envs) >= 1);
}

TEST_CASE("train and test splits are disjoint") {
  const auto train = make_envs(16, 0, 3);
  const auto test = make_envs(8, 16, 4);
  const auto a = build_dataset(train, bank(), 16, 5, Split::train);
  const auto b = build_dataset(test, bank(), 16, 5, Split::test);
  const std::vector<int> test_ids = b.env_ids();
  for (int id : a.env_ids()) CHECK(std::find(test_ids.begin(), test_ids.end(), id) == test_ids.end());
  CHECK(b.split == Split::test);
}

TEST_CASE("environments missing a class are rejected") {
  auto envs = make_envs(2, 0, 6);
  std::vector<ObjectInstance> kept;
  for (const ObjectInstance& o : envs[1].map.objects())
    if (o.cls != ObjectClass::bed) kept.push_back(o);
  envs[1] = make_environment(1, GridMap::from_rows(envs[1].map.rows(), kept));
  const auto d = build_dataset(envs, bank(), 8, 7);
  REQUIRE(d.rejected.size() == 1);
  CHECK(d.rejected[0].find("bed") != std::string::npos);
  CHECK(d.env_ids() == std::vector<int>{0});
  CHECK_THROWS_AS(build_dataset(std::span<const Environment>(envs).subspan(1), bank(), 8, 7), DataError);
  CHECK_THROWS_AS(build_dataset(envs, bank(), 0, 7), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  auto bad = [](auto edit) {
    TrainConfig t;
    edit(t);
    CHECK_THROWS_AS(validate(t), ConfigError);
  };
  bad([](TrainConfig& t) { t.iterations = 0; });
  bad([](TrainConfig& t) { t.batch_size = -1; });
  bad([](TrainConfig& t) { t.learning_rate = 0; });
  bad([](TrainConfig& t) { t.milestones = {1600, 1000}; });
  bad([](TrainConfig& t) { t.lambda_aff = -0.1; });
  bad([](TrainConfig& t) { t.scheme = Scheme::blackbox, t.lambda_aff = 0.1; });
  bad([](TrainConfig& t) { t.scheme = Scheme::concat, t.lambda_lbl = 0.1; });
  bad([](TrainConfig& t) { t.gate_warmup = t.iterations; });

  TrainConfig j;
  j.scheme = Scheme::feature_fusion;
  j.lambda_lbl = 0.25;
  j.lbl_variant = LblVariant::per_example;
  j.milestones = {3, 9};
  j.gate_warmup = 2;
  const TrainConfig back = nlohmann::json(j).get<TrainConfig>();
  CHECK(back.scheme == j.scheme);
  CHECK(back.lambda_lbl == j.lambda_lbl);
  CHECK(back.lbl_variant == j.lbl_variant);
  CHECK(back.milestones == j.milestones);
  CHECK(back.gate_warmup == 2);
  CHECK_THROWS_AS(nlohmann::json({{"lbl_variant", "median"}}).get<TrainConfig>(), ConfigError);
}

TEST_CASE("training") {
  const auto envs = make_envs(4, 0, 8);
  const ImitationDataset d = build_dataset(envs, bank(), 125, 9);
  REQUIRE(d.size() == 500);
  const BankLayout layout = BankLayout::of(bank());

  SUBCASE("smoothed cross-entropy falls over 200 iterations") {
    for (Scheme s : {Scheme::blackbox, Scheme::concat, Scheme::feature_fusion, Scheme::action_fusion}) {
      TrainConfig c;
      c.scheme = s;
      c.iterations = 200;
      c.batch_size = 32;
      c.milestones = {100, 160};
      c.log_every = 10;
      c.arch = small_arch();
      const TrainResult r = train_policy(d, layout, c);
      CAPTURE(to_string(s));
      CHECK(r.curve.back().smoothed_ce < r.curve.front().ce_fused);
      CHECK(r.curve.back().iteration == 199);
      CHECK(r.curve.size() == 21);
      CHECK(r.curve[12].lr == doctest::Approx(1e-4));
    }
  }

  SUBCASE("deterministic given the seed") {
    TrainConfig c;
    c.iterations = 30;
    c.batch_size = 16;
    c.lambda_aff = 0.1;
    c.lambda_lbl = 0.1;
    c.arch = small_arch();
    const AffinityMatrix f = AffinityMatrix::identity(layout.names);
    const TrainResult a = train_policy(d, layout, c, &f);
    const TrainResult b = train_policy(d, layout, c, &f);
    CHECK(blob(a.policy) == blob(b.policy));
    CHECK(loss_curve_csv(a.curve) == loss_curve_csv(b.curve));
    c.seed = 1;
    CHECK(blob(train_policy(d, layout, c, &f).policy) != blob(a.policy));
  }

  SUBCASE("gate warmup holds the gate until the last iterations") {
    TrainConfig c;
    c.iterations = 20;
    c.batch_size = 16;
    c.gate_warmup = 19;
    c.arch = small_arch();
    const TrainResult a = train_policy(d, layout, c);
    const FusionPolicy init(c.scheme, layout, c.arch, derive_seed(c.seed, 0xB0));
    const auto trained = a.policy.gating().params();
    const auto initial = init.gating().params();
    // A single Adam step moves each parameter by at most the learning rate.
    double moved = 0.0;
    for (std::size_t i = 0; i < trained.size(); ++i) moved = std::max(moved, std::abs(trained[i] - initial[i]));
    CHECK(moved > 0.0);
    CHECK(moved <= c.learning_rate * (1 + 1e-9));
    const auto b0 = a.policy.branch(0).params();
    const auto i0 = init.branch(0).params();
    CHECK(std::vector<double>(b0.begin(), b0.end()) != std::vector<double>(i0.begin(), i0.end()));
  }

  SUBCASE("configuration errors") {
    TrainConfig c;
    c.iterations = 5;
    c.batch_size = 501;
    CHECK_THROWS_AS(train_policy(d, layout, c), ConfigError);
    c.batch_size = 8;
    c.lambda_aff = 0.1;
    CHECK_THROWS_AS(train_policy(d, layout, c), ConfigError);
    c.scheme = Scheme::blackbox;
    const AffinityMatrix f = AffinityMatrix::identity(layout.names);
    CHECK_THROWS_AS(train_policy(d, layout, c, &f), ConfigError);
  }

  SUBCASE("divergence is reported") {
    TrainConfig c;
    c.iterations = 50;
    c.batch_size = 16;
    c.learning_rate = 1e300;
    c.arch = small_arch();
    CHECK_THROWS_AS(train_policy(d, layout, c), DataError);
  }
}

TEST_CASE("fixed-batch loss decreases for every scheme") {
  const auto envs = make_envs(2, 0, 10);
  const ImitationDataset d = build_dataset(envs, bank(), 16, 11);
  const BankLayout layout = BankLayout::of(bank());
  for (Scheme s : {Scheme::blackbox, Scheme::concat, Scheme::feature_fusion, Scheme::action_fusion}) {
    TrainConfig c;
    c.scheme = s;
    c.iterations = 50;
    c.batch_size = static_cast<int>(d.size());
    c.arch = small_arch();
    const TrainResult r = train_policy(d, layout, c);
    CAPTURE(to_string(s));
    CHECK(r.curve.back().total < r.curve.front().total);
  }
}

TEST_CASE("loss curve csv") {
  std::vector<CurvePoint> curve = {{0, 2.0, 2.1, 0.5, 0.25, 5.0, 1e-3, 2.0}, {1, 1.5, 1.0, 0.0, 0.0, 2.5, 1e-4, 1.95}};
  CHECK(loss_curve_csv(curve) ==
        "iteration,ce_fused,ce_branch_mean,lbl,affinity,total,lr\n"
        "0,2.000000,2.100000,0.500000,0.250000,5.000000,0.001\n"
        "1,1.500000,1.000000,0.000000,0.000000,2.500000,0.0001\n");
}

TEST_CASE("branch ranking") {
  const auto envs = make_envs(3, 0, 12);
  EvalConfig cfg;
  cfg.band = {4, 40};
  cfg.episodes_per_task = 8;
  const auto starts = sample_start_set(envs, cfg);

  BankLayout one;
  one.names = {"depth_rays"};
  one.domains = {Domain::three_d};
  one.dims = {bank().dims()[0]};
  one.raw_dim = bank().raw_dim();
  std::vector<ExtractorSpec> spec = {bank().specs()[0]};
  const RepresentationBank single(PerceptConfig{}, spec);
  const FusionPolicy p1(Scheme::action_fusion, BankLayout::of(single), small_arch(), 1);
  const auto r1 = rank_branches(p1, envs, single, starts, cfg);
  REQUIRE(r1.size() == 1);
  CHECK(r1[0].branch == 0);

  const FusionPolicy p(Scheme::action_fusion, BankLayout::of(bank()), small_arch(), 2);
  const auto ranks = rank_branches(p, envs, bank(), starts, cfg);
  CHECK(ranks.size() == bank().size());
  for (std::size_t i = 1; i < ranks.size(); ++i) {
    CHECK(ranks[i - 1].success >= ranks[i].success);
    if (ranks[i - 1].success == ranks[i].success) CHECK(ranks[i - 1].branch < ranks[i].branch);
  }
  const auto order = rank_order(ranks);
  const EvalReport best = evaluate(branch_controller(p, order[0]), envs, bank(), starts, cfg);
  const EvalReport top1 = evaluate(top_k_controller(p, order, 1), envs, bank(), starts, cfg);
  CHECK(best.average == top1.average);
  CHECK(best.average == ranks[0].success);

  const FusionPolicy ff(Scheme::feature_fusion, BankLayout::of(bank()), small_arch(), 3);
  CHECK_THROWS_AS(rank_branches(ff, envs, bank(), starts, cfg), ConfigError);
}
