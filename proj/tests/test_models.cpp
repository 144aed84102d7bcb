#include <gtest/gtest.h>

#include <random>

#include "sgim/sgim.hpp"

using namespace sgim;

namespace {

const std::vector<OutcomeSpace> kLine{OutcomeSpace(SpaceId{0}, "line", {-1}, {1})};

// synthetic linear world: outcome = 0.8 * a0 - 0.1 * a1, inside [-1, 1]
Vec linear_world(const Vec& a) { return {0.8 * a[0] - 0.1 * a[1]}; }

std::vector<OutcomeSpace> arm_like() {
  return {OutcomeSpace(SpaceId{0}, "s0", {-1, -1}, {1, 1}), OutcomeSpace(SpaceId{1}, "s1", {-1, -1}, {1, 1}),
          OutcomeSpace(SpaceId{2}, "s2", {-1, -1, -1, -1}, {1, 1, 1, 1})};
}

EpisodeRecord direct(std::size_t ep, SpaceId s, Vec reached, double a, std::size_t n_spaces = 3) {
  EpisodeRecord r;
  r.episode = ep;
  r.goal = Outcome{s, reached};
  r.action.primitives = {ActionPrimitive{{a, a}}};
  r.lc = as_sequence(r.action);
  r.reached.assign(n_spaces, std::nullopt);
  r.reached[static_cast<std::size_t>(s.value)] = reached;
  r.competence = 0.0;
  return r;
}

HierarchyGraph graph_for(const std::vector<OutcomeSpace>& spaces) {
  HierarchyGraph h;
  h.add_node(kActionNode, "A");
  for (const auto& s : spaces) h.add_node(s.id, s.name);
  return h;
}

}  // namespace

TEST(Knn, EmptyIsUnknown) {
  KnnRegressor k;
  EXPECT_FALSE(k.predict(Vec{0.0}).has_value());
}

TEST(Knn, ExactMatchReturnsStored) {
  KnnRegressor k;
  k.add({0.0}, {1.0});
  k.add({1.0}, {5.0});
  k.add({2.0}, {9.0});
  EXPECT_EQ(*k.predict(Vec{1.0}), (Vec{5.0}));
}

TEST(Knn, InverseDistanceWeights) {
  KnnRegressor k;
  k.add({0.0}, {0.0});
  k.add({1.0}, {1.0});
  k.add({3.0}, {3.0});
  k.add({10.0}, {100.0});
  const double w0 = 1 / (0.5 + 1e-6), w1 = 1 / (0.5 + 1e-6), w3 = 1 / (2.5 + 1e-6);
  EXPECT_NEAR((*k.predict(Vec{0.5}))[0], (w1 * 1.0 + w3 * 3.0) / (w0 + w1 + w3), 1e-12);
}

TEST(Knn, RejectsMixedDimensions) {
  KnnRegressor k;
  k.add({0.0}, {0.0});
  EXPECT_THROW(k.add({0.0, 1.0}, {0.0}), Error);
}

TEST(TaskModelTest, OwnSpaceAsInputRejected) {
  EXPECT_THROW(TaskModel(SpaceId{1}, ControllableSpace{SpaceId{1}, 2}), Error);
}

TEST(TaskModelTest, EmptyModel) {
  TaskModel m(SpaceId{0}, ControllableSpace{kActionNode, 2});
  EXPECT_FALSE(m.forward_predict({}, ActionPrimitive{{0, 0}}).has_value());
  EXPECT_THROW(m.infer_controllable({}, Outcome{SpaceId{0}, {0}}), Error);
}

TEST(TaskModelTest, StoredTripleReproduced) {
  TaskModel m(SpaceId{0}, ControllableSpace{kActionNode, 2}, {0});
  m.add(Vec{0.3}, ActionPrimitive{{0.1, 0.2}}, {0.5});
  m.add(Vec{0.7}, ActionPrimitive{{0.1, 0.2}}, {0.6});
  EXPECT_EQ(*m.forward_predict(Vec{0.3}, ActionPrimitive{{0.1, 0.2}}), (Vec{0.5}));
  EXPECT_EQ(std::get<ActionPrimitive>(m.infer_controllable(Vec{0.7}, Outcome{SpaceId{0}, {0.6}})).params,
            (Vec{0.1, 0.2}));
}

TEST(TaskModelTest, InverseNearestRule) {
  TaskModel m(SpaceId{0}, ControllableSpace{SpaceId{1}, 1});
  m.add({}, Outcome{SpaceId{1}, {0.0}}, {0.0});
  m.add({}, Outcome{SpaceId{1}, {1.0}}, {1.0});
  const auto c = std::get<Outcome>(m.infer_controllable({}, Outcome{SpaceId{0}, {0.8}}));
  EXPECT_EQ(c.space, SpaceId{1});
  EXPECT_EQ(c.value, (Vec{1.0}));
  EXPECT_THROW(m.forward_predict({}, ActionPrimitive{{0.0}}), Error);
}

TEST(TaskModelTest, LinearWorldHeldOutMidpoints) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  TaskModel m(SpaceId{0}, ControllableSpace{kActionNode, 1});
  std::vector<double> xs;
  for (int i = 0; i < 50; ++i) xs.push_back(u(rng));
  std::sort(xs.begin(), xs.end());
  for (double a : xs) m.add({}, ActionPrimitive{{a}}, {0.8 * a});
  const double diam = kLine[0].diameter();
  for (int i = 0; i + 1 < 50; ++i) {
    const double mid = 0.5 * (xs[i] + xs[i + 1]);
    const auto p = m.forward_predict({}, ActionPrimitive{{mid}});
    EXPECT_LT(std::abs((*p)[0] - 0.8 * mid), 0.1 * diam);
  }
}

TEST(TaskModelTest, InvertibleRoundTrip) {
  // 1-D invertible task: outcome = a^3
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  TaskModel m(SpaceId{0}, ControllableSpace{kActionNode, 1});
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng);
    m.add({}, ActionPrimitive{{a}}, {a * a * a});
  }
  double err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double g = u(rng);
    const auto a = std::get<ActionPrimitive>(m.infer_controllable({}, Outcome{SpaceId{0}, {g}})).params[0];
    err += std::abs(a * a * a - g);
  }
  EXPECT_LT(err / 200.0, 0.05 * kLine[0].diameter());
}

TEST(TaskModelTest, ForwardInverseConsistent) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  TaskModel m(SpaceId{0}, ControllableSpace{kActionNode, 2});
  for (int i = 0; i < 200; ++i) {
    Vec a{u(rng), u(rng)};
    m.add({}, ActionPrimitive{a}, linear_world(a));
  }
  std::uniform_real_distribution<double> goal(-0.8, 0.8);
  int within = 0;
  for (int i = 0; i < 200; ++i) {
    const Outcome g{SpaceId{0}, {goal(rng)}};
    const auto c = m.infer_controllable({}, g);
    within += std::abs((*m.forward_predict({}, c))[0] - g.value[0]) <= 0.1 * kLine[0].diameter();
  }
  EXPECT_GE(within, 190);
}

TEST(Resolve, PrimitiveRecordGivesLengthOne) {
  const auto spaces = arm_like();
  EpisodicMemory mem(spaces);
  auto h = graph_for(spaces);
  mem.record(direct(0, SpaceId{0}, {0.2, 0.2}, 0.3));
  const auto r = Resolver(mem, h).resolve(Outcome{SpaceId{0}, {0.25, 0.2}});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.action->size(), 1u);
}

TEST(Resolve, DrawingViaPenProcedure) {
  const auto spaces = arm_like();
  EpisodicMemory mem(spaces);
  auto h = graph_for(spaces);
  h.add_decomposition(SpaceId{2}, {SpaceId{1}, SpaceId{1}}, 0.9);
  mem.record(direct(0, SpaceId{1}, {0.1, 0.1}, 0.1));
  mem.record(direct(1, SpaceId{1}, {0.5, 0.5}, 0.5));
  EpisodeRecord p;
  p.episode = 2;
  p.goal = Outcome{SpaceId{2}, {0.1, 0.1, 0.5, 0.5}};
  p.lc = {Outcome{SpaceId{1}, {0.1, 0.1}}, Outcome{SpaceId{1}, {0.5, 0.5}}};
  p.action.primitives = {ActionPrimitive{{-0.9, -0.9}}, ActionPrimitive{{-0.8, -0.8}}};
  p.reached = {std::nullopt, std::nullopt, Vec{0.1, 0.1, 0.5, 0.5}};
  p.competence = 0.0;
  mem.record(p);
  const auto r = Resolver(mem, h).resolve(Outcome{SpaceId{2}, {0.1, 0.1, 0.5, 0.5}});
  ASSERT_TRUE(r.ok());
  ASSERT_EQ(r.action->size(), 2u);
  EXPECT_EQ(r.action->primitives[0].params, (Vec{0.1, 0.1}));
  EXPECT_EQ(r.action->primitives[1].params, (Vec{0.5, 0.5}));
  ASSERT_FALSE(r.expanded.empty());
  EXPECT_EQ(r.expanded.front().second, (std::vector<SpaceId>{SpaceId{1}, SpaceId{1}}));

  // a pruned decomposition falls back to the stored action
  HierarchyGraph pruned = graph_for(spaces);
  pruned.add_decomposition(SpaceId{2}, {SpaceId{1}, SpaceId{1}}, 0.01);
  const auto r2 = Resolver(mem, pruned).resolve(Outcome{SpaceId{2}, {0.1, 0.1, 0.5, 0.5}});
  EXPECT_EQ(r2.action->primitives, p.action.primitives);
}

TEST(Resolve, FailureModes) {
  const auto spaces = arm_like();
  EpisodicMemory mem(spaces);
  auto h = graph_for(spaces);
  Resolver res(mem, h);
  EXPECT_EQ(res.resolve(Outcome{SpaceId{0}, {0, 0}}).failure, ResolveFailure::NoData);
  mem.record(direct(0, SpaceId{0}, {0.0, 0.0}, 0.0));
  EXPECT_EQ(res.resolve(Outcome{SpaceId{0}, {0, 0}}, 0, {}).failure, ResolveFailure::DepthExceeded);
  EXPECT_EQ(res.resolve(Outcome{SpaceId{0}, {0, 0}}, 3, {SpaceId{0}}).failure, ResolveFailure::CyclicDecomposition);
  EXPECT_EQ(to_string(ResolveFailure::DepthExceeded), "resolution depth exceeded");
  EXPECT_EQ(to_string(ResolveFailure::CyclicDecomposition), "cyclic decomposition");
  EXPECT_EQ(to_string(ResolveFailure::NoData), "no data");
}

TEST(Resolve, DepthOneReturnsNearestRecordAction) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  const auto spaces = arm_like();
  EpisodicMemory mem(spaces);
  auto h = graph_for(spaces);
  for (std::size_t i = 0; i < 200; ++i) mem.record(direct(i, SpaceId{0}, {u(rng), u(rng)}, u(rng)));
  Resolver res(mem, h, ResolveParams{1, 0.0, 8});
  for (int q = 0; q < 50; ++q) {
    const Outcome g{SpaceId{0}, {u(rng), u(rng)}};
    EXPECT_EQ(res.resolve(g).action->primitives, mem.at(mem.nearest(g.space, g.value, 1)[0].record).action.primitives);
  }
}

TEST(Resolve, NeverOutOfBoundsAndTruncated) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  const auto spaces = arm_like();
  EpisodicMemory mem(spaces);
  auto h = graph_for(spaces);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (a != 2 || b != 2) h.add_decomposition(SpaceId{2}, {SpaceId{a}, SpaceId{b}}, 0.5);
  std::size_t ep = 0;
  for (int i = 0; i < 100; ++i) {
    mem.record(direct(ep++, SpaceId{i % 2}, {u(rng), u(rng)}, u(rng)));
    EpisodeRecord p;
    p.episode = ep++;
    p.goal = Outcome{SpaceId{2}, {0, 0, 0, 0}};
    p.lc = {Outcome{SpaceId{i % 2}, {u(rng), u(rng)}}, Outcome{SpaceId{(i / 2) % 2}, {u(rng), u(rng)}}};
    for (int k = 0; k < 1 + i % 12; ++k) p.action.primitives.push_back(ActionPrimitive{{u(rng), u(rng)}});
    p.reached = {std::nullopt, std::nullopt, Vec{u(rng), u(rng), u(rng), u(rng)}};
    p.competence = -0.5;
    mem.record(p);
  }
  Resolver res(mem, h, ResolveParams{5, 0.01, 8});
  for (int q = 0; q < 100; ++q) {
    const auto r = res.resolve(Outcome{SpaceId{2}, {u(rng), u(rng), u(rng), u(rng)}});
    ASSERT_TRUE(r.ok());
    EXPECT_LE(r.action->size(), 8u);
    for (const auto& p : r.action->primitives) EXPECT_TRUE(p.within_bounds());
  }
}

TEST(EdgeUpdate, MovesTowardCompetence) {
  EXPECT_GT(ema_weight(0.5, -0.05), 0.5);
  EXPECT_LT(ema_weight(0.5, -1.0), 0.5);
  EXPECT_DOUBLE_EQ(ema_weight(0.5, -1.0), 0.45);
}

TEST(EdgeUpdate, AlternatingSuccessAndFailure) {
  const auto spaces = arm_like();
  auto h = graph_for(spaces);
  const std::vector<SpaceId> e1{SpaceId{1}, SpaceId{1}}, e2{SpaceId{0}, SpaceId{1}};
  h.add_decomposition(SpaceId{2}, e1);
  h.add_decomposition(SpaceId{2}, e2);
  // oracle: plain EMA recurrence; an edge freezes once below the threshold
  double w1 = 0.5, w2 = 0.5;
  bool frozen2 = false;
  for (int i = 0; i < 50; ++i) {
    if (i % 2 == 0) {
      h.update(SpaceId{2}, e1, -0.02);
      w1 = w1 + 0.1 * (0.98 - w1);
    } else {
      h.update(SpaceId{2}, e2, -1.0);
      if (!frozen2) w2 = w2 + 0.1 * (0.0 - w2);
      frozen2 = frozen2 || w2 < 0.05;
    }
  }
  EXPECT_TRUE(frozen2);
  const auto& d = h.decompositions(SpaceId{2});
  EXPECT_NEAR(d[0].weight, w1, 1e-12);
  EXPECT_NEAR(d[1].weight, w2, 1e-12);
  EXPECT_GT(d[0].weight, d[1].weight);
}

TEST(Resolve, TrainedArmChainReachesDrawingGoals) {
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.episodes = 3000;
  Learner l(cfg);
  while (l.episode() < cfg.episodes) l.step();
  const auto bench = build_benchmark(l.environment(), cfg.benchmark_grid, cfg.benchmark_seed);
  auto env = l.environment().clone();
  const SpaceId drawing{2};
  double err = 0.0;
  std::size_t n = 0;
  for (const auto& g : bench.goals[2]) {
    const auto r = evaluate_goal(l, *env, drawing, g);
    ASSERT_FALSE(r.failed);
    EXPECT_GE(r.length, 2u);
    err += r.error;
    ++n;
  }
  EXPECT_LT(err / static_cast<double>(n), 0.3);
}
