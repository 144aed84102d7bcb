#include <gtest/gtest.h>

#include <filesystem>

#include "sgim/runner.hpp"

using namespace sgim;

namespace {

ExperimentConfig small(Algorithm alg, std::size_t episodes, std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.algorithm = alg;
  c.environment = alg == Algorithm::Chime ? "mobile-pusher" : "arm-pen";
  c.seed = seed;
  c.episodes = episodes;
  c.snapshot_period = 50;
  c.benchmark_grid = 3;
  c.check_invariants = true;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sgim_runner_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughText) {
  ExperimentConfig c;
  c.algorithm = Algorithm::SgimPb;
  c.teachers = {{TeacherKind::Action, 1, 5}, {TeacherKind::Procedure, 2, 3}};
  const auto back = parse_config(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("episodes = 10\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\nbogus = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\nseed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\nepisodes = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\nteacher = action:1:5\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\nalgorithm = SGIM-PB\nteacher = action:9:5\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\nenvironment = kitchen\n"), ConfigError);
  EXPECT_THROW(parse_config("schema_version = 1\njust words\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("# comment\nschema_version = 1  # trailing\n"));
}

TEST(Config, ShippedConfigsLoad) {
  for (const auto& name : {"arm_impb.conf", "arm_sgimpb.conf", "pusher_chime.conf"})
    EXPECT_NO_THROW(load_config(std::filesystem::path(SGIM_CONFIG_DIR) / name)) << name;
}

TEST(Learner, BudgetOfOneGivesOneRecord) {
  Learner l(small(Algorithm::ImPb, 1));
  const auto bench = build_benchmark(l.environment(), 3, 0);
  const auto r = run(l, bench);
  EXPECT_EQ(l.memory().size(), 1u);
  EXPECT_EQ(std::count(r.episode_log.begin(), r.episode_log.end(), '\n'), 1);
  ASSERT_EQ(r.snapshots.size(), 1u);
  EXPECT_EQ(r.snapshots[0].episode, 1u);
}

TEST(Learner, ImPbUsesOnlyAutonomousStrategies) {
  Learner l(small(Algorithm::ImPb, 300));
  std::size_t total = 0;
  while (l.episode() < 300) {
    const auto& rec = l.step();
    EXPECT_TRUE(rec.strategy.kind == StrategyKind::OutcomeExplore || rec.strategy.kind == StrategyKind::ProcedureExplore);
  }
  for (const auto& c : l.counts()) total += c.count;
  EXPECT_EQ(total, 300u);
  EXPECT_GT(l.checks(), 0u);
}

TEST(Learner, UntrainedDrawingErrorIsMaximal) {
  Learner l(small(Algorithm::ImPb, 1));
  const auto bench = build_benchmark(l.environment(), 3, 0);
  const auto m = evaluate(l, bench);
  EXPECT_FALSE(bench.goals[2].empty());
  EXPECT_NEAR(m[2].mean_error, 1.0, 1e-12);
}

TEST(Learner, RerunsAreByteIdentical) {
  std::string logs[2], csv[2];
  for (int i = 0; i < 2; ++i) {
    Learner l(small(Algorithm::ImPb, 200, 5));
    const auto bench = build_benchmark(l.environment(), 3, 0);
    const auto r = run(l, bench);
    logs[i] = r.episode_log;
    csv[i] = metrics_csv(r.snapshots, l.active());
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(csv[0], csv[1]);
}

TEST(Learner, ChimeRerunsAreByteIdentical) {
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    Learner l(small(Algorithm::Chime, 150, 2));
    while (l.episode() < 150) {
      const auto& rec = l.step();
      logs[i] += episode_line(rec, l.mode(), l.error(rec.episode)) + "\n";
    }
  }
  EXPECT_EQ(logs[0], logs[1]);
}

TEST(Learner, DifferentSeedsDiffer) {
  Learner a(small(Algorithm::ImPb, 20, 1)), b(small(Algorithm::ImPb, 20, 2));
  std::string la, lb;
  for (int i = 0; i < 20; ++i) {
    la += episode_line(a.step(), a.mode(), "");
    lb += episode_line(b.step(), b.mode(), "");
  }
  EXPECT_NE(la, lb);
}

TEST(Evaluation, ParallelEqualsSequentialAndHasNoSideEffects) {
  Learner l(small(Algorithm::ImPb, 400));
  for (int i = 0; i < 400; ++i) l.step();
  const auto bench = build_benchmark(l.environment(), 3, 0);
  const auto before = to_snapshot(l).dump();
  const auto seq = evaluate(l, bench, 1);
  const auto par = evaluate(l, bench, 3);
  ASSERT_EQ(seq.size(), par.size());
  for (std::size_t s = 0; s < seq.size(); ++s) {
    EXPECT_EQ(seq[s].mean_error, par[s].mean_error);
    EXPECT_EQ(seq[s].mean_length, par[s].mean_length);
    EXPECT_EQ(seq[s].failures, par[s].failures);
  }
  EXPECT_EQ(to_snapshot(l).dump(), before);
}

TEST(Export, ArtifactsAndIdempotence) {
  Learner l(small(Algorithm::ImPb, 120));
  const auto bench = build_benchmark(l.environment(), 3, 0);
  const auto r = run(l, bench);
  const auto dir = scratch("export");
  export_run(l, r, dir);
  const auto csv = read_file(dir / "metrics.csv");
  const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
  EXPECT_EQ(rows, 1 + r.snapshots.size() * l.spaces().size());
  EXPECT_EQ(r.snapshots.size(), 3u);  // 50, 100, 120
  const auto gt = read_file(dir / "ground_truth.dot");
  std::size_t nodes = 0;
  for (std::size_t p = 0; (p = gt.find("\";\n", p)) != std::string::npos; ++p) ++nodes;
  EXPECT_EQ(nodes, 6u);
  std::map<std::string, std::string> first;
  for (const auto& f : std::filesystem::directory_iterator(dir)) first[f.path().filename()] = read_file(f.path());
  export_run(l, r, dir);
  for (const auto& [name, text] : first) EXPECT_EQ(read_file(dir / name), text) << name;
  std::filesystem::remove_all(dir);
}

TEST(Snapshot, RestoredLearnerExploitsIdentically) {
  Learner l(small(Algorithm::ImPb, 300));
  for (int i = 0; i < 300; ++i) l.step();
  const auto restored = Learner::from_snapshot(to_snapshot(l));
  EXPECT_EQ(to_snapshot(restored).dump(), to_snapshot(l).dump());
  const auto bench = build_benchmark(l.environment(), 3, 0);
  const auto a = evaluate(l, bench), b = evaluate(restored, bench);
  for (std::size_t s = 0; s < a.size(); ++s) {
    EXPECT_EQ(a[s].mean_error, b[s].mean_error);
    EXPECT_EQ(a[s].mean_length, b[s].mean_length);
  }
}

TEST(Snapshot, ChimeAffordancesSurvive) {
  Learner l(small(Algorithm::Chime, 200, 3));
  for (int i = 0; i < 200; ++i) l.step();
  const auto restored = Learner::from_snapshot(to_snapshot(l));
  EXPECT_EQ(restored.registry().to_text(), l.registry().to_text());
  EXPECT_EQ(restored.registry().controllable(), l.registry().controllable());
}

TEST(Learner, SgimPbBuildsTeachersAndUsesThem) {
  auto c = small(Algorithm::SgimPb, 200);
  c.teachers = {{TeacherKind::Action, 1, 3}, {TeacherKind::Procedure, 2, 2}};
  Learner l(c);
  ASSERT_EQ(l.teachers().size(), 2u);
  std::size_t mimic = 0;
  for (int i = 0; i < 200; ++i) {
    const auto& rec = l.step();
    if (rec.strategy.kind == StrategyKind::MimicAction) {
      ++mimic;
      EXPECT_EQ(rec.goal.space, SpaceId{1});
    }
    if (rec.strategy.kind == StrategyKind::MimicProcedure) {
      ++mimic;
      EXPECT_EQ(rec.goal.space, SpaceId{2});
    }
  }
  EXPECT_GT(mimic, 0u);
}

TEST(Learner, ChimeUsesOnlyExplorationAndKeepsInvariants) {
  Learner l(small(Algorithm::Chime, 300, 3));
  for (int i = 0; i < 300; ++i) {
    const auto& rec = l.step();
    EXPECT_TRUE(rec.strategy.kind == StrategyKind::ActionExplore || rec.strategy.kind == StrategyKind::OutcomeExplore);
    EXPECT_LE(rec.action.size(), l.config().chime_max_primitives);
  }
  EXPECT_TRUE(l.registry().acyclic());
  EXPECT_GE(l.registry().affordances().size(), 1u);
}
