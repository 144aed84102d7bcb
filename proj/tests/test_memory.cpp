#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "sgim/memory.hpp"

using namespace sgim;

namespace {

std::vector<OutcomeSpace> two_spaces() {
  return {OutcomeSpace(SpaceId{0}, "a", {0, 0}, {1, 1}), OutcomeSpace(SpaceId{1}, "b", {-1}, {1})};
}

EpisodeRecord rec(std::size_t ep, std::optional<Vec> a, std::optional<Vec> b = std::nullopt) {
  EpisodeRecord r;
  r.episode = ep;
  r.goal = Outcome{SpaceId{0}, {0.5, 0.5}};
  r.action.primitives = {ActionPrimitive{{0.0}}};
  r.lc = as_sequence(r.action);
  r.reached = {std::move(a), std::move(b)};
  r.competence = -0.5;
  return r;
}

// exhaustive scan with the same tie rule (distance, then record id)
std::vector<Neighbor> brute_nearest(const std::vector<Vec>& pts, const Vec& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double acc = 0.0;
    for (std::size_t d = 0; d < q.size(); ++d) acc += (pts[i][d] - q[d]) * (pts[i][d] - q[d]);
    all.push_back({i, std::sqrt(acc)});
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& x, const Neighbor& y) { return x.distance < y.distance; });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace

TEST(Memory, FirstRecordIndexesReachedSpaces) {
  EpisodicMemory m(two_spaces());
  EXPECT_EQ(m.record(rec(0, Vec{0.1, 0.2})), 0u);
  EXPECT_EQ(m.index_size(SpaceId{0}), 1u);
  EXPECT_EQ(m.index_size(SpaceId{1}), 0u);
}

TEST(Memory, IndexSizesAdd) {
  EpisodicMemory m(two_spaces());
  m.record(rec(0, Vec{0.1, 0.2}));
  m.record(rec(1, Vec{0.3, 0.2}, Vec{0.5}));
  EXPECT_EQ(m.index_size(SpaceId{0}), 2u);
  EXPECT_EQ(m.index_size(SpaceId{1}), 1u);
  EXPECT_EQ(m.size(), 2u);
}

TEST(Memory, SentinelKeepsIndexUnchanged) {
  EpisodicMemory m(two_spaces());
  m.record(rec(0, std::nullopt, Vec{0.5}));
  EXPECT_EQ(m.index_size(SpaceId{0}), 0u);
  EXPECT_FALSE(m.at(0).reached_in(SpaceId{0}).has_value());
}

TEST(Memory, MalformedRecordsRejectedWithoutChange) {
  EpisodicMemory m(two_spaces());
  auto bad_id = rec(3, Vec{0.1, 0.1});
  EXPECT_THROW(m.record(bad_id), Error);
  auto outside = rec(0, Vec{1.5, 0.1});
  EXPECT_THROW(m.record(outside), Error);
  auto out_of_bounds = rec(0, Vec{0.1, 0.1});
  out_of_bounds.action.primitives[0].params[0] = 2.0;
  EXPECT_THROW(m.record(out_of_bounds), Error);
  auto no_lc = rec(0, Vec{0.1, 0.1});
  no_lc.lc.clear();
  EXPECT_THROW(m.record(no_lc), Error);
  EXPECT_EQ(m.size(), 0u);
  EXPECT_EQ(m.index_size(SpaceId{0}), 0u);
}

TEST(Memory, FailedRecordsAreNotIndexed) {
  EpisodicMemory m(two_spaces());
  auto r = rec(0, Vec{0.1, 0.1});
  r.failed = true;
  r.competence = -1.0;
  m.record(r);
  EXPECT_EQ(m.size(), 1u);
  EXPECT_FALSE(m.has_data(SpaceId{0}));
}

TEST(Nearest, SingletonAtZero) {
  EpisodicMemory m(two_spaces());
  m.record(rec(0, Vec{0.1, 0.2}));
  const auto nb = m.nearest(SpaceId{0}, Vec{0.1, 0.2}, 1);
  ASSERT_EQ(nb.size(), 1u);
  EXPECT_EQ(nb[0].record, 0u);
  EXPECT_EQ(nb[0].distance, 0.0);
}

TEST(Nearest, LargeKReturnsAll) {
  EpisodicMemory m(two_spaces());
  for (std::size_t i = 0; i < 4; ++i) m.record(rec(i, Vec{0.1 * static_cast<double>(i), 0.0}));
  EXPECT_EQ(m.nearest(SpaceId{0}, Vec{0, 0}, 10).size(), 4u);
  EXPECT_THROW(m.nearest(SpaceId{0}, Vec{0, 0}, 0), Error);
}

TEST(Nearest, TiesGoToEarlierRecord) {
  EpisodicMemory m(two_spaces());
  m.record(rec(0, Vec{0.6, 0.5}));
  m.record(rec(1, Vec{0.4, 0.5}));
  EXPECT_EQ(m.nearest(SpaceId{0}, Vec{0.5, 0.5}, 1)[0].record, 0u);
}

class NearestOracle : public ::testing::TestWithParam<std::size_t> {};

TEST_P(NearestOracle, MatchesExhaustiveScan) {
  const std::size_t n = GetParam();
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EpisodicMemory m(two_spaces());
  std::vector<Vec> pts;
  for (std::size_t i = 0; i < n; ++i) {
    // coarse grid values so that exact distance ties occur
    Vec p{std::round(u(rng) * 20) / 20, std::round(u(rng) * 20) / 20};
    pts.push_back(p);
    m.record(rec(i, p));
  }
  for (int q = 0; q < 20; ++q) {
    Vec x{u(rng), u(rng)};
    const auto got = m.nearest(SpaceId{0}, x, 5);
    const auto want = brute_nearest(pts, x, 5);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].record, want[i].record);
      EXPECT_EQ(got[i].distance, want[i].distance);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, NearestOracle, ::testing::Values(1, 7, 100, 10000));

TEST(Reach, NinetyFifthPercentileOfMoves) {
  EpisodicMemory m(two_spaces());
  auto r = rec(0, Vec{0.5, 0.5});
  for (int i = 1; i <= 20; ++i) {
    StepObservation s;
    s.before = {Vec{0.0, 0.0}, std::nullopt};
    s.after = {Vec{0.01 * i, 0.0}, std::nullopt};
    r.steps.push_back(s);
  }
  m.record(r);
  // ceil(0.95 * 20) = 19th smallest of 0.01..0.20
  EXPECT_NEAR(m.reach(SpaceId{0}), 0.19, 1e-12);
  EXPECT_EQ(m.reach(SpaceId{1}), 0.0);
}
