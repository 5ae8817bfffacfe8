#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gradma/flcore.hpp"
#include "gradma/memory.hpp"
#include "gradma/rng.hpp"

using namespace gradma;

namespace {

std::set<WorkerId> as_set(const std::vector<WorkerId>& v) { return {v.begin(), v.end()}; }

ParamVec v2(double a, double b) { return (ParamVec(2) << a, b).finished(); }

}  // namespace

TEST(MemRed, CapacityTwoHandTrace) {
  MemoryState mem(2, 4, 1);
  const std::vector<WorkerId> r1{1}, r2{2}, r3{3};
  EXPECT_TRUE(mem.reduce(r1).empty());
  EXPECT_TRUE(mem.reduce(r2).empty());
  const auto ev = mem.reduce(r3);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].evicted, 1);
  EXPECT_EQ(ev[0].admitted, 3);
  EXPECT_EQ(as_set(mem.buffered()), (std::set<WorkerId>{2, 3}));
  EXPECT_EQ(mem.counter(1), 0);
  EXPECT_EQ(mem.counter(2), 1);
  EXPECT_EQ(mem.counter(3), 1);
}

TEST(MemRed, BufferedActiveOnlyCounts) {
  MemoryState mem(3, 5, 1);
  const std::vector<WorkerId> a{0, 2};
  mem.reduce(a);
  mem.clear_new();
  const auto before = mem.buffered();
  mem.reduce(a);
  EXPECT_EQ(mem.buffered(), before);
  EXPECT_TRUE(mem.newly_buffered().empty());
  EXPECT_EQ(mem.counter(0), 2);
  EXPECT_EQ(mem.counter(2), 2);
}

TEST(MemRed, FullCapacityNeverEvicts) {
  const int N = 30;
  MemoryState mem(N, N, 1);
  std::size_t previous = 0;
  for (int t = 0; t < 200; ++t) {
    EXPECT_TRUE(mem.reduce(sample_active(N, 4, 1, t)).empty());
    EXPECT_GE(mem.buffered().size(), previous);
    previous = mem.buffered().size();
    mem.clear_new();
  }
  EXPECT_EQ(previous, static_cast<std::size_t>(N));
}

TEST(MemRed, EvictionTieGoesToLowestId) {
  MemoryState mem(3, 10, 1);
  mem.reduce(std::vector<WorkerId>{7, 4, 5});
  mem.clear_new();
  const auto ev = mem.reduce(std::vector<WorkerId>{9});
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].evicted, 4);
}

TEST(MemRedProperty, RandomSamplingInvariants) {
  for (int m : {10, 20, 100}) {
    MemoryState mem(m, 100, 1);
    for (int t = 0; t < 3000; ++t) {
      const auto active = sample_active(100, 10, 77, t);
      for (const auto& e : mem.reduce(active)) {
        EXPECT_FALSE(std::binary_search(active.begin(), active.end(), e.evicted));
        EXPECT_EQ(mem.counter(e.evicted), 0);
      }
      EXPECT_LE(mem.size(), m);
      const auto fresh = mem.newly_buffered();
      for (WorkerId id : fresh) EXPECT_TRUE(mem.contains(id));
      mem.clear_new();
    }
  }
}

TEST(Absorb, NewDecayAndInactiveRules) {
  MemoryState mem(3, 3, 2);
  std::vector<WorkerId> a{0, 1};
  mem.reduce(a);
  mem.absorb(a, std::vector<ParamVec>{v2(1, 0), v2(0, 2)}, 0.5);
  mem.clear_new();
  EXPECT_EQ(mem.column(0), v2(1, 0));
  EXPECT_EQ(mem.column(1), v2(0, 2));

  std::vector<WorkerId> b{1, 2};
  mem.reduce(b);
  mem.absorb(b, std::vector<ParamVec>{v2(1, 1), v2(3, 3)}, 0.5);
  EXPECT_EQ(mem.column(0), v2(0.5, 0));                   // inactive: decay only
  EXPECT_LE((mem.column(1) - v2(1, 2)).norm(), 1e-15);   // old active: 0.5 * (0, 2) + (1, 1)
  EXPECT_LE((mem.column(2) - v2(3, 3)).norm(), 1e-15);   // new: its update
  EXPECT_LE(mem.gram_drift(), 1e-15);
}

TEST(AbsorbProperty, GramCacheTracksRecomputation) {
  const Eigen::Index d = 40;
  MemoryState mem(15, 60, d);
  auto rng = make_rng(3, Stream::qp_fuzz);
  std::normal_distribution<double> normal;
  for (int t = 0; t < 500; ++t) {
    const auto active = sample_active(60, 5, 3, t);
    mem.reduce(active);
    std::vector<ParamVec> updates;
    for (std::size_t k = 0; k < active.size(); ++k) {
      ParamVec u(d);
      for (auto& x : u) x = normal(rng);
      updates.push_back(u);
    }
    mem.absorb(active, updates, 0.9);
    mem.clear_new();
    ASSERT_LE(mem.gram_drift(), 1e-8) << "round " << t;
    const Matrix<real> G = mem.directions().transpose() * mem.directions();
    ASSERT_LE((mem.gram() - G).cwiseAbs().maxCoeff(), 1e-8 * (1 + G.cwiseAbs().maxCoeff()));
  }
}

TEST(Absorb, UnbufferedActiveWorkerIsAnError) {
  MemoryState mem(2, 4, 1);
  EXPECT_THROW(mem.absorb(std::vector<WorkerId>{3}, std::vector<ParamVec>{ParamVec::Ones(1)}, 0.5), std::logic_error);
}

TEST(Absorb, LongAbsentColumnKeepsItsDirection) {
  MemoryState mem(2, 2, 2);
  mem.reduce(std::vector<WorkerId>{0});
  mem.absorb(std::vector<WorkerId>{0}, std::vector<ParamVec>{v2(3, 4)}, 0.5);
  mem.clear_new();
  const std::vector<WorkerId> other{1};
  for (int t = 0; t < 1500; ++t) {
    mem.reduce(other);
    mem.absorb(other, std::vector<ParamVec>{v2(0, 1)}, 0.5);
    mem.clear_new();
  }
  EXPECT_EQ(mem.norm(0), 0.0);  // 5 * 2^-1500 underflows
  EXPECT_LE((ParamVec(mem.directions().col(mem.slot(0))) - v2(0.6, 0.8)).norm(), 1e-15);
  EXPECT_NEAR(mem.gram()(mem.slot(0), mem.slot(0)), 1.0, 1e-15);
  EXPECT_NEAR(mem.norm(1), 2.0, 1e-12);  // geometric series of 0.5
}
