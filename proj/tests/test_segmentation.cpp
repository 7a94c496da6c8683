#include <set>

#include <gtest/gtest.h>

#include "fixture.hpp"

using namespace lfd;

TEST(Grid, DistancesAreChebyshevWithoutObstacles) {
  Workspace ws;
  const Grid g = make_grid(ws, 0.1);
  ASSERT_EQ(g.nx, 11);
  const CellId goal = g.id(3, 4);
  const auto d = bfs_distances(g, goal);
  for (CellId c = 0; c < g.size(); ++c) EXPECT_EQ(d[static_cast<std::size_t>(c)], g.chebyshev(c, goal));
}

TEST(Grid, WallsDetourAndEnclosedCellsAreUnreachable) {
  Workspace ws;
  std::vector<CellId> wall;
  Grid probe = make_grid(ws, 0.1);
  for (int y = 0; y < 10; ++y) wall.push_back(probe.id(5, y));
  const Grid g = make_grid(ws, 0.1, wall);
  const auto d = bfs_distances(g, g.id(0, 0));
  EXPECT_EQ(d[static_cast<std::size_t>(g.id(10, 0))], 10 + 10);  // around the top of the wall
  EXPECT_EQ(d[static_cast<std::size_t>(g.id(5, 0))], -1);
  const ValueTable t = precompute_goal_values(g, std::vector<CellId>{g.id(0, 0)}, 0.9);
  EXPECT_DOUBLE_EQ(t.value(g.id(10, 0), g.id(0, 0)), std::pow(0.9, 19));
  EXPECT_THROW(precompute_goal_values(g, std::vector<CellId>{g.id(5, 3)}, 0.9), std::invalid_argument);
  EXPECT_THROW(precompute_goal_values(g, std::vector<CellId>{g.id(0, 3)}, 1.0), std::invalid_argument);
}

TEST(Grid, SnappedPathsMoveOneCellPerStep) {
  const sim::LabeledDemo demo = sim::scripted_demo(2, 0.5, 1);
  const ObservationSet set = sim::make_corpus(std::vector<sim::LabeledDemo>{demo});
  const Grid g = make_grid(set.workspace, 0.025);
  const GridPath p = snap_demo(g, set.demos[0]);
  ASSERT_EQ(p.frame_to_step.size(), set.demos[0].size());
  for (std::size_t i = 1; i < p.cells.size(); ++i) EXPECT_EQ(g.chebyshev(p.cells[i - 1], p.cells[i]), 1);
  for (std::size_t i = 1; i < p.frame_to_step.size(); ++i) EXPECT_GE(p.frame_to_step[i], p.frame_to_step[i - 1]);
  EXPECT_EQ(p.frame_to_step.front(), 0);
  EXPECT_EQ(p.frame_to_step.back(), static_cast<int>(p.cells.size()) - 1);
}

TEST(Niw, StatisticsRemoveWhatTheyAdd) {
  ClusterStats st(2);
  st.add(Vec{{1.0, 2.0}});
  const ClusterStats before = st;
  st.add(Vec{{-3.0, 0.5}});
  st.remove(Vec{{-3.0, 0.5}});
  EXPECT_EQ(st.count, before.count);
  EXPECT_LE((st.sum - before.sum).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((st.scatter - before.scatter).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sampler, CrpWeightsFollowClusterSizes) {
  SegmentationState st;
  st.stats.assign(2, ClusterStats(1));
  for (int i = 0; i < 3; ++i) st.stats[0].add(Vec::Zero(1));
  st.stats[1].add(Vec::Zero(1));
  const auto w = crp_log_weights(st, 5, 0.5, true);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_DOUBLE_EQ(std::exp(w[0]), 3.0 / 4.5);
  EXPECT_DOUBLE_EQ(std::exp(w[1]), 1.0 / 4.5);
  EXPECT_DOUBLE_EQ(std::exp(w[2]), 0.5 / 4.5);
  EXPECT_EQ(crp_log_weights(st, 5, 0.5, false).size(), 2u);
}

namespace {

struct SmallProblem {
  ObservationSet corpus;
  SamplerConfig cfg;
  SegmentationProblem pb;
};

SmallProblem small_problem() {
  SmallProblem p;
  p.corpus = sim::make_corpus(std::vector<sim::LabeledDemo>{sim::scripted_demo(1, 0.5, 1), sim::scripted_demo(2, 0.5, 2)});
  p.cfg.iterations = 60;
  p.cfg.burn_in = 30;
  p.cfg.chains = 2;
  p.pb = prepare_problem(p.corpus, p.cfg);
  return p;
}

}  // namespace

TEST(Sampler, ChainsAreReproducibleAndMapFollowsBurnIn) {
  const SmallProblem p = small_problem();
  const RunResult a = run_sampler(p.pb, p.cfg), b = run_sampler(p.pb, p.cfg);
  ASSERT_EQ(a.chains.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    ASSERT_EQ(a.chains[c].snapshots.size(), 61u);
    for (std::size_t t = 0; t < a.chains[c].snapshots.size(); ++t) {
      EXPECT_EQ(a.chains[c].snapshots[t].z, b.chains[c].snapshots[t].z);
      EXPECT_EQ(a.chains[c].snapshots[t].logprob, b.chains[c].snapshots[t].logprob);
    }
    EXPECT_GT(a.chains[c].map_index, 30u);
    for (std::size_t t = 31; t < a.chains[c].snapshots.size(); ++t)
      EXPECT_LE(a.chains[c].snapshots[t].logprob, a.chains[c].map().logprob);
  }
  EXPECT_NE(a.chains[0].snapshots.back().z, a.chains[1].snapshots.back().z);
}

TEST(Sampler, StoredLogProbabilityMatchesRestoredState) {
  const SmallProblem p = small_problem();
  const ChainResult r = run_chain(p.pb, p.cfg, 5);
  for (std::size_t t : {std::size_t{0}, std::size_t{20}, r.snapshots.size() - 1}) {
    const SegmentationState st = restore_state(p.pb, r.snapshots[t]);
    EXPECT_NEAR(joint_logprob(st, p.pb, p.cfg), r.snapshots[t].logprob, 1e-9);
    EXPECT_EQ(st.K(), r.snapshots[t].K);
  }
}

TEST(Segmentation, LabelsAreDenseAndOrdered) {
  const SmallProblem p = small_problem();
  const Segmentation seg = segment_corpus(p.corpus, p.cfg);
  const int K = static_cast<int>(seg.skills.size());
  ASSERT_GE(K, 1);
  std::set<int> used;
  for (const auto& d : p.corpus.demos) {
    const auto& l = seg.labels.at(d.id);
    ASSERT_EQ(l.size(), d.size());
    used.insert(l.begin(), l.end());
  }
  EXPECT_EQ(*used.begin(), 1);
  EXPECT_EQ(*used.rbegin(), K);
  EXPECT_EQ(static_cast<int>(used.size()), K);
  for (int k = 0; k < K; ++k) EXPECT_EQ(seg.skills[static_cast<std::size_t>(k)].id, k + 1);
  // skill ids follow the order of first appearance in each complete demo
  for (const auto& [id, l] : seg.labels) {
    int last = 0;
    for (int x : l) {
      if (x > last) {
        EXPECT_EQ(x, last + 1);
        last = x;
      }
    }
  }
}

TEST(Segmentation, AblationModesProduceSkills) {
  SmallProblem p = small_problem();
  p.cfg.chains = 1;
  for (SegMode mode : {SegMode::bngmm, SegMode::bnirl}) {
    SamplerConfig c = p.cfg;
    c.mode = mode;
    const Segmentation seg = segment_corpus(p.corpus, c);
    EXPECT_GE(seg.skills.size(), 1u) << to_string(mode);
  }
  EXPECT_THROW(seg_mode_from_string("hmm"), std::invalid_argument);
}
