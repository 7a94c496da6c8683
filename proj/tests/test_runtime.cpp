#include <gtest/gtest.h>

#include "fixture.hpp"

using namespace lfd;

namespace {

const fixture::Trained& model() {
  static const fixture::Trained t = fixture::train(fixture::quick_config());
  return t;
}

SkillModel toy_skill(double d_max, double log_p_min, int eps) {
  SkillModel sk;
  sk.gmm.in_dim = 2;
  sk.gmm.weights = {1.0};
  sk.gmm.means = {Vec::Zero(5)};
  sk.gmm.covs = {Mat::Identity(5, 5)};
  sk.thresholds = {d_max, log_p_min, eps};
  return sk;
}

}  // namespace

TEST(Motion, EmLikelihoodNeverDecreases) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  Mat rows(300, 3);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double c = i % 2 ? 2.0 : -2.0;
    rows.row(i) << c + nd(rng), c + 0.5 * nd(rng), 0.3 * nd(rng);
  }
  FitTrace trace;
  fit_gmm(rows, 2, 0.0, 1, 4, &trace);  // no floor: plain EM
  ASSERT_GE(trace.loglik.size(), 2u);
  for (std::size_t i = 1; i < trace.loglik.size(); ++i) EXPECT_GE(trace.loglik[i], trace.loglik[i - 1] - 1e-9);
}

TEST(Motion, TrainingRowsStayInsideCalibratedThresholds) {
  for (const auto& [id, sk] : model().graph.skills) {
    for (Eigen::Index i = 0; i < sk.rows.rows(); ++i) {
      const Vec r = sk.rows.row(i).transpose();
      const Conditioned c = condition(sk.gmm, r.head(2), model().graph.motion.covariance);
      EXPECT_GE(c.log_ps, sk.thresholds.log_p_min);
      EXPECT_LE(mahalanobis(c, r.tail(c.mean.size())), sk.thresholds.d_max * (1 + 1e-12));
    }
  }
}

TEST(Motion, PseudoInverseHandlesSingularCovariance) {
  Conditioned c;
  c.mean = Vec::Zero(2);
  c.cov = Mat::Zero(2, 2);
  c.cov(0, 0) = 4.0;
  bool pseudo = false;
  EXPECT_DOUBLE_EQ(mahalanobis(c, Vec{{2.0, 5.0}}, &pseudo), 1.0);
  EXPECT_TRUE(pseudo);
}

TEST(Monitor, ConfidenceGateComesBeforeTheAnomalyTest) {
  const SkillModel sk = toy_skill(1.0, -1.0, 3);
  MonitorState ms;
  const Vec far = Vec::Constant(3, 50.0);
  // far outside the input support: never anomalous, refinement after ε cycles
  for (int i = 1; i <= 3; ++i) {
    const MonitorVerdict v = monitor(sk, Vec::Constant(2, 10.0), far, ms);
    EXPECT_FALSE(v.confident);
    EXPECT_FALSE(v.anomalous);
    EXPECT_EQ(v.trigger, i < 3 ? Trigger::none : Trigger::refinement);
  }
}

TEST(Monitor, DebounceNeedsConsecutiveCycles) {
  const SkillModel sk = toy_skill(1.0, -10.0, 3);
  MonitorState ms;
  const Vec s = Vec::Zero(2), bad = Vec::Constant(3, 5.0), good = Vec::Zero(3);
  EXPECT_EQ(monitor(sk, s, bad, ms).trigger, Trigger::none);
  EXPECT_EQ(monitor(sk, s, bad, ms).trigger, Trigger::none);
  EXPECT_EQ(monitor(sk, s, good, ms).anomalous_run, 0);
  EXPECT_EQ(monitor(sk, s, bad, ms).trigger, Trigger::none);
  EXPECT_EQ(monitor(sk, s, bad, ms).trigger, Trigger::none);
  const MonitorVerdict v = monitor(sk, s, bad, ms);
  EXPECT_TRUE(v.anomalous);
  EXPECT_EQ(v.trigger, Trigger::anomaly);
}

TEST(Episode, NominalRunVisitsEverySubgoalInOrder) {
  TaskGraph g = model().graph;
  const EngineConfig cfg = fixture::quick_config();
  const EpisodeLog log = execute(g, {fixture::kTestSeed, fixture::kRunVariation, {}}, cfg, {});
  EXPECT_EQ(log.outcome, Outcome::success);
  EXPECT_EQ(log.subgoals_reached, g.nominal);
  EXPECT_EQ(log.anomaly_triggers(), 0);
  EXPECT_EQ(log.refinement_triggers(), 0);
}

TEST(Episode, UntaughtFaultHaltsAndStoresOneWindow) {
  TaskGraph g = model().graph;
  const EngineConfig cfg = fixture::quick_config();
  const EpisodeLog nominal = execute(g, {fixture::kTestSeed, fixture::kRunVariation, {}}, cfg, {});
  const sim::Scenario sc = fault_scenario(nominal, g.force_feature, fixture::kTestSeed, fixture::kRunVariation,
                                          sim::AnomalyKind::force_drop, 0);
  const EpisodeLog log = execute(g, sc, cfg, {});
  EXPECT_EQ(log.outcome, Outcome::anomaly_halt);
  ASSERT_EQ(log.anomalies.size(), 1u);
  const AnomalyEvent& a = log.anomalies[0];
  EXPECT_EQ(a.label, 1);
  EXPECT_TRUE(a.novel);
  EXPECT_FALSE(a.queried);
  EXPECT_GE(a.onset, sc.anomalies[0].onset);
  EXPECT_EQ(a.detected - a.onset + 1, g.skill(a.skill).thresholds.eps_cycles);
  EXPECT_EQ(g.skill(a.skill).memory.windows.size(), 1u);
  EXPECT_EQ(a.window.rows(), g.skill(a.skill).thresholds.eps_cycles);
}

TEST(Episode, HooksStopAndCyclesTimeOut) {
  TaskGraph g = model().graph;
  EngineConfig cfg = fixture::quick_config();
  EpisodeHooks hooks;
  int seen = 0;
  hooks.before_cycle = [](sim::World&, int n) { return n < 25; };
  hooks.on_cycle = [&](const CycleRecord&) { ++seen; };
  const EpisodeLog stopped = execute(g, {1, 0.0, {}}, cfg, {}, hooks);
  EXPECT_EQ(stopped.outcome, Outcome::stopped);
  EXPECT_EQ(seen, 25);
  cfg.execution.max_cycles = 10;
  EXPECT_EQ(execute(g, {1, 0.0, {}}, cfg, {}).outcome, Outcome::timeout);
}

TEST(TaskGraph, ModelFileRoundTripIsByteIdentical) {
  const std::string once = graph_to_json(model().graph).dump();
  const TaskGraph back = graph_from_json(json::parse(once));
  EXPECT_EQ(graph_to_json(back).dump(), once);
  json bad = json::parse(once);
  bad["unexpected"] = 1;
  EXPECT_THROW(graph_from_json(bad), SchemaError);
}

TEST(TaskGraph, RecoveryBranchesKeepHistory) {
  TaskGraph g = model().graph;
  const int owner = g.nominal[1];
  EXPECT_THROW(append_recovery(g, owner, 1, {g.skill(owner)}), std::invalid_argument);  // label not registered yet
  g.skill(owner).memory.windows.push_back(Mat::Random(30, 3));
  g.skill(owner).memory.labels.push_back(1);
  const auto first = append_recovery(g, owner, 1, {g.skill(owner)});
  const auto second = append_recovery(g, owner, 1, {g.skill(owner), g.skill(owner)});
  ASSERT_NE(g.recovery(owner, 1), nullptr);
  EXPECT_EQ(*g.recovery(owner, 1), second);
  EXPECT_EQ(g.branches.at(owner).at(1).front(), first);
  EXPECT_THROW(append_recovery(g, first[0], 1, {g.skill(owner)}), std::invalid_argument);
  EXPECT_THROW(append_recovery(g, 999, 1, {g.skill(owner)}), std::invalid_argument);
  EXPECT_EQ(graph_to_json(graph_from_json(graph_to_json(g))).dump(), graph_to_json(g).dump());
}

TEST(TaskGraph, ReentryPicksTheMostLikelyNominalSkill) {
  const TaskGraph& g = model().graph;
  for (int id : g.nominal) {
    const SkillModel& sk = g.skill(id);
    const Vec s = sk.gmm.means[0].head(2);
    const auto next = next_after_recovery(g, s);
    ASSERT_TRUE(next.has_value());
    EXPECT_GE(g.skill(*next).gmm.log_input_density(s), sk.gmm.log_input_density(s));
  }
  EXPECT_FALSE(next_after_recovery(g, Vec{{-5.0, -5.0}}).has_value());
}

TEST(TaskGraph, RefinementGrowsRowsAndKeepsThreshold) {
  TaskGraph g = model().graph;
  const int id = g.nominal[0];
  const auto rows = g.skill(id).rows.rows();
  const double d_max = g.skill(id).thresholds.d_max;
  merge_refinement(g, refinement_from_cycles(logged_cycles(model().runs[0]), false));
  EXPECT_GT(g.skill(id).rows.rows(), rows);
  EXPECT_GE(g.skill(id).thresholds.d_max, d_max);
  RefinementSet bad;
  bad.entries.push_back({999, {}});
  EXPECT_THROW(merge_refinement(g, bad), std::invalid_argument);
}

TEST(AnomalyMemory, ClassifiesKnownWindowsAndQueriesNovelOnes) {
  AnomalyMemory mem;
  mem.floor = Vec::Constant(3, 1e-4);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 0.05);
  auto window = [&](double force) {
    Mat w(30, 3);
    for (Eigen::Index i = 0; i < 30; ++i) w.row(i) << 0.0025 + 0.0002 * nd(rng), 0.0002 * nd(rng), force + nd(rng);
    return w;
  };
  int asked = 0;
  const NoveltyOracle yes = [&] {
    ++asked;
    return std::optional<bool>(true);
  };
  const NoveltyOracle silent = [&] {
    ++asked;
    return std::optional<bool>();
  };

  Classification c = classify_anomaly(window(0.5), mem, yes);
  EXPECT_EQ(c.label, 1);
  EXPECT_TRUE(c.novel);
  EXPECT_EQ(asked, 0);

  c = classify_anomaly(window(0.5), mem, yes);
  EXPECT_EQ(c.label, 1);
  EXPECT_FALSE(c.queried);
  EXPECT_EQ(mem.windows.size(), 2u);

  c = classify_anomaly(window(12.0), mem, silent);
  EXPECT_TRUE(c.queried);
  EXPECT_TRUE(c.unconfirmed);
  EXPECT_EQ(c.label, 0);
  EXPECT_EQ(mem.windows.size(), 2u);

  c = classify_anomaly(window(12.0), mem, yes);
  EXPECT_EQ(c.label, 2);
  EXPECT_TRUE(c.novel);
  EXPECT_EQ(mem.windows.size(), 3u);

  c = classify_anomaly(window(12.0), mem, yes);
  EXPECT_EQ(c.label, 2);
  EXPECT_FALSE(c.queried);

  const AnomalyMemory back = memory_from_json(memory_to_json(mem));
  EXPECT_EQ(back.labels, mem.labels);
  EXPECT_EQ(back.log_p_min, mem.log_p_min);
  EXPECT_EQ(back.count_unknown(window(0.5)), mem.count_unknown(window(0.5)));
}
