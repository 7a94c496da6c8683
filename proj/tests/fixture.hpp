#pragma once

// Training procedure shared by the acceptance run and the unit tests:
// three scripted demos, segmentation, task model, then three nominal
// executions merged back as refinement.

#include <cstdint>
#include <vector>

#include "lfd/pipeline.hpp"

namespace lfd::fixture {

inline constexpr double kDemoVariation = 0.5;
inline constexpr double kRunVariation = 0.25;
inline constexpr std::uint64_t kTrainSeed = 100;
inline constexpr std::uint64_t kTestSeed = 200;

struct Trained {
  std::vector<sim::LabeledDemo> demos;
  ObservationSet corpus;
  Segmentation seg;
  TaskGraph graph;
  std::vector<EpisodeLog> runs;
};

inline LabelMap ground_truth(const std::vector<sim::LabeledDemo>& demos) {
  LabelMap gt;
  for (const auto& d : demos) gt[d.demo.id] = d.labels;
  return gt;
}

inline Trained train(const EngineConfig& cfg, int demos = 3, int runs = 3) {
  Trained t;
  for (int i = 0; i < demos; ++i) t.demos.push_back(sim::scripted_demo(static_cast<std::uint64_t>(1 + i), kDemoVariation, i + 1, cfg.sim));
  t.corpus = sim::make_corpus(t.demos, cfg.sim);
  t.seg = segment_corpus(t.corpus, cfg.sampler);
  t.graph = build_task_model(t.corpus, t.seg, cfg.motion, cfg.sampler.mode);
  for (int i = 0; i < runs; ++i) {
    t.runs.push_back(execute(t.graph, {kTrainSeed + static_cast<std::uint64_t>(i), kRunVariation, {}}, cfg, {}));
    merge_refinement(t.graph, refinement_from_cycles(logged_cycles(t.runs.back()), false));
  }
  return t;
}

// Reduced sampler budget for tests that only need a working model.
inline EngineConfig quick_config() {
  EngineConfig cfg;
  cfg.sampler.iterations = 200;
  cfg.sampler.burn_in = 100;
  cfg.sampler.chains = 1;
  return cfg;
}

// The skill running when the end effector first touches the box.
inline int push_skill(const EpisodeLog& log, int force_feature) {
  const int n = contact_cycle(log, force_feature);
  for (const auto& c : log.cycles)
    if (c.n == n) return c.skill_id;
  return -1;
}

inline int first_cycle_of(const EpisodeLog& log, int skill) {
  for (const auto& c : log.cycles)
    if (c.skill_id == skill) return c.n;
  return -1;
}

}  // namespace lfd::fixture
