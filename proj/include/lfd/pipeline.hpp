#pragma once

// End-to-end operations shared by the CLI, the service and the tests:
// segmentation of a corpus, task-model construction, simulated execution,
// refinement from logs and recovery teaching.

#include <string>
#include <vector>

#include "bng_irl.hpp"
#include "config.hpp"
#include "metrics.hpp"
#include "runtime.hpp"
#include "sim2d.hpp"
#include "skill.hpp"
#include "task_graph.hpp"

namespace lfd {

inline Segmentation segment_corpus(const ObservationSet& raw, const SamplerConfig& cfg, const ProgressFn& progress = {}) {
  const SegmentationProblem pb = prepare_problem(raw, cfg);
  const RunResult rr = run_sampler(pb, cfg, progress);
  return extract_segments(pb, raw, rr.map(), cfg);
}

inline TaskGraph build_task_model(const ObservationSet& raw, Segmentation seg, const MotionConfig& mc, SegMode mode) {
  if (seg.skills.empty()) throw ValidationError("task model: segmentation produced no skills");
  fit_skills(seg.skills, mc);
  TaskGraph g = from_sequence(std::move(seg.skills));
  g.feature_names = raw.feature_names;
  g.force_feature = force_feature_index(raw);
  g.motion = mc;
  g.ablation = mode != SegMode::bngirl;
  g.segmentation_mode = to_string(mode);
  return g;
}

inline sim::World make_world(const sim::Scenario& sc, const sim::SimParams& params = {}) {
  sim::World w(params, sc.seed);
  w.mutable_state().eef = sim::make_plan(sc.seed, sc.variation).start;
  for (const auto& a : sc.anomalies) w.inject(a);
  return w;
}

inline EpisodeLog execute(TaskGraph& g, const sim::Scenario& sc, const EngineConfig& cfg, const NoveltyOracle& oracle,
                          const EpisodeHooks& hooks = {}) {
  sim::World w = make_world(sc, cfg.sim);
  return run_episode(g, w, cfg.execution, oracle, hooks);
}

// Every logged cycle becomes a refinement frame of the skill that ran it;
// with `unconfident_only` only cycles outside the training support are kept.
inline RefinementSet refinement_from_cycles(const std::vector<LoggedCycle>& cycles, bool unconfident_only) {
  RefinementSet ref;
  for (const auto& c : cycles) {
    if (unconfident_only && c.confident) continue;
    Frame fr;
    fr.t = c.n;
    fr.s = c.s;
    fr.a = c.xi_meas.head(2);
    fr.f = c.f;
    ref.entries.push_back({c.skill_id, std::move(fr)});
  }
  return ref;
}

inline std::vector<LoggedCycle> logged_cycles(const EpisodeLog& log) {
  std::vector<LoggedCycle> out;
  for (const auto& r : log.cycles) out.push_back({r.n, r.skill_id, r.s, r.xi_meas, r.f, r.confident, r.anomalous});
  return out;
}

// Segments a recovery demonstration, fits its skills with the nominal
// covariance floors and stores the chain under (skill, label).
inline std::vector<int> teach_recovery(TaskGraph& g, int skill_id, int label, const ObservationSet& recovery,
                                       const SamplerConfig& cfg, const ProgressFn& progress = {}) {
  Segmentation seg = segment_corpus(recovery, cfg, progress);
  const SkillModel& owner = g.skill(skill_id);
  for (auto& sk : seg.skills) {
    sk.floor = owner.floor;
    sk.memory.floor = owner.memory.floor;
    fit_skill(sk, g.motion);
  }
  return append_recovery(g, skill_id, label, std::move(seg.skills));
}

inline metrics::EpisodeVerdicts verdicts_of(const EpisodeLog& log, std::optional<int> onset, double dt) {
  metrics::EpisodeVerdicts v;
  v.onset = onset;
  v.dt = dt;
  for (const auto& c : log.cycles) {
    v.confident.push_back(c.confident);
    v.anomalous.push_back(c.anomalous);
  }
  if (!log.anomalies.empty()) v.detection = log.anomalies.front().detected;
  return v;
}

// First cycle that measured a contact force, or -1.
inline int contact_cycle(const EpisodeLog& log, int force_feature) {
  if (force_feature < 0) return -1;
  for (const auto& c : log.cycles)
    if (c.f(force_feature) > 0.0) return c.n;
  return -1;
}

// Fault episode i of a benchmark: contact faults start 10 + 3i cycles after
// the contact onset of the nominal run with the same seed, external pushes
// at cycle 10 + 2i while the end effector is still in free space.
inline sim::Scenario fault_scenario(const EpisodeLog& nominal, int force_feature, std::uint64_t seed, double variation,
                                    sim::AnomalyKind kind, int i) {
  int onset = 10 + 2 * i;
  if (kind != sim::AnomalyKind::external_push) {
    const int contact = contact_cycle(nominal, force_feature);
    if (contact < 0) throw ValidationError("fault benchmark: the nominal run never reaches contact");
    onset = contact + 10 + 3 * i;
  }
  return {seed, variation, {{kind, onset, sim::default_magnitude(kind)}}};
}

struct FaultBenchmark {
  metrics::AnomReport report;
  std::vector<sim::Scenario> scenarios;
  std::vector<EpisodeLog> logs;
};

// Runs `episodes` fault episodes of one kind on fresh copies of the model,
// with no novelty oracle.
inline FaultBenchmark fault_benchmark(const TaskGraph& g, const EngineConfig& cfg, sim::AnomalyKind kind, int episodes,
                                      double variation, std::uint64_t seed0) {
  FaultBenchmark out;
  std::vector<metrics::EpisodeVerdicts> vs;
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(i);
    TaskGraph gn = g;
    const EpisodeLog nominal = execute(gn, {seed, variation, {}}, cfg, {});
    const sim::Scenario sc = fault_scenario(nominal, g.force_feature, seed, variation, kind, i);
    TaskGraph gf = g;
    EpisodeLog log = execute(gf, sc, cfg, {});
    vs.push_back(verdicts_of(log, sc.anomalies.front().onset, cfg.sim.dt));
    out.scenarios.push_back(sc);
    out.logs.push_back(std::move(log));
  }
  out.report = metrics::anom_report(vs);
  return out;
}

}  // namespace lfd
