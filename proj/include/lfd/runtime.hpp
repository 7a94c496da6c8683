#pragma once

// Monitored skill execution: GMR commands, the two-step anomaly test with
// debounce, subgoal monitoring, anomaly typing and recovery routing.

#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sim2d.hpp"
#include "task_graph.hpp"

namespace lfd {

enum class Trigger { none, anomaly, refinement };

struct MonitorState {
  int anomalous_run = 0;
  int unconfident_run = 0;
  double goal_prev = std::numeric_limits<double>::infinity();
  void reset() {
    anomalous_run = unconfident_run = 0;
    goal_prev = std::numeric_limits<double>::infinity();
  }
};

struct MonitorVerdict {
  double D = 0.0;
  double log_ps = 0.0;
  bool confident = false;
  bool anomalous = false;  // only ever set on confident cycles
  int anomalous_run = 0;
  int unconfident_run = 0;
  Trigger trigger = Trigger::none;
};

// Confidence gate first (input density vs P_min), anomaly test only when
// confident; either condition held for ε consecutive cycles triggers.
inline MonitorVerdict monitor(const SkillModel& sk, const Conditioned& c, const Vec& xi, MonitorState& ms) {
  MonitorVerdict v;
  v.log_ps = c.log_ps;
  v.D = mahalanobis(c, xi);
  v.confident = c.log_ps >= sk.thresholds.log_p_min;
  if (v.confident) {
    ms.unconfident_run = 0;
    v.anomalous = v.D > sk.thresholds.d_max;
    ms.anomalous_run = v.anomalous ? ms.anomalous_run + 1 : 0;
  } else {
    ms.anomalous_run = 0;
    ++ms.unconfident_run;
  }
  v.anomalous_run = ms.anomalous_run;
  v.unconfident_run = ms.unconfident_run;
  const int eps = sk.thresholds.eps_cycles;
  if (ms.anomalous_run >= eps) v.trigger = Trigger::anomaly;
  else if (ms.unconfident_run >= eps) v.trigger = Trigger::refinement;
  return v;
}

inline MonitorVerdict monitor(const SkillModel& sk, const Vec& s, const Vec& xi, MonitorState& ms,
                              CondCovariance cov = CondCovariance::residual) {
  return monitor(sk, condition(sk.gmm, s, cov), xi, ms);
}

struct Command {
  Vec displacement;
  std::optional<double> force;
};

inline Command split_command(const Vec& xi_hat, Eigen::Index state_dim) {
  Command c;
  c.displacement = xi_hat.head(state_dim);
  if (xi_hat.size() > state_dim) c.force = xi_hat(state_dim);
  return c;
}

inline Command step(const SkillModel& sk, const Vec& s, CondCovariance cov = CondCovariance::residual) {
  return split_command(condition(sk.gmm, s, cov).mean, sk.in_dim());
}

struct CycleRecord {
  int n = 0;
  Vec s, xi_cmd, xi_meas;
  Vec f;  // task features at s with the force measured in this cycle
  double D = 0.0, d_max = 0.0, log_ps = 0.0, log_p_min = 0.0;
  bool confident = false, anomalous = false;
  int skill_id = 0;
  std::vector<std::string> events;
};

struct AnomalyEvent {
  int skill = 0;
  int onset = 0;  // first cycle of the debounce run
  int detected = 0;
  Mat window;
  int label = 0;
  bool novel = false;
  bool queried = false;
  bool unconfirmed = false;
};

struct EpisodeEvent {
  int n = 0;
  std::string type;  // subgoal, anomaly, recovery_start, resume, refinement, halt, success, timeout, stopped
  int skill = 0;
  int label = 0;
  std::string detail;
};

enum class Outcome { success, anomaly_halt, refinement_halt, timeout, stopped };

inline std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::success: return "success";
    case Outcome::anomaly_halt: return "anomaly_halt";
    case Outcome::refinement_halt: return "refinement_halt";
    case Outcome::timeout: return "timeout";
    case Outcome::stopped: return "stopped";
  }
  return "?";
}

struct EpisodeLog {
  std::vector<CycleRecord> cycles;
  std::vector<EpisodeEvent> events;
  std::vector<AnomalyEvent> anomalies;
  std::vector<int> subgoals_reached;  // skill ids in order
  Outcome outcome = Outcome::timeout;
  sim::WorldState final_state;

  int anomaly_triggers() const { return static_cast<int>(anomalies.size()); }
  int refinement_triggers() const {
    int c = 0;
    for (const auto& e : events) c += e.type == "refinement";
    return c;
  }
};

struct EpisodeHooks {
  // Called at every cycle boundary before the command; return false to stop.
  std::function<bool(sim::World&, int n)> before_cycle;
  std::function<void(const CycleRecord&)> on_cycle;
  std::function<void(const AnomalyEvent&)> on_anomaly;
};

struct RunConfig {
  int max_cycles = 3000;
};

// Runs the task graph from its root. Anomaly classification updates the
// owning skill's memory, so the graph is taken by reference.
inline EpisodeLog run_episode(TaskGraph& g, sim::World& world, const RunConfig& rc, const NoveltyOracle& oracle,
                              const EpisodeHooks& hooks = {}) {
  EpisodeLog log;
  const CondCovariance cov = g.motion.covariance;
  bool recovering = false;
  std::size_t nom = 0, rec = 0;
  std::vector<int> chain;
  MonitorState ms;
  std::deque<Vec> recent;
  bool done = false;
  int n = 0;
  auto event = [&](CycleRecord& r, EpisodeEvent e) {
    e.n = r.n;
    r.events.push_back(e.type);
    log.events.push_back(std::move(e));
  };
  for (; n < rc.max_cycles && !done; ++n) {
    if (hooks.before_cycle && !hooks.before_cycle(world, n)) {
      log.outcome = Outcome::stopped;
      log.events.push_back({n, "stopped", 0, 0, ""});
      done = true;
      break;
    }
    const int sid = recovering ? chain[rec] : g.nominal[nom];
    const Vec s = world.state().eef;
    const Conditioned c = condition(g.skill(sid).gmm, s, cov);
    Vec f = world.features(0.0);
    const sim::Measurement m = world.step(c.mean.head(2));
    f(2) = m.force;
    const Vec xi = m.xi().head(c.mean.size());
    const SkillModel& sk = g.skill(sid);
    const MonitorVerdict v = monitor(sk, c, xi, ms);
    // A subgoal completes at the closest approach inside its region.
    const double dg = sk.goal.distance(world.state().eef);
    const bool reached = dg <= sk.goal_d_max && dg >= ms.goal_prev - 1e-3 * sk.goal_d_max;
    ms.goal_prev = dg;

    CycleRecord r{n, s, c.mean, xi, f, v.D, sk.thresholds.d_max, v.log_ps, sk.thresholds.log_p_min, v.confident, v.anomalous, sid, {}};
    recent.push_back(xi);
    while (static_cast<int>(recent.size()) > sk.thresholds.eps_cycles) recent.pop_front();

    if (v.trigger == Trigger::anomaly) {
      AnomalyEvent a;
      a.skill = sid;
      a.detected = n;
      a.onset = n - sk.thresholds.eps_cycles + 1;
      a.window = Mat(static_cast<Eigen::Index>(recent.size()), xi.size());
      for (std::size_t i = 0; i < recent.size(); ++i) a.window.row(static_cast<Eigen::Index>(i)) = recent[i].transpose();
      const Classification cl = classify_anomaly(a.window, g.skill(sid).memory, oracle);
      a.label = cl.label;
      a.novel = cl.novel;
      a.queried = cl.queried;
      a.unconfirmed = cl.unconfirmed;
      log.anomalies.push_back(a);
      if (hooks.on_anomaly) hooks.on_anomaly(a);
      event(r, {0, "anomaly", sid, cl.label, cl.queried ? "novelty query" : ""});
      const std::vector<int>* branch = !recovering && cl.label > 0 ? g.recovery(sid, cl.label) : nullptr;
      if (branch) {
        recovering = true;
        chain = *branch;
        rec = 0;
        ms.reset();
        recent.clear();
        event(r, {0, "recovery_start", sid, cl.label, ""});
      } else {
        log.outcome = Outcome::anomaly_halt;
        event(r, {0, "halt", sid, cl.label,
                  cl.unconfirmed ? "novel anomaly not confirmed" : cl.label > 0 ? "no recovery behavior for this anomaly" : ""});
        done = true;
      }
    } else if (v.trigger == Trigger::refinement) {
      log.outcome = Outcome::refinement_halt;
      event(r, {0, "refinement", sid, 0, "outside training support"});
      done = true;
    } else if (reached) {
      event(r, {0, "subgoal", sid, 0, ""});
      log.subgoals_reached.push_back(sid);
      ms.reset();
      recent.clear();
      if (!recovering) {
        if (++nom == g.nominal.size()) {
          log.outcome = Outcome::success;
          event(r, {0, "success", sid, 0, ""});
          done = true;
        }
      } else if (++rec == chain.size()) {
        recovering = false;
        const auto next = next_after_recovery(g, world.state().eef);
        if (!next) {
          log.outcome = Outcome::anomaly_halt;
          event(r, {0, "halt", sid, 0, "no nominal skill is confident after recovery"});
          done = true;
        } else {
          nom = static_cast<std::size_t>(g.nominal_index(*next));
          event(r, {0, "resume", *next, 0, ""});
        }
      }
    }
    if (hooks.on_cycle) hooks.on_cycle(r);
    log.cycles.push_back(std::move(r));
  }
  if (!done) {
    log.outcome = Outcome::timeout;
    log.events.push_back({n, "timeout", 0, 0, ""});
  }
  log.final_state = world.state();
  return log;
}

inline json cycle_to_json(const CycleRecord& r) {
  return {{"n", r.n},
          {"s", detail::from_vec(r.s)},
          {"xi_cmd", detail::from_vec(r.xi_cmd)},
          {"xi_meas", detail::from_vec(r.xi_meas)},
          {"f", detail::from_vec(r.f)},
          {"D", r.D},
          {"D_max", r.d_max},
          {"log_P_s", r.log_ps},
          {"log_P_min", r.log_p_min},
          {"flags", {{"confident", r.confident}, {"anomalous", r.anomalous}}},
          {"skill_id", r.skill_id},
          {"events", r.events}};
}

inline json event_to_json(const EpisodeEvent& e) {
  return {{"n", e.n}, {"type", e.type}, {"skill", e.skill}, {"label", e.label}, {"detail", e.detail}};
}

inline json anomaly_to_json(const AnomalyEvent& a) {
  return {{"skill", a.skill},     {"onset", a.onset},   {"detected", a.detected},       {"label", a.label},
          {"novel", a.novel},     {"queried", a.queried}, {"unconfirmed", a.unconfirmed}, {"window", detail::from_mat(a.window)}};
}

inline json episode_summary(const EpisodeLog& log) {
  json ev = json::array(), an = json::array();
  for (const auto& e : log.events) ev.push_back(event_to_json(e));
  for (const auto& a : log.anomalies) an.push_back(anomaly_to_json(a));
  return {{"events", ev},
          {"anomalies", an},
          {"outcome", to_string(log.outcome)},
          {"subgoals_reached", log.subgoals_reached},
          {"final_state", sim::world_state_to_json(log.final_state)}};
}

// JSON lines: one record per cycle, then one summary record with the events.
inline std::string episode_to_jsonl(const EpisodeLog& log) {
  std::string out;
  for (const auto& r : log.cycles) out += cycle_to_json(r).dump() + "\n";
  out += episode_summary(log).dump() + "\n";
  return out;
}

inline void save_episode(const EpisodeLog& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << episode_to_jsonl(log);
}

// Cycle records of a saved log (skill id, state, measured output), enough to
// build refinement data.
struct LoggedCycle {
  int n = 0;
  int skill_id = 0;
  Vec s, xi_meas, f;
  bool confident = false, anomalous = false;
};

inline std::vector<LoggedCycle> load_episode_cycles(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<LoggedCycle> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("n")) continue;
    LoggedCycle c;
    c.n = j.at("n").get<int>();
    c.skill_id = j.at("skill_id").get<int>();
    c.s = detail::to_vec(j.at("s"), "log.s");
    c.xi_meas = detail::to_vec(j.at("xi_meas"), "log.xi_meas");
    c.f = detail::to_vec(j.at("f"), "log.f");
    c.confident = j.at("flags").at("confident").get<bool>();
    c.anomalous = j.at("flags").at("anomalous").get<bool>();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace lfd
