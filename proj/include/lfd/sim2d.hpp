#pragma once

// Deterministic 2D box-pushing world: a point end-effector pushes an
// axis-aligned box across a table edge. Provides scripted demonstrators with
// ground-truth phase labels and fault injection for monitored execution.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "core_data.hpp"

namespace lfd::sim {

struct SimParams {
  Workspace workspace;
  double edge_x = 0.7;
  double box_side = 0.1;
  Eigen::Vector2d box_start{0.5, 0.5};
  double k_push = 5.0;         // N
  double force_noise = 0.2;    // N, std-dev while in contact
  double dt = 0.01;
  double spike_gain = 2.0;     // N per cm of blocked push, default for force_spike
};

enum class AnomalyKind { force_drop, force_spike, external_push };

inline std::string to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::force_drop: return "force_drop";
    case AnomalyKind::force_spike: return "force_spike";
    case AnomalyKind::external_push: return "external_push";
  }
  return "?";
}

inline AnomalyKind anomaly_kind_from_string(const std::string& s) {
  if (s == "force_drop") return AnomalyKind::force_drop;
  if (s == "force_spike") return AnomalyKind::force_spike;
  if (s == "external_push") return AnomalyKind::external_push;
  throw SchemaError("unknown anomaly kind '" + s + "'");
}

// magnitude: force_drop = fraction of contact force lost (1 = all);
// force_spike = N per cm of blocked push; external_push = lateral N.
struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::force_drop;
  int onset = 0;
  double magnitude = 1.0;
};

inline double default_magnitude(AnomalyKind k) {
  return k == AnomalyKind::force_spike ? 2.0 : k == AnomalyKind::external_push ? 3.0 : 1.0;
}

struct WorldState {
  Eigen::Vector2d eef{0.2, 0.25};
  Eigen::Vector2d box{0.5, 0.5};
  double box_side = 0.1;
  double edge_x = 0.7;
  bool box_on_table = true;
  Eigen::Vector2d force{0.0, 0.0};
  bool in_contact = false;
  int n = 0;
};

// Realized displacement and measured force magnitude of one cycle.
struct Measurement {
  Eigen::Vector2d displacement{0.0, 0.0};
  double force = 0.0;

  Vec xi() const { return Vec{{displacement(0), displacement(1), force}}; }
};

class World {
 public:
  World() : World(SimParams{}, 0) {}
  World(SimParams params, std::uint64_t seed) : params_(std::move(params)), rng_(seed) {
    state_.box = params_.box_start;
    state_.box_side = params_.box_side;
    state_.edge_x = params_.edge_x;
  }

  const WorldState& state() const { return state_; }
  WorldState& mutable_state() { return state_; }
  const SimParams& params() const { return params_; }

  void inject(const AnomalySpec& spec) { anomalies_.push_back(spec); }
  const std::vector<AnomalySpec>& anomalies() const { return anomalies_; }

  // Features at the current state given the force measured in the last step.
  Vec features(double force_mag) const {
    return Vec{{(state_.eef - state_.box).norm(), std::abs(state_.eef(0) - state_.edge_x), force_mag}};
  }

  Measurement step(const Eigen::Vector2d& command) {
    const Eigen::Vector2d prev = state_.eef;
    Eigen::Vector2d target = prev + command;
    target = target.cwiseMax(params_.workspace.min).cwiseMin(params_.workspace.max);

    const bool spike = active(AnomalyKind::force_spike);
    double penetration = 0.0;
    Eigen::Vector2d normal{0.0, 0.0};
    bool contact = false;
    if (state_.box_on_table) contact = resolve_contact(prev, target, penetration, normal);

    update_drop(contact);
    Eigen::Vector2d force{0.0, 0.0};
    if (contact) {
      if (spike) {
        blocked_push_ += penetration;
        target -= penetration * normal;  // box immobilized, EEF held at the face
      } else {
        state_.box += penetration * normal;
      }
      double mag = params_.k_push + noise_(rng_) * params_.force_noise;
      if (spike) mag += spike_magnitude() * 100.0 * blocked_push_;
      if (drop_active_) mag *= (1.0 - drop_fraction_);
      force = -mag * normal;
    }
    state_.eef = target;

    if (state_.box_on_table && state_.box(0) > state_.edge_x) state_.box_on_table = false;
    if (!state_.box_on_table) force.setZero();

    if (const AnomalySpec* push = find_active(AnomalyKind::external_push)) force += Eigen::Vector2d(0.0, push->magnitude);

    state_.force = force;
    state_.in_contact = contact && state_.box_on_table;
    ++state_.n;
    return Measurement{state_.eef - prev, force.norm()};
  }

 private:
  bool active(AnomalyKind k) const { return find_active(k) != nullptr; }

  const AnomalySpec* find_active(AnomalyKind k) const {
    for (const auto& a : anomalies_)
      if (a.kind == k && state_.n >= a.onset) return &a;
    return nullptr;
  }

  double spike_magnitude() const {
    const AnomalySpec* a = find_active(AnomalyKind::force_spike);
    return a ? a->magnitude : params_.spike_gain;
  }

  // A force drop starts at onset and clears once contact has been broken.
  void update_drop(bool contact) {
    const AnomalySpec* a = find_active(AnomalyKind::force_drop);
    if (!a || drop_cleared_) return;
    if (!drop_active_) {
      drop_active_ = true;
      drop_fraction_ = a->magnitude;
    }
    if (contact) drop_seen_contact_ = true;
    if (!contact && drop_seen_contact_) {
      drop_active_ = false;
      drop_cleared_ = true;
    }
  }

  // Pushing contact with any box face the EEF moves into.
  bool resolve_contact(const Eigen::Vector2d& prev, const Eigen::Vector2d& target, double& penetration,
                       Eigen::Vector2d& normal) const {
    const double half = 0.5 * state_.box_side;
    const double tol = 1e-9;
    for (int axis = 0; axis < 2; ++axis) {
      const int other = 1 - axis;
      if (std::abs(target(other) - state_.box(other)) >= half) continue;
      for (double side : {-1.0, 1.0}) {
        const double face = state_.box(axis) + side * half;
        const bool outside_before = side < 0 ? prev(axis) <= face + tol : prev(axis) >= face - tol;
        const double depth = side < 0 ? target(axis) - face : face - target(axis);
        if (outside_before && depth > tol) {
          penetration = depth;
          normal.setZero();
          normal(axis) = -side;
          return true;
        }
      }
    }
    return false;
  }

  SimParams params_;
  WorldState state_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};
  std::vector<AnomalySpec> anomalies_;
  double blocked_push_ = 0.0;
  bool drop_active_ = false;
  bool drop_seen_contact_ = false;
  bool drop_cleared_ = false;
  double drop_fraction_ = 1.0;
};

inline json world_state_to_json(const WorldState& w) {
  return {{"eef", detail::from_vec(w.eef)}, {"box", detail::from_vec(w.box)}, {"box_side", w.box_side},
          {"edge_x", w.edge_x}, {"box_on_table", w.box_on_table}, {"force", detail::from_vec(w.force)},
          {"in_contact", w.in_contact}, {"n", w.n}};
}

inline WorldState world_state_from_json(const json& j) {
  WorldState w;
  w.eef = detail::to_vec(j.at("eef"), "state.eef");
  w.box = detail::to_vec(j.at("box"), "state.box");
  w.box_side = j.at("box_side").get<double>();
  w.edge_x = j.at("edge_x").get<double>();
  w.box_on_table = j.at("box_on_table").get<bool>();
  w.force = detail::to_vec(j.at("force"), "state.force");
  w.in_contact = j.at("in_contact").get<bool>();
  w.n = j.at("n").get<int>();
  return w;
}

struct Scenario {
  std::uint64_t seed = 0;
  double variation = 0.0;
  std::vector<AnomalySpec> anomalies;
};

inline json scenario_to_json(const Scenario& sc) {
  json an = json::array();
  for (const auto& a : sc.anomalies) an.push_back({{"kind", to_string(a.kind)}, {"onset", a.onset}, {"magnitude", a.magnitude}});
  return {{"seed", sc.seed}, {"variation", sc.variation}, {"anomalies", an}};
}

inline Scenario scenario_from_json(const json& j) {
  Scenario sc;
  if (!j.is_object() || !j.contains("seed")) throw SchemaError("scenario: missing 'seed'");
  sc.seed = j.at("seed").get<std::uint64_t>();
  sc.variation = j.value("variation", 0.0);
  if (j.contains("anomalies"))
    for (const auto& a : j.at("anomalies")) {
      AnomalySpec spec;
      spec.kind = anomaly_kind_from_string(a.at("kind").get<std::string>());
      spec.onset = a.at("onset").get<int>();
      spec.magnitude = a.value("magnitude", default_magnitude(spec.kind));
      if (spec.onset < 0) throw ValidationError("scenario: anomaly onset must be non-negative");
      sc.anomalies.push_back(spec);
    }
  return sc;
}

inline Scenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

// Geometry of one scripted demonstration, jittered by the variation scale.
struct DemoPlan {
  Eigen::Vector2d start{0.15, 0.42};
  double align_distance = 0.07;
  Eigen::Vector2d turning{0.85, 0.5};
  Eigen::Vector2d retract_end{0.76, 0.66};
  double approach_speed = 0.005;
  double align_speed = 0.0035;
  double push_speed = 0.0025;
  double forward_speed = 0.004;
  double retract_speed = 0.004;
};

inline DemoPlan make_plan(std::uint64_t seed, double variation) {
  DemoPlan p;
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  p.start += variation * Eigen::Vector2d(0.04 * u(rng), 0.04 * u(rng));
  p.align_distance += variation * 0.02 * u(rng);
  p.turning(0) += variation * 0.03 * u(rng);
  p.retract_end += variation * Eigen::Vector2d(0.03 * u(rng), 0.03 * u(rng));
  const double speed_scale = 1.0 + variation * 0.1 * u(rng);
  p.approach_speed *= speed_scale;
  p.align_speed *= speed_scale;
  p.push_speed *= speed_scale;
  p.forward_speed *= speed_scale;
  p.retract_speed *= speed_scale;
  return p;
}

inline Eigen::Vector2d toward(const Eigen::Vector2d& from, const Eigen::Vector2d& to, double speed) {
  const Eigen::Vector2d d = to - from;
  const double n = d.norm();
  return n <= speed ? d : Eigen::Vector2d(d * (speed / n));
}

struct LabeledDemo {
  Demonstration demo;
  std::vector<int> labels;
};

// Records one frame per cycle: state before the step, realized displacement,
// features at that state with the force measured during the step.
class Recorder {
 public:
  explicit Recorder(World& w) : world_(w) {}

  void cycle(const Eigen::Vector2d& command, int label) {
    const Vec s = world_.state().eef;
    const Vec dist_feats = world_.features(0.0);
    const Measurement m = world_.step(command);
    Frame fr;
    fr.t = static_cast<double>(demo_.frames.size()) * world_.params().dt;
    fr.s = s;
    fr.a = m.displacement;
    fr.f = dist_feats;
    fr.f(2) = m.force;
    demo_.frames.push_back(std::move(fr));
    labels_.push_back(label);
  }

  LabeledDemo finish(int id) {
    demo_.id = id;
    demo_.dt = world_.params().dt;
    return {std::move(demo_), std::move(labels_)};
  }

 private:
  World& world_;
  Demonstration demo_;
  std::vector<int> labels_;
};

// Four phases: approach and align (1), push until the box falls (2), move on
// to the turning point (3), retract toward the table (4).
inline LabeledDemo scripted_demo(std::uint64_t seed, double variation, int id = 0, const SimParams& params = {}) {
  const DemoPlan plan = make_plan(seed, variation);
  World world(params, seed);
  world.mutable_state().eef = plan.start;
  Recorder rec(world);
  const Eigen::Vector2d contact_point(params.box_start(0) - 0.5 * params.box_side, params.box_start(1));
  const Eigen::Vector2d align = contact_point + plan.align_distance * (plan.start - contact_point).normalized();

  // straight approach that slows down for the final alignment with the face
  while ((world.state().eef - align).norm() > 1e-12) rec.cycle(toward(world.state().eef, align, plan.approach_speed), 1);
  while ((world.state().eef - contact_point).norm() > 1e-12)
    rec.cycle(toward(world.state().eef, contact_point, plan.align_speed), 1);
  while (world.state().box_on_table) rec.cycle(Eigen::Vector2d(plan.push_speed, 0.0), 2);
  while ((world.state().eef - plan.turning).norm() > 1e-12)
    rec.cycle(toward(world.state().eef, plan.turning, plan.forward_speed), 3);
  while ((world.state().eef - plan.retract_end).norm() > 1e-12)
    rec.cycle(toward(world.state().eef, plan.retract_end, plan.retract_speed), 4);
  rec.cycle(Eigen::Vector2d::Zero(), 4);
  return rec.finish(id);
}

inline ObservationSet make_corpus(std::vector<Demonstration> demos, const SimParams& params = {}) {
  ObservationSet set;
  set.dt = params.dt;
  set.feature_names = {"dist_box", "dist_edge", "force"};
  set.workspace = params.workspace;
  set.demos = std::move(demos);
  return set;
}

inline ObservationSet make_corpus(const std::vector<LabeledDemo>& demos, const SimParams& params = {}) {
  std::vector<Demonstration> ds;
  for (const auto& d : demos) ds.push_back(d.demo);
  return make_corpus(std::move(ds), params);
}

// Drives a state sequence through the world so that features come from the
// simulator; used for drawn demonstrations. A recovery is replayed from the
// world state it starts in.
inline Demonstration replay_states(const std::vector<Eigen::Vector2d>& states, int id, const SimParams& params = {},
                                   std::uint64_t seed = 0, const std::optional<WorldState>& from = {}) {
  if (states.size() < 2) throw ValidationError("demo " + std::to_string(id) + ": N_d >= 2 violated");
  World world(params, seed);
  if (from) {
    WorldState st = *from;
    st.force.setZero();
    st.in_contact = false;
    st.n = 0;
    world.mutable_state() = st;
  }
  world.mutable_state().eef = states.front().cwiseMax(params.workspace.min).cwiseMin(params.workspace.max);
  Recorder rec(world);
  for (std::size_t i = 1; i < states.size(); ++i) {
    const Eigen::Vector2d goal = states[i].cwiseMax(params.workspace.min).cwiseMin(params.workspace.max);
    rec.cycle(goal - world.state().eef, 0);
  }
  rec.cycle(Eigen::Vector2d::Zero(), 0);
  return rec.finish(id).demo;
}

// Recovery for a lost contact force: retreat diagonally away from the box
// face, drop back to the face height and re-approach it head-on. Starts from
// the given world state (the fault clears once contact is broken).
inline LabeledDemo scripted_recovery(const WorldState& at_halt, std::uint64_t seed, double variation, int id = 0,
                                     const SimParams& params = {}) {
  World world(params, seed);
  WorldState st = at_halt;
  st.force.setZero();
  st.in_contact = false;
  st.n = 0;
  world.mutable_state() = st;
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double back = 0.12 + variation * 0.01 * u(rng);
  const double speed = 0.003 * (1.0 + variation * 0.1 * u(rng));
  const Eigen::Vector2d face(st.box(0) - 0.5 * st.box_side, st.box(1));
  const Eigen::Vector2d retreat(face(0) - back, face(1) + 0.1);
  const Eigen::Vector2d realign(face(0) - back, face(1));
  Recorder rec(world);
  while ((world.state().eef - retreat).norm() > 1e-12) rec.cycle(toward(world.state().eef, retreat, speed), 1);
  while ((world.state().eef - realign).norm() > 1e-12) rec.cycle(toward(world.state().eef, realign, speed), 2);
  while ((world.state().eef - face).norm() > 1e-12) rec.cycle(toward(world.state().eef, face, speed), 3);
  rec.cycle(Eigen::Vector2d::Zero(), 3);
  return rec.finish(id);
}

}  // namespace lfd::sim
