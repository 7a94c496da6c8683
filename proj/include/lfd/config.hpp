#pragma once

// Engine configuration file: every numeric default of the pipeline in one
// JSON document. Fields are optional; unknown fields are rejected.

#include <string>

#include "bng_irl.hpp"
#include "runtime.hpp"
#include "sim2d.hpp"
#include "skill.hpp"
#include "task_graph.hpp"

namespace lfd {

struct EngineConfig {
  SamplerConfig sampler;
  MotionConfig motion;
  RunConfig execution;
  sim::SimParams sim;
};

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw SchemaError(where + ": unknown field '" + key + "'");
  }
}

}  // namespace detail

inline json sampler_to_json(const SamplerConfig& c) {
  return {{"gamma", c.gamma},         {"alpha", c.alpha},       {"eta", c.eta},
          {"k_init", c.k_init},       {"iterations", c.iterations}, {"burn_in", c.burn_in},
          {"chains", c.chains},       {"grid_h", c.grid_h},     {"cov_floor", c.cov_floor},
          {"smooth_window", c.smooth_window}, {"seed", c.seed}, {"mode", to_string(c.mode)},
          {"product_subgoal_term", c.product_subgoal_term}};
}

inline json config_to_json(const EngineConfig& c) {
  const auto& s = c.sim;
  return {{"sampler", sampler_to_json(c.sampler)},
          {"motion", motion_to_json(c.motion)},
          {"execution", {{"max_cycles", c.execution.max_cycles}}},
          {"sim",
           {{"edge_x", s.edge_x},
            {"box_side", s.box_side},
            {"box_start", detail::from_vec(s.box_start)},
            {"k_push", s.k_push},
            {"force_noise", s.force_noise},
            {"dt", s.dt},
            {"spike_gain", s.spike_gain}}}};
}

inline EngineConfig config_from_json(const json& j) {
  EngineConfig c;
  detail::reject_unknown(j, {"sampler", "motion", "execution", "sim"}, "config");
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    detail::reject_unknown(s, {"gamma", "alpha", "eta", "k_init", "iterations", "burn_in", "chains", "grid_h", "cov_floor",
                               "smooth_window", "seed", "mode", "product_subgoal_term"},
                           "config.sampler");
    auto& o = c.sampler;
    detail::read_opt(s, "gamma", o.gamma);
    detail::read_opt(s, "alpha", o.alpha);
    detail::read_opt(s, "eta", o.eta);
    detail::read_opt(s, "k_init", o.k_init);
    detail::read_opt(s, "iterations", o.iterations);
    detail::read_opt(s, "burn_in", o.burn_in);
    detail::read_opt(s, "chains", o.chains);
    detail::read_opt(s, "grid_h", o.grid_h);
    detail::read_opt(s, "cov_floor", o.cov_floor);
    detail::read_opt(s, "smooth_window", o.smooth_window);
    detail::read_opt(s, "seed", o.seed);
    detail::read_opt(s, "product_subgoal_term", o.product_subgoal_term);
    if (s.contains("mode")) o.mode = seg_mode_from_string(s.at("mode").get<std::string>());
  }
  if (j.contains("motion")) {
    json full = motion_to_json(c.motion);
    detail::reject_unknown(j.at("motion"), {"components", "reg", "anomaly_reg", "state_std", "eps_cycles", "covariance", "seed"},
                           "config.motion");
    full.update(j.at("motion"));
    c.motion = motion_from_json(full);
  }
  if (j.contains("execution")) {
    detail::reject_unknown(j.at("execution"), {"max_cycles"}, "config.execution");
    detail::read_opt(j.at("execution"), "max_cycles", c.execution.max_cycles);
  }
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    detail::reject_unknown(s, {"edge_x", "box_side", "box_start", "k_push", "force_noise", "dt", "spike_gain"}, "config.sim");
    auto& o = c.sim;
    detail::read_opt(s, "edge_x", o.edge_x);
    detail::read_opt(s, "box_side", o.box_side);
    detail::read_opt(s, "k_push", o.k_push);
    detail::read_opt(s, "force_noise", o.force_noise);
    detail::read_opt(s, "dt", o.dt);
    detail::read_opt(s, "spike_gain", o.spike_gain);
    if (s.contains("box_start")) o.box_start = detail::to_vec(s.at("box_start"), "config.sim.box_start");
  }
  const auto& o = c.sampler;
  if (!(o.gamma > 0.0 && o.gamma < 1.0)) throw ValidationError("config.sampler.gamma must lie in (0,1)");
  if (!(o.alpha >= 0.0)) throw ValidationError("config.sampler.alpha must be non-negative");
  if (!(o.eta > 0.0)) throw ValidationError("config.sampler.eta must be positive");
  if (!(o.grid_h > 0.0)) throw ValidationError("config.sampler.grid_h must be positive");
  if (o.iterations < 0 || o.burn_in < 0 || o.chains < 1) throw ValidationError("config.sampler: invalid iteration counts");
  if (c.motion.components < 1 || c.motion.eps_cycles < 1) throw ValidationError("config.motion: invalid component or cycle count");
  return c;
}

inline EngineConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

}  // namespace lfd
