#pragma once

// Task structure: the nominal skill chain, label-keyed recovery branches,
// re-entry after recovery, refinement merging and the task-model file.

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "skill.hpp"

namespace lfd {

inline constexpr int kTaskModelVersion = 1;

struct TaskGraph {
  std::map<int, SkillModel> skills;  // by id, nominal and recovery
  std::vector<int> nominal;          // chain order; last is terminal
  // owning skill -> anomaly label -> chain history (last entry is active)
  std::map<int, std::map<int, std::vector<std::vector<int>>>> branches;
  std::vector<std::string> feature_names;
  int force_feature = -1;
  MotionConfig motion;
  bool ablation = false;
  std::string segmentation_mode = "bngirl";

  int root() const { return nominal.front(); }
  bool is_nominal(int id) const { return std::find(nominal.begin(), nominal.end(), id) != nominal.end(); }
  int nominal_index(int id) const {
    return static_cast<int>(std::find(nominal.begin(), nominal.end(), id) - nominal.begin());
  }
  const SkillModel& skill(int id) const {
    const auto it = skills.find(id);
    if (it == skills.end()) throw std::out_of_range("task graph: unknown skill " + std::to_string(id));
    return it->second;
  }
  SkillModel& skill(int id) { return const_cast<SkillModel&>(std::as_const(*this).skill(id)); }
  int next_id() const { return skills.empty() ? 1 : skills.rbegin()->first + 1; }

  const std::vector<int>* recovery(int skill_id, int label) const {
    const auto a = branches.find(skill_id);
    if (a == branches.end()) return nullptr;
    const auto b = a->second.find(label);
    return b == a->second.end() || b->second.empty() ? nullptr : &b->second.back();
  }
};

inline TaskGraph from_sequence(std::vector<SkillModel> ordered) {
  if (ordered.empty()) throw std::invalid_argument("task graph: empty skill sequence");
  TaskGraph g;
  for (auto& s : ordered) {
    if (g.skills.count(s.id)) throw std::invalid_argument("task graph: duplicate skill id " + std::to_string(s.id));
    g.nominal.push_back(s.id);
    g.skills.emplace(s.id, std::move(s));
  }
  return g;
}

// Stores a recovery chain under (skill, label); a repeated key keeps the
// earlier chains as history. Recovery skills cannot own branches.
inline std::vector<int> append_recovery(TaskGraph& g, int skill_id, int label, std::vector<SkillModel> chain) {
  if (!g.skills.count(skill_id)) throw std::invalid_argument("append_recovery: unknown skill " + std::to_string(skill_id));
  if (!g.is_nominal(skill_id))
    throw std::invalid_argument("append_recovery: skill " + std::to_string(skill_id) + " is a recovery skill; nested branches are not supported");
  if (chain.empty()) throw std::invalid_argument("append_recovery: empty recovery chain");
  if (label < 1 || label > g.skill(skill_id).memory.max_label())
    throw std::invalid_argument("append_recovery: label " + std::to_string(label) + " is not registered for skill " +
                                std::to_string(skill_id));
  std::vector<int> ids;
  for (auto& s : chain) {
    s.id = g.next_id();
    ids.push_back(s.id);
    g.skills.emplace(s.id, std::move(s));
  }
  g.branches[skill_id][label].push_back(ids);
  return ids;
}

// Nominal skill with the highest input density at s; ties go to the earlier
// skill. Empty when s is below every skill's confidence threshold.
inline std::optional<int> next_after_recovery(const TaskGraph& g, const Vec& s) {
  std::optional<int> best;
  double best_lp = -std::numeric_limits<double>::infinity();
  bool any_confident = false;
  for (int id : g.nominal) {
    const SkillModel& sk = g.skill(id);
    const double lp = sk.gmm.log_input_density(s);
    if (lp >= sk.thresholds.log_p_min) any_confident = true;
    if (!best || lp > best_lp) best = id, best_lp = lp;
  }
  if (!any_confident) return std::nullopt;
  return best;
}

// Extends each skill's observations, refits its mixture and recalibrates.
// D_max never decreases so a merge cannot turn known data into anomalies.
inline void merge_refinement(TaskGraph& g, const RefinementSet& ref) {
  if (ref.empty()) return;
  std::map<int, std::vector<const Frame*>> by_skill;
  for (const auto& e : ref.entries) {
    if (!g.skills.count(e.skill)) throw std::invalid_argument("merge_refinement: unknown skill " + std::to_string(e.skill));
    by_skill[e.skill].push_back(&e.frame);
  }
  for (const auto& [id, frames] : by_skill) {
    SkillModel& sk = g.skill(id);
    const Eigen::Index n0 = sk.rows.rows();
    sk.rows.conservativeResize(n0 + static_cast<Eigen::Index>(frames.size()), Eigen::NoChange);
    sk.features.conservativeResize(n0 + static_cast<Eigen::Index>(frames.size()), Eigen::NoChange);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      sk.rows.row(n0 + static_cast<Eigen::Index>(i)) = row_of(*frames[i], g.force_feature).transpose();
      sk.features.row(n0 + static_cast<Eigen::Index>(i)) = frames[i]->f.transpose();
    }
    const double prev = sk.thresholds.d_max;
    fit_skill(sk, g.motion);
    sk.thresholds.d_max = std::max(sk.thresholds.d_max, prev);
  }
}

namespace detail {

inline void check_fields(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw SchemaError(where + ": unknown field '" + key + "'");
  }
  for (const char* a : allowed)
    if (!j.contains(a)) throw SchemaError(where + ": missing field '" + std::string(a) + "'");
}

}  // namespace detail

inline json motion_to_json(const MotionConfig& m) {
  return {{"components", m.components},
          {"reg", m.reg},
          {"anomaly_reg", m.anomaly_reg},
          {"state_std", m.state_std},
          {"eps_cycles", m.eps_cycles},
          {"covariance", m.covariance == CondCovariance::residual ? "residual" : "explained"},
          {"seed", m.seed}};
}

inline MotionConfig motion_from_json(const json& j) {
  detail::check_fields(j, {"components", "reg", "anomaly_reg", "state_std", "eps_cycles", "covariance", "seed"}, "motion");
  MotionConfig m;
  m.components = j.at("components").get<int>();
  m.reg = j.at("reg").get<double>();
  m.anomaly_reg = j.at("anomaly_reg").get<double>();
  m.state_std = j.at("state_std").get<double>();
  m.eps_cycles = j.at("eps_cycles").get<int>();
  const auto cov = j.at("covariance").get<std::string>();
  if (cov != "residual" && cov != "explained") throw SchemaError("motion.covariance: unknown value '" + cov + "'");
  m.covariance = cov == "residual" ? CondCovariance::residual : CondCovariance::explained;
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

inline json skill_to_json(const SkillModel& s) {
  json sub = json::object();
  for (const auto& [d, g] : s.subgoals) sub[std::to_string(d)] = detail::from_vec(g);
  return {{"id", s.id},
          {"rows", detail::from_mat(s.rows)},
          {"features", detail::from_mat(s.features)},
          {"goal", region_to_json(s.goal)},
          {"goal_d_max", s.goal_d_max},
          {"constraint", region_to_json(s.constraint)},
          {"subgoals", sub},
          {"partial", s.partial},
          {"floor", detail::from_vec(s.floor)},
          {"gmm", gmm_to_json(s.gmm)},
          {"thresholds", thresholds_to_json(s.thresholds)},
          {"anomaly_memory", memory_to_json(s.memory)}};
}

inline SkillModel skill_from_json(const json& j) {
  detail::check_fields(j, {"id", "rows", "features", "goal", "goal_d_max", "constraint", "subgoals", "partial", "floor", "gmm",
                           "thresholds", "anomaly_memory"},
                       "skill");
  SkillModel s;
  s.id = j.at("id").get<int>();
  const std::string where = "skill " + std::to_string(s.id);
  s.rows = detail::to_mat(j.at("rows"), where + ".rows");
  s.features = detail::to_mat(j.at("features"), where + ".features");
  detail::check_fields(j.at("goal"), {"mu", "sigma"}, where + ".goal");
  s.goal = region_from_json(j.at("goal"), where + ".goal");
  s.goal_d_max = j.at("goal_d_max").get<double>();
  detail::check_fields(j.at("constraint"), {"mu", "sigma"}, where + ".constraint");
  s.constraint = region_from_json(j.at("constraint"), where + ".constraint");
  for (const auto& [d, g] : j.at("subgoals").items()) s.subgoals[std::stoi(d)] = detail::to_vec(g, where + ".subgoals");
  s.partial = j.at("partial").get<bool>();
  s.floor = detail::to_vec(j.at("floor"), where + ".floor");
  detail::check_fields(j.at("gmm"), {"in_dim", "components"}, where + ".gmm");
  for (const auto& c : j.at("gmm").at("components")) detail::check_fields(c, {"weight", "mean", "cov"}, where + ".gmm.component");
  s.gmm = gmm_from_json(j.at("gmm"));
  detail::check_fields(j.at("thresholds"), {"d_max", "log_p_min", "eps_cycles"}, where + ".thresholds");
  s.thresholds = thresholds_from_json(j.at("thresholds"));
  detail::check_fields(j.at("anomaly_memory"), {"windows", "labels", "floor"}, where + ".anomaly_memory");
  s.memory = memory_from_json(j.at("anomaly_memory"));
  return s;
}

inline json graph_to_json(const TaskGraph& g) {
  json skills = json::array();
  for (const auto& [id, s] : g.skills) skills.push_back(skill_to_json(s));
  json branches = json::array();
  for (const auto& [sid, by_label] : g.branches)
    for (const auto& [label, history] : by_label) branches.push_back({{"skill", sid}, {"label", label}, {"history", history}});
  return {{"format", "lfd-task-model"},
          {"version", kTaskModelVersion},
          {"feature_names", g.feature_names},
          {"force_feature", g.force_feature},
          {"segmentation_mode", g.segmentation_mode},
          {"ablation", g.ablation},
          {"motion", motion_to_json(g.motion)},
          {"skills", skills},
          {"nominal", g.nominal},
          {"branches", branches}};
}

inline TaskGraph graph_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "lfd-task-model") throw SchemaError("task model: not an lfd-task-model document");
  const int version = j.value("version", -1);
  if (version != kTaskModelVersion)
    throw SchemaError("task model: file version " + std::to_string(version) + " but this build reads version " +
                      std::to_string(kTaskModelVersion));
  detail::check_fields(j, {"format", "version", "feature_names", "force_feature", "segmentation_mode", "ablation", "motion", "skills",
                           "nominal", "branches"},
                       "task model");
  TaskGraph g;
  g.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  g.force_feature = j.at("force_feature").get<int>();
  g.segmentation_mode = j.at("segmentation_mode").get<std::string>();
  g.ablation = j.at("ablation").get<bool>();
  g.motion = motion_from_json(j.at("motion"));
  for (const auto& s : j.at("skills")) {
    SkillModel sk = skill_from_json(s);
    const int id = sk.id;
    g.skills.emplace(id, std::move(sk));
  }
  g.nominal = j.at("nominal").get<std::vector<int>>();
  if (g.nominal.empty()) throw SchemaError("task model: empty nominal chain");
  for (int id : g.nominal)
    if (!g.skills.count(id)) throw SchemaError("task model: nominal chain references unknown skill " + std::to_string(id));
  for (const auto& b : j.at("branches")) {
    detail::check_fields(b, {"skill", "label", "history"}, "task model.branches");
    auto history = b.at("history").get<std::vector<std::vector<int>>>();
    for (const auto& chain : history)
      for (int id : chain)
        if (!g.skills.count(id)) throw SchemaError("task model: branch references unknown skill " + std::to_string(id));
    g.branches[b.at("skill").get<int>()][b.at("label").get<int>()] = std::move(history);
  }
  return g;
}

inline void save_graph(const TaskGraph& g, const std::string& path) { write_json_file(path, graph_to_json(g)); }
inline TaskGraph load_graph(const std::string& path) { return graph_from_json(read_json_file(path)); }

}  // namespace lfd
