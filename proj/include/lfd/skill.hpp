#pragma once

// Skills extracted from a MAP segmentation: ordered per-frame labels,
// subgoal and constraint regions, and the motion/anomaly model fitted on
// each skill's observations.

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "anomaly.hpp"
#include "bng_irl.hpp"
#include "gmm.hpp"

namespace lfd {

struct GaussianRegion {
  Vec mu;
  Mat sigma;

  double distance(const Vec& x) const {
    Eigen::LLT<Mat> llt(sigma);
    return std::sqrt(llt.matrixL().solve(x - mu).squaredNorm());
  }
};

struct MotionConfig {
  int components = 2;
  double reg = 1e-3;          // covariance floor, relative to pooled per-dimension variance
  double anomaly_reg = 1e-2;  // same for the anomaly-memory mixture
  double state_std = 0.0125;  // m, lower bound on the state-dimension spread (half a grid cell)
  int eps_cycles = 30;
  CondCovariance covariance = CondCovariance::residual;
  std::uint64_t seed = 1;
};

struct SkillModel {
  int id = 0;
  Mat rows;      // O_k as [s, ξ] rows in raw units
  Mat features;  // raw feature vectors of O_k
  GaussianRegion goal;
  double goal_d_max = 1.0;
  GaussianRegion constraint;
  std::map<int, Vec> subgoals;  // demo id -> subgoal state
  bool partial = false;         // missing from at least one demonstration
  Vec floor;                    // per-dimension covariance floor for the motion mixture
  GaussianMixture gmm;
  Thresholds thresholds;
  AnomalyMemory memory;

  bool subgoal_reached(const Vec& s) const { return goal.distance(s) <= goal_d_max; }
  Eigen::Index in_dim() const { return 2; }
};

// Output layout of the motion model: displacement, then the force feature if
// the corpus has one.
inline int force_feature_index(const ObservationSet& set) {
  for (std::size_t j = 0; j < set.feature_names.size(); ++j)
    if (set.feature_names[j] == "force") return static_cast<int>(j);
  return -1;
}

inline Vec output_of(const Frame& fr, int force_index) {
  Vec xi(fr.a.size() + (force_index >= 0 ? 1 : 0));
  xi.head(fr.a.size()) = fr.a;
  if (force_index >= 0) xi(fr.a.size()) = fr.f(force_index);
  return xi;
}

inline Vec row_of(const Frame& fr, int force_index) {
  const Vec xi = output_of(fr, force_index);
  Vec r(fr.s.size() + xi.size());
  r << fr.s, xi;
  return r;
}

inline Mat stack_rows(const std::vector<Vec>& v) {
  Mat m(static_cast<Eigen::Index>(v.size()), v.empty() ? 0 : v.front().size());
  for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return m;
}

// Centered median filter over an ordinal label sequence, window truncated at
// the ends.
inline std::vector<int> median_smooth(const std::vector<int>& labels, int window) {
  if (window <= 1 || labels.empty()) return labels;
  const int half = window / 2;
  const int n = static_cast<int>(labels.size());
  std::vector<int> out(labels.size()), buf;
  for (int i = 0; i < n; ++i) {
    buf.assign(labels.begin() + std::max(0, i - half), labels.begin() + std::min(n, i + half + 1));
    std::nth_element(buf.begin(), buf.begin() + static_cast<long>(buf.size() / 2), buf.end());
    out[static_cast<std::size_t>(i)] = buf[buf.size() / 2];
  }
  return out;
}

inline Mat sample_cov(const std::vector<Vec>& xs, const Vec& mu) {
  Mat c = Mat::Zero(mu.size(), mu.size());
  if (xs.size() < 2) return c;
  for (const auto& x : xs) c += (x - mu) * (x - mu).transpose();
  return c / static_cast<double>(xs.size() - 1);
}

inline Vec mean_of(const std::vector<Vec>& xs) {
  Vec m = Vec::Zero(xs.front().size());
  for (const auto& x : xs) m += x;
  return m / static_cast<double>(xs.size());
}

// Adds λ·(trace/dim)·I plus an absolute floor to keep the region SPD.
inline Mat floored(Mat c, double lambda, double absolute) {
  const double scale = std::max(c.trace() / static_cast<double>(c.rows()), 0.0);
  c += (lambda * scale + absolute) * Mat::Identity(c.rows(), c.cols());
  return 0.5 * (c + c.transpose());
}

struct Segmentation {
  std::vector<SkillModel> skills;  // nominal order, ids 1..K
  LabelMap labels;                 // demo id -> skill id per frame
  double map_logprob = 0.0;
  int raw_k = 0;  // skills in the MAP state before post-processing
};

// Subgoal of one smoothed segment: among the cells that maximize the joint
// intent likelihood of the segment's steps, the one the path reaches first
// from the segment's start. Cells further along a straight stroke tie with
// its end under the grid metric; this keeps the subgoal at the boundary.
inline CellId segment_subgoal(const DemoIntent& di, const std::vector<CellId>& path_cells, const std::set<int>& steps) {
  std::vector<double> score(di.candidates.size(), 0.0);
  for (std::size_t c = 0; c < score.size(); ++c)
    for (int p : steps) score[c] += di.loglik(p, static_cast<Eigen::Index>(c));
  const double best = *std::max_element(score.begin(), score.end());
  const std::size_t start = steps.empty() ? 0 : static_cast<std::size_t>(*steps.begin());
  std::size_t pick = 0, when = std::numeric_limits<std::size_t>::max();
  for (std::size_t c = 0; c < score.size(); ++c) {
    if (score[c] < best - 1e-9 * (1.0 + std::abs(best))) continue;
    std::size_t t = start;
    while (t < path_cells.size() && path_cells[t] != di.candidates[c]) ++t;
    if (t == path_cells.size()) t = path_cells.size() + c;  // only visited before the segment
    if (t < when) pick = c, when = t;
  }
  return di.candidates[pick];
}

// Continuous subgoal state: mean of the segment's frames inside the subgoal
// cell, else of any frame of the demo inside it, else the cell centre.
inline Vec subgoal_state(const SegmentationProblem& pb, const ObservationSet& raw, int d, const std::vector<int>& labels,
                         int id, CellId cell) {
  const auto& path = pb.paths[static_cast<std::size_t>(d)];
  const auto& frames = raw.demos[static_cast<std::size_t>(d)].frames;
  for (bool own : {true, false}) {
    std::vector<Vec> xs;
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (path.cells[static_cast<std::size_t>(path.frame_to_step[i])] == cell && (!own || labels[i] == id))
        xs.push_back(frames[i].s);
    if (!xs.empty()) return mean_of(xs);
  }
  return pb.grid.center(cell);
}

// A label that recurs within a demo after another label is split into one
// label per run; runs are matched across demos by their occurrence index.
inline void split_recurring(std::vector<std::vector<int>>& per_demo) {
  std::map<std::pair<int, int>, int> key;
  for (auto& l : per_demo) {
    std::map<int, int> runs;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const int x = l[i];
      if (i == 0 || l[i - 1] != x) ++runs[x];
      const auto k = std::make_pair(x, runs[x]);
      if (!key.count(k)) key.emplace(k, static_cast<int>(key.size()));
    }
  }
  for (auto& l : per_demo) {
    std::map<int, int> runs;
    std::vector<int> out(l.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (i == 0 || l[i - 1] != l[i]) ++runs[l[i]];
      out[i] = key.at({l[i], runs[l[i]]});
    }
    l = std::move(out);
  }
}

// Post-processing of a MAP snapshot. Skills are ordered by mean normalized
// frame position, labels are median-filtered, then regions are fitted on the
// raw corpus.
inline Segmentation extract_segments(const SegmentationProblem& pb, const ObservationSet& raw, const Snapshot& snap,
                                     const SamplerConfig& cfg) {
  Segmentation out;
  out.map_logprob = snap.logprob;
  out.raw_k = snap.K;
  const int D = pb.demo_count();

  std::vector<double> pos(static_cast<std::size_t>(snap.K), 0.0);
  std::vector<int> cnt(static_cast<std::size_t>(snap.K), 0);
  for (std::size_t i = 0; i < pb.obs.size(); ++i) {
    const auto& o = pb.obs[i];
    const double n = static_cast<double>(pb.set.demos[static_cast<std::size_t>(o.demo)].size());
    pos[static_cast<std::size_t>(snap.z[i])] += o.frame / std::max(1.0, n - 1.0);
    ++cnt[static_cast<std::size_t>(snap.z[i])];
  }
  std::vector<int> order(static_cast<std::size_t>(snap.K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pos[static_cast<std::size_t>(a)] / std::max(1, cnt[static_cast<std::size_t>(a)]) <
           pos[static_cast<std::size_t>(b)] / std::max(1, cnt[static_cast<std::size_t>(b)]);
  });
  std::vector<int> rank(static_cast<std::size_t>(snap.K));
  for (std::size_t r = 0; r < order.size(); ++r) rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);

  std::vector<std::vector<int>> per_demo(static_cast<std::size_t>(D));
  for (int d = 0; d < D; ++d) {
    for (int i : pb.obs_of_demo[static_cast<std::size_t>(d)])
      per_demo[static_cast<std::size_t>(d)].push_back(rank[static_cast<std::size_t>(snap.z[static_cast<std::size_t>(i)])]);
    per_demo[static_cast<std::size_t>(d)] = median_smooth(per_demo[static_cast<std::size_t>(d)], cfg.smooth_window);
  }

  split_recurring(per_demo);

  // A skill left with fewer frames than a motion model needs is merged into
  // the preceding skill of each demo (the following one at a demo start).
  const int fi0 = force_feature_index(raw);
  const auto row_dim = row_of(raw.demos.front().frames.front(), fi0).size();
  for (;;) {
    std::map<int, int> total;
    for (const auto& l : per_demo)
      for (int x : l) ++total[x];
    if (total.size() <= 1) break;
    int small = -1;
    for (const auto& [x, c] : total)
      if (c < row_dim + 1 && (small < 0 || c < total[small])) small = x;
    if (small < 0) break;
    bool changed = false;
    for (auto& l : per_demo) {
      for (std::size_t i = 0; i < l.size(); ++i) {
        if (l[i] != small) continue;
        std::size_t j = i;
        while (j > 0 && l[j] == small) --j;
        if (l[j] == small) {
          j = i;
          while (j + 1 < l.size() && l[j] == small) ++j;
        }
        if (l[j] != small) l[i] = l[j], changed = true;
      }
    }
    if (!changed) break;
  }

  split_recurring(per_demo);

  // Surviving skills get dense ids in order of mean normalized position.
  std::map<int, std::pair<double, int>> at;
  for (const auto& l : per_demo)
    for (std::size_t i = 0; i < l.size(); ++i) {
      auto& [p, c] = at[l[i]];
      p += static_cast<double>(i) / std::max(1.0, static_cast<double>(l.size()) - 1.0);
      ++c;
    }
  std::vector<int> alive;
  for (const auto& [x, pc] : at) alive.push_back(x);
  std::stable_sort(alive.begin(), alive.end(),
                   [&](int a, int b) { return at[a].first / at[a].second < at[b].first / at[b].second; });
  std::map<int, int> id_of;
  for (int r : alive) id_of[r] = static_cast<int>(id_of.size()) + 1;

  const int fi = fi0;
  std::vector<std::vector<Vec>> rows(id_of.size()), feats(id_of.size());
  std::vector<std::set<int>> present(id_of.size());
  for (int d = 0; d < D; ++d) {
    const auto& demo = raw.demos[static_cast<std::size_t>(d)];
    auto& l = per_demo[static_cast<std::size_t>(d)];
    for (std::size_t i = 0; i < l.size(); ++i) {
      l[i] = id_of.at(l[i]);
      const auto k = static_cast<std::size_t>(l[i] - 1);
      rows[k].push_back(row_of(demo.frames[i], fi));
      feats[k].push_back(demo.frames[i].f);
      present[k].insert(d);
    }
    out.labels[demo.id] = l;
  }

  const double cell = cfg.grid_h;
  for (int id = 1; id <= static_cast<int>(id_of.size()); ++id) {
    const auto k = static_cast<std::size_t>(id - 1);
    SkillModel sk;
    sk.id = id;
    sk.rows = stack_rows(rows[k]);
    sk.features = stack_rows(feats[k]);
    std::vector<Vec> goals;
    for (int d = 0; d < D; ++d) {
      if (!present[k].count(d)) continue;
      const auto& l = per_demo[static_cast<std::size_t>(d)];
      std::set<int> steps;
      for (std::size_t i = 0; i < l.size(); ++i)
        if (l[i] == id) steps.insert(pb.obs[static_cast<std::size_t>(pb.obs_of_demo[static_cast<std::size_t>(d)][i])].step);
      const CellId cell = segment_subgoal(pb.intent[static_cast<std::size_t>(d)], pb.paths[static_cast<std::size_t>(d)].cells, steps);
      const Vec s = subgoal_state(pb, raw, d, l, id, cell);
      sk.subgoals[raw.demos[static_cast<std::size_t>(d)].id] = s;
      goals.push_back(s);
    }
    sk.partial = static_cast<int>(present[k].size()) < D || static_cast<int>(goals.size()) < D;
    sk.goal.mu = mean_of(goals);
    sk.goal.sigma = floored(sample_cov(goals, sk.goal.mu), cfg.cov_floor, cell * cell);
    sk.goal_d_max = 1.0;
    for (const auto& g : goals) sk.goal_d_max = std::max(sk.goal_d_max, sk.goal.distance(g));
    sk.constraint.mu = mean_of(feats[k]);
    sk.constraint.sigma = floored(sample_cov(feats[k], sk.constraint.mu), cfg.cov_floor, 1e-12);
    out.skills.push_back(std::move(sk));
  }
  return out;
}

// Per-dimension variance pooled over every row of the given skills.
inline Vec pooled_row_variance(const std::vector<SkillModel>& skills) {
  std::vector<Vec> all;
  for (const auto& s : skills)
    for (Eigen::Index i = 0; i < s.rows.rows(); ++i) all.push_back(s.rows.row(i).transpose());
  return pooled_mean_var(all).second.cwiseMax(1e-12);
}

// Fits the motion mixture and calibrates the thresholds on the skill's rows.
inline void fit_skill(SkillModel& sk, const MotionConfig& mc) {
  const auto dim = sk.rows.cols();
  const int E = std::max<int>(1, std::min<int>(mc.components, static_cast<int>(sk.rows.rows() / (dim + 1))));
  if (sk.rows.rows() < dim + 1)
    throw ValidationError("skill " + std::to_string(sk.id) + ": " + std::to_string(sk.rows.rows()) +
                          " observations are too few to fit a motion model");
  sk.gmm = fit_gmm(sk.rows, E, sk.floor, sk.in_dim(), mc.seed + static_cast<std::uint64_t>(sk.id));
  sk.thresholds = calibrate(sk.gmm, sk.rows, mc.eps_cycles, mc.covariance);
}

// Sets the covariance floors from the pooled variance and fits every skill.
inline void fit_skills(std::vector<SkillModel>& skills, const MotionConfig& mc) {
  const Vec var = pooled_row_variance(skills);
  for (auto& sk : skills) {
    sk.floor = mc.reg * var;
    sk.floor.head(sk.in_dim()) = sk.floor.head(sk.in_dim()).cwiseMax(mc.state_std * mc.state_std);
    sk.memory.floor = mc.anomaly_reg * var.tail(var.size() - sk.in_dim());
    fit_skill(sk, mc);
  }
}

inline json region_to_json(const GaussianRegion& r) { return {{"mu", detail::from_vec(r.mu)}, {"sigma", detail::from_mat(r.sigma)}}; }

inline GaussianRegion region_from_json(const json& j, const std::string& where) {
  return {detail::to_vec(j.at("mu"), where + ".mu"), detail::to_mat(j.at("sigma"), where + ".sigma")};
}

inline json segmentation_to_json(const Segmentation& seg, const json& config_echo) {
  json skills = json::array();
  for (const auto& s : seg.skills) {
    json sub = json::object();
    for (const auto& [d, g] : s.subgoals) sub[std::to_string(d)] = detail::from_vec(g);
    skills.push_back({{"id", s.id},
                      {"mu_G", detail::from_vec(s.goal.mu)},
                      {"Sigma_G", detail::from_mat(s.goal.sigma)},
                      {"mu_C", detail::from_vec(s.constraint.mu)},
                      {"Sigma_C", detail::from_mat(s.constraint.sigma)},
                      {"subgoals_per_demo", sub},
                      {"partial", s.partial}});
  }
  return {{"skills", skills}, {"labels", labels_to_json(seg.labels)}, {"map_logprob", seg.map_logprob}, {"config_echo", config_echo}};
}

}  // namespace lfd
