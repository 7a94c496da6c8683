#pragma once

// Segmentation metrics (frame accuracy, edit score, F1@k) and anomaly
// detection metrics over monitored episodes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include "core_data.hpp"

namespace lfd::metrics {

constexpr int kUnmatched = std::numeric_limits<int>::min();

// Rectangular assignment maximizing total weight (Hungarian algorithm on the
// negated matrix). Returns the column assigned to each row, or -1.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& w) {
  const int rows = static_cast<int>(w.size());
  const int cols = rows > 0 ? static_cast<int>(w.front().size()) : 0;
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  double maxw = 0.0;
  for (const auto& r : w)
    for (double v : r) maxw = std::max(maxw, v);
  // cost[i][j] on a padded square matrix, 1-indexed potentials.
  auto cost = [&](int i, int j) { return (i < rows && j < cols) ? maxw - w[i][j] : maxw; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) assign[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assign;
}

using LabelMapping = std::map<int, int>;  // predicted -> ground truth (kUnmatched when none)

// Injective predicted->gt mapping maximizing the number of matched frames.
inline LabelMapping match_labels(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("match_labels: length mismatch");
  std::vector<int> pl(pred.begin(), pred.end()), gl(gt.begin(), gt.end());
  std::sort(pl.begin(), pl.end());
  pl.erase(std::unique(pl.begin(), pl.end()), pl.end());
  std::sort(gl.begin(), gl.end());
  gl.erase(std::unique(gl.begin(), gl.end()), gl.end());
  auto idx = [](const std::vector<int>& v, int x) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  std::vector<std::vector<double>> overlap(pl.size(), std::vector<double>(gl.size(), 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i) overlap[idx(pl, pred[i])][idx(gl, gt[i])] += 1.0;
  const auto assign = max_weight_assignment(overlap);
  LabelMapping m;
  for (std::size_t r = 0; r < pl.size(); ++r) {
    const int c = assign[r];
    m[pl[r]] = (c >= 0 && overlap[r][static_cast<std::size_t>(c)] > 0.0) ? gl[static_cast<std::size_t>(c)] : kUnmatched;
  }
  return m;
}

struct Segment {
  int label = 0;
  int start = 0;
  int end = 0;  // exclusive
};

inline std::vector<Segment> segments(const std::vector<int>& labels) {
  std::vector<Segment> out;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    if (out.empty() || out.back().label != labels[static_cast<std::size_t>(i)])
      out.push_back({labels[static_cast<std::size_t>(i)], i, i + 1});
    else
      out.back().end = i + 1;
  }
  return out;
}

template <class T>
int levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double edit_score(const std::vector<int>& pred, const std::vector<int>& gt) {
  std::vector<int> ps, gs;
  for (const auto& s : segments(pred)) ps.push_back(s.label);
  for (const auto& s : segments(gt)) gs.push_back(s.label);
  const double denom = static_cast<double>(std::max(ps.size(), gs.size()));
  if (denom == 0.0) return 100.0;
  return (1.0 - levenshtein(ps, gs) / denom) * 100.0;
}

// Maximum bipartite matching between same-label segment pairs whose IoU
// reaches the threshold; monotone in the threshold by construction.
inline double f1_at(const std::vector<int>& pred, const std::vector<int>& gt, double threshold) {
  const auto ps = segments(pred), gs = segments(gt);
  std::vector<std::vector<int>> adj(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = 0; j < gs.size(); ++j) {
      if (ps[i].label != gs[j].label) continue;
      const int inter = std::max(0, std::min(ps[i].end, gs[j].end) - std::max(ps[i].start, gs[j].start));
      const int uni = std::max(ps[i].end, gs[j].end) - std::min(ps[i].start, gs[j].start);
      if (static_cast<double>(inter) / uni >= threshold) adj[i].push_back(static_cast<int>(j));
    }
  std::vector<int> match_gt(gs.size(), -1);
  std::function<bool(int, std::vector<char>&)> augment = [&](int i, std::vector<char>& seen) {
    for (int j : adj[static_cast<std::size_t>(i)]) {
      if (seen[static_cast<std::size_t>(j)]) continue;
      seen[static_cast<std::size_t>(j)] = 1;
      if (match_gt[static_cast<std::size_t>(j)] < 0 || augment(match_gt[static_cast<std::size_t>(j)], seen)) {
        match_gt[static_cast<std::size_t>(j)] = i;
        return true;
      }
    }
    return false;
  };
  int tp = 0;
  for (int i = 0; i < static_cast<int>(ps.size()); ++i) {
    std::vector<char> seen(gs.size(), 0);
    if (augment(i, seen)) ++tp;
  }
  const double fp = static_cast<double>(ps.size()) - tp;
  const double fn = static_cast<double>(gs.size()) - tp;
  if (tp == 0) return 0.0;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  return 200.0 * precision * recall / (precision + recall);
}

struct SegReport {
  double acc = 0.0;
  double edit = 0.0;
  double f1_10 = 0.0, f1_25 = 0.0, f1_50 = 0.0;
  double avg = 0.0;
  int segments = 0;  // predicted segments, summed over demos
  LabelMapping mapping;

  json to_json() const {
    json m = json::object();
    for (const auto& [p, g] : mapping) m[std::to_string(p)] = g == kUnmatched ? json(nullptr) : json(g);
    return {{"acc", acc}, {"edit", edit}, {"f1@10", f1_10}, {"f1@25", f1_25}, {"f1@50", f1_50},
            {"avg", avg}, {"segments", segments}, {"mapping", m}};
  }
};

// Relabels predictions through the mapping; unmatched predicted labels get
// distinct negative ids so they never agree with a ground-truth label.
inline std::vector<int> apply_mapping(const std::vector<int>& pred, const LabelMapping& m) {
  std::vector<int> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int g = m.at(pred[i]);
    out[i] = g == kUnmatched ? -1 - std::abs(pred[i]) - 1000000 : g;
  }
  return out;
}

// Accuracy is pooled over all frames; edit and F1 are averaged over demos.
inline SegReport seg_report(const LabelMap& pred, const LabelMap& gt) {
  std::vector<int> pp, gg;
  for (const auto& [id, g] : gt) {
    const auto it = pred.find(id);
    if (it == pred.end()) throw std::invalid_argument("seg_report: no prediction for demo " + std::to_string(id));
    if (it->second.size() != g.size()) throw std::invalid_argument("seg_report: length mismatch for demo " + std::to_string(id));
    pp.insert(pp.end(), it->second.begin(), it->second.end());
    gg.insert(gg.end(), g.begin(), g.end());
  }
  SegReport r;
  if (gg.empty()) return r;
  r.mapping = match_labels(pp, gg);
  const auto mapped = apply_mapping(pp, r.mapping);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gg.size(); ++i) hit += mapped[i] == gg[i];
  r.acc = 100.0 * static_cast<double>(hit) / static_cast<double>(gg.size());
  for (const auto& [id, g] : gt) {
    const auto m = apply_mapping(pred.at(id), r.mapping);
    r.edit += edit_score(m, g);
    r.f1_10 += f1_at(m, g, 0.10);
    r.f1_25 += f1_at(m, g, 0.25);
    r.f1_50 += f1_at(m, g, 0.50);
    r.segments += static_cast<int>(segments(m).size());
  }
  const double n = static_cast<double>(gt.size());
  r.edit /= n;
  r.f1_10 /= n;
  r.f1_25 /= n;
  r.f1_50 /= n;
  r.avg = (r.acc + r.edit + r.f1_10 + r.f1_25 + r.f1_50) / 5.0;
  return r;
}

// Per-cycle monitoring outcome of one episode with its ground-truth onset.
struct EpisodeVerdicts {
  std::vector<bool> confident;
  std::vector<bool> anomalous;       // confident anomaly flag per cycle
  std::optional<int> detection;      // cycle of the anomaly trigger
  std::optional<int> onset;          // ground-truth onset, nullopt for nominal
  bool annotated = true;
  double dt = 0.01;
};

struct AnomReport {
  double acc = 0.0, pre = 0.0, rec = 0.0, f1 = 0.0;  // percent
  double delay = 0.0;                                 // seconds
  double episode_acc = 0.0;                           // percent
  int episodes = 0;
  int excluded = 0;

  json to_json() const {
    return {{"acc", acc}, {"pre", pre}, {"rec", rec}, {"f1", f1}, {"delay_s", delay},
            {"episode_acc", episode_acc}, {"episodes", episodes}, {"excluded", excluded}};
  }
};

inline AnomReport anom_report(const std::vector<EpisodeVerdicts>& eps) {
  AnomReport r;
  double tp = 0, fp = 0, tn = 0, fn = 0;
  double delay_sum = 0.0;
  int delays = 0, correct = 0;
  for (const auto& e : eps) {
    if (!e.annotated) {
      ++r.excluded;
      continue;
    }
    ++r.episodes;
    for (std::size_t n = 0; n < e.anomalous.size(); ++n) {
      if (!e.confident[n]) continue;
      const bool truth = e.onset && static_cast<int>(n) >= *e.onset;
      const bool flag = e.anomalous[n];
      tp += truth && flag;
      fp += !truth && flag;
      tn += !truth && !flag;
      fn += truth && !flag;
    }
    if (e.onset) {
      const bool ok = e.detection && *e.detection >= *e.onset;
      correct += ok;
      if (ok) {
        delay_sum += (*e.detection - *e.onset) * e.dt;
        ++delays;
      }
    } else {
      correct += !e.detection.has_value();
    }
  }
  const double total = tp + fp + tn + fn;
  r.acc = total > 0 ? 100.0 * (tp + tn) / total : 0.0;
  r.pre = tp + fp > 0 ? 100.0 * tp / (tp + fp) : 0.0;
  r.rec = tp + fn > 0 ? 100.0 * tp / (tp + fn) : 0.0;
  r.f1 = r.pre + r.rec > 0 ? 2.0 * r.pre * r.rec / (r.pre + r.rec) : 0.0;
  r.delay = delays > 0 ? delay_sum / delays : 0.0;
  r.episode_acc = r.episodes > 0 ? 100.0 * correct / r.episodes : 0.0;
  return r;
}

inline std::string seg_table(const std::vector<std::pair<std::string, SegReport>>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(10) << "Method" << std::right << std::setw(7) << "Acc" << std::setw(7) << "Edit"
     << std::setw(22) << "F1@{10,25,50}" << std::setw(7) << "Avg" << '\n';
  for (const auto& [name, r] : rows) {
    std::ostringstream f1;
    f1 << std::fixed << std::setprecision(1) << r.f1_10 << " / " << r.f1_25 << " / " << r.f1_50;
    os << std::left << std::setw(10) << name << std::right << std::setw(7) << r.acc << std::setw(7) << r.edit
       << std::setw(22) << f1.str() << std::setw(7) << r.avg << '\n';
  }
  return os.str();
}

inline std::string anom_table(const std::vector<std::pair<std::string, AnomReport>>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(16) << "Case" << std::right << std::setw(7) << "Acc" << std::setw(7) << "Pre"
     << std::setw(7) << "Rec" << std::setw(7) << "F1" << std::setw(8) << "Del" << std::setw(9) << "EpAcc" << '\n';
  for (const auto& [name, r] : rows)
    os << std::left << std::setw(16) << name << std::right << std::setw(7) << r.acc << std::setw(7) << r.pre
       << std::setw(7) << r.rec << std::setw(7) << r.f1 << std::setw(8) << std::setprecision(2) << r.delay
       << std::setprecision(1) << std::setw(9) << r.episode_acc << '\n';
  return os.str();
}

}  // namespace lfd::metrics
