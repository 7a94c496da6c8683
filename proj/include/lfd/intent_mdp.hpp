#pragma once

// Deterministic 8-connected grid MDP over the workspace. Provides the optimal
// goal-reaching values, the demonstrated-policy optimality score and the
// softmax subgoal likelihood used by the segmentation sampler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "core_data.hpp"

namespace lfd {

using CellId = int;

struct Grid {
  double h = 0.025;
  int nx = 0;
  int ny = 0;
  Eigen::Vector2d origin{0.0, 0.0};
  std::vector<std::uint8_t> blocked;

  int size() const { return nx * ny; }
  CellId id(int ix, int iy) const { return ix + nx * iy; }
  int ix(CellId c) const { return c % nx; }
  int iy(CellId c) const { return c / nx; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < nx && y < ny; }
  bool is_blocked(CellId c) const { return blocked[static_cast<std::size_t>(c)] != 0; }

  Eigen::Vector2d center(CellId c) const {
    return origin + h * Eigen::Vector2d(static_cast<double>(ix(c)), static_cast<double>(iy(c)));
  }

  // Nearest cell center; nullopt-like -1 when outside the grid.
  CellId snap(const Vec& s) const {
    const int x = static_cast<int>(std::lround((s(0) - origin(0)) / h));
    const int y = static_cast<int>(std::lround((s(1) - origin(1)) / h));
    return in_bounds(x, y) ? id(x, y) : -1;
  }

  // 8-neighbors plus stay, skipping blocked and out-of-grid cells.
  template <class F>
  void for_each_move(CellId c, F&& fn) const {
    const int x = ix(c), y = iy(c);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int xx = x + dx, yy = y + dy;
        if (!in_bounds(xx, yy)) continue;
        const CellId n = id(xx, yy);
        if (!is_blocked(n)) fn(n);
      }
  }

  int chebyshev(CellId a, CellId b) const { return std::max(std::abs(ix(a) - ix(b)), std::abs(iy(a) - iy(b))); }
};

struct GridPath {
  int demo_id = 0;
  std::vector<CellId> cells;            // consecutive entries are 8-neighbors
  std::vector<int> frame_to_step;       // frame index -> index into cells

  std::size_t steps() const { return cells.size(); }
};

inline Grid make_grid(const Workspace& ws, double h, const std::vector<CellId>& obstacles = {}) {
  if (!(h > 0.0)) throw std::invalid_argument("grid resolution must be positive");
  Grid g;
  g.h = h;
  g.origin = ws.min;
  g.nx = static_cast<int>(std::lround((ws.max(0) - ws.min(0)) / h)) + 1;
  g.ny = static_cast<int>(std::lround((ws.max(1) - ws.min(1)) / h)) + 1;
  g.blocked.assign(static_cast<std::size_t>(g.size()), 0);
  for (CellId c : obstacles) {
    if (c < 0 || c >= g.size()) throw std::invalid_argument("obstacle cell out of range");
    g.blocked[static_cast<std::size_t>(c)] = 1;
  }
  return g;
}

// Snaps one demonstration onto the grid. Runs of one cell collapse to one
// step; jumps larger than one cell are bridged by Chebyshev interpolation.
inline GridPath snap_demo(const Grid& grid, const Demonstration& d) {
  GridPath p;
  p.demo_id = d.id;
  p.frame_to_step.reserve(d.frames.size());
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    const CellId c = grid.snap(d.frames[i].s);
    if (c < 0)
      throw ValidationError("demo " + std::to_string(d.id) + " frame " + std::to_string(i) + ": state outside workspace grid");
    if (grid.is_blocked(c))
      throw ValidationError("demo " + std::to_string(d.id) + " frame " + std::to_string(i) + ": state on blocked cell");
    if (p.cells.empty()) {
      p.cells.push_back(c);
    } else if (c != p.cells.back()) {
      CellId prev = p.cells.back();
      while (grid.chebyshev(prev, c) > 1) {
        const int sx = (grid.ix(c) > grid.ix(prev)) - (grid.ix(c) < grid.ix(prev));
        const int sy = (grid.iy(c) > grid.iy(prev)) - (grid.iy(c) < grid.iy(prev));
        prev = grid.id(grid.ix(prev) + sx, grid.iy(prev) + sy);
        p.cells.push_back(prev);
      }
      p.cells.push_back(c);
    }
    p.frame_to_step.push_back(static_cast<int>(p.cells.size()) - 1);
  }
  return p;
}

inline std::pair<Grid, std::vector<GridPath>> build_grid(const ObservationSet& set, double h,
                                                         const std::vector<CellId>& obstacles = {}) {
  Grid grid = make_grid(set.workspace, h, obstacles);
  std::vector<GridPath> paths;
  paths.reserve(set.demos.size());
  for (const auto& d : set.demos) paths.push_back(snap_demo(grid, d));
  return {std::move(grid), std::move(paths)};
}

// Optimal values V*(s, g) = gamma^(d(s,g)-1) for every cell and candidate goal.
class ValueTable {
 public:
  ValueTable() = default;
  ValueTable(const Grid& grid, double gamma) : gamma_(gamma), cells_(grid.size()) {}

  double gamma() const { return gamma_; }

  void add_goal(CellId g, std::vector<int> dist) { dist_.emplace(g, std::move(dist)); }
  bool has_goal(CellId g) const { return dist_.count(g) != 0; }
  std::size_t goal_count() const { return dist_.size(); }

  // Shortest 8-connected step count from s to g, -1 if unreachable.
  int distance(CellId s, CellId g) const { return dist_.at(g)[static_cast<std::size_t>(s)]; }

  double value(CellId s, CellId g) const {
    const int d = distance(s, g);
    if (d <= 0) return 0.0;  // unreachable, or the absorbing goal itself
    return std::pow(gamma_, d - 1);
  }

 private:
  double gamma_ = 0.95;
  int cells_ = 0;
  std::unordered_map<CellId, std::vector<int>> dist_;
};

inline std::vector<int> bfs_distances(const Grid& grid, CellId goal) {
  std::vector<int> dist(static_cast<std::size_t>(grid.size()), -1);
  std::deque<CellId> queue{goal};
  dist[static_cast<std::size_t>(goal)] = 0;
  while (!queue.empty()) {
    const CellId c = queue.front();
    queue.pop_front();
    const int dc = dist[static_cast<std::size_t>(c)];
    grid.for_each_move(c, [&](CellId n) {
      if (dist[static_cast<std::size_t>(n)] < 0) {
        dist[static_cast<std::size_t>(n)] = dc + 1;
        queue.push_back(n);
      }
    });
  }
  return dist;
}

template <class Cells>
ValueTable precompute_goal_values(const Grid& grid, const Cells& candidates, double gamma) {
  if (std::begin(candidates) == std::end(candidates)) throw std::invalid_argument("no goal candidates");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("discount must lie in (0,1)");
  ValueTable table(grid, gamma);
  for (CellId g : candidates) {
    if (g < 0 || g >= grid.size()) throw std::invalid_argument("goal cell out of range");
    if (grid.is_blocked(g)) throw std::invalid_argument("goal cell " + std::to_string(g) + " is blocked");
    if (!table.has_goal(g)) table.add_goal(g, bfs_distances(grid, g));
  }
  return table;
}

// Number of path steps taken from `step` until the path first enters g
// strictly after the current step; 0 when it never does.
inline int steps_until(const GridPath& path, std::size_t step, CellId g) {
  for (std::size_t j = step + 1; j < path.cells.size(); ++j)
    if (path.cells[j] == g) return static_cast<int>(j - step);
  return 0;
}

// epsilon = Q^demo / V*, with Q^demo = gamma^(m-1). Defined as 1 on the goal cell.
inline double optimality_score(const GridPath& path, std::size_t step, CellId g, const ValueTable& table) {
  if (path.cells[step] == g) return 1.0;
  const double v = table.value(path.cells[step], g);
  if (v <= 0.0) return 0.0;
  const int m = steps_until(path, step, g);
  if (m == 0) return 0.0;
  const double q = std::pow(table.gamma(), m - 1);
  return std::min(1.0, q / v);
}

inline double log_sum_exp(const std::vector<double>& x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Distinct cells of a path in first-visit order; these are the demo's subgoal candidates.
inline std::vector<CellId> visited_cells(const GridPath& path) {
  std::vector<CellId> out;
  for (CellId c : path.cells)
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  return out;
}

inline double subgoal_loglik(const GridPath& path, std::size_t step, CellId g, double alpha, const ValueTable& table) {
  const auto cands = visited_cells(path);
  std::vector<double> logits;
  logits.reserve(cands.size());
  for (CellId c : cands) logits.push_back(alpha * optimality_score(path, step, c, table));
  return alpha * optimality_score(path, step, g, table) - log_sum_exp(logits);
}

// Cached per-demo likelihood tables: one row per path step, one column per
// candidate cell of the demo.
struct DemoIntent {
  std::vector<CellId> candidates;
  std::unordered_map<CellId, int> column;
  Mat eps;     // optimality scores
  Mat loglik;  // log p(s, a | g)

  int column_of(CellId c) const { return column.at(c); }
};

inline DemoIntent tabulate_intent(const GridPath& path, const ValueTable& table, double alpha) {
  DemoIntent di;
  di.candidates = visited_cells(path);
  for (std::size_t j = 0; j < di.candidates.size(); ++j) di.column[di.candidates[j]] = static_cast<int>(j);
  const auto S = static_cast<Eigen::Index>(path.steps());
  const auto C = static_cast<Eigen::Index>(di.candidates.size());
  di.eps.resize(S, C);
  di.loglik.resize(S, C);
  std::vector<double> row(static_cast<std::size_t>(C));
  for (Eigen::Index p = 0; p < S; ++p) {
    for (Eigen::Index c = 0; c < C; ++c) {
      di.eps(p, c) = optimality_score(path, static_cast<std::size_t>(p), di.candidates[static_cast<std::size_t>(c)], table);
      row[static_cast<std::size_t>(c)] = alpha * di.eps(p, c);
    }
    const double lz = log_sum_exp(row);
    for (Eigen::Index c = 0; c < C; ++c) di.loglik(p, c) = row[static_cast<std::size_t>(c)] - lz;
  }
  return di;
}

// One-step action likelihood of the classic subgoal-only formulation: a
// softmax over the available moves of alpha * Q*(s, a, g).
inline DemoIntent tabulate_one_step(const Grid& grid, const GridPath& path, const ValueTable& table, double alpha) {
  DemoIntent di;
  di.candidates = visited_cells(path);
  for (std::size_t j = 0; j < di.candidates.size(); ++j) di.column[di.candidates[j]] = static_cast<int>(j);
  const auto S = static_cast<Eigen::Index>(path.steps());
  const auto C = static_cast<Eigen::Index>(di.candidates.size());
  di.eps = Mat::Zero(S, C);
  di.loglik.resize(S, C);
  const double gamma = table.gamma();
  auto q_star = [&](CellId next, CellId g) { return next == g ? 1.0 : gamma * table.value(next, g); };
  std::vector<double> logits;
  for (Eigen::Index p = 0; p < S; ++p) {
    const CellId s = path.cells[static_cast<std::size_t>(p)];
    const CellId taken = p + 1 < S ? path.cells[static_cast<std::size_t>(p + 1)] : s;
    for (Eigen::Index c = 0; c < C; ++c) {
      const CellId g = di.candidates[static_cast<std::size_t>(c)];
      logits.clear();
      grid.for_each_move(s, [&](CellId n) { logits.push_back(alpha * q_star(n, g)); });
      di.loglik(p, c) = alpha * q_star(taken, g) - log_sum_exp(logits);
    }
  }
  return di;
}

}  // namespace lfd
