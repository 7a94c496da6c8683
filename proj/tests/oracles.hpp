#pragma once

// Independent test-side computations the library is compared against.
// Each check returns its worst deviation so both the unit suite and the
// acceptance run can report it.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lfd/gmm.hpp"
#include "lfd/intent_mdp.hpp"
#include "lfd/metrics.hpp"
#include "lfd/niw.hpp"

namespace lfd::oracle {

// Value iteration for reaching g: entering g pays 1, g is absorbing.
inline std::vector<double> value_iteration(const Grid& grid, CellId g, double gamma) {
  std::vector<double> v(static_cast<std::size_t>(grid.size()), 0.0);
  for (;;) {
    std::vector<double> next(v.size(), 0.0);
    double change = 0.0;
    for (CellId s = 0; s < grid.size(); ++s) {
      if (s == g || grid.is_blocked(s)) continue;
      double best = 0.0;
      const int x = grid.ix(s), y = grid.iy(s);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!grid.in_bounds(x + dx, y + dy)) continue;
          const CellId n = grid.id(x + dx, y + dy);
          if (grid.is_blocked(n)) continue;
          best = std::max(best, n == g ? 1.0 : gamma * v[static_cast<std::size_t>(n)]);
        }
      next[static_cast<std::size_t>(s)] = best;
      change = std::max(change, std::abs(best - v[static_cast<std::size_t>(s)]));
    }
    v.swap(next);
    if (change == 0.0) return v;
  }
}

struct RandomWorld {
  Grid grid;
  GridPath path;
};

// 20x20 grid with 20% walls and a 60-step random walk over free cells.
inline RandomWorld random_world(std::mt19937_64& rng) {
  RandomWorld w;
  w.grid.h = 1.0;
  w.grid.nx = w.grid.ny = 20;
  w.grid.blocked.assign(400, 0);
  std::bernoulli_distribution wall(0.2);
  for (auto& b : w.grid.blocked) b = wall(rng);
  std::uniform_int_distribution<int> cell(0, 399);
  CellId c;
  do c = cell(rng);
  while (w.grid.is_blocked(c));
  w.path.cells.push_back(c);
  for (int step = 0; step < 60; ++step) {
    std::vector<CellId> moves;
    w.grid.for_each_move(c, [&](CellId n) {
      if (n != c) moves.push_back(n);
    });
    if (moves.empty()) break;
    c = moves[std::uniform_int_distribution<std::size_t>(0, moves.size() - 1)(rng)];
    w.path.cells.push_back(c);
  }
  return w;
}

struct EpsilonCheck {
  double epsilon = 0.0;  // optimality score
  double value = 0.0;    // closed-form goal value
  double softmax = 0.0;  // tabulated likelihood
};

inline EpsilonCheck epsilon_check(int grids, std::uint64_t seed, double gamma = 0.95, double alpha = 5.0) {
  std::mt19937_64 rng(seed);
  EpsilonCheck worst;
  for (int trial = 0; trial < grids; ++trial) {
    const RandomWorld w = random_world(rng);
    const std::vector<CellId> visited = visited_cells(w.path);
    std::vector<CellId> goals = visited;
    std::uniform_int_distribution<int> cell(0, 399);
    while (goals.size() < visited.size() + 5) {
      const CellId g = cell(rng);
      if (!w.grid.is_blocked(g) && std::find(goals.begin(), goals.end(), g) == goals.end()) goals.push_back(g);
    }
    const ValueTable table = precompute_goal_values(w.grid, goals, gamma);
    const std::size_t S = w.path.cells.size();
    for (CellId g : goals) {
      const auto v = value_iteration(w.grid, g, gamma);
      std::vector<double> q_demo(S, 0.0);  // return of following the path until it enters g
      for (std::size_t t = S - 1; t-- > 0;) q_demo[t] = w.path.cells[t + 1] == g ? 1.0 : gamma * q_demo[t + 1];
      for (std::size_t t = 0; t < S; ++t) {
        const CellId s = w.path.cells[t];
        const double vs = v[static_cast<std::size_t>(s)];
        const double expect = s == g ? 1.0 : vs == 0.0 ? 0.0 : std::min(1.0, q_demo[t] / vs);
        worst.epsilon = std::max(worst.epsilon, std::abs(optimality_score(w.path, t, g, table) - expect));
        if (s != g) worst.value = std::max(worst.value, std::abs(table.value(s, g) - vs));
      }
    }
    const DemoIntent di = tabulate_intent(w.path, table, alpha);
    for (std::size_t t = 0; t < S; ++t) {
      double z = 0.0;
      for (CellId c : di.candidates) z += std::exp(alpha * optimality_score(w.path, t, c, table));
      for (std::size_t c = 0; c < di.candidates.size(); ++c) {
        const double p = std::exp(alpha * optimality_score(w.path, t, di.candidates[c], table)) / z;
        const double got = std::exp(di.loglik(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)));
        worst.softmax = std::max(worst.softmax, std::abs(got - p));
      }
    }
  }
  return worst;
}

// 1-D normal-inverse-Wishart density, written out directly.
inline double niw_pdf_1d(double mu, double s2, double m0, double k0, double nu0, double S0) {
  const double iw = std::exp(0.5 * nu0 * std::log(0.5 * S0) - std::lgamma(0.5 * nu0) - (0.5 * nu0 + 1.0) * std::log(s2) -
                             0.5 * S0 / s2);
  const double var = s2 / k0;
  return iw * std::exp(-0.5 * (mu - m0) * (mu - m0) / var) / std::sqrt(2.0 * M_PI * var);
}

inline double normal_pdf(double x, double mu, double s2) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / s2) / std::sqrt(2.0 * M_PI * s2);
}

// Integral over (mu, sigma^2) of the prior times the normal likelihood of xs.
inline double marginal(const std::vector<double>& xs, double m0, double k0, double nu0, double S0) {
  const double centre = (k0 * m0 + std::accumulate(xs.begin(), xs.end(), 0.0)) / (k0 + static_cast<double>(xs.size()));
  boost::math::quadrature::exp_sinh<double> outer;
  auto over_mu = [&](double s2) {
    const double sd = std::sqrt(s2);
    auto f = [&](double t) {
      const double mu = centre + sd * t;
      double p = niw_pdf_1d(mu, s2, m0, k0, nu0, S0) * sd;
      for (double x : xs) p *= normal_pdf(x, mu, s2);
      return p;
    };
    const double inf = std::numeric_limits<double>::infinity();
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -inf, inf, 15, 1e-13);
  };
  return outer.integrate(over_mu, 1e-13);
}

// Largest deviation of the predictive density from the quadrature ratio,
// relative to max(1, density).
inline double predictive_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.3, 0.8);
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    NIWParams prior;
    prior.m0 = Vec::Constant(1, 0.1 * trial);
    prior.kappa0 = 0.5 + 0.25 * trial;
    prior.nu0 = 3.5 + 0.5 * trial;
    prior.S0 = Mat::Constant(1, 1, 0.6 + 0.2 * trial);
    std::vector<double> xs;
    ClusterStats st(1);
    for (int i = 0; i < trial; ++i) {
      xs.push_back(nd(rng));
      st.add(Vec::Constant(1, xs.back()));
    }
    const double base = marginal(xs, prior.m0(0), prior.kappa0, prior.nu0, prior.S0(0, 0));
    for (double x : {-1.5, 0.0, 0.4, 2.2}) {
      std::vector<double> with = xs;
      with.push_back(x);
      const double expect = marginal(with, prior.m0(0), prior.kappa0, prior.nu0, prior.S0(0, 0)) / base;
      const double got = std::exp(niw_posterior_predictive(st, prior, Vec::Constant(1, x)));
      worst = std::max(worst, std::abs(got - expect) / std::max(1.0, expect));
    }
  }
  return worst;
}

inline Mat random_spd(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> nd;
  Mat a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = nd(rng);
  return a * a.transpose() + 0.5 * Mat::Identity(d, d);
}

// Single-component regression against conditioning by explicit inverses.
inline double conditioning_check(std::uint64_t seed, int trials = 50) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const int I = 2, O = 1 + trial % 3, D = I + O;
    GaussianMixture g;
    g.in_dim = I;
    g.weights = {1.0};
    Vec mu(D);
    for (int i = 0; i < D; ++i) mu(i) = nd(rng);
    g.means = {mu};
    const Mat C = random_spd(rng, D);
    g.covs = {C};
    Vec s(I);
    for (int i = 0; i < I; ++i) s(i) = 2.0 * nd(rng);

    const Mat Sss = C.topLeftCorner(I, I), Sos = C.bottomLeftCorner(O, I), Soo = C.bottomRightCorner(O, O);
    const Mat inv = Sss.inverse();
    const Vec r = s - mu.head(I);
    const Vec mean = mu.tail(O) + Sos * inv * r;
    const Mat cov = Soo - Sos * inv * Sos.transpose();
    const double log_ps = -0.5 * (I * std::log(2.0 * M_PI) + std::log(Sss.determinant()) + r.dot(inv * r));

    const Conditioned c = condition(g, s);
    worst = std::max({worst, (c.mean - mean).cwiseAbs().maxCoeff(), (c.cov - cov).cwiseAbs().maxCoeff(),
                      std::abs(c.log_ps - log_ps)});
  }
  return worst;
}

inline double brute_assignment(const std::vector<std::vector<double>>& w) {
  const std::size_t rows = w.size(), cols = w.front().size();
  std::vector<int> perm(std::max(rows, cols));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      if (static_cast<std::size_t>(perm[r]) < cols) total += w[r][static_cast<std::size_t>(perm[r])];
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline int recursive_levenshtein(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j,
                                 std::map<std::pair<std::size_t, std::size_t>, int>& memo) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const auto key = std::make_pair(i, j);
  if (const auto it = memo.find(key); it != memo.end()) return it->second;
  int best = std::min(recursive_levenshtein(a, b, i + 1, j, memo), recursive_levenshtein(a, b, i, j + 1, memo)) + 1;
  best = std::min(best, recursive_levenshtein(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1));
  return memo[key] = best;
}

// Runs of random labels with random lengths.
inline std::vector<int> random_labels(std::mt19937_64& rng, int n, int k) {
  std::vector<int> out;
  std::uniform_int_distribution<int> lab(1, k), run(1, 12);
  while (static_cast<int>(out.size()) < n) {
    const int l = lab(rng), r = run(rng);
    for (int i = 0; i < r && static_cast<int>(out.size()) < n; ++i) out.push_back(l);
  }
  return out;
}

// Best frame agreement over every injective map of predicted labels onto
// ground-truth labels, including leaving a label unmapped.
inline int brute_accuracy_hits(const std::vector<int>& pred, const std::vector<int>& gt) {
  std::vector<int> pl(pred), gl(gt);
  std::sort(pl.begin(), pl.end());
  pl.erase(std::unique(pl.begin(), pl.end()), pl.end());
  std::sort(gl.begin(), gl.end());
  gl.erase(std::unique(gl.begin(), gl.end()), gl.end());
  int best = 0;
  std::map<int, int> m;
  std::vector<char> taken(gl.size(), 0);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == pl.size()) {
      int hit = 0;
      for (std::size_t f = 0; f < pred.size(); ++f) {
        const auto it = m.find(pred[f]);
        hit += it != m.end() && it->second == gt[f];
      }
      best = std::max(best, hit);
      return;
    }
    rec(i + 1);
    for (std::size_t j = 0; j < gl.size(); ++j) {
      if (taken[j]) continue;
      taken[j] = 1;
      m[pl[i]] = gl[j];
      rec(i + 1);
      m.erase(pl[i]);
      taken[j] = 0;
    }
  };
  rec(0);
  return best;
}

struct MetricsCheck {
  int cases = 0;
  int assignment_mismatches = 0;
  int accuracy_mismatches = 0;
  int edit_mismatches = 0;

  int mismatches() const { return assignment_mismatches + accuracy_mismatches + edit_mismatches; }
};

inline MetricsCheck metrics_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MetricsCheck out;
  std::uniform_int_distribution<int> size(1, 6), weight(0, 20);
  for (int trial = 0; trial < 300; ++trial, ++out.cases) {
    const int r = size(rng), c = size(rng);
    std::vector<std::vector<double>> w(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(c)));
    for (auto& row : w)
      for (auto& v : row) v = weight(rng);
    const auto assign = metrics::max_weight_assignment(w);
    double total = 0.0;
    std::vector<char> used(static_cast<std::size_t>(c), 0);
    bool injective = true;
    for (int i = 0; i < r; ++i) {
      const int j = assign[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      injective = injective && !used[static_cast<std::size_t>(j)];
      used[static_cast<std::size_t>(j)] = 1;
      total += w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    out.assignment_mismatches += !injective || total != brute_assignment(w);
  }
  for (int trial = 0; trial < 200; ++trial, ++out.cases) {
    const int n = 40 + trial % 30;
    const auto gt = random_labels(rng, n, 4), pred = random_labels(rng, n, 5);
    const auto rep = metrics::seg_report({{1, pred}}, {{1, gt}});
    out.accuracy_mismatches += rep.acc != 100.0 * brute_accuracy_hits(pred, gt) / n;
  }
  for (int trial = 0; trial < 300; ++trial, ++out.cases) {
    const auto a = random_labels(rng, 30 + trial % 20, 4), b = random_labels(rng, 30 + trial % 20, 4);
    std::vector<int> sa, sb;
    for (const auto& s : metrics::segments(a)) sa.push_back(s.label);
    for (const auto& s : metrics::segments(b)) sb.push_back(s.label);
    std::map<std::pair<std::size_t, std::size_t>, int> memo;
    const int lev = recursive_levenshtein(sa, sb, 0, 0, memo);
    const double score = (1.0 - static_cast<double>(lev) / static_cast<double>(std::max(sa.size(), sb.size()))) * 100.0;
    out.edit_mismatches += metrics::levenshtein(sa, sb) != lev || metrics::edit_score(a, b) != score;
  }
  return out;
}

}  // namespace lfd::oracle
