#pragma once

// Gaussian mixture over joint (input, output) rows: EM fitting, regression
// by conditioning on the input block, Mahalanobis deviation and threshold
// calibration for the two-step anomaly test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "core_data.hpp"
#include "intent_mdp.hpp"

namespace lfd {

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;
  Eigen::Index in_dim = 0;

  int size() const { return static_cast<int>(weights.size()); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
  Eigen::Index out_dim() const { return dim() - in_dim; }

  double log_pdf(const Vec& x) const;
  double log_input_density(const Vec& s) const;
};

namespace detail {

inline double log_normal(const Vec& x, const Vec& mu, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double d = static_cast<double>(mu.size());
  const Vec z = llt.matrixL().solve(x - mu);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

}  // namespace detail

inline double GaussianMixture::log_pdf(const Vec& x) const {
  std::vector<double> t;
  for (int e = 0; e < size(); ++e)
    t.push_back(std::log(weights[static_cast<std::size_t>(e)]) +
                detail::log_normal(x, means[static_cast<std::size_t>(e)], covs[static_cast<std::size_t>(e)]));
  return log_sum_exp(t);
}

inline double GaussianMixture::log_input_density(const Vec& s) const {
  std::vector<double> t;
  for (int e = 0; e < size(); ++e)
    t.push_back(std::log(weights[static_cast<std::size_t>(e)]) +
                detail::log_normal(s, means[static_cast<std::size_t>(e)].head(in_dim),
                                   covs[static_cast<std::size_t>(e)].topLeftCorner(in_dim, in_dim)));
  return log_sum_exp(t);
}

struct FitTrace {
  std::vector<double> loglik;  // per EM iteration, after the M-step
  int reseeds = 0;
};

namespace detail {

template <class Rng>
std::vector<int> kmeans(const Mat& rows, int E, Rng& rng) {
  const auto n = rows.rows();
  std::vector<Vec> centers;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.push_back(rows.row(pick(rng)).transpose());
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (static_cast<int>(centers.size()) < E) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, (rows.row(i).transpose() - c).squaredNorm());
      total += d2[static_cast<std::size_t>(i)] = best;
    }
    Eigen::Index next = pick(rng);
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (r < acc) {
          next = i;
          break;
        }
      }
    }
    centers.push_back(rows.row(next).transpose());
  }
  std::vector<int> z(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int e = 0; e < E; ++e) {
        const double dd = (rows.row(i).transpose() - centers[static_cast<std::size_t>(e)]).squaredNorm();
        if (dd < bd) bd = dd, best = e;
      }
      if (z[static_cast<std::size_t>(i)] != best) changed = true;
      z[static_cast<std::size_t>(i)] = best;
    }
    for (int e = 0; e < E; ++e) {
      Vec sum = Vec::Zero(rows.cols());
      int cnt = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (z[static_cast<std::size_t>(i)] == e) sum += rows.row(i).transpose(), ++cnt;
      if (cnt > 0) centers[static_cast<std::size_t>(e)] = sum / cnt;
    }
    if (!changed && it > 0) break;
  }
  return z;
}

inline Mat weighted_cov(const Mat& rows, const Vec& w, const Vec& mean) {
  const Mat c = rows.rowwise() - mean.transpose();
  Mat cov = (c.array().colwise() * w.array()).matrix().transpose() * c / std::max(w.sum(), 1e-300);
  return 0.5 * (cov + cov.transpose());
}

}  // namespace detail

// k-means++ initialized EM. The per-dimension floor is added to every
// covariance after each M-step.
inline GaussianMixture fit_gmm(const Mat& rows, int E, const Vec& floor, Eigen::Index in_dim, std::uint64_t seed,
                               FitTrace* trace = nullptr, int max_iter = 200, double tol = 1e-8) {
  const auto n = rows.rows(), dim = rows.cols();
  if (E < 1) throw std::invalid_argument("fit: component count must be positive");
  if (n < E * (dim + 1))
    throw std::invalid_argument("fit: need at least " + std::to_string(E * (dim + 1)) + " rows, got " + std::to_string(n));
  if (floor.size() != dim) throw std::invalid_argument("fit: floor dimension mismatch");
  if (in_dim < 0 || in_dim > dim) throw std::invalid_argument("fit: invalid input block size");
  std::mt19937_64 rng(seed);
  const std::vector<int> z0 = detail::kmeans(rows, E, rng);
  const Mat F = floor.asDiagonal();

  GaussianMixture g;
  g.in_dim = in_dim;
  Mat resp = Mat::Zero(n, E);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, z0[static_cast<std::size_t>(i)]) = 1.0;
  const Vec pooled_mean = rows.colwise().mean().transpose();
  const Mat pooled_cov = detail::weighted_cov(rows, Vec::Ones(n), pooled_mean) + F;

  auto m_step = [&] {
    g.weights.assign(static_cast<std::size_t>(E), 0.0);
    g.means.assign(static_cast<std::size_t>(E), Vec::Zero(dim));
    g.covs.assign(static_cast<std::size_t>(E), pooled_cov);
    for (int e = 0; e < E; ++e) {
      const Vec w = resp.col(e);
      const double nk = w.sum();
      g.weights[static_cast<std::size_t>(e)] = nk / static_cast<double>(n);
      if (nk <= 0.0) continue;
      const Vec mu = rows.transpose() * w / nk;
      g.means[static_cast<std::size_t>(e)] = mu;
      g.covs[static_cast<std::size_t>(e)] = detail::weighted_cov(rows, w, mu) + F;
    }
  };
  std::vector<double> lrow(static_cast<std::size_t>(n));
  auto e_step = [&] {
    double ll = 0.0;
    std::vector<double> t(static_cast<std::size_t>(E));
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec x = rows.row(i).transpose();
      for (int e = 0; e < E; ++e)
        t[static_cast<std::size_t>(e)] = g.weights[static_cast<std::size_t>(e)] > 0.0
                                             ? std::log(g.weights[static_cast<std::size_t>(e)]) +
                                                   detail::log_normal(x, g.means[static_cast<std::size_t>(e)], g.covs[static_cast<std::size_t>(e)])
                                             : -std::numeric_limits<double>::infinity();
      const double lz = log_sum_exp(t);
      for (int e = 0; e < E; ++e) resp(i, e) = std::exp(t[static_cast<std::size_t>(e)] - lz);
      lrow[static_cast<std::size_t>(i)] = lz;
      ll += lz;
    }
    return ll;
  };

  m_step();
  double prev = -std::numeric_limits<double>::infinity();
  int reseeds = 0;
  for (int it = 0; it < max_iter; ++it) {
    const double ll = e_step();
    if (trace) trace->loglik.push_back(ll);
    m_step();
    bool degenerate = false;
    for (int e = 0; e < E; ++e) {
      if (g.weights[static_cast<std::size_t>(e)] >= 1e-6) continue;
      if (reseeds > 0) throw std::runtime_error("fit: component " + std::to_string(e) + " degenerate after re-seeding");
      ++reseeds;
      degenerate = true;
      const auto worst = std::min_element(lrow.begin(), lrow.end()) - lrow.begin();
      g.means[static_cast<std::size_t>(e)] = rows.row(worst).transpose();
      g.covs[static_cast<std::size_t>(e)] = pooled_cov;
      g.weights[static_cast<std::size_t>(e)] = 1.0 / static_cast<double>(E);
      double total = 0.0;
      for (double w : g.weights) total += w;
      for (double& w : g.weights) w /= total;
    }
    if (degenerate) {
      prev = -std::numeric_limits<double>::infinity();
      continue;
    }
    if (std::abs(ll - prev) < tol) break;
    prev = ll;
  }
  if (trace) {
    trace->loglik.push_back(e_step());
    trace->reseeds = reseeds;
  }
  return g;
}

inline GaussianMixture fit_gmm(const Mat& rows, int E, double reg, Eigen::Index in_dim, std::uint64_t seed,
                               FitTrace* trace = nullptr) {
  return fit_gmm(rows, E, Vec::Constant(rows.cols(), reg), in_dim, seed, trace);
}

struct Conditioned {
  Vec mean;           // expected output
  Mat cov;            // conditional covariance
  Vec h;              // responsibilities
  double log_ps = 0;  // log input-marginal density
};

enum class CondCovariance { residual, explained };

inline Conditioned condition(const GaussianMixture& g, const Vec& s, CondCovariance variant = CondCovariance::residual) {
  const auto I = g.in_dim, O = g.out_dim();
  if (s.size() != I) throw std::invalid_argument("condition: input dimension mismatch");
  const auto E = static_cast<std::size_t>(g.size());
  std::vector<double> logw(E);
  std::vector<Vec> mu(E);
  std::vector<Mat> sig(E);
  for (std::size_t e = 0; e < E; ++e) {
    const Mat& C = g.covs[e];
    const Vec& m = g.means[e];
    Eigen::LLT<Mat> llt(C.topLeftCorner(I, I));
    const Mat Sxs = C.bottomLeftCorner(O, I);
    const Mat gain = llt.solve(Sxs.transpose()).transpose();
    mu[e] = m.tail(O) + gain * (s - m.head(I));
    const Mat explained = gain * Sxs.transpose();
    sig[e] = variant == CondCovariance::residual ? Mat(C.bottomRightCorner(O, O) - explained) : explained;
    logw[e] = std::log(g.weights[e]) + detail::log_normal(s, m.head(I), C.topLeftCorner(I, I));
  }
  Conditioned c;
  c.log_ps = log_sum_exp(logw);
  c.h = Vec(static_cast<Eigen::Index>(E));
  c.mean = Vec::Zero(O);
  c.cov = Mat::Zero(O, O);
  for (std::size_t e = 0; e < E; ++e) {
    const double h = std::isfinite(c.log_ps) ? std::exp(logw[e] - c.log_ps) : 1.0 / static_cast<double>(E);
    c.h(static_cast<Eigen::Index>(e)) = h;
    c.mean += h * mu[e];
  }
  for (std::size_t e = 0; e < E; ++e) {
    const double h = c.h(static_cast<Eigen::Index>(e));
    c.cov += h * (sig[e] + mu[e] * mu[e].transpose());
  }
  c.cov -= c.mean * c.mean.transpose();
  c.cov = 0.5 * (c.cov + c.cov.transpose());
  return c;
}

// Mahalanobis distance under the conditional covariance; falls back to a
// pseudo-inverse over the well-conditioned eigen-directions when singular.
inline double mahalanobis(const Conditioned& c, const Vec& xi, bool* pseudo = nullptr) {
  if (xi.size() != c.mean.size()) throw std::invalid_argument("mahalanobis: dimension mismatch");
  const Vec d = xi - c.mean;
  Eigen::LLT<Mat> llt(c.cov);
  const double scale = std::max(c.cov.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 1e-7 * std::sqrt(scale)) {
    if (pseudo) *pseudo = false;
    return std::sqrt(llt.matrixL().solve(d).squaredNorm());
  }
  if (pseudo) *pseudo = true;
  Eigen::SelfAdjointEigenSolver<Mat> es(c.cov);
  const Vec& ev = es.eigenvalues();
  const double floor = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  const Vec proj = es.eigenvectors().transpose() * d;
  double q = 0.0;
  for (Eigen::Index j = 0; j < ev.size(); ++j)
    if (ev(j) > floor) q += proj(j) * proj(j) / ev(j);
  return std::sqrt(q);
}

struct Thresholds {
  double d_max = 0.0;
  double log_p_min = 0.0;
  int eps_cycles = 30;
};

inline Thresholds calibrate(const GaussianMixture& g, const Mat& rows, int eps_cycles,
                            CondCovariance variant = CondCovariance::residual) {
  Thresholds t;
  t.eps_cycles = eps_cycles;
  t.log_p_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Vec r = rows.row(i).transpose();
    const Conditioned c = condition(g, r.head(g.in_dim), variant);
    t.d_max = std::max(t.d_max, mahalanobis(c, r.tail(g.out_dim())));
    t.log_p_min = std::min(t.log_p_min, c.log_ps);
  }
  return t;
}

inline json gmm_to_json(const GaussianMixture& g) {
  json comps = json::array();
  for (int e = 0; e < g.size(); ++e)
    comps.push_back({{"weight", g.weights[static_cast<std::size_t>(e)]},
                     {"mean", detail::from_vec(g.means[static_cast<std::size_t>(e)])},
                     {"cov", detail::from_mat(g.covs[static_cast<std::size_t>(e)])}});
  return {{"in_dim", g.in_dim}, {"components", comps}};
}

inline GaussianMixture gmm_from_json(const json& j) {
  GaussianMixture g;
  g.in_dim = j.at("in_dim").get<Eigen::Index>();
  for (const auto& c : j.at("components")) {
    g.weights.push_back(c.at("weight").get<double>());
    g.means.push_back(detail::to_vec(c.at("mean"), "gmm.mean"));
    g.covs.push_back(detail::to_mat(c.at("cov"), "gmm.cov"));
  }
  return g;
}

inline json thresholds_to_json(const Thresholds& t) {
  return {{"d_max", t.d_max}, {"log_p_min", t.log_p_min}, {"eps_cycles", t.eps_cycles}};
}

inline Thresholds thresholds_from_json(const json& j) {
  return {j.at("d_max").get<double>(), j.at("log_p_min").get<double>(), j.at("eps_cycles").get<int>()};
}

}  // namespace lfd
