#pragma once

// Per-skill memory of past anomaly windows: a density model that tells known
// from novel anomalies and a classifier that names the known ones.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "gmm.hpp"

namespace lfd {

// Row features for the classifier: the sample itself and the mean of the
// trailing window (up to `span` rows) ending at it.
inline Mat windowed_features(const Mat& window, int span = 100) {
  const auto n = window.rows(), d = window.cols();
  Mat out(n, 2 * d);
  Vec acc = Vec::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += window.row(i).transpose();
    if (i >= span) acc -= window.row(i - span).transpose();
    const double len = static_cast<double>(std::min<Eigen::Index>(i + 1, span));
    out.row(i) << window.row(i), (acc / len).transpose();
  }
  return out;
}

// One-vs-rest linear max-margin classifier trained with Pegasos on
// standardized inputs.
struct LinearClassifier {
  std::vector<int> classes;
  Mat weights;  // one row per class, bias last
  Vec mean, scale;

  bool trained() const { return !classes.empty(); }

  void train(const Mat& X, const std::vector<int>& y, std::uint64_t seed, double lambda = 1e-3, int epochs = 50) {
    classes = y;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    const auto n = X.rows(), d = X.cols();
    mean = X.colwise().mean().transpose();
    scale = ((X.rowwise() - mean.transpose()).cwiseAbs2().colwise().mean().transpose().cwiseSqrt()).cwiseMax(1e-12);
    Mat Z(n, d + 1);
    for (Eigen::Index i = 0; i < n; ++i) Z.row(i) << standardize(X.row(i).transpose()).transpose(), 1.0;
    weights = Mat::Zero(static_cast<Eigen::Index>(classes.size()), d + 1);
    if (classes.size() < 2) return;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      Vec w = Vec::Zero(d + 1);
      const long total = static_cast<long>(epochs) * n;
      for (long t = 1; t <= total; ++t) {
        const Eigen::Index i = pick(rng);
        const double yi = y[static_cast<std::size_t>(i)] == classes[c] ? 1.0 : -1.0;
        const double eta = 1.0 / (lambda * static_cast<double>(t));
        const bool violated = yi * w.dot(Z.row(i).transpose()) < 1.0;
        w *= 1.0 - eta * lambda;
        if (violated) w += eta * yi * Z.row(i).transpose();
      }
      weights.row(static_cast<Eigen::Index>(c)) = w.transpose();
    }
  }

  int predict(const Vec& x) const {
    if (classes.size() == 1) return classes.front();
    Vec z(x.size() + 1);
    z << standardize(x), 1.0;
    Eigen::Index best = 0;
    (weights * z).maxCoeff(&best);
    return classes[static_cast<std::size_t>(best)];
  }

 private:
  Vec standardize(const Vec& x) const { return (x - mean).cwiseQuotient(scale); }
};

struct AnomalyMemory {
  std::vector<Mat> windows;  // Ξ, one ε×dim block per past event
  std::vector<int> labels;   // label of each stored window
  GaussianMixture density;
  double log_p_min = 0.0;
  LinearClassifier classifier;
  Vec floor;  // covariance floor of the anomaly mixture

  bool empty() const { return windows.empty(); }
  int max_label() const { return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()); }
  std::vector<int> label_set() const {
    std::vector<int> l;
    for (int i = 1; i <= max_label(); ++i) l.push_back(i);
    return l;
  }

  Mat stacked() const {
    Eigen::Index n = 0;
    for (const auto& w : windows) n += w.rows();
    Mat all(n, windows.front().cols());
    Eigen::Index r = 0;
    for (const auto& w : windows) all.middleRows(r, w.rows()) = w, r += w.rows();
    return all;
  }

  // Refit the anomaly mixture (M = min(2, #windows)) and the classifier.
  void refit(std::uint64_t seed = 11) {
    const Mat all = stacked();
    const int M = std::min<int>(2, static_cast<int>(windows.size()));
    const Vec fl = floor.size() == all.cols() ? floor : Vec::Constant(all.cols(), 1e-6);
    density = fit_gmm(all, M, fl, 0, seed);
    log_p_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < all.rows(); ++i) log_p_min = std::min(log_p_min, density.log_pdf(all.row(i).transpose()));
    Mat X(0, 2 * all.cols());
    std::vector<int> y;
    for (std::size_t j = 0; j < windows.size(); ++j) {
      const Mat f = windowed_features(windows[j]);
      X.conservativeResize(X.rows() + f.rows(), Eigen::NoChange);
      X.bottomRows(f.rows()) = f;
      y.insert(y.end(), static_cast<std::size_t>(f.rows()), labels[j]);
    }
    classifier.train(X, y, seed);
  }

  int count_unknown(const Mat& window) const {
    int c = 0;
    for (Eigen::Index i = 0; i < window.rows(); ++i)
      if (density.log_pdf(window.row(i).transpose()) < log_p_min) ++c;
    return c;
  }
};

// Answer source for the novelty query: yes/no, or nullopt when nobody can answer.
using NoveltyOracle = std::function<std::optional<bool>()>;

struct Classification {
  int label = 0;         // 0 when no label was assigned
  bool queried = false;  // novelty query raised
  bool novel = false;    // confirmed new anomaly type
  bool unconfirmed = false;  // query could not be answered or was declined
  int unknown_rows = 0;
};

inline Classification classify_anomaly(const Mat& window, AnomalyMemory& mem, const NoveltyOracle& oracle) {
  Classification out;
  if (mem.empty()) {
    mem.windows.push_back(window);
    mem.labels.push_back(1);
    mem.refit();
    out.label = 1;
    out.novel = true;
    return out;
  }
  out.unknown_rows = mem.count_unknown(window);
  if (2 * out.unknown_rows > window.rows()) {
    out.queried = true;
    const std::optional<bool> answer = oracle ? oracle() : std::nullopt;
    if (!answer || !*answer) {
      out.unconfirmed = true;
      return out;
    }
    out.novel = true;
    out.label = mem.max_label() + 1;
  } else {
    const Mat f = windowed_features(window);
    std::map<int, int> votes;
    for (Eigen::Index i = 0; i < f.rows(); ++i) ++votes[mem.classifier.predict(f.row(i).transpose())];
    int best = 0, best_votes = -1;
    for (const auto& [l, v] : votes)
      if (v > best_votes) best = l, best_votes = v;
    out.label = best;
  }
  mem.windows.push_back(window);
  mem.labels.push_back(out.label);
  mem.refit();
  return out;
}

inline json memory_to_json(const AnomalyMemory& m) {
  json w = json::array();
  for (const auto& x : m.windows) w.push_back(detail::from_mat(x));
  return {{"windows", w}, {"labels", m.labels}, {"floor", detail::from_vec(m.floor)}};
}

// The density model and classifier are deterministic functions of the
// stored windows, so only the windows are persisted.
inline AnomalyMemory memory_from_json(const json& j) {
  AnomalyMemory m;
  for (const auto& x : j.at("windows")) m.windows.push_back(detail::to_mat(x, "anomaly_memory.windows"));
  m.labels = j.at("labels").get<std::vector<int>>();
  m.floor = detail::to_vec(j.at("floor"), "anomaly_memory.floor");
  if (m.labels.size() != m.windows.size()) throw SchemaError("anomaly_memory: labels and windows differ in length");
  if (!m.empty()) m.refit();
  return m;
}

}  // namespace lfd
