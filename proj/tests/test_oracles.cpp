#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lfd;

TEST(OptimalityOracle, MatchesValueIterationOnRandomGrids) {
  const auto worst = oracle::epsilon_check(100, 7);
  EXPECT_LE(worst.epsilon, 1e-9);
  EXPECT_LE(worst.value, 1e-12);
  EXPECT_LE(worst.softmax, 1e-12);
}

TEST(OptimalityOracle, HoldsForOtherDiscounts) {
  for (double gamma : {0.5, 0.8, 0.99}) EXPECT_LE(oracle::epsilon_check(10, 23, gamma, 2.0).epsilon, 1e-9) << gamma;
}

TEST(PredictiveOracle, StudentTMatchesQuadrature) { EXPECT_LE(oracle::predictive_check(11), 1e-6); }

TEST(RegressionOracle, SingleComponentIsGaussianConditioning) { EXPECT_LE(oracle::conditioning_check(3), 1e-9); }

TEST(RegressionOracle, MixtureIsMomentMatchedOverComponents) {
  std::mt19937_64 rng(5);
  const int I = 2, O = 2, D = 4, E = 3;
  GaussianMixture g;
  g.in_dim = I;
  g.weights = {0.2, 0.5, 0.3};
  std::normal_distribution<double> nd;
  for (int e = 0; e < E; ++e) {
    Vec m(D);
    for (int i = 0; i < D; ++i) m(i) = nd(rng);
    g.means.push_back(m);
    g.covs.push_back(oracle::random_spd(rng, D));
  }
  const Vec s = Vec::Constant(I, 0.3);
  std::vector<double> w;
  std::vector<Vec> mus;
  std::vector<Mat> covs;
  for (int e = 0; e < E; ++e) {
    const auto k = static_cast<std::size_t>(e);
    const Mat& C = g.covs[k];
    const Mat inv = C.topLeftCorner(I, I).inverse();
    const Vec r = s - g.means[k].head(I);
    w.push_back(g.weights[k] * std::exp(-0.5 * r.dot(inv * r)) / std::sqrt(std::pow(2.0 * M_PI, I) * C.topLeftCorner(I, I).determinant()));
    mus.push_back(g.means[k].tail(O) + C.bottomLeftCorner(O, I) * inv * r);
    covs.push_back(C.bottomRightCorner(O, O) - C.bottomLeftCorner(O, I) * inv * C.bottomLeftCorner(O, I).transpose());
  }
  const double z = std::accumulate(w.begin(), w.end(), 0.0);
  Vec mean = Vec::Zero(O);
  for (std::size_t e = 0; e < w.size(); ++e) mean += w[e] / z * mus[e];
  Mat cov = Mat::Zero(O, O);
  for (std::size_t e = 0; e < w.size(); ++e) {
    const Vec d = mus[e] - mean;
    cov += w[e] / z * (covs[e] + d * d.transpose());
  }
  const Conditioned c = condition(g, s);
  EXPECT_LE((c.mean - mean).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((c.cov - cov).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(c.log_ps, std::log(z), 1e-9);
  for (std::size_t e = 0; e < w.size(); ++e) EXPECT_NEAR(c.h(static_cast<Eigen::Index>(e)), w[e] / z, 1e-12);
}

TEST(MetricsOracle, AgreesExactlyWithBruteForce) {
  const auto r = oracle::metrics_check(13);
  EXPECT_EQ(r.assignment_mismatches, 0);
  EXPECT_EQ(r.accuracy_mismatches, 0);
  EXPECT_EQ(r.edit_mismatches, 0);
}
