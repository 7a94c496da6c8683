#pragma once

// Collapsed Gibbs sampler for skill segmentation. Each observation's
// likelihood combines a subgoal-driven intention term (softmax over the
// optimality score of the demonstrated path) with an NIW-collapsed feature
// cluster term; assignments follow a Chinese Restaurant Process prior and
// per-demo subgoals share a Student-T prior across demonstrations.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "core_data.hpp"
#include "intent_mdp.hpp"
#include "niw.hpp"

namespace lfd {

enum class SegMode { bngirl, bngmm, bnirl };

inline std::string to_string(SegMode m) {
  switch (m) {
    case SegMode::bngirl: return "bngirl";
    case SegMode::bngmm: return "bngmm";
    case SegMode::bnirl: return "bnirl";
  }
  return "?";
}

inline SegMode seg_mode_from_string(const std::string& s) {
  if (s == "bngirl") return SegMode::bngirl;
  if (s == "bngmm") return SegMode::bngmm;
  if (s == "bnirl") return SegMode::bnirl;
  throw std::invalid_argument("unknown segmentation mode '" + s + "'");
}

struct SamplerConfig {
  double gamma = 0.95;
  double alpha = 5.0;
  double eta = 1.0;
  int k_init = 5;
  int iterations = 1000;
  int burn_in = 500;
  int chains = 3;
  double grid_h = 0.025;
  double cov_floor = 1e-6;  // relative to the mean pooled variance
  int smooth_window = 5;
  std::uint64_t seed = 1;
  SegMode mode = SegMode::bngirl;
  bool allow_spawn = true;
  bool resample_subgoals = true;
  bool product_subgoal_term = false;

  bool uses_intent() const { return mode != SegMode::bngmm; }
  bool uses_features() const { return mode != SegMode::bnirl; }
};

struct Observation {
  int demo = 0;   // index into set.demos
  int frame = 0;
  int step = 0;   // grid path step
  Vec f;          // normalized features
};

// Everything the sampler reads but never mutates. Immutable after prepare().
struct SegmentationProblem {
  ObservationSet set;  // normalized
  Grid grid;
  std::vector<GridPath> paths;
  ValueTable table;
  std::vector<DemoIntent> intent;
  std::vector<Observation> obs;
  std::vector<std::vector<int>> obs_of_demo;
  NIWParams prior_f;
  NIWParams prior_g;
  double feature_floor = 0.0;
  double state_floor = 0.0;

  int demo_count() const { return static_cast<int>(set.demos.size()); }
  int size() const { return static_cast<int>(obs.size()); }

  double intent_loglik(int i, CellId g) const {
    const Observation& o = obs[static_cast<std::size_t>(i)];
    const DemoIntent& di = intent[static_cast<std::size_t>(o.demo)];
    return di.loglik(o.step, di.column_of(g));
  }
};

inline std::pair<Vec, Vec> pooled_mean_var(const std::vector<Vec>& rows) {
  const auto d = rows.front().size();
  Vec mean = Vec::Zero(d), var = Vec::Zero(d);
  for (const auto& r : rows) mean += r;
  mean /= static_cast<double>(rows.size());
  for (const auto& r : rows) var += (r - mean).cwiseAbs2();
  var /= static_cast<double>(std::max<std::size_t>(1, rows.size() - 1));
  return {mean, var};
}

inline SegmentationProblem prepare_problem(const ObservationSet& raw, const SamplerConfig& cfg,
                                           const std::vector<CellId>& obstacles = {}) {
  if (raw.demos.empty()) throw ValidationError("segmentation: empty corpus");
  SegmentationProblem pb;
  pb.set = raw.norm ? apply_norm(raw, *raw.norm) : normalize_features(raw).first;
  auto [grid, paths] = build_grid(pb.set, cfg.grid_h, obstacles);
  pb.grid = std::move(grid);
  pb.paths = std::move(paths);
  std::vector<CellId> cands;
  for (const auto& p : pb.paths)
    for (CellId c : visited_cells(p)) cands.push_back(c);
  pb.table = precompute_goal_values(pb.grid, cands, cfg.gamma);
  for (const auto& p : pb.paths)
    pb.intent.push_back(cfg.mode == SegMode::bnirl ? tabulate_one_step(pb.grid, p, pb.table, cfg.alpha)
                                                   : tabulate_intent(p, pb.table, cfg.alpha));
  std::vector<Vec> feats, states;
  pb.obs_of_demo.resize(pb.set.demos.size());
  for (std::size_t d = 0; d < pb.set.demos.size(); ++d) {
    const auto& demo = pb.set.demos[d];
    for (std::size_t i = 0; i < demo.frames.size(); ++i) {
      pb.obs_of_demo[d].push_back(static_cast<int>(pb.obs.size()));
      pb.obs.push_back({static_cast<int>(d), static_cast<int>(i), pb.paths[d].frame_to_step[i], demo.frames[i].f});
      feats.push_back(demo.frames[i].f);
      states.push_back(demo.frames[i].s);
    }
  }
  auto [fm, fv] = pooled_mean_var(feats);
  auto [sm, sv] = pooled_mean_var(states);
  pb.feature_floor = cfg.cov_floor * std::max(fv.mean(), 1e-12);
  pb.state_floor = cfg.cov_floor * std::max(sv.mean(), 1e-12);
  pb.prior_f = NIWParams::weak(fm, fv.cwiseMax(pb.feature_floor));
  pb.prior_g = NIWParams::weak(sm, sv.cwiseMax(pb.state_floor));
  return pb;
}

struct SegmentationState {
  std::vector<int> z;                         // skill index per observation, 0..K-1
  std::vector<std::vector<CellId>> subgoal;   // [skill][demo], -1 when absent
  std::vector<ClusterStats> stats;            // feature statistics per skill

  int K() const { return static_cast<int>(stats.size()); }
  int count(int k) const { return stats[static_cast<std::size_t>(k)].count; }
};

inline ClusterStats subgoal_stats(const SegmentationProblem& pb, const SegmentationState& st, int k, int skip_demo) {
  ClusterStats s(2);
  for (int d = 0; d < pb.demo_count(); ++d) {
    const CellId g = st.subgoal[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)];
    if (d != skip_demo && g >= 0) s.add(pb.grid.center(g));
  }
  return s;
}

inline void remove_skill(SegmentationState& st, int k) {
  st.stats.erase(st.stats.begin() + k);
  st.subgoal.erase(st.subgoal.begin() + k);
  for (int& zi : st.z)
    if (zi > k) --zi;
}

template <class Rng>
CellId random_candidate(const SegmentationProblem& pb, int demo, Rng& rng) {
  const auto& c = pb.intent[static_cast<std::size_t>(demo)].candidates;
  std::uniform_int_distribution<std::size_t> u(0, c.size() - 1);
  return c[u(rng)];
}

template <class Rng>
int sample_log_weights(const std::vector<double>& logw, Rng& rng) {
  const double m = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w(logw.size());
  double total = 0.0;
  for (std::size_t j = 0; j < logw.size(); ++j) total += (w[j] = std::isfinite(m) ? std::exp(logw[j] - m) : 1.0);
  std::uniform_real_distribution<double> u(0.0, total);
  double r = u(rng), acc = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    acc += w[j];
    if (r < acc) return static_cast<int>(j);
  }
  return static_cast<int>(w.size()) - 1;
}

// Initial state: uniform random assignment over k_init skills, empty skills
// dropped, subgoals drawn uniformly from each demo's visited cells.
template <class Rng>
SegmentationState initial_state(const SegmentationProblem& pb, int k_init, Rng& rng) {
  SegmentationState st;
  const int K0 = std::max(1, k_init);
  std::uniform_int_distribution<int> u(0, K0 - 1);
  st.z.resize(pb.obs.size());
  for (auto& zi : st.z) zi = u(rng);
  st.stats.assign(static_cast<std::size_t>(K0), ClusterStats(pb.prior_f.dim()));
  st.subgoal.assign(static_cast<std::size_t>(K0), std::vector<CellId>(static_cast<std::size_t>(pb.demo_count()), -1));
  for (std::size_t i = 0; i < pb.obs.size(); ++i) {
    st.stats[static_cast<std::size_t>(st.z[i])].add(pb.obs[i].f);
    CellId& g = st.subgoal[static_cast<std::size_t>(st.z[i])][static_cast<std::size_t>(pb.obs[i].demo)];
    if (g < 0) g = random_candidate(pb, pb.obs[i].demo, rng);
  }
  for (int k = st.K() - 1; k >= 0; --k)
    if (st.count(k) == 0) remove_skill(st, k);
  return st;
}

// Conditional over the demo's cells for g_k^d: shared Student-T prior given
// the other demos' subgoals times the summed observation likelihood.
inline std::vector<double> subgoal_conditional(const SegmentationProblem& pb, const SegmentationState& st, int k, int d,
                                               const SamplerConfig& cfg, const std::vector<double>& feat_logpdf) {
  const DemoIntent& di = pb.intent[static_cast<std::size_t>(d)];
  const StudentT prior = niw_predictive(subgoal_stats(pb, st, k, d), pb.prior_g);
  std::vector<int> members;
  for (int i : pb.obs_of_demo[static_cast<std::size_t>(d)])
    if (st.z[static_cast<std::size_t>(i)] == k) members.push_back(i);
  std::vector<double> logp(di.candidates.size());
  std::vector<double> terms(members.size());
  for (std::size_t c = 0; c < di.candidates.size(); ++c) {
    for (std::size_t m = 0; m < members.size(); ++m) {
      const int i = members[m];
      terms[m] = di.loglik(pb.obs[static_cast<std::size_t>(i)].step, static_cast<Eigen::Index>(c)) +
                 (cfg.uses_features() ? feat_logpdf[static_cast<std::size_t>(i)] : 0.0);
    }
    double data = 0.0;
    if (cfg.product_subgoal_term)
      for (double t : terms) data += t;
    else
      data = log_sum_exp(terms);
    logp[c] = prior.log_density(pb.grid.center(di.candidates[c])) + data;
  }
  const double lz = log_sum_exp(logp);
  for (double& v : logp) v -= lz;
  return logp;
}

// Plug-in Gaussian log-density of every observation under its own skill's
// posterior-mean feature parameters.
inline std::vector<double> plugin_feature_logpdf(const SegmentationProblem& pb, const SegmentationState& st) {
  std::vector<std::pair<Vec, Eigen::LLT<Mat>>> params;
  for (int k = 0; k < st.K(); ++k) {
    auto [mu, sigma] = niw_posterior_mean(st.stats[static_cast<std::size_t>(k)], pb.prior_f);
    sigma += pb.feature_floor * Mat::Identity(sigma.rows(), sigma.cols());
    params.emplace_back(mu, Eigen::LLT<Mat>(sigma));
  }
  std::vector<double> out(pb.obs.size());
  for (std::size_t i = 0; i < pb.obs.size(); ++i) {
    const auto& [mu, llt] = params[static_cast<std::size_t>(st.z[i])];
    out[i] = gaussian_logpdf(pb.obs[i].f, mu, llt);
  }
  return out;
}

template <class Rng>
void sample_subgoals(SegmentationState& st, const SegmentationProblem& pb, const SamplerConfig& cfg, Rng& rng) {
  const std::vector<double> feat = cfg.uses_features() ? plugin_feature_logpdf(pb, st) : std::vector<double>(pb.obs.size(), 0.0);
  std::vector<int> order(static_cast<std::size_t>(pb.demo_count()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int d : order) {
    for (int k = 0; k < st.K(); ++k) {
      bool present = false;
      for (int i : pb.obs_of_demo[static_cast<std::size_t>(d)])
        if (st.z[static_cast<std::size_t>(i)] == k) {
          present = true;
          break;
        }
      CellId& g = st.subgoal[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)];
      if (!present) {
        g = -1;
        continue;
      }
      const auto logp = subgoal_conditional(pb, st, k, d, cfg, feat);
      g = pb.intent[static_cast<std::size_t>(d)].candidates[static_cast<std::size_t>(sample_log_weights(logp, rng))];
    }
  }
}

// CRP weights over existing skills plus a new one, for the observation
// removed from the statistics. Exposed for tests.
inline std::vector<double> crp_log_weights(const SegmentationState& st, int n_total, double eta, bool allow_spawn) {
  std::vector<double> w;
  const double denom = std::log(n_total - 1 + eta);
  for (int k = 0; k < st.K(); ++k) w.push_back(std::log(static_cast<double>(st.count(k))) - denom);
  if (allow_spawn) w.push_back(std::log(eta) - denom);
  return w;
}

template <class Rng>
void sample_assignments(SegmentationState& st, const SegmentationProblem& pb, const SamplerConfig& cfg, Rng& rng) {
  const int N = pb.size();
  std::vector<StudentT> pred;
  pred.reserve(static_cast<std::size_t>(st.K()) + 4);
  if (cfg.uses_features())
    for (int k = 0; k < st.K(); ++k) pred.push_back(niw_predictive(st.stats[static_cast<std::size_t>(k)], pb.prior_f));
  const StudentT prior_pred = niw_predictive(ClusterStats(pb.prior_f.dim()), pb.prior_f);

  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> logw;
  std::vector<CellId> provisional;
  for (int i : order) {
    const Observation& o = pb.obs[static_cast<std::size_t>(i)];
    int old = st.z[static_cast<std::size_t>(i)];
    st.stats[static_cast<std::size_t>(old)].remove(o.f);
    if (st.count(old) == 0 && (cfg.allow_spawn || st.K() > 1)) {
      remove_skill(st, old);
      if (cfg.uses_features()) pred.erase(pred.begin() + old);
      old = -1;
    } else if (cfg.uses_features()) {
      pred[static_cast<std::size_t>(old)] = niw_predictive(st.stats[static_cast<std::size_t>(old)], pb.prior_f);
    }

    logw = crp_log_weights(st, N, cfg.eta, cfg.allow_spawn);
    provisional.assign(logw.size(), -1);
    for (int k = 0; k < st.K(); ++k) {
      if (cfg.uses_intent()) {
        CellId g = st.subgoal[static_cast<std::size_t>(k)][static_cast<std::size_t>(o.demo)];
        if (g < 0) g = provisional[static_cast<std::size_t>(k)] = random_candidate(pb, o.demo, rng);
        logw[static_cast<std::size_t>(k)] += pb.intent_loglik(i, g);
      }
      if (cfg.uses_features()) logw[static_cast<std::size_t>(k)] += pred[static_cast<std::size_t>(k)].log_density(o.f);
    }
    if (cfg.allow_spawn) {
      const CellId g = provisional.back() = random_candidate(pb, o.demo, rng);
      if (cfg.uses_intent()) logw.back() += pb.intent_loglik(i, g);
      if (cfg.uses_features()) logw.back() += prior_pred.log_density(o.f);
    }
    const int k = sample_log_weights(logw, rng);
    if (k == st.K()) {
      st.stats.emplace_back(pb.prior_f.dim());
      st.subgoal.emplace_back(static_cast<std::size_t>(pb.demo_count()), -1);
      if (cfg.uses_features()) pred.push_back(prior_pred);
    }
    if (provisional[static_cast<std::size_t>(k)] >= 0)
      st.subgoal[static_cast<std::size_t>(k)][static_cast<std::size_t>(o.demo)] = provisional[static_cast<std::size_t>(k)];
    st.z[static_cast<std::size_t>(i)] = k;
    st.stats[static_cast<std::size_t>(k)].add(o.f);
    if (cfg.uses_features()) pred[static_cast<std::size_t>(k)] = niw_predictive(st.stats[static_cast<std::size_t>(k)], pb.prior_f);
  }
}

// Ranking score of a snapshot: observation log-likelihood with plug-in
// feature parameters, CRP terms, subgoal prior and NIW prior of the plug-ins.
inline double joint_logprob(const SegmentationState& st, const SegmentationProblem& pb, const SamplerConfig& cfg) {
  const int N = pb.size();
  double lp = 0.0;
  std::vector<std::pair<Vec, Mat>> plug;
  for (int k = 0; k < st.K(); ++k) {
    auto pm = niw_posterior_mean(st.stats[static_cast<std::size_t>(k)], pb.prior_f);
    pm.second += pb.feature_floor * Mat::Identity(pm.second.rows(), pm.second.cols());
    plug.push_back(std::move(pm));
  }
  std::vector<Eigen::LLT<Mat>> llts;
  for (const auto& [mu, sigma] : plug) llts.emplace_back(sigma);
  for (int i = 0; i < N; ++i) {
    const int k = st.z[static_cast<std::size_t>(i)];
    const Observation& o = pb.obs[static_cast<std::size_t>(i)];
    if (cfg.uses_intent()) lp += pb.intent_loglik(i, st.subgoal[static_cast<std::size_t>(k)][static_cast<std::size_t>(o.demo)]);
    if (cfg.uses_features()) lp += gaussian_logpdf(o.f, plug[static_cast<std::size_t>(k)].first, llts[static_cast<std::size_t>(k)]);
    const int others = st.count(k) - 1;
    lp += std::log(others > 0 ? static_cast<double>(others) : cfg.eta) - std::log(N - 1 + cfg.eta);
  }
  for (int k = 0; k < st.K(); ++k) {
    if (cfg.uses_intent()) {
      ClusterStats acc(2);
      for (int d = 0; d < pb.demo_count(); ++d) {
        const CellId g = st.subgoal[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)];
        if (g < 0) continue;
        const Vec x = pb.grid.center(g);
        lp += niw_predictive(acc, pb.prior_g).log_density(x);
        acc.add(x);
      }
    }
    if (cfg.uses_features()) lp += niw_log_density(pb.prior_f, plug[static_cast<std::size_t>(k)].first, plug[static_cast<std::size_t>(k)].second);
  }
  return lp;
}

struct Snapshot {
  std::vector<int> z;
  std::vector<std::vector<CellId>> subgoal;
  int K = 0;
  double logprob = 0.0;
};

struct ChainResult {
  std::vector<Snapshot> snapshots;  // index 0 is the initialization
  std::size_t map_index = 0;
  std::uint64_t seed = 0;

  const Snapshot& map() const { return snapshots[map_index]; }
};

inline SegmentationState restore_state(const SegmentationProblem& pb, const Snapshot& snap) {
  SegmentationState st;
  st.z = snap.z;
  st.subgoal = snap.subgoal;
  st.stats.assign(static_cast<std::size_t>(snap.K), ClusterStats(pb.prior_f.dim()));
  for (std::size_t i = 0; i < pb.obs.size(); ++i) st.stats[static_cast<std::size_t>(st.z[i])].add(pb.obs[i].f);
  return st;
}

using ProgressFn = std::function<void(int chain, int iteration, int K, double logprob)>;

inline ChainResult run_chain(const SegmentationProblem& pb, const SamplerConfig& cfg, std::uint64_t seed,
                             const ProgressFn& progress = {}, int chain_id = 0) {
  std::mt19937_64 rng(seed);
  SegmentationState st = initial_state(pb, cfg.k_init, rng);
  ChainResult res;
  res.seed = seed;
  auto record = [&] {
    res.snapshots.push_back({st.z, st.subgoal, st.K(), joint_logprob(st, pb, cfg)});
  };
  record();
  for (int t = 1; t <= cfg.iterations; ++t) {
    if (cfg.resample_subgoals) sample_subgoals(st, pb, cfg, rng);
    sample_assignments(st, pb, cfg, rng);
    record();
    if (progress) progress(chain_id, t, st.K(), res.snapshots.back().logprob);
  }
  const std::size_t first = cfg.iterations > cfg.burn_in ? static_cast<std::size_t>(cfg.burn_in) + 1 : 0;
  res.map_index = first;
  for (std::size_t t = first; t < res.snapshots.size(); ++t)
    if (res.snapshots[t].logprob > res.snapshots[res.map_index].logprob) res.map_index = t;
  return res;
}

struct RunResult {
  std::vector<ChainResult> chains;
  std::size_t best_chain = 0;

  const Snapshot& map() const { return chains[best_chain].map(); }
};

// Independent chains with seeds seed, seed+1, ...; merged by MAP score.
inline RunResult run_sampler(const SegmentationProblem& pb, const SamplerConfig& cfg, const ProgressFn& progress = {}) {
  RunResult out;
  const int C = std::max(1, cfg.chains);
  std::vector<std::future<ChainResult>> futures;
  for (int c = 0; c < C; ++c)
    futures.push_back(std::async(std::launch::async, [&pb, &cfg, &progress, c] {
      return run_chain(pb, cfg, cfg.seed + static_cast<std::uint64_t>(c), progress, c);
    }));
  for (auto& f : futures) out.chains.push_back(f.get());
  for (std::size_t c = 1; c < out.chains.size(); ++c)
    if (out.chains[c].map().logprob > out.chains[out.best_chain].map().logprob) out.best_chain = c;
  return out;
}

}  // namespace lfd
