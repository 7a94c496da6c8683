#pragma once

// Demonstration data model, feature normalization and corpus/label file I/O.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace lfd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using json = nlohmann::json;

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Frame {
  double t = 0.0;
  Vec s;  // EEF position, m
  Vec a;  // per-step displacement, m
  Vec f;  // task features, raw units
};

struct Demonstration {
  int id = 0;
  std::vector<Frame> frames;
  double dt = 0.01;

  std::size_t size() const { return frames.size(); }
};

struct Workspace {
  Eigen::Vector2d min{0.0, 0.0};
  Eigen::Vector2d max{1.0, 1.0};

  bool contains(const Vec& s) const {
    return s.size() == 2 && s(0) >= min(0) && s(0) <= max(0) && s(1) >= min(1) && s(1) <= max(1);
  }
};

struct NormParams {
  Vec mean;
  Vec min;
  Vec max;
  std::vector<bool> constant;  // flagged dimensions are left untransformed

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

  Vec apply(const Vec& f) const {
    Vec out = f;
    for (Eigen::Index j = 0; j < f.size(); ++j)
      if (!constant[j]) out(j) = (f(j) - mean(j)) / (max(j) - min(j));
    return out;
  }

  bool operator==(const NormParams& o) const {
    return mean == o.mean && min == o.min && max == o.max && constant == o.constant;
  }
};

struct ObservationSet {
  double dt = 0.01;
  std::vector<std::string> feature_names;
  Workspace workspace;
  std::vector<Demonstration> demos;
  std::optional<NormParams> norm;

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& d : demos) n += d.size();
    return n;
  }
  std::size_t feature_dim() const {
    return demos.empty() || demos.front().frames.empty()
               ? feature_names.size()
               : static_cast<std::size_t>(demos.front().frames.front().f.size());
  }
};

// One corrective observation tagged with the skill it refines.
struct RefinementEntry {
  int skill = 0;
  Frame frame;
};

struct RefinementSet {
  std::vector<RefinementEntry> entries;
  bool empty() const { return entries.empty(); }
};

// Per-demo ground-truth (or predicted) frame labels.
using LabelMap = std::map<int, std::vector<int>>;

namespace detail {

inline Vec to_vec(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SchemaError(where + ": element " + std::to_string(i) + " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline json from_vec(const Vec& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// Matrices are stored row-major with declared dimensions.
inline json from_mat(const Mat& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Mat to_mat(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw SchemaError(where + ": expected {rows, cols, data}");
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  const Vec flat = to_vec(j.at("data"), where + ".data");
  if (flat.size() != r * c) throw SchemaError(where + ": data length does not match rows*cols");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = flat(i * c + k);
  return m;
}

}  // namespace detail

// Checks the Demonstration and Frame invariants; throws ValidationError naming the demo.
inline void validate_demo(const Demonstration& d, std::size_t feature_dim) {
  const std::string tag = "demo " + std::to_string(d.id);
  if (d.frames.size() < 2) throw ValidationError(tag + ": N_d >= 2 violated");
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    const Frame& fr = d.frames[i];
    const std::string ftag = tag + " frame " + std::to_string(i);
    if (fr.s.size() != 2 || fr.a.size() != 2) throw ValidationError(ftag + ": state/action must be 2-D");
    if (static_cast<std::size_t>(fr.f.size()) != feature_dim)
      throw ValidationError(ftag + ": feature dimension mismatch");
    if (!std::isfinite(fr.t) || !detail::all_finite(fr.s) || !detail::all_finite(fr.a) || !detail::all_finite(fr.f))
      throw ValidationError(ftag + ": non-finite value");
    if (i > 0 && !(fr.t > d.frames[i - 1].t)) throw ValidationError(ftag + ": timestamps not strictly increasing");
  }
}

// Fills actions with state deltas; the last action is zero.
inline void fill_actions(Demonstration& d) {
  for (std::size_t i = 0; i + 1 < d.frames.size(); ++i) d.frames[i].a = d.frames[i + 1].s - d.frames[i].s;
  if (!d.frames.empty()) d.frames.back().a = Vec::Zero(d.frames.back().s.size());
}

inline json norm_to_json(const NormParams& p) {
  json c = json::array();
  for (bool b : p.constant) c.push_back(b);
  return {{"mean", detail::from_vec(p.mean)}, {"min", detail::from_vec(p.min)}, {"max", detail::from_vec(p.max)},
          {"constant", c}};
}

inline NormParams norm_from_json(const json& j) {
  NormParams p;
  p.mean = detail::to_vec(j.at("mean"), "norm.mean");
  p.min = detail::to_vec(j.at("min"), "norm.min");
  p.max = detail::to_vec(j.at("max"), "norm.max");
  for (const auto& b : j.at("constant")) p.constant.push_back(b.get<bool>());
  return p;
}

inline json demo_to_json(const Demonstration& d) {
  json frames = json::array();
  for (const auto& fr : d.frames)
    frames.push_back({{"t", fr.t}, {"s", detail::from_vec(fr.s)}, {"a", detail::from_vec(fr.a)}, {"f", detail::from_vec(fr.f)}});
  return {{"id", d.id}, {"frames", std::move(frames)}};
}

inline json corpus_to_json(const ObservationSet& set) {
  json header = {{"dt", set.dt},
                 {"feature_names", set.feature_names},
                 {"workspace",
                  {{"min", {set.workspace.min(0), set.workspace.min(1)}},
                   {"max", {set.workspace.max(0), set.workspace.max(1)}}}}};
  json demos = json::array();
  for (const auto& d : set.demos) demos.push_back(demo_to_json(d));
  json out = {{"header", header}, {"demos", demos}};
  if (set.norm) out["norm"] = norm_to_json(*set.norm);
  return out;
}

inline ObservationSet corpus_from_json(const json& j) {
  ObservationSet set;
  if (!j.is_object() || !j.contains("header") || !j.contains("demos"))
    throw SchemaError("corpus: missing 'header' or 'demos'");
  const json& h = j.at("header");
  if (!h.contains("dt") || !h.at("dt").is_number()) throw SchemaError("header.dt: missing or not a number");
  set.dt = h.at("dt").get<double>();
  if (!(set.dt > 0.0)) throw ValidationError("header.dt must be positive");
  if (h.contains("feature_names")) set.feature_names = h.at("feature_names").get<std::vector<std::string>>();
  if (h.contains("workspace")) {
    const Vec lo = detail::to_vec(h.at("workspace").at("min"), "header.workspace.min");
    const Vec hi = detail::to_vec(h.at("workspace").at("max"), "header.workspace.max");
    if (lo.size() != 2 || hi.size() != 2) throw SchemaError("header.workspace: bounds must be 2-D");
    set.workspace.min = lo;
    set.workspace.max = hi;
  }
  std::size_t fdim = set.feature_names.size();
  bool fdim_known = !set.feature_names.empty();
  for (std::size_t di = 0; di < j.at("demos").size(); ++di) {
    const json& dj = j.at("demos")[di];
    const std::string dtag = "demos[" + std::to_string(di) + "]";
    if (!dj.contains("id") || !dj.at("id").is_number_integer()) throw SchemaError(dtag + ".id: missing or not an integer");
    if (!dj.contains("frames") || !dj.at("frames").is_array()) throw SchemaError(dtag + ".frames: missing");
    Demonstration d;
    d.id = dj.at("id").get<int>();
    d.dt = set.dt;
    bool has_actions = true;
    for (std::size_t fi = 0; fi < dj.at("frames").size(); ++fi) {
      const json& fj = dj.at("frames")[fi];
      const std::string ftag = dtag + ".frames[" + std::to_string(fi) + "]";
      if (!fj.contains("t") || !fj.at("t").is_number()) throw SchemaError(ftag + ".t: missing or not a number");
      if (!fj.contains("s")) throw SchemaError(ftag + ".s: missing");
      Frame fr;
      fr.t = fj.at("t").get<double>();
      fr.s = detail::to_vec(fj.at("s"), ftag + ".s");
      fr.f = fj.contains("f") ? detail::to_vec(fj.at("f"), ftag + ".f") : Vec();
      if (fj.contains("a")) {
        fr.a = detail::to_vec(fj.at("a"), ftag + ".a");
      } else {
        has_actions = false;
        fr.a = Vec::Zero(fr.s.size());
      }
      if (!fdim_known) {
        fdim = static_cast<std::size_t>(fr.f.size());
        fdim_known = true;
      }
      d.frames.push_back(std::move(fr));
    }
    if (!has_actions) fill_actions(d);
    validate_demo(d, fdim);
    for (std::size_t fi = 0; fi < d.frames.size(); ++fi)
      if (!set.workspace.contains(d.frames[fi].s))
        throw ValidationError("demo " + std::to_string(d.id) + " frame " + std::to_string(fi) + ": state outside workspace");
    set.demos.push_back(std::move(d));
  }
  if (j.contains("norm")) set.norm = norm_from_json(j.at("norm"));
  return set;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j, int indent = -1) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(indent) << '\n';
}

inline ObservationSet load_corpus(const std::string& path) { return corpus_from_json(read_json_file(path)); }

inline void save_corpus(const ObservationSet& set, const std::string& path) { write_json_file(path, corpus_to_json(set)); }

// Corpus-level mean/min/max over the pooled frames of all demos.
inline NormParams compute_norm(const ObservationSet& set) {
  const auto F = static_cast<Eigen::Index>(set.feature_dim());
  NormParams p;
  p.mean = Vec::Zero(F);
  p.min = Vec::Constant(F, std::numeric_limits<double>::infinity());
  p.max = Vec::Constant(F, -std::numeric_limits<double>::infinity());
  std::size_t n = 0;
  for (const auto& d : set.demos)
    for (const auto& fr : d.frames) {
      p.mean += fr.f;
      p.min = p.min.cwiseMin(fr.f);
      p.max = p.max.cwiseMax(fr.f);
      ++n;
    }
  if (n == 0) throw ValidationError("normalize_features: no frames");
  p.mean /= static_cast<double>(n);
  p.constant.resize(static_cast<std::size_t>(F));
  for (Eigen::Index j = 0; j < F; ++j) p.constant[j] = !(p.max(j) > p.min(j));
  return p;
}

inline ObservationSet apply_norm(ObservationSet set, const NormParams& p) {
  for (auto& d : set.demos)
    for (auto& fr : d.frames) fr.f = p.apply(fr.f);
  set.norm = p;
  return set;
}

inline std::pair<ObservationSet, NormParams> normalize_features(const ObservationSet& set) {
  NormParams p = compute_norm(set);
  return {apply_norm(set, p), p};
}

inline json labels_to_json(const LabelMap& labels) {
  json j = json::object();
  for (const auto& [id, l] : labels) j[std::to_string(id)] = l;
  return j;
}

inline LabelMap labels_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("labels: expected object {demo_id: [labels]}");
  LabelMap out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    int id = 0;
    try {
      id = std::stoi(it.key());
    } catch (const std::exception&) {
      throw SchemaError("labels: key '" + it.key() + "' is not a demo id");
    }
    out[id] = it.value().get<std::vector<int>>();
  }
  return out;
}

inline LabelMap load_labels(const std::string& path) { return labels_from_json(read_json_file(path)); }
inline void save_labels(const LabelMap& labels, const std::string& path) { write_json_file(path, labels_to_json(labels)); }

}  // namespace lfd
