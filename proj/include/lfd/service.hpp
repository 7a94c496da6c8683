#pragma once

// Serve mode: one teaching and execution session behind an HTTP API under
// /v1/. A single worker thread owns the task model and the world; request
// handlers only enqueue jobs or cycle-boundary commands and read published
// snapshots. Every cycle and phase change goes to an append-only channel
// that observers read as server-sent events.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "pipeline.hpp"

// after Eigen: <resolv.h>, pulled in here, defines a macro named _res
#include <httplib.h>

namespace lfd::service {

enum class Phase { idle, demo_capture, segmenting, refining, executing, awaiting_recovery_demo, awaiting_confirmation };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::idle: return "idle";
    case Phase::demo_capture: return "demo-capture";
    case Phase::segmenting: return "segmenting";
    case Phase::refining: return "refining";
    case Phase::executing: return "executing";
    case Phase::awaiting_recovery_demo: return "awaiting-recovery-demo";
    case Phase::awaiting_confirmation: return "awaiting-confirmation";
  }
  return "?";
}

class StaleSession : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PhaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only message log; one producer, any number of readers.
class Channel {
 public:
  void publish(std::string msg) {
    {
      std::lock_guard<std::mutex> lk(m_);
      log_.push_back(std::move(msg));
    }
    cv_.notify_all();
  }

  // Messages from index `from` on, waiting up to `timeout` when there are
  // none yet. Returns false once the channel is closed and drained.
  bool read(std::size_t from, std::vector<std::string>& out, std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lk(m_);
    cv_.wait_for(lk, timeout, [&] { return closed_ || log_.size() > from; });
    for (std::size_t i = from; i < log_.size(); ++i) out.push_back(log_[i]);
    return !(closed_ && from >= log_.size());
  }

  void close() {
    {
      std::lock_guard<std::mutex> lk(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lk(m_);
    return log_.size();
  }

 private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::vector<std::string> log_;
  bool closed_ = false;
};

struct LiveCommand {
  enum class Kind { inject, stop, confirm } kind = Kind::stop;
  sim::AnomalySpec spec;
  bool answer = false;
};

inline std::string new_session_id() {
  std::random_device rd;
  std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
  static const char* hex = "0123456789abcdef";
  std::string id;
  for (int i = 0; i < 16; ++i) id += hex[rng() % 16];
  return id;
}

class Session {
 public:
  // `save_path` (optional) receives the model after every change; `pace`
  // spaces episode cycles out in wall time so observers can follow them.
  Session(TaskGraph g, EngineConfig cfg, std::string save_path = {}, std::chrono::milliseconds pace = {})
      : g_(std::move(g)), cfg_(std::move(cfg)), save_path_(std::move(save_path)), pace_(pace), id_(new_session_id()) {
    publish_snapshot();
    worker_ = std::thread([this] { work(); });
  }

  ~Session() {
    {
      std::lock_guard<std::mutex> lk(m_);
      quit_ = true;
      live_.push_back({LiveCommand::Kind::stop, {}, false});
    }
    cv_.notify_all();
    worker_.join();
    channel_.close();
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  std::string id() const {
    std::lock_guard<std::mutex> lk(m_);
    return id_;
  }

  void check(const std::string& sid) const {
    if (sid != id()) throw StaleSession("session '" + sid + "' is not the live session");
  }

  json snapshot() const {
    std::lock_guard<std::mutex> lk(m_);
    return snapshot_;
  }

  json graph() const {
    std::lock_guard<std::mutex> lk(m_);
    return graph_json_;
  }

  json last_episode() const {
    std::lock_guard<std::mutex> lk(m_);
    return last_episode_;
  }

  Channel& channel() { return channel_; }

  // Episode jobs resolve when the episode ends.
  std::future<json> start_episode(const sim::Scenario& sc) {
    return enqueue([this, sc] { return run(sc); });
  }

  std::future<json> submit_demo(std::vector<Eigen::Vector2d> states) {
    return enqueue([this, states = std::move(states)] {
      require({Phase::idle, Phase::demo_capture}, "demo capture");
      const int id = static_cast<int>(captured_.size()) + 1;
      captured_.push_back(sim::replay_states(states, id, cfg_.sim));
      set_phase(Phase::demo_capture);
      return json{{"demo_id", id}, {"frames", captured_.back().size()}, {"demo", demo_to_json(captured_.back())}};
    });
  }

  std::future<json> segment() {
    return enqueue([this] {
      require({Phase::demo_capture}, "segmentation");
      set_phase(Phase::segmenting);
      try {
        const ObservationSet corpus = sim::make_corpus(captured_, cfg_.sim);
        Segmentation seg = segment_corpus(corpus, cfg_.sampler, [this](int chain, int it, int k, double lp) {
          if (it % 100 == 0) channel_.publish(json{{"type", "progress"}, {"chain", chain}, {"iteration", it}, {"K", k}, {"logprob", lp}}.dump());
        });
        const json labels = labels_to_json(seg.labels);
        g_ = build_task_model(corpus, std::move(seg), cfg_.motion, cfg_.sampler.mode);
        captured_.clear();
        model_changed();
        set_phase(Phase::idle);
        return json{{"skills", g_.nominal.size()}, {"labels", labels}};
      } catch (...) {
        set_phase(Phase::demo_capture);
        throw;
      }
    });
  }

  // Recovery from the halt state, as drawn states or the scripted recovery.
  std::future<json> submit_recovery(std::vector<Eigen::Vector2d> states, std::optional<std::uint64_t> scripted_seed) {
    return enqueue([this, states = std::move(states), scripted_seed] {
      require({Phase::awaiting_recovery_demo}, "recovery teaching");
      const Demonstration d = scripted_seed ? sim::scripted_recovery(halt_state_, *scripted_seed, 0.0, 1, cfg_.sim).demo
                                            : sim::replay_states(states, 1, cfg_.sim, 0, halt_state_);
      const std::vector<int> ids = teach_recovery(g_, pending_skill_, pending_label_, sim::make_corpus(std::vector<Demonstration>{d}, cfg_.sim), cfg_.sampler);
      model_changed();
      set_phase(Phase::idle);
      return json{{"skill", pending_skill_}, {"label", pending_label_}, {"chain", ids}, {"frames", d.size()}};
    });
  }

  // Refinement from the last episode's unconfident cycles, or from a
  // corrective trajectory replayed from where the episode stopped.
  std::future<json> refine(std::vector<Eigen::Vector2d> states) {
    return enqueue([this, states = std::move(states)] {
      require({Phase::refining}, "refinement");
      RefinementSet ref;
      if (states.empty()) {
        ref = refinement_from_cycles(logged_cycles(last_log_), true);
      } else {
        const Demonstration d = sim::replay_states(states, 0, cfg_.sim, 0, last_log_.final_state);
        for (const auto& fr : d.frames) ref.entries.push_back({refine_skill_, fr});
      }
      merge_refinement(g_, ref);
      model_changed();
      set_phase(Phase::idle);
      return json{{"skill", refine_skill_}, {"rows", ref.entries.size()}};
    });
  }

  // Replaces the session id; requests carrying the old one are rejected.
  std::future<json> reset() {
    return enqueue([this] {
      captured_.clear();
      {
        std::lock_guard<std::mutex> lk(m_);
        id_ = new_session_id();
      }
      set_phase(Phase::idle);
      return json{{"session_id", id()}};
    });
  }

  // Commands applied by the running episode at its next cycle boundary.
  void push(const LiveCommand& c) {
    {
      std::lock_guard<std::mutex> lk(m_);
      if (c.kind == LiveCommand::Kind::confirm && phase_ != Phase::awaiting_confirmation)
        throw PhaseError("no confirmation query is pending");
      if (c.kind != LiveCommand::Kind::confirm && phase_ != Phase::executing && phase_ != Phase::awaiting_confirmation)
        throw PhaseError("no episode is running");
      live_.push_back(c);
    }
    cv_.notify_all();
  }

 private:
  template <class F>
  std::future<json> enqueue(F f) {
    auto task = std::make_shared<std::packaged_task<json()>>(std::move(f));
    std::future<json> fut = task->get_future();
    {
      std::lock_guard<std::mutex> lk(m_);
      jobs_.push_back([task] { (*task)(); });
    }
    cv_.notify_all();
    return fut;
  }

  void work() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return quit_ || !jobs_.empty(); });
        if (quit_) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  void require(std::initializer_list<Phase> allowed, const std::string& what) const {
    for (Phase p : allowed)
      if (p == phase_) return;
    throw PhaseError(what + " is not allowed in phase " + to_string(phase_));
  }

  void set_phase(Phase p) {
    {
      std::lock_guard<std::mutex> lk(m_);
      phase_ = p;
    }
    publish_snapshot();
    channel_.publish(json{{"type", "phase"}, {"phase", to_string(p)}}.dump());
  }

  void model_changed() {
    if (!save_path_.empty()) save_graph(g_, save_path_);
    const json gj = graph_to_json(g_);
    std::lock_guard<std::mutex> lk(m_);
    graph_json_ = gj;
  }

  void publish_snapshot() {
    json rec = json::array();
    for (const auto& [owner, by_label] : g_.branches)
      for (const auto& [label, chains] : by_label)
        if (!chains.empty()) rec.push_back({{"skill", owner}, {"label", label}, {"chain", chains.back()}});
    std::lock_guard<std::mutex> lk(m_);
    if (graph_json_.is_null()) graph_json_ = graph_to_json(g_);
    snapshot_ = {{"session_id", id_},
                 {"phase", to_string(phase_)},
                 {"episodes", episodes_},
                 {"skills", g_.skills.size()},
                 {"nominal", g_.nominal},
                 {"recoveries", rec},
                 {"ablation", g_.ablation},
                 {"segmentation_mode", g_.segmentation_mode},
                 {"captured_demos", captured_.size()},
                 {"pending", phase_ == Phase::awaiting_recovery_demo
                                 ? json{{"skill", pending_skill_}, {"label", pending_label_}}
                                 : json(nullptr)}};
  }

  // Takes the first command of the given kind, or a stop.
  std::optional<LiveCommand> take(LiveCommand::Kind kind) {
    for (auto it = live_.begin(); it != live_.end(); ++it)
      if (it->kind == kind || it->kind == LiveCommand::Kind::stop) {
        LiveCommand c = *it;
        if (c.kind != LiveCommand::Kind::stop) live_.erase(it);
        return c;
      }
    return std::nullopt;
  }

  json run(const sim::Scenario& sc) {
    require({Phase::idle, Phase::awaiting_recovery_demo, Phase::refining}, "episode start");
    {
      std::lock_guard<std::mutex> lk(m_);
      ++episodes_;
      live_.clear();
    }
    const int episode = episodes_;
    set_phase(Phase::executing);
    channel_.publish(json{{"type", "episode_start"}, {"episode", episode}, {"scenario", sim::scenario_to_json(sc)}}.dump());

    EpisodeHooks hooks;
    hooks.before_cycle = [this](sim::World& w, int n) {
      std::unique_lock<std::mutex> lk(m_);
      if (pace_.count() > 0) cv_.wait_for(lk, pace_, [&] { return quit_ || !live_.empty(); });
      bool go = true;
      for (const auto& c : live_) {
        if (c.kind == LiveCommand::Kind::stop) go = false;
        if (c.kind == LiveCommand::Kind::inject) {
          sim::AnomalySpec a = c.spec;
          a.onset = std::max(a.onset, n);
          w.inject(a);
        }
      }
      live_.clear();
      return go;
    };
    hooks.on_cycle = [this, episode](const CycleRecord& r) {
      json j = cycle_to_json(r);
      j["type"] = "cycle";
      j["episode"] = episode;
      channel_.publish(j.dump());
    };
    hooks.on_anomaly = [this, episode](const AnomalyEvent& a) {
      json j = anomaly_to_json(a);
      j.erase("window");
      j["type"] = "anomaly";
      j["episode"] = episode;
      channel_.publish(j.dump());
    };
    NoveltyOracle oracle = [this] {
      set_phase(Phase::awaiting_confirmation);
      std::optional<LiveCommand> c;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return (c = take(LiveCommand::Kind::confirm)).has_value(); });
      }
      set_phase(Phase::executing);
      if (c->kind == LiveCommand::Kind::stop) return std::optional<bool>();
      return std::optional<bool>(c->answer);
    };

    sim::World w = make_world(sc, cfg_.sim);
    last_log_ = run_episode(g_, w, cfg_.execution, oracle, hooks);
    model_changed();

    Phase next = Phase::idle;
    if (last_log_.outcome == Outcome::anomaly_halt && !last_log_.anomalies.empty()) {
      const AnomalyEvent& a = last_log_.anomalies.back();
      if (a.label > 0 && !g_.recovery(a.skill, a.label)) {
        next = Phase::awaiting_recovery_demo;
        pending_skill_ = a.skill;
        pending_label_ = a.label;
        halt_state_ = last_log_.final_state;
      }
    } else if (last_log_.outcome == Outcome::refinement_halt) {
      next = Phase::refining;
      refine_skill_ = last_log_.cycles.back().skill_id;
    }
    json summary = episode_summary(last_log_);
    for (auto& a : summary["anomalies"]) a.erase("window");
    json cycles = json::array();
    for (const auto& r : last_log_.cycles) cycles.push_back(cycle_to_json(r));
    {
      std::lock_guard<std::mutex> lk(m_);
      last_episode_ = {{"episode", episode}, {"summary", summary}, {"cycles", cycles}};
    }
    channel_.publish(json{{"type", "episode_end"}, {"episode", episode}, {"outcome", to_string(last_log_.outcome)}, {"summary", summary}}.dump());
    set_phase(next);
    return json{{"episode", episode}, {"outcome", to_string(last_log_.outcome)}};
  }

  // worker-owned
  TaskGraph g_;
  EngineConfig cfg_;
  std::string save_path_;
  std::chrono::milliseconds pace_;
  std::vector<Demonstration> captured_;
  EpisodeLog last_log_;
  sim::WorldState halt_state_;
  int pending_skill_ = 0, pending_label_ = 0, refine_skill_ = 0;

  // shared, guarded by m_
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::string id_;
  Phase phase_ = Phase::idle;
  int episodes_ = 0;
  std::deque<std::function<void()>> jobs_;
  std::deque<LiveCommand> live_;
  bool quit_ = false;
  json snapshot_, graph_json_, last_episode_;

  Channel channel_;
  std::thread worker_;
};

namespace detail {

inline void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline std::vector<Eigen::Vector2d> states_of(const json& body) {
  std::vector<Eigen::Vector2d> out;
  if (!body.contains("states")) return out;
  for (const auto& s : body.at("states")) {
    const Vec v = lfd::detail::to_vec(s, "states");
    if (v.size() != 2) throw SchemaError("states: expected [x, y] pairs");
    out.emplace_back(v(0), v(1));
  }
  return out;
}

}  // namespace detail

// Mounts the /v1/ endpoints. `on_shutdown` is called by POST /v1/shutdown.
inline void mount(httplib::Server& svr, Session& s, std::function<void()> on_shutdown = {}) {
  using httplib::Request;
  using httplib::Response;

  // Runs a handler, mapping errors to named JSON errors.
  auto guard = [](auto fn) {
    return [fn](const Request& req, Response& res) {
      try {
        fn(req, res);
      } catch (const StaleSession& e) {
        detail::reply(res, 409, {{"error", "stale_session"}, {"message", e.what()}});
      } catch (const PhaseError& e) {
        detail::reply(res, 409, {{"error", "phase"}, {"message", e.what()}});
      } catch (const json::exception& e) {
        detail::reply(res, 400, {{"error", "schema"}, {"message", e.what()}});
      } catch (const SchemaError& e) {
        detail::reply(res, 400, {{"error", "schema"}, {"message", e.what()}});
      } catch (const ValidationError& e) {
        detail::reply(res, 400, {{"error", "validation"}, {"message", e.what()}});
      } catch (const std::exception& e) {
        detail::reply(res, 500, {{"error", "internal"}, {"message", e.what()}});
      }
    };
  };
  // Parses the body and checks its session id.
  auto body_of = [&s](const Request& req) {
    const json b = json::parse(req.body);
    s.check(b.at("session_id").get<std::string>());
    return b;
  };

  svr.Get("/v1/session", guard([&s](const Request&, Response& res) { detail::reply(res, 200, s.snapshot()); }));
  svr.Get("/v1/model", guard([&s](const Request&, Response& res) {
            json snap = s.snapshot();
            detail::reply(res, 200, {{"skills", snap["skills"]}, {"nominal", snap["nominal"]}, {"recoveries", snap["recoveries"]},
                                     {"ablation", snap["ablation"]}, {"segmentation_mode", snap["segmentation_mode"]}});
          }));
  svr.Get("/v1/graph", guard([&s](const Request&, Response& res) { detail::reply(res, 200, s.graph()); }));
  svr.Get("/v1/episodes/last", guard([&s](const Request&, Response& res) {
            const json e = s.last_episode();
            if (e.is_null()) return detail::reply(res, 404, {{"error", "not_found"}, {"message", "no episode has run"}});
            detail::reply(res, 200, e);
          }));
  svr.Post("/v1/episodes", guard([&s, body_of](const Request& req, Response& res) {
             const json b = body_of(req);
             s.start_episode(sim::scenario_from_json(b.at("scenario")));
             detail::reply(res, 202, {{"accepted", true}});
           }));
  svr.Post("/v1/episodes/stop", guard([&s, body_of](const Request& req, Response& res) {
             body_of(req);
             s.push({LiveCommand::Kind::stop, {}, false});
             detail::reply(res, 202, {{"accepted", true}});
           }));
  svr.Post("/v1/anomalies", guard([&s, body_of](const Request& req, Response& res) {
             const json b = body_of(req);
             sim::Scenario sc = sim::scenario_from_json({{"seed", 0}, {"anomalies", json::array({b.at("anomaly")})}});
             s.push({LiveCommand::Kind::inject, sc.anomalies.front(), false});
             detail::reply(res, 202, {{"accepted", true}});
           }));
  svr.Post("/v1/confirm", guard([&s, body_of](const Request& req, Response& res) {
             const json b = body_of(req);
             s.push({LiveCommand::Kind::confirm, {}, b.at("answer").get<bool>()});
             detail::reply(res, 202, {{"accepted", true}});
           }));
  svr.Post("/v1/demos", guard([&s, body_of](const Request& req, Response& res) {
             const json b = body_of(req);
             detail::reply(res, 200, s.submit_demo(detail::states_of(b)).get());
           }));
  svr.Post("/v1/segment", guard([&s, body_of](const Request& req, Response& res) {
             body_of(req);
             detail::reply(res, 200, s.segment().get());
           }));
  svr.Post("/v1/recovery", guard([&s, body_of](const Request& req, Response& res) {
             const json b = body_of(req);
             std::optional<std::uint64_t> seed;
             if (b.contains("scripted_seed")) seed = b.at("scripted_seed").get<std::uint64_t>();
             detail::reply(res, 200, s.submit_recovery(detail::states_of(b), seed).get());
           }));
  svr.Post("/v1/refine", guard([&s, body_of](const Request& req, Response& res) {
             const json b = body_of(req);
             detail::reply(res, 200, s.refine(detail::states_of(b)).get());
           }));
  svr.Post("/v1/session/reset", guard([&s, body_of](const Request& req, Response& res) {
             body_of(req);
             detail::reply(res, 200, s.reset().get());
           }));
  svr.Post("/v1/shutdown", guard([on_shutdown](const Request&, Response& res) {
             detail::reply(res, 202, {{"accepted", true}});
             if (on_shutdown) on_shutdown();
           }));

  // Server-sent events from message `from` on; `until=episode_end` closes
  // the stream after the next episode end.
  svr.Get("/v1/stream", [&s](const Request& req, Response& res) {
    std::size_t from = req.has_param("from") ? std::stoul(req.get_param_value("from")) : 0;
    const bool until_end = req.get_param_value("until") == "episode_end";
    res.set_chunked_content_provider("text/event-stream", [&s, from, until_end](std::size_t, httplib::DataSink& sink) mutable {
      std::vector<std::string> msgs;
      const bool open = s.channel().read(from, msgs, std::chrono::milliseconds(200));
      for (const auto& m : msgs) {
        const std::string ev = "id: " + std::to_string(from++) + "\ndata: " + m + "\n\n";
        if (!sink.write(ev.data(), ev.size())) return false;
        if (until_end && m.find("\"type\":\"episode_end\"") != std::string::npos) {
          sink.done();
          return true;
        }
      }
      if (!open) sink.done();
      return true;
    });
  });
}

}  // namespace lfd::service
