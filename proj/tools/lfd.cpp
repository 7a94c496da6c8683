// Command-line surface: demo generation, segmentation, execution, refinement,
// recovery teaching, evaluation and serve mode.
//
// Exit codes: 0 success, 1 invalid input or runtime error, 2 anomaly halt,
// 3 timeout, 4 refinement halt, 5 stopped.

#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lfd/config.hpp"
#include "lfd/metrics.hpp"
#include "lfd/pipeline.hpp"
#include "lfd/service.hpp"

namespace {

using namespace lfd;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("--config", path, "engine config JSON");
    app->add_option("--set", sets, "override a config value, e.g. sampler.iterations=200");
  }

  EngineConfig load() const {
    json j = path.empty() ? config_to_json(EngineConfig{}) : read_json_file(path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
      json value;
      try {
        value = json::parse(raw);
      } catch (const json::parse_error&) {
        value = raw;
      }
      json* at = &j;
      std::stringstream ks(key);
      std::string part;
      while (std::getline(ks, part, '.')) at = &(*at)[part];
      *at = value;
    }
    return config_from_json(j);
  }
};

int exit_code(Outcome o) {
  switch (o) {
    case Outcome::success: return 0;
    case Outcome::anomaly_halt: return 2;
    case Outcome::timeout: return 3;
    case Outcome::refinement_halt: return 4;
    case Outcome::stopped: return 5;
  }
  return 1;
}

// "kind@onset" or "kind@onset:magnitude"
sim::AnomalySpec parse_inject(const std::string& s) {
  const auto at = s.find('@');
  if (at == std::string::npos) throw ValidationError("--inject expects kind@onset[:magnitude], got '" + s + "'");
  sim::AnomalySpec a;
  a.kind = sim::anomaly_kind_from_string(s.substr(0, at));
  const std::string rest = s.substr(at + 1);
  const auto colon = rest.find(':');
  try {
    a.onset = std::stoi(rest.substr(0, colon));
    a.magnitude = colon == std::string::npos ? sim::default_magnitude(a.kind) : std::stod(rest.substr(colon + 1));
  } catch (const std::logic_error&) {
    throw ValidationError("--inject: bad number in '" + s + "'");
  }
  if (a.onset < 0) throw ValidationError("--inject: onset must be non-negative");
  return a;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::atomic<httplib::Server*> g_server{nullptr};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learning-from-demonstration engine"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "progress on stderr");

  // demo
  auto* demo = app.add_subcommand("demo", "generate scripted demonstrations");
  std::string demo_scenario, demo_out, demo_labels, demo_recovery;
  int demo_count = 3;
  ConfigArgs demo_cfg;
  demo->add_option("--scenario", demo_scenario, "scenario JSON (seed, variation)")->required();
  demo->add_option("--out", demo_out, "corpus file to write")->required();
  demo->add_option("--count", demo_count, "number of demonstrations")->check(CLI::PositiveNumber);
  demo->add_option("--labels", demo_labels, "ground-truth label file to write");
  demo->add_option("--recovery-from", demo_recovery, "session file of a halted episode; writes its scripted recovery");
  demo_cfg.add(demo);

  // segment
  auto* seg = app.add_subcommand("segment", "segment a corpus into skills and build the task model");
  std::string seg_corpus, seg_out, seg_mode, seg_labels_out;
  ConfigArgs seg_cfg;
  seg->add_option("--corpus", seg_corpus, "corpus file")->required();
  seg->add_option("--out", seg_out, "task model to write")->required();
  seg->add_option("--mode", seg_mode, "bngirl, bngmm or bnirl");
  seg->add_option("--labels-out", seg_labels_out, "predicted label file to write");
  seg_cfg.add(seg);

  // execute
  auto* exe = app.add_subcommand("execute", "run one episode in the simulator");
  std::string exe_model, exe_scenario, exe_log, exe_confirm = "yes", exe_model_out, exe_session;
  std::vector<std::string> exe_inject;
  bool exe_no_update = false;
  ConfigArgs exe_cfg;
  exe->add_option("--model", exe_model, "task model")->required();
  exe->add_option("--scenario", exe_scenario, "scenario JSON")->required();
  exe->add_option("--log", exe_log, "episode log to write (JSON lines)")->required();
  exe->add_option("--inject", exe_inject, "extra anomaly kind@onset[:magnitude]");
  exe->add_option("--confirm", exe_confirm, "answer to a novelty query: yes, no or none")
      ->check(CLI::IsMember({"yes", "no", "none"}));
  exe->add_option("--model-out", exe_model_out, "where the updated model goes (default: --model)");
  exe->add_flag("--no-update", exe_no_update, "do not write the updated anomaly memory");
  exe->add_option("--session", exe_session, "session file (default: <log>.session.json)");
  exe_cfg.add(exe);

  // refine
  auto* ref = app.add_subcommand("refine", "merge logged cycles as refinement data");
  std::string ref_model, ref_log, ref_out;
  bool ref_all = false;
  ref->add_option("--model", ref_model, "task model")->required();
  ref->add_option("--log", ref_log, "episode log")->required();
  ref->add_option("--out", ref_out, "model to write (default: --model)");
  ref->add_flag("--all", ref_all, "use every cycle, not only those outside the training support");

  // teach-recovery
  auto* rec = app.add_subcommand("teach-recovery", "segment a recovery demonstration and append it as a branch");
  std::string rec_model, rec_corpus, rec_out, rec_session;
  int rec_skill = 0, rec_label = 0;
  ConfigArgs rec_cfg;
  rec->add_option("--model", rec_model, "task model")->required();
  rec->add_option("--corpus", rec_corpus, "recovery corpus")->required();
  rec->add_option("--skill", rec_skill, "skill that raised the anomaly");
  rec->add_option("--label", rec_label, "anomaly label");
  rec->add_option("--session", rec_session, "take skill and label from a session file");
  rec->add_option("--out", rec_out, "model to write (default: --model)");
  rec_cfg.add(rec);

  // eval-seg
  auto* es = app.add_subcommand("eval-seg", "segmentation report against ground truth");
  std::string es_corpus, es_labels, es_pred, es_modes = "bngirl,bngmm,bnirl", es_out;
  ConfigArgs es_cfg;
  es->add_option("--labels", es_labels, "ground-truth label file")->required();
  es->add_option("--corpus", es_corpus, "corpus to segment under each mode");
  es->add_option("--pred", es_pred, "predicted label file (skips segmentation)");
  es->add_option("--modes", es_modes, "comma-separated modes");
  es->add_option("--out", es_out, "report JSON to write");
  es_cfg.add(es);

  // eval-anom
  auto* ea = app.add_subcommand("eval-anom", "fault-injection benchmark");
  std::string ea_model, ea_kinds = "force_drop,force_spike,external_push", ea_out;
  int ea_episodes = 10;
  double ea_variation = 0.25;
  std::uint64_t ea_seed = 200;
  ConfigArgs ea_cfg;
  ea->add_option("--model", ea_model, "task model")->required();
  ea->add_option("--kinds", ea_kinds, "comma-separated anomaly kinds");
  ea->add_option("--episodes", ea_episodes, "episodes per kind")->check(CLI::PositiveNumber);
  ea->add_option("--variation", ea_variation, "scenario variation");
  ea->add_option("--seed", ea_seed, "first scenario seed");
  ea->add_option("--out", ea_out, "report JSON to write");
  ea_cfg.add(ea);

  // serve
  auto* srv = app.add_subcommand("serve", "serve the teaching and execution session over HTTP");
  std::string srv_model, srv_host = "127.0.0.1";
  int srv_port = 8080;
  bool srv_save = false;
  int srv_pace = 0;
  ConfigArgs srv_cfg;
  srv->add_option("--model", srv_model, "task model")->required();
  srv->add_option("--port", srv_port, "port")->check(CLI::Range(1, 65535));
  srv->add_option("--host", srv_host, "bind address");
  srv->add_flag("--save", srv_save, "write the model back after every change");
  srv->add_option("--pace-ms", srv_pace, "wall-time milliseconds per execution cycle")->check(CLI::NonNegativeNumber);
  srv_cfg.add(srv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  const ProgressFn progress = [verbose](int chain, int it, int k, double lp) {
    if (verbose && it % 100 == 0) std::cerr << "chain " << chain << " iteration " << it << " K=" << k << " log p=" << lp << "\n";
  };

  try {
    if (*demo) {
      const EngineConfig cfg = demo_cfg.load();
      if (!demo_recovery.empty()) {
        const json s = read_json_file(demo_recovery);
        if (s.at("phase").get<std::string>() != "awaiting-recovery-demo")
          throw ValidationError("session is not awaiting a recovery demonstration");
        const sim::Scenario sc = sim::load_scenario(demo_scenario);
        const sim::LabeledDemo d = sim::scripted_recovery(sim::world_state_from_json(s.at("halt_state")), sc.seed, sc.variation, 1, cfg.sim);
        save_corpus(sim::make_corpus({d}, cfg.sim), demo_out);
        if (!demo_labels.empty()) save_labels({{1, d.labels}}, demo_labels);
        std::cout << "recovery demonstration: " << d.demo.size() << " frames\n";
        return 0;
      }
      const sim::Scenario sc = sim::load_scenario(demo_scenario);
      std::vector<sim::LabeledDemo> demos;
      LabelMap gt;
      for (int i = 0; i < demo_count; ++i) {
        demos.push_back(sim::scripted_demo(sc.seed + static_cast<std::uint64_t>(i), sc.variation, i + 1, cfg.sim));
        gt[i + 1] = demos.back().labels;
      }
      save_corpus(sim::make_corpus(demos, cfg.sim), demo_out);
      if (!demo_labels.empty()) save_labels(gt, demo_labels);
      std::cout << demo_count << " demonstrations written to " << demo_out << "\n";
      return 0;
    }

    if (*seg) {
      EngineConfig cfg = seg_cfg.load();
      if (!seg_mode.empty()) cfg.sampler.mode = seg_mode_from_string(seg_mode);
      const ObservationSet corpus = load_corpus(seg_corpus);
      Segmentation s = segment_corpus(corpus, cfg.sampler, progress);
      if (!seg_labels_out.empty()) save_labels(s.labels, seg_labels_out);
      const TaskGraph g = build_task_model(corpus, std::move(s), cfg.motion, cfg.sampler.mode);
      save_graph(g, seg_out);
      std::cout << g.nominal.size() << " skills (" << to_string(cfg.sampler.mode) << ") written to " << seg_out << "\n";
      return 0;
    }

    if (*exe) {
      const EngineConfig cfg = exe_cfg.load();
      TaskGraph g = load_graph(exe_model);
      sim::Scenario sc = sim::load_scenario(exe_scenario);
      for (const auto& a : exe_inject) sc.anomalies.push_back(parse_inject(a));
      const NoveltyOracle oracle = [&]() -> std::optional<bool> {
        if (exe_confirm == "none") return std::nullopt;
        return exe_confirm == "yes";
      };
      const EpisodeLog log = execute(g, sc, cfg, oracle);
      save_episode(log, exe_log);
      const std::string model_out = exe_model_out.empty() ? exe_model : exe_model_out;
      if (!exe_no_update) save_graph(g, model_out);

      std::string phase = "idle";
      json session = {{"log", exe_log}, {"model", exe_no_update ? exe_model : model_out}, {"outcome", to_string(log.outcome)}};
      if (log.outcome == Outcome::anomaly_halt && !log.anomalies.empty()) {
        const AnomalyEvent& a = log.anomalies.back();
        if (a.label > 0 && !g.recovery(a.skill, a.label)) {
          phase = "awaiting-recovery-demo";
          session["skill"] = a.skill;
          session["label"] = a.label;
          session["halt_state"] = sim::world_state_to_json(log.final_state);
        }
      } else if (log.outcome == Outcome::refinement_halt) {
        phase = "refining";
        session["skill"] = log.cycles.back().skill_id;
      }
      session["phase"] = phase;
      write_json_file(exe_session.empty() ? exe_log + ".session.json" : exe_session, session, 2);
      std::cout << to_string(log.outcome) << " after " << log.cycles.size() << " cycles, " << log.anomaly_triggers()
                << " anomaly and " << log.refinement_triggers() << " refinement triggers\n";
      return exit_code(log.outcome);
    }

    if (*ref) {
      TaskGraph g = load_graph(ref_model);
      const RefinementSet rs = refinement_from_cycles(load_episode_cycles(ref_log), !ref_all);
      merge_refinement(g, rs);
      save_graph(g, ref_out.empty() ? ref_model : ref_out);
      std::cout << rs.entries.size() << " refinement rows merged\n";
      return 0;
    }

    if (*rec) {
      const EngineConfig cfg = rec_cfg.load();
      if (!rec_session.empty()) {
        const json s = read_json_file(rec_session);
        rec_skill = s.at("skill").get<int>();
        rec_label = s.at("label").get<int>();
      }
      if (rec_skill <= 0 || rec_label <= 0) throw ValidationError("teach-recovery needs --skill and --label, or --session");
      TaskGraph g = load_graph(rec_model);
      const std::vector<int> ids = teach_recovery(g, rec_skill, rec_label, load_corpus(rec_corpus), cfg.sampler, progress);
      save_graph(g, rec_out.empty() ? rec_model : rec_out);
      std::cout << "recovery for skill " << rec_skill << " label " << rec_label << ": " << ids.size() << " skills\n";
      return 0;
    }

    if (*es) {
      const LabelMap gt = load_labels(es_labels);
      std::vector<std::pair<std::string, metrics::SegReport>> rows;
      if (!es_pred.empty()) {
        rows.emplace_back("pred", metrics::seg_report(load_labels(es_pred), gt));
      } else {
        if (es_corpus.empty()) throw ValidationError("eval-seg needs --corpus or --pred");
        const ObservationSet corpus = load_corpus(es_corpus);
        for (const auto& m : split_list(es_modes)) {
          EngineConfig cfg = es_cfg.load();
          cfg.sampler.mode = seg_mode_from_string(m);
          rows.emplace_back(m, metrics::seg_report(segment_corpus(corpus, cfg.sampler, progress).labels, gt));
        }
      }
      std::cout << metrics::seg_table(rows);
      if (!es_out.empty()) {
        json j;
        for (const auto& [name, r] : rows) j[name] = r.to_json();
        write_json_file(es_out, j, 2);
      }
      return 0;
    }

    if (*ea) {
      const EngineConfig cfg = ea_cfg.load();
      const TaskGraph g = load_graph(ea_model);
      std::vector<std::pair<std::string, metrics::AnomReport>> rows;
      for (const auto& k : split_list(ea_kinds))
        rows.emplace_back(k, fault_benchmark(g, cfg, sim::anomaly_kind_from_string(k), ea_episodes, ea_variation, ea_seed).report);
      std::cout << metrics::anom_table(rows);
      if (!ea_out.empty()) {
        json j;
        for (const auto& [name, r] : rows) j[name] = r.to_json();
        write_json_file(ea_out, j, 2);
      }
      return 0;
    }

    if (*srv) {
      const EngineConfig cfg = srv_cfg.load();
      service::Session session(load_graph(srv_model), cfg, srv_save ? srv_model : std::string(),
                               std::chrono::milliseconds(srv_pace));
      httplib::Server server;
      service::mount(server, session, [&server] { server.stop(); });
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (httplib::Server* s = g_server.load()) s->stop();
      });
      std::cout << "serving session " << session.id() << " on http://" << srv_host << ":" << srv_port << "/v1/\n" << std::flush;
      if (!server.listen(srv_host, srv_port)) throw std::runtime_error("cannot listen on " + srv_host + ":" + std::to_string(srv_port));
      g_server = nullptr;
      return 0;
    }
  } catch (const SchemaError& e) {
    std::cerr << "error: schema: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: schema: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
