// polymath — CLI for the self-optimizing task flow engine.
//
//   polymath run --task <file> --config <file> --backend scripted|live
//                [--script <file>] [--seed <n>] [--out <file>]
//   polymath optimize-graph --graph <file> --db <file> [--script <file>]
//   polymath evolve --workflow <file> --subtask <file> [--script <file>]
//   polymath seed-db --tasks <dir> --db <file> [--script <file>]
//   polymath scoredb stats --db <file>
//
// Exit codes: 0 success, 1 run-failed, 2 invalid-config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "polymath/http_backend.hpp"
#include "polymath/polymath.hpp"

namespace fs = std::filesystem;
using namespace polymath;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded())
    throw Error(ErrorCode::invalid_config, "config file is not valid JSON: " + path);
  return run_config_from_json(j);
}

std::shared_ptr<Backend> make_backend(const RunConfig& cfg, const std::string& script_path) {
  if (cfg.backend_mode == "live") {
    HttpBackendConfig http;
    http.base_url = cfg.base_url;
    http.timeout_seconds = cfg.timeout_seconds;
    http.transport_retries = cfg.transport_retries;
    for (const auto& [role, model] : cfg.models) {
      auto kind = parse_assistant_kind(role);
      if (!kind) throw Error(ErrorCode::invalid_config, "unknown role in models: " + role);
      http.roles[*kind].model = model;
    }
    return std::make_shared<HttpBackend>(http);
  }
  if (script_path.empty())
    return std::make_shared<ScriptedBackend>(default_scripted_backend());
  json j = json::parse(read_file(script_path), nullptr, false);
  if (j.is_discarded())
    throw Error(ErrorCode::invalid_config, "script file is not valid JSON: " + script_path);
  return std::make_shared<ScriptedBackend>(ScriptedBackend::from_json(j));
}

ScoreDb load_db_or_empty(const std::string& path, double threshold) {
  if (!path.empty() && fs::exists(path)) return ScoreDb::load(path, threshold);
  return ScoreDb{};
}

int cmd_run(const std::string& task_path, const std::string& config_path,
            const std::string& backend_mode, const std::string& script_path,
            std::optional<std::uint64_t> seed, std::string out_path) {
  RunConfig cfg = load_config(config_path);
  if (!backend_mode.empty()) cfg.backend_mode = backend_mode;
  if (seed) cfg.seed = *seed;
  cfg.validate();

  std::string task = read_file(task_path);
  auto backend = make_backend(cfg, script_path);
  ScoreDb db = load_db_or_empty(cfg.score_db_path, cfg.cluster_threshold);

  RunRecord rec = run(task, cfg, *backend, &db);
  if (rec.status == "completed" && !cfg.score_db_path.empty()) {
    write_back_scores(rec, db, cfg.cluster_threshold);
    db.save(cfg.score_db_path);
  }
  if (out_path.empty()) out_path = rec.run_id + ".json";
  save_run_record(rec, out_path);

  std::cout << "run " << rec.run_id << " " << rec.status << "\n";
  std::cout << "subtasks executed: " << rec.subtasks.size() << "\n";
  for (const auto& s : rec.subtasks) {
    std::cout << "  [" << s.id << "] "
              << (s.done ? "done" : ("failed: " + s.error));
    if (s.final_scores) std::cout << " combined=" << s.final_scores->combined;
    if (s.ea_invoked) std::cout << " (EA, " << s.ea_history.size() << " iterations)";
    std::cout << "\n";
  }
  std::cout << "final answer: " << rec.final_answer << "\n";
  std::cout << "record: " << out_path << "\n";
  if (rec.status != "completed") {
    std::cerr << "error: " << rec.error << "\n";
    return 1;
  }
  return 0;
}

int cmd_optimize_graph(const std::string& graph_path, const std::string& db_path,
                       const std::string& config_path, const std::string& script_path) {
  RunConfig cfg = load_config(config_path);
  auto backend = make_backend(cfg, script_path);
  ScoreDb db = load_db_or_empty(db_path, cfg.cluster_threshold);

  TaskFlowGraph g = graph_from_json(json::parse(read_file(graph_path)));
  auto report = validate_graph(g);
  if (!report.ok()) {
    std::cerr << "input graph invalid:\n" << report.summary();
    return 1;
  }
  std::cout << "before:\n" << graph_to_json(g).dump(2) << "\n";
  VCycleResult result = v_cycle(g, cfg.vcycle, db, *backend, *backend);
  std::cout << "levels:\n";
  for (const auto& level : result.levels) {
    json jl = level;
    std::cout << jl.dump() << "\n";
  }
  std::cout << "after:\n" << graph_to_json(result.graph).dump(2) << "\n";
  return 0;
}

int cmd_evolve(const std::string& workflow_path, const std::string& subtask_path,
               const std::string& config_path, const std::string& script_path,
               const std::string& out_path) {
  RunConfig cfg = load_config(config_path);
  auto backend = make_backend(cfg, script_path);

  std::string source = read_file(workflow_path);
  Workflow wf = parse_workflow(source);

  json js = json::parse(read_file(subtask_path));
  Subtask subtask;
  subtask.id = js.at("id").get<std::string>();
  subtask.description = js.at("description").get<std::string>();

  TaskFlowGraph g;
  g.task_input = js.value("task_input", subtask.description);
  g.nodes.push_back(subtask);
  ExecutionState state(g);
  SubtaskInput input = assemble_input(g, subtask.id, {});

  WorkflowEvaluation initial = evaluate_workflow(wf, state, subtask, input, *backend,
                                                 cfg.evolve.weights, cfg.step_budget);
  std::cout << "initial combined=" << initial.scores.combined << "\n";
  if (initial.scores.combined >= cfg.evolve.trigger_threshold) {
    std::cout << "already at or above the trigger threshold ("
              << cfg.evolve.trigger_threshold << "); nothing to evolve\n";
    return 0;
  }
  EvolveResult er = evolve(serialize_workflow(wf), initial.scores, subtask, state, input,
                           cfg.evolve, *backend, cfg.seed);
  std::cout << "best candidate " << er.best.id << " combined="
            << (er.best.scores ? er.best.scores->combined : 0.0) << " after "
            << er.history.size() << " iterations\n";
  std::cout << er.best.source;
  std::string history = history_to_jsonl(er.history);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << history;
    std::cout << "history: " << out_path << "\n";
  } else {
    std::cout << "history:\n" << history;
  }
  return 0;
}

int cmd_seed_db(const std::string& tasks_dir, const std::string& db_path,
                const std::string& config_path, const std::string& script_path) {
  RunConfig cfg = load_config(config_path);
  auto backend = make_backend(cfg, script_path);
  ScoreDb db = load_db_or_empty(db_path, cfg.cluster_threshold);

  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(tasks_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cerr << "no .txt task files in " << tasks_dir << "\n";
    return 1;
  }
  std::vector<std::string> tasks;
  for (const auto& f : files) tasks.push_back(read_file(f));

  SeedDbSummary summary = seed_db(tasks, cfg, *backend, db);
  db.save(db_path);
  std::cout << "ran " << summary.tasks_run << " tasks, inserted " << summary.records_inserted
            << " records into " << db_path << "\n";
  return 0;
}

int cmd_scoredb_stats(const std::string& db_path, double threshold) {
  ScoreDb db = ScoreDb::load(db_path, threshold);
  std::cout << "records: " << db.size() << "\n";
  std::cout << "clusters: " << db.clusters().size() << "\n";
  for (const auto& [cid, stats] : db.clusters()) {
    std::cout << "  cluster " << cid << ": size=" << stats.size
              << " mu_c=" << stats.mean_completeness << " sigma_c=" << stats.std_completeness
              << " mu_d=" << stats.mean_complexity << " sigma_d=" << stats.std_complexity << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polymath — self-optimizing task flow engine"};
  app.require_subcommand(1);

  std::string task_path, config_path, backend_mode, script_path, out_path;
  std::string graph_path, db_path, workflow_path, subtask_path, tasks_dir;
  std::optional<std::uint64_t> seed;
  double threshold = 0.8;

  auto* run_cmd = app.add_subcommand("run", "solve a task end to end");
  run_cmd->add_option("--task", task_path, "task text file")->required();
  run_cmd->add_option("--config", config_path, "run config JSON");
  run_cmd->add_option("--backend", backend_mode, "scripted|live")
      ->check(CLI::IsMember({"scripted", "live"}));
  run_cmd->add_option("--script", script_path, "scripted backend rules JSON");
  run_cmd->add_option("--seed", seed, "rng seed override");
  run_cmd->add_option("--out", out_path, "run record output path");

  auto* opt_cmd = app.add_subcommand("optimize-graph", "run the V-cycle on a graph");
  opt_cmd->add_option("--graph", graph_path, "graph JSON file")->required();
  opt_cmd->add_option("--db", db_path, "score db path");
  opt_cmd->add_option("--config", config_path, "run config JSON");
  opt_cmd->add_option("--script", script_path, "scripted backend rules JSON");

  auto* evolve_cmd = app.add_subcommand("evolve", "standalone workflow evolution");
  evolve_cmd->add_option("--workflow", workflow_path, "workflow source file")->required();
  evolve_cmd->add_option("--subtask", subtask_path, "subtask JSON {id, description}")->required();
  evolve_cmd->add_option("--config", config_path, "run config JSON");
  evolve_cmd->add_option("--script", script_path, "scripted backend rules JSON");
  evolve_cmd->add_option("--out", out_path, "history JSONL output path");

  auto* seed_cmd = app.add_subcommand("seed-db", "seed the score db from unoptimized runs");
  seed_cmd->add_option("--tasks", tasks_dir, "directory of .txt task files")->required();
  seed_cmd->add_option("--db", db_path, "score db path")->required();
  seed_cmd->add_option("--config", config_path, "run config JSON");
  seed_cmd->add_option("--script", script_path, "scripted backend rules JSON");

  auto* scoredb_cmd = app.add_subcommand("scoredb", "score database utilities");
  scoredb_cmd->require_subcommand(1);
  auto* stats_cmd = scoredb_cmd->add_subcommand("stats", "print record and cluster statistics");
  stats_cmd->add_option("--db", db_path, "score db path")->required();
  stats_cmd->add_option("--threshold", threshold, "cluster similarity threshold");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd)
      return cmd_run(task_path, config_path, backend_mode, script_path, seed, out_path);
    if (*opt_cmd) return cmd_optimize_graph(graph_path, db_path, config_path, script_path);
    if (*evolve_cmd)
      return cmd_evolve(workflow_path, subtask_path, config_path, script_path, out_path);
    if (*seed_cmd) return cmd_seed_db(tasks_dir, db_path, config_path, script_path);
    if (*stats_cmd) return cmd_scoredb_stats(db_path, threshold);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::invalid_config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
