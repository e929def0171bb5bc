#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/evolution.hpp"
#include "polymath/graph_opt.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/score_db.hpp"
#include "polymath/task_graph.hpp"
#include "polymath/util.hpp"
#include "polymath/workflow.hpp"

namespace polymath {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string backend_mode = "scripted";  // "scripted" | "live"
  std::uint64_t seed = 0;
  int rerun_limit = 3;
  int jump_budget = 5;
  int step_budget = 50;
  std::string score_db_path;
  double cluster_threshold = 0.8;
  bool enable_vcycle = true;
  bool enable_ea = true;
  VCycleConfig vcycle;
  EvolveConfig evolve;
  // live-mode transport settings
  std::string base_url = "https://api.openai.com/v1";
  int timeout_seconds = 60;
  int transport_retries = 3;
  std::map<std::string, std::string> models;  // role name -> model override

  void validate() const {
    if (backend_mode != "scripted" && backend_mode != "live")
      throw Error(ErrorCode::invalid_config, "backend must be 'scripted' or 'live'");
    if (rerun_limit < 0 || jump_budget < 0 || step_budget < 1)
      throw Error(ErrorCode::invalid_config, "budgets must be positive");
    if (cluster_threshold <= 0.0 || cluster_threshold >= 1.0)
      throw Error(ErrorCode::invalid_config, "cluster threshold must be in (0,1)");
    if (vcycle.max_coarsen_levels < 1 || vcycle.max_relax_levels < 1 || vcycle.top_k < 1)
      throw Error(ErrorCode::invalid_config, "v-cycle levels and top_k must be >= 1");
    if (!evolve.valid()) throw Error(ErrorCode::invalid_config, "invalid evolve settings");
  }
};

inline json run_config_to_json(const RunConfig& c) {
  return json{
      {"backend", c.backend_mode},
      {"seed", c.seed},
      {"rerun_limit", c.rerun_limit},
      {"jump_budget", c.jump_budget},
      {"step_budget", c.step_budget},
      {"score_db_path", c.score_db_path},
      {"cluster_threshold", c.cluster_threshold},
      {"enable_vcycle", c.enable_vcycle},
      {"enable_ea", c.enable_ea},
      {"vcycle",
       {{"max_coarsen_levels", c.vcycle.max_coarsen_levels},
        {"max_relax_levels", c.vcycle.max_relax_levels},
        {"top_k", c.vcycle.top_k}}},
      {"evolve",
       {{"max_iterations", c.evolve.max_iterations},
        {"trigger_threshold", c.evolve.trigger_threshold},
        {"islands", c.evolve.islands},
        {"migration_interval", c.evolve.migration_interval},
        {"sample_size", c.evolve.sample_size},
        {"weights",
         {c.evolve.weights.instruction_following, c.evolve.weights.correctness,
          c.evolve.weights.plan_progress}},
        {"proposal_retries", c.evolve.proposal_retries}}},
      {"live",
       {{"base_url", c.base_url},
        {"timeout_seconds", c.timeout_seconds},
        {"transport_retries", c.transport_retries},
        {"models", c.models}}},
  };
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.backend_mode = j.value("backend", c.backend_mode);
    c.seed = j.value("seed", c.seed);
    c.rerun_limit = j.value("rerun_limit", c.rerun_limit);
    c.jump_budget = j.value("jump_budget", c.jump_budget);
    c.step_budget = j.value("step_budget", c.step_budget);
    c.score_db_path = j.value("score_db_path", c.score_db_path);
    c.cluster_threshold = j.value("cluster_threshold", c.cluster_threshold);
    c.enable_vcycle = j.value("enable_vcycle", c.enable_vcycle);
    c.enable_ea = j.value("enable_ea", c.enable_ea);
    if (j.contains("vcycle")) {
      const json& v = j.at("vcycle");
      c.vcycle.max_coarsen_levels = v.value("max_coarsen_levels", c.vcycle.max_coarsen_levels);
      c.vcycle.max_relax_levels = v.value("max_relax_levels", c.vcycle.max_relax_levels);
      c.vcycle.top_k = v.value("top_k", c.vcycle.top_k);
    }
    if (j.contains("evolve")) {
      const json& e = j.at("evolve");
      c.evolve.max_iterations = e.value("max_iterations", c.evolve.max_iterations);
      c.evolve.trigger_threshold = e.value("trigger_threshold", c.evolve.trigger_threshold);
      c.evolve.islands = e.value("islands", c.evolve.islands);
      c.evolve.migration_interval = e.value("migration_interval", c.evolve.migration_interval);
      c.evolve.sample_size = e.value("sample_size", c.evolve.sample_size);
      c.evolve.proposal_retries = e.value("proposal_retries", c.evolve.proposal_retries);
      if (e.contains("weights")) {
        const json& w = e.at("weights");
        c.evolve.weights.instruction_following = w.at(0).get<double>();
        c.evolve.weights.correctness = w.at(1).get<double>();
        c.evolve.weights.plan_progress = w.at(2).get<double>();
      }
    }
    if (j.contains("live")) {
      const json& l = j.at("live");
      c.base_url = l.value("base_url", c.base_url);
      c.timeout_seconds = l.value("timeout_seconds", c.timeout_seconds);
      c.transport_retries = l.value("transport_retries", c.transport_retries);
      if (l.contains("models"))
        c.models = l.at("models").get<std::map<std::string, std::string>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("malformed config: ") + e.what());
  }
  c.evolve.step_budget = c.step_budget;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

struct SubtaskRunRecord {
  std::string id;
  std::string description;
  std::string workflow_source;  // the workflow that produced the final result
  std::optional<EvaluationScores> initial_scores;
  std::optional<EvaluationScores> final_scores;
  bool ea_invoked = false;
  std::vector<IterationRecord> ea_history;
  std::string result;
  bool done = false;
  std::string error;
  int attempts = 0;
  std::optional<double> complexity;    // d, judge-emitted, for score-db write-back
  std::optional<double> completeness;  // c
  std::string reflection;
};

struct RunRecord {
  std::string run_id;
  std::string status = "completed";  // "completed" | "failed"
  std::string error;
  std::string task_input;
  TaskFlowGraph initial_graph;
  TaskFlowGraph optimized_graph;
  std::vector<LevelTrace> vcycle_trace;
  std::vector<SubtaskRunRecord> subtasks;  // first-execution order
  std::vector<TraceEvent> planner_trace;
  std::string final_answer;
  json config_snapshot;
  std::vector<RequestLogEntry> backend_log;
  std::string started_at;
  std::string finished_at;

  SubtaskRunRecord& subtask_entry(const std::string& id, const std::string& description) {
    for (auto& s : subtasks)
      if (s.id == id) return s;
    SubtaskRunRecord s;
    s.id = id;
    s.description = description;
    subtasks.push_back(std::move(s));
    return subtasks.back();
  }
};

inline json run_record_to_json(const RunRecord& r, bool include_timestamps = true) {
  json subtasks = json::array();
  for (const auto& s : r.subtasks) {
    json js{{"id", s.id},
            {"description", s.description},
            {"workflow_source", s.workflow_source},
            {"ea_invoked", s.ea_invoked},
            {"result", s.result},
            {"done", s.done},
            {"attempts", s.attempts},
            {"reflection", s.reflection}};
    if (s.initial_scores) js["initial_scores"] = *s.initial_scores;
    if (s.final_scores) js["final_scores"] = *s.final_scores;
    if (!s.ea_history.empty()) {
      json h = json::array();
      for (const auto& it : s.ea_history) h.push_back(it);
      js["ea_history"] = h;
    }
    if (!s.error.empty()) js["error"] = s.error;
    if (s.complexity) js["complexity"] = *s.complexity;
    if (s.completeness) js["completeness"] = *s.completeness;
    subtasks.push_back(std::move(js));
  }
  json trace = json::array();
  for (const auto& e : r.planner_trace) {
    json je = e;
    if (!include_timestamps) je.erase("timestamp");
    trace.push_back(std::move(je));
  }
  json levels = json::array();
  for (const auto& l : r.vcycle_trace) levels.push_back(l);
  json out{{"run_id", r.run_id},
           {"status", r.status},
           {"task_input", r.task_input},
           {"initial_graph", graph_to_json(r.initial_graph)},
           {"optimized_graph", graph_to_json(r.optimized_graph)},
           {"vcycle_trace", levels},
           {"subtasks", subtasks},
           {"planner_trace", trace},
           {"final_answer", r.final_answer},
           {"config", r.config_snapshot},
           {"backend_log", r.backend_log}};
  if (!r.error.empty()) out["error"] = r.error;
  if (include_timestamps)
    out["timestamps"] = {{"started", r.started_at}, {"finished", r.finished_at}};
  return out;
}

inline RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", "");
  r.task_input = j.at("task_input").get<std::string>();
  r.initial_graph = graph_from_json(j.at("initial_graph"));
  r.optimized_graph = graph_from_json(j.at("optimized_graph"));
  if (j.contains("vcycle_trace")) {
    for (const auto& jl : j.at("vcycle_trace")) {
      LevelTrace l;
      l.level = jl.at("level").get<int>();
      l.phase = jl.at("phase").get<std::string>();
      l.nodes_before = jl.at("nodes_before").get<int>();
      l.nodes_after = jl.at("nodes_after").get<int>();
      l.detail = jl.value("detail", json::object());
      r.vcycle_trace.push_back(std::move(l));
    }
  }
  for (const auto& js : j.at("subtasks")) {
    SubtaskRunRecord s;
    s.id = js.at("id").get<std::string>();
    s.description = js.value("description", "");
    s.workflow_source = js.value("workflow_source", "");
    s.ea_invoked = js.value("ea_invoked", false);
    s.result = js.value("result", "");
    s.done = js.value("done", false);
    s.attempts = js.value("attempts", 0);
    s.reflection = js.value("reflection", "");
    s.error = js.value("error", "");
    if (js.contains("initial_scores")) s.initial_scores = js.at("initial_scores").get<EvaluationScores>();
    if (js.contains("final_scores")) s.final_scores = js.at("final_scores").get<EvaluationScores>();
    if (js.contains("complexity")) s.complexity = js.at("complexity").get<double>();
    if (js.contains("completeness")) s.completeness = js.at("completeness").get<double>();
    if (js.contains("ea_history")) {
      for (const auto& jh : js.at("ea_history")) {
        IterationRecord rec;
        rec.iteration = jh.at("iteration").get<int>();
        rec.island = jh.at("island").get<int>();
        rec.candidate_id = jh.value("candidate", "");
        rec.parent_id = jh.value("parent", "");
        rec.admission = jh.value("admission", "");
        rec.error = jh.value("error", "");
        if (jh.contains("cell"))
          rec.cell = CellCoords{jh.at("cell").at(0).get<int>(), jh.at("cell").at(1).get<int>()};
        if (jh.contains("scores")) rec.scores = jh.at("scores").get<EvaluationScores>();
        s.ea_history.push_back(std::move(rec));
      }
    }
    r.subtasks.push_back(std::move(s));
  }
  if (j.contains("planner_trace")) {
    for (const auto& je : j.at("planner_trace")) {
      TraceEvent e;
      e.seq = je.at("seq").get<int>();
      e.node_id = je.at("node").get<std::string>();
      e.action = je.at("action").get<std::string>();
      e.detail = je.value("detail", "");
      e.timestamp = je.value("timestamp", "");
      r.planner_trace.push_back(std::move(e));
    }
  }
  r.final_answer = j.value("final_answer", "");
  r.config_snapshot = j.value("config", json::object());
  if (j.contains("backend_log")) {
    for (const auto& jl : j.at("backend_log")) {
      RequestLogEntry e;
      e.seq = jl.at("seq").get<int>();
      e.kind = jl.at("kind").get<std::string>();
      e.fingerprint = jl.value("fingerprint", "");
      e.request_excerpt = jl.value("request", "");
      e.response_excerpt = jl.value("response", "");
      r.backend_log.push_back(std::move(e));
    }
  }
  if (j.contains("timestamps")) {
    r.started_at = j.at("timestamps").value("started", "");
    r.finished_at = j.at("timestamps").value("finished", "");
  }
  return r;
}

inline void save_run_record(const RunRecord& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path + "'");
  out << run_record_to_json(r).dump(2) << "\n";
}

inline RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot read '" + path + "'");
  try {
    json j = json::parse(in);
    return run_record_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, "'" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Task decomposition
// ---------------------------------------------------------------------------

inline constexpr const char* kDecomposeTaskHeader = "Decompose the task into a task flow graph.";

inline std::string graph_format_help() {
  return "Respond with JSON {\"nodes\":[{\"id\",\"description\",\"depends_on\"?}],"
         "\"edges\":[{\"from\",\"to\",\"kind\":\"dependency|jump\",\"jump_condition\"?}]}. "
         "Dependency edges must be acyclic.";
}

// Parses the planner's decomposition into the graph interchange format. On a
// validation failure the planner gets one corrective re-prompt before the
// run fails.
inline TaskFlowGraph decompose_task(const std::string& task_input, Backend& planner) {
  if (trim(task_input).empty())
    throw Error(ErrorCode::invalid_argument, "task input must be non-empty");
  std::string prompt = kDecomposeTaskHeader;
  prompt += "\nTask: " + task_input + "\n" + graph_format_help();
  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::planner).system_prompt},
      {"user", prompt},
  };
  std::string failure;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatResponse resp = planner.complete(AssistantKind::planner, messages);
    try {
      auto obj = extract_json_object(resp.content);
      if (!obj) throw Error(ErrorCode::parse_error, "no JSON object in planner reply");
      TaskFlowGraph g = graph_from_json(*obj);
      g.task_input = task_input;
      auto report = validate_graph(g);
      if (!report.ok()) throw Error(ErrorCode::validation_error, report.summary());
      if (g.nodes.empty()) throw Error(ErrorCode::validation_error, "graph has no nodes");
      return g;
    } catch (const Error& e) {
      failure = e.what();
      messages.push_back({"assistant", resp.content});
      messages.push_back({"user", "That graph was invalid (" + failure +
                                      "). Emit a corrected graph. " + graph_format_help()});
    }
  }
  throw Error(ErrorCode::decomposition_invalid, failure);
}

// ---------------------------------------------------------------------------
// Initial workflow synthesis
// ---------------------------------------------------------------------------

inline constexpr const char* kSynthesizeWorkflowHeader = "Generate a workflow.";

// Keyword routing for fallback workflows; first match wins, reasoner is the
// default. Documented in the README.
inline AssistantKind route_assistant(const std::string& description) {
  std::string d = to_lower(description);
  for (const char* kw : {"code", "implement", "test", "program", "function", "script", "debug",
                         "compile"})
    if (d.find(kw) != std::string::npos) return AssistantKind::coder;
  for (const char* kw : {"read", "file", "document", "datasheet", "spec sheet"})
    if (d.find(kw) != std::string::npos) return AssistantKind::file_reader;
  return AssistantKind::reasoner;
}

inline Workflow fallback_workflow(const Subtask& subtask) {
  AssistantKind kind = route_assistant(subtask.description);
  Workflow w;
  WorkflowNode n;
  n.id = "main";
  n.assistant = kind;
  std::string prompt = trim(subtask.description);
  n.prompt = prompt.empty() ? std::string("Solve the subtask.") : prompt;
  n.evolvable = true;
  w.nodes.push_back(std::move(n));
  w.entry = "main";
  return w;
}

// Asks the generator for an initial workflow source; anything that fails to
// parse or validate falls back to a single-node workflow routed to the
// subtask's best-fit assistant, so a workflow is always produced.
inline Workflow synthesize_initial_workflow(const Subtask& subtask, Backend& generator) {
  std::string prompt = kSynthesizeWorkflowHeader;
  prompt += "\nSubtask [" + subtask.id + "]: " + subtask.description + "\n";
  prompt += "Emit workflow source: 'entry <id>', 'node <id> <assistant>' with two-space "
            "indented prompt lines, optional 'link <from> -> <to> [if: <text> | loop: <n>]', "
            "and at least one node inside a # REPLACE-START / # REPLACE-END block. "
            "Assistants: coder, reasoner, file_reader.";
  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::workflow_generator).system_prompt},
      {"user", prompt},
  };
  try {
    ChatResponse resp = generator.complete(AssistantKind::workflow_generator, messages);
    return parse_workflow(strip_code_fence(resp.content));
  } catch (const Error&) {
    return fallback_workflow(subtask);
  }
}

// ---------------------------------------------------------------------------
// Planner action requests
// ---------------------------------------------------------------------------

inline constexpr const char* kPlannerActionHeader = "Choose the next planner action.";

inline PlannerAction request_planner_action(const ExecutionState& state, Backend& planner,
                                            int parse_retries = 2) {
  const std::string& current = state.current_node_id();
  const Subtask* node = state.graph().find(current);
  std::string prompt = kPlannerActionHeader;
  prompt += "\nCurrent subtask [" + current + "]";
  if (node) {
    prompt += " status=" + std::string(subtask_status_name(node->status));
    if (node->result) prompt += "\nResult: " + truncate_text(*node->result, 400);
  }
  prompt += "\nGraph status:\n" + graph_status_summary(state);
  std::string jumps;
  for (const auto& e : state.graph().edges)
    if (e.kind == EdgeKind::jump && e.from == current)
      jumps += "- " + e.to + " when: " + e.jump_condition.value_or("") + "\n";
  if (!jumps.empty()) prompt += "Available jump targets:\n" + jumps;
  prompt += "Respond with JSON {\"action\": \"proceed|rerun|jump|finalize\", \"target\": \"...\"}"
            " (target only for rerun/jump).";
  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::planner).system_prompt},
      {"user", prompt},
  };
  ParsedFields fields = complete_structured(planner, AssistantKind::planner, messages,
                                            {{"action", false, 0, 0, true},
                                             {"target", false, 0, 0, false}},
                                            parse_retries);
  std::string action = to_lower(trim(fields.text("action")));
  std::string target = fields.text("target");
  if (action == "proceed") return PlannerAction::proceed();
  if (action == "rerun") return PlannerAction::rerun(target);
  if (action == "jump") return PlannerAction::jump(target);
  if (action == "finalize") return PlannerAction::finalize();
  // Unknown action names degrade to proceed; the trace records the reply.
  return PlannerAction::proceed();
}

// ---------------------------------------------------------------------------
// Subtask complexity/completeness judging (for the score database)
// ---------------------------------------------------------------------------

inline constexpr const char* kSubtaskScoreHeader =
    "Rate the subtask complexity and completeness.";

struct SubtaskJudgement {
  double complexity = 0.0;
  double completeness = 0.0;
  std::string reflection;
};

inline SubtaskJudgement judge_subtask_scores(const Subtask& subtask, const std::string& workflow_source,
                                             const std::string& output, Backend& judge,
                                             int parse_retries = 2) {
  std::string prompt = kSubtaskScoreHeader;
  prompt += "\nSubtask [" + subtask.id + "]: " + subtask.description + "\n";
  prompt += "Workflow used:\n" + workflow_source + "\n";
  prompt += "Response produced:\n" + truncate_text(output, 800) + "\n";
  prompt += "Complexity in [0,1] rates how tractable the subtask is at this granularity "
            "(higher = more likely to be executed well); completeness in [0,1] rates how fully "
            "the response solves it. Also write a short reflection. Respond with JSON "
            "{\"complexity\": x, \"completeness\": y, \"reflection\": \"...\"}.";
  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::judge).system_prompt},
      {"user", prompt},
  };
  ParsedFields fields = complete_structured(judge, AssistantKind::judge, messages,
                                            {{"complexity", true, 0.0, 1.0, true},
                                             {"completeness", true, 0.0, 1.0, true},
                                             {"reflection", false, 0, 0, false}},
                                            parse_retries);
  return {fields.number("complexity"), fields.number("completeness"), fields.text("reflection")};
}

// ---------------------------------------------------------------------------
// The run pipeline
// ---------------------------------------------------------------------------

inline std::string make_run_id(const std::string& task_input, std::uint64_t seed) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(task_input) ^ seed));
  return std::string("run-") + buf;
}

// The whole pipeline: decompose, optimize with the V-cycle, execute each
// subtask as a workflow with judge gating and EA triggering under planner
// monitoring, then aggregate the final answer. Any stage failure yields a
// failed record with the partial trace instead of an exception.
inline RunRecord run(const std::string& task_input, const RunConfig& cfg, Backend& backend,
                     ScoreDb* db = nullptr) {
  cfg.validate();
  RunRecord rec;
  rec.run_id = make_run_id(task_input, cfg.seed);
  rec.task_input = task_input;
  rec.config_snapshot = run_config_to_json(cfg);
  rec.started_at = iso_timestamp_now();
  backend.clear_request_log();

  ScoreDb local_db;
  if (!db) db = &local_db;

  ExecutionLimits limits{cfg.rerun_limit, cfg.jump_budget};
  std::optional<ExecutionState> state;
  try {
    rec.initial_graph = decompose_task(task_input, backend);
    rec.optimized_graph = rec.initial_graph;
    if (cfg.enable_vcycle) {
      VCycleResult v = v_cycle(rec.initial_graph, cfg.vcycle, *db, backend, backend);
      rec.optimized_graph = v.graph;
      rec.vcycle_trace = v.levels;
    }

    state.emplace(rec.optimized_graph);
    while (!state->finalized() && !state->at_end()) {
      const std::string node_id = state->order()[state->cursor()];
      const Subtask* node = state->graph().find(node_id);
      if (node->status == SubtaskStatus::done) {
        apply_planner_action(*state, PlannerAction::proceed(), limits);
        continue;
      }

      SubtaskRunRecord& entry = rec.subtask_entry(node_id, node->description);
      entry.attempts++;
      entry.error.clear();

      bool executed = false;
      try {
        SubtaskInput input = assemble_input(state->graph(), node_id, state->results());
        state->mark_running(node_id);
        Workflow wf = synthesize_initial_workflow(*node, backend);
        std::string wf_source = serialize_workflow(wf);

        WorkflowEvaluation eval = evaluate_workflow(wf, *state, *node, input, backend,
                                                    cfg.evolve.weights, cfg.step_budget);
        entry.initial_scores = eval.scores;
        entry.final_scores = eval.scores;
        entry.workflow_source = wf_source;
        std::string result_text = eval.output;

        bool trigger = eval.scores.combined < cfg.evolve.trigger_threshold;
        entry.ea_invoked = trigger && cfg.enable_ea;
        entry.ea_history.clear();
        if (entry.ea_invoked) {
          EvolveResult er = evolve(wf_source, eval.scores, *node, *state, input, cfg.evolve,
                                   backend, cfg.seed);
          entry.ea_history = er.history;
          if (er.best.scores) {
            entry.final_scores = er.best.scores;
            entry.workflow_source = er.best.source;
            if (!er.best.output.empty()) result_text = er.best.output;
          }
        }

        state->record_result(node_id, result_text);
        entry.result = result_text;
        entry.done = true;
        executed = true;

        try {
          SubtaskJudgement dc =
              judge_subtask_scores(*node, entry.workflow_source, result_text, backend);
          entry.complexity = dc.complexity;
          entry.completeness = dc.completeness;
          entry.reflection = dc.reflection;
        } catch (const Error& e) {
          state->note(node_id, "score-judgement-failed", e.what());
        }
      } catch (const Error& e) {
        state->record_failure(node_id, e.what());
        entry.error = e.what();
        entry.done = false;
      }
      (void)executed;

      PlannerAction action = request_planner_action(*state, backend);
      try {
        apply_planner_action(*state, action, limits);
      } catch (const Error& e) {
        switch (e.code()) {
          case ErrorCode::rerun_limit_exceeded:
          case ErrorCode::jump_budget_exceeded:
          case ErrorCode::illegal_jump:
          case ErrorCode::validation_error:
            state->note(state->current_node_id(), "action-refused",
                        std::string(planner_action_name(action.kind)) + ": " + e.what());
            apply_planner_action(*state, PlannerAction::proceed(), limits);
            break;
          default:
            throw;
        }
      }
    }

    rec.final_answer = aggregate_final_answer(*state, backend);
    rec.status = "completed";
  } catch (const Error& e) {
    rec.status = "failed";
    rec.error = e.what();
  }

  if (state) rec.planner_trace = state->trace();
  rec.backend_log = backend.request_log();
  rec.finished_at = iso_timestamp_now();
  return rec;
}

// ---------------------------------------------------------------------------
// Score write-back
// ---------------------------------------------------------------------------

// One record per executed subtask (a merged node is one subtask, hence one
// record), using the judge-emitted complexity/completeness values from the
// run record. Duplicate ids are rejected, which makes repeated write-backs
// no-ops. Returns the number of records inserted.
inline int write_back_scores(const RunRecord& record, ScoreDb& db, double cluster_threshold = 0.8) {
  int inserted = 0;
  for (const auto& s : record.subtasks) {
    if (!s.done || !s.complexity || !s.completeness) continue;
    SubtaskRecord r;
    r.id = record.run_id + ":" + s.id;
    r.content = s.description;
    r.complexity = *s.complexity;
    r.completeness = *s.completeness;
    r.reflection = s.reflection;
    try {
      db.insert(std::move(r));
      inserted++;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::duplicate_id) throw;
    }
  }
  if (inserted > 0) db.recluster(cluster_threshold);
  return inserted;
}

// ---------------------------------------------------------------------------
// Database seeding from unoptimized runs
// ---------------------------------------------------------------------------

struct SeedDbSummary {
  int tasks_run = 0;
  int records_inserted = 0;
};

// Reproduces the seeding procedure: run every task in the corpus with the
// V-cycle and the EA disabled, then write the judge scores back into the db.
inline SeedDbSummary seed_db(const std::vector<std::string>& task_inputs, const RunConfig& base_cfg,
                             Backend& backend, ScoreDb& db) {
  RunConfig cfg = base_cfg;
  cfg.enable_vcycle = false;
  cfg.enable_ea = false;
  SeedDbSummary summary;
  for (const auto& task : task_inputs) {
    RunRecord rec = run(task, cfg, backend, &db);
    summary.tasks_run++;
    summary.records_inserted += write_back_scores(rec, db, cfg.cluster_threshold);
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Built-in script
// ---------------------------------------------------------------------------

// A scripted backend usable on any task when no script file is given: the
// planner emits a single-node decomposition and always proceeds, judges give
// passing scores, the decomposer declines, and assistants answer with canned
// text. Everything stays deterministic and offline.
inline ScriptedBackend default_scripted_backend() {
  ScriptedBackend b("{}");
  b.add_rule(AssistantKind::planner, kDecomposeTaskHeader,
             R"({"nodes":[{"id":"solve","description":"Solve the task."}],"edges":[]})");
  b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
  b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "See the aggregated subtask results.");
  b.add_rule(AssistantKind::estimator, kEstimatorHeader,
             R"({"complexity":0.5,"completeness":0.5})");
  b.add_rule(AssistantKind::decomposer, kDecomposeSubtaskHeader, "{}");
  b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader,
             R"({"instruction_following":0.9,"correctness":0.9,"plan_progress":0.9,"reflections":"solid first attempt"})");
  b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
             R"({"complexity":0.6,"completeness":0.9,"reflection":"clean execution"})");
  b.add_rule(AssistantKind::judge, kConditionHeader, "no");
  b.add_rule(AssistantKind::judge, kLoopHeader, "no");
  b.add_rule(AssistantKind::workflow_generator, "", "");
  b.add_rule(AssistantKind::coder, "", "Completed the subtask.");
  b.add_rule(AssistantKind::reasoner, "", "Completed the subtask.");
  b.add_rule(AssistantKind::file_reader, "", "Completed the subtask.");
  return b;
}

}  // namespace polymath
