#include <doctest.h>

#include <cstdio>

#include "polymath/orchestrator.hpp"

using namespace polymath;

namespace {

std::string judge_json(double i, double c, double p, const std::string& refl = "ok") {
  json j{{"instruction_following", i}, {"correctness", c}, {"plan_progress", p},
         {"reflections", refl}};
  return j.dump();
}

std::string chain_graph_json() {
  return R"({"nodes":[
      {"id":"gather","description":"Gather the relevant facts."},
      {"id":"solve","description":"Solve using the facts."},
      {"id":"check","description":"Check the solution."}],
     "edges":[{"from":"gather","to":"solve","kind":"dependency"},
              {"from":"solve","to":"check","kind":"dependency"}]})";
}

// Workflow sources the scripted generator emits per subtask.
std::string wf_source(const std::string& marker) {
  return "entry main\n# REPLACE-START\nnode main reasoner\n  Handle " + marker +
         ".\n# REPLACE-END\n";
}

// A complete script for the three-subtask happy path: every judge score is
// above the 0.8 trigger, the planner always proceeds.
// Needle matching only the initial-synthesis request for one subtask, never
// the EA's improvement requests.
std::string synth_needle(const std::string& subtask_id) {
  return std::string(kSynthesizeWorkflowHeader) + "\nSubtask [" + subtask_id + "]";
}

ScriptedBackend happy_script() {
  ScriptedBackend b;
  b.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
  b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
  b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "final: all good");
  b.add_rule(AssistantKind::workflow_generator, synth_needle("gather"), wf_source("gather"));
  b.add_rule(AssistantKind::workflow_generator, synth_needle("solve"), wf_source("solve"));
  b.add_rule(AssistantKind::workflow_generator, synth_needle("check"), wf_source("check"));
  b.add_rule(AssistantKind::reasoner, "Handle gather", "facts are ready");
  b.add_rule(AssistantKind::reasoner, "Handle solve", "answer computed");
  b.add_rule(AssistantKind::reasoner, "Handle check", "verified fine");
  b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
  b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
             R"({"complexity":0.7,"completeness":0.85,"reflection":"smooth"})");
  return b;
}

RunConfig offline_cfg() {
  RunConfig cfg;
  cfg.enable_vcycle = false;  // isolate the execution pipeline
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("decompose_task") {
  SUBCASE("scripted planner emits a valid 3-node chain") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
    TaskFlowGraph g = decompose_task("demo", b);
    CHECK(g.nodes.size() == 3);
    CHECK(g.task_input == "demo");
    CHECK(validate_graph(g).ok());
  }

  SUBCASE("a cyclic first reply is corrected on the re-prompt") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader,
               R"({"nodes":[{"id":"a","description":"x"},{"id":"b","description":"y"}],
                   "edges":[{"from":"a","to":"b"},{"from":"b","to":"a"}]})",
               1);
    b.add_rule(AssistantKind::planner, "", chain_graph_json());
    TaskFlowGraph g = decompose_task("demo", b);
    CHECK(g.nodes.size() == 3);
    CHECK(b.request_count() == 2);
  }

  SUBCASE("type-malformed graph JSON goes through the corrective re-prompt") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader,
               R"({"nodes":[{"id":42,"description":"numeric id"}]})", 1);
    b.add_rule(AssistantKind::planner, "", chain_graph_json());
    TaskFlowGraph g = decompose_task("demo", b);
    CHECK(g.nodes.size() == 3);
  }

  SUBCASE("persistently invalid decomposition fails after one re-prompt") {
    ScriptedBackend b("not a graph");
    try {
      decompose_task("demo", b);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::decomposition_invalid);
    }
    CHECK(b.request_count() == 2);
  }

  SUBCASE("empty task input violates the precondition") {
    ScriptedBackend b;
    CHECK_THROWS_AS(decompose_task("  \n", b), Error);
  }
}

TEST_CASE("synthesize_initial_workflow") {
  Subtask s;
  s.id = "s1";
  s.description = "Write code to parse the log file";

  SUBCASE("valid generator output is used directly") {
    ScriptedBackend b(wf_source("custom"));
    Workflow w = synthesize_initial_workflow(s, b);
    CHECK(w.nodes.size() == 1);
    CHECK(w.nodes[0].prompt.find("custom") != std::string::npos);
  }

  SUBCASE("garbage generator output falls back to a single-node workflow") {
    ScriptedBackend b("!!! no workflow here");
    Workflow w = synthesize_initial_workflow(s, b);
    REQUIRE(w.nodes.size() == 1);
    CHECK(w.nodes[0].evolvable);
    CHECK(w.nodes[0].prompt == s.description);
  }

  SUBCASE("fallback routes by keyword") {
    ScriptedBackend garbage("nope");
    Subtask coding;
    coding.id = "c";
    coding.description = "Generate tests to verify its correctness";
    CHECK(synthesize_initial_workflow(coding, garbage).nodes[0].assistant ==
          AssistantKind::coder);

    Subtask reading;
    reading.id = "r";
    reading.description = "Read the datasheet and summarize section 3";
    CHECK(synthesize_initial_workflow(reading, garbage).nodes[0].assistant ==
          AssistantKind::file_reader);

    Subtask thinking;
    thinking.id = "t";
    thinking.description = "Decide which approach is sound";
    CHECK(synthesize_initial_workflow(thinking, garbage).nodes[0].assistant ==
          AssistantKind::reasoner);
  }
}

TEST_CASE("run: happy path with all scores above the trigger") {
  ScriptedBackend b = happy_script();
  RunConfig cfg = offline_cfg();
  RunRecord rec = run("demo task", cfg, b);

  CHECK(rec.status == "completed");
  CHECK(rec.final_answer == "final: all good");
  REQUIRE(rec.subtasks.size() == 3);
  for (const auto& s : rec.subtasks) {
    CHECK(s.done);
    CHECK(!s.ea_invoked);  // trigger rule: 0.9 >= 0.8
    CHECK(s.ea_history.empty());
    REQUIRE(s.initial_scores.has_value());
    CHECK(s.initial_scores->combined == doctest::Approx(0.9));
    CHECK(s.complexity == doctest::Approx(0.7));
    CHECK(s.completeness == doctest::Approx(0.85));
  }
  CHECK(rec.subtasks[0].id == "gather");
  CHECK(rec.subtasks[1].id == "solve");
  CHECK(rec.subtasks[2].id == "check");
  CHECK(rec.subtasks[1].result == "answer computed");

  SUBCASE("the run record snapshots the backend log") {
    CHECK(!rec.backend_log.empty());
  }

  SUBCASE("first executions follow a topological order of the dependency subgraph") {
    std::vector<std::string> first_execs;
    std::set<std::string> seen;
    for (const auto& e : rec.planner_trace)
      if (e.action == "execute" && seen.insert(e.node_id).second)
        first_execs.push_back(e.node_id);
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < first_execs.size(); ++i) pos[first_execs[i]] = i;
    for (const auto& e : rec.optimized_graph.edges) {
      if (e.kind != EdgeKind::dependency) continue;
      REQUIRE(pos.count(e.from));
      REQUIRE(pos.count(e.to));
      CHECK(pos[e.from] < pos[e.to]);
    }
  }

  SUBCASE("pipeline ordering: decompose precedes execution precedes the final answer") {
    int decompose_seq = -1, first_exec_seq = -1, final_seq = -1;
    for (const auto& e : rec.backend_log) {
      if (decompose_seq < 0 && e.request_excerpt.find(kDecomposeTaskHeader) != std::string::npos)
        decompose_seq = e.seq;
      if (first_exec_seq < 0 && e.kind == "reasoner") first_exec_seq = e.seq;
      if (e.request_excerpt.find(kFinalAnswerHeader) != std::string::npos) final_seq = e.seq;
    }
    CHECK(decompose_seq >= 0);
    CHECK(decompose_seq < first_exec_seq);
    CHECK(first_exec_seq < final_seq);
  }
}

TEST_CASE("run: EA triggers below the threshold and lifts the score") {
  ScriptedBackend b = happy_script();
  // make "solve" score 0.6 initially, then the EA's first proposal scores 0.85
  ScriptedBackend b2;
  b2.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
  b2.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
  b2.add_rule(AssistantKind::planner, kFinalAnswerHeader, "final");
  b2.add_rule(AssistantKind::workflow_generator, synth_needle("gather"), wf_source("gather"));
  b2.add_rule(AssistantKind::workflow_generator, synth_needle("solve"), wf_source("solve"));
  b2.add_rule(AssistantKind::workflow_generator, synth_needle("check"), wf_source("check"));
  b2.add_rule(AssistantKind::workflow_generator, kGenerateWorkflowHeader, wf_source("evolved"));
  b2.add_rule(AssistantKind::reasoner, "Handle gather", "facts");
  b2.add_rule(AssistantKind::reasoner, "Handle solve", "weak answer");
  b2.add_rule(AssistantKind::reasoner, "Handle evolved", "strong answer");
  b2.add_rule(AssistantKind::reasoner, "Handle check", "checked");
  b2.add_rule(AssistantKind::judge, "weak answer", judge_json(0.6, 0.6, 0.6));
  b2.add_rule(AssistantKind::judge, "strong answer", judge_json(0.85, 0.85, 0.85));
  b2.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
  b2.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
              R"({"complexity":0.5,"completeness":0.9,"reflection":"fine"})");

  RunConfig cfg = offline_cfg();
  RunRecord rec = run("demo task", cfg, b2);
  CHECK(rec.status == "completed");
  REQUIRE(rec.subtasks.size() == 3);

  const SubtaskRunRecord* solve = nullptr;
  int ea_count = 0;
  for (const auto& s : rec.subtasks) {
    if (s.id == "solve") solve = &s;
    if (s.ea_invoked) ea_count++;
  }
  REQUIRE(solve);
  CHECK(ea_count == 1);  // exactly one EA history in the record
  CHECK(solve->ea_invoked);
  CHECK(!solve->ea_history.empty());
  CHECK(solve->initial_scores->combined == doctest::Approx(0.6));
  CHECK(solve->final_scores->combined == doctest::Approx(0.85));
  CHECK(solve->result == "strong answer");
  CHECK(solve->workflow_source.find("evolved") != std::string::npos);

  SUBCASE("EA trigger exactness holds over the whole record") {
    for (const auto& s : rec.subtasks) {
      if (!s.initial_scores) continue;
      bool should_trigger = s.initial_scores->combined < cfg.evolve.trigger_threshold;
      CHECK(s.ea_invoked == should_trigger);
      CHECK(s.ea_history.empty() == !should_trigger);
    }
  }
}

TEST_CASE("run: determinism with a fixed seed") {
  RunConfig cfg = offline_cfg();
  auto once = [&] {
    ScriptedBackend b = happy_script();
    RunRecord rec = run("demo task", cfg, b);
    return run_record_to_json(rec, /*include_timestamps=*/false).dump();
  };
  CHECK(once() == once());
}

TEST_CASE("run: planner rerun and jump flows") {
  SUBCASE("rerun re-executes the target and the run still completes") {
    ScriptedBackend b = happy_script();
    // first action reruns gather once, later actions proceed
    ScriptedBackend b2 = happy_script();
    b2.add_rule(AssistantKind::planner, kPlannerActionHeader,
                R"({"action":"rerun","target":"gather"})", 1);
    // rules are first-wins, so push this rule ahead by rebuilding:
    ScriptedBackend b3;
    b3.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
    b3.add_rule(AssistantKind::planner, kPlannerActionHeader,
                R"({"action":"rerun","target":"gather"})", 1);
    b3.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
    b3.add_rule(AssistantKind::planner, kFinalAnswerHeader, "final");
    b3.add_rule(AssistantKind::workflow_generator, "", "");  // force fallback workflows
    b3.add_rule(AssistantKind::reasoner, "", "output");
    b3.add_rule(AssistantKind::coder, "", "output");
    b3.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
    b3.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
                R"({"complexity":0.5,"completeness":0.5,"reflection":"r"})");
    RunConfig cfg = offline_cfg();
    RunRecord rec = run("demo", cfg, b3);
    CHECK(rec.status == "completed");
    const SubtaskRunRecord* gather = nullptr;
    for (const auto& s : rec.subtasks)
      if (s.id == "gather") gather = &s;
    REQUIRE(gather);
    CHECK(gather->attempts == 2);
    bool rerun_traced = false;
    for (const auto& e : rec.planner_trace)
      if (e.action == "rerun") rerun_traced = true;
    CHECK(rerun_traced);
  }

  SUBCASE("a sanctioned jump resets the downstream closure and re-executes it") {
    // chain gather -> solve -> check plus a jump edge check -> solve; the
    // planner jumps once after check, so solve and check run twice
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader,
               R"({"nodes":[
                    {"id":"gather","description":"Gather the facts."},
                    {"id":"solve","description":"Solve using the facts."},
                    {"id":"check","description":"Check the solution."}],
                   "edges":[{"from":"gather","to":"solve","kind":"dependency"},
                            {"from":"solve","to":"check","kind":"dependency"},
                            {"from":"check","to":"solve","kind":"jump",
                             "jump_condition":"solution failed the check"}]})");
    b.add_rule(AssistantKind::planner, "Current subtask [check]",
               R"({"action":"jump","target":"solve"})", 1);
    b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
    b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "final after jump");
    b.add_rule(AssistantKind::workflow_generator, "", "");
    b.add_rule(AssistantKind::reasoner, "", "out");
    b.add_rule(AssistantKind::coder, "", "out");
    b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
    b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
               R"({"complexity":0.5,"completeness":0.5,"reflection":"r"})");
    RunConfig cfg = offline_cfg();
    RunRecord rec = run("demo", cfg, b);
    CHECK(rec.status == "completed");
    std::map<std::string, int> executions;
    for (const auto& e : rec.planner_trace)
      if (e.action == "execute") executions[e.node_id]++;
    CHECK(executions["gather"] == 1);  // outside the closure of solve
    CHECK(executions["solve"] == 2);
    CHECK(executions["check"] == 2);
    bool jump_traced = false;
    for (const auto& e : rec.planner_trace)
      if (e.action == "jump" && e.node_id == "solve") jump_traced = true;
    CHECK(jump_traced);
  }

  SUBCASE("finalize early skips the remaining nodes") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
    b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"finalize"})", 1);
    b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
    b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "early final");
    b.add_rule(AssistantKind::workflow_generator, "", "");
    b.add_rule(AssistantKind::reasoner, "", "out");
    b.add_rule(AssistantKind::coder, "", "out");
    b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
    b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
               R"({"complexity":0.5,"completeness":0.5,"reflection":"r"})");
    RunConfig cfg = offline_cfg();
    RunRecord rec = run("demo", cfg, b);
    CHECK(rec.status == "completed");
    CHECK(rec.final_answer == "early final");
    CHECK(rec.subtasks.size() == 1);  // only gather executed
  }
}

TEST_CASE("run: adversarial scripts halt within budgets") {
  SUBCASE("always-rerun planner is capped by the rerun limit") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
    b.add_rule(AssistantKind::planner, kPlannerActionHeader,
               R"({"action":"rerun","target":"gather"})");
    b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "done anyway");
    b.add_rule(AssistantKind::workflow_generator, "", "");
    b.add_rule(AssistantKind::reasoner, "", "out");
    b.add_rule(AssistantKind::coder, "", "out");
    b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
    b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
               R"({"complexity":0.5,"completeness":0.5,"reflection":"r"})");
    RunConfig cfg = offline_cfg();
    cfg.rerun_limit = 3;
    cfg.jump_budget = 5;
    RunRecord rec = run("demo", cfg, b);
    CHECK(rec.status == "completed");

    // termination bound: executions <= |T| * (R+1) * (J+1)
    int executions = 0;
    for (const auto& e : rec.planner_trace)
      if (e.action == "execute") executions++;
    CHECK(executions <= 3 * (cfg.rerun_limit + 1) * (cfg.jump_budget + 1));

    bool refused = false;
    for (const auto& e : rec.planner_trace)
      if (e.action == "action-refused" &&
          e.detail.find("rerun-limit-exceeded") != std::string::npos)
        refused = true;
    CHECK(refused);
    const SubtaskRunRecord* gather = nullptr;
    for (const auto& s : rec.subtasks)
      if (s.id == "gather") gather = &s;
    REQUIRE(gather);
    CHECK(gather->attempts == cfg.rerun_limit + 1);
  }

  SUBCASE("always-malformed judge fails each subtask with the declared error") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
    b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
    b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "aggregated despite failures");
    b.add_rule(AssistantKind::workflow_generator, "", "");
    b.add_rule(AssistantKind::reasoner, "", "out");
    b.add_rule(AssistantKind::coder, "", "out");
    b.add_rule(AssistantKind::judge, "", "never json");
    RunConfig cfg = offline_cfg();
    RunRecord rec = run("demo", cfg, b);
    CHECK(rec.status == "completed");  // the planner finishes the walk
    REQUIRE(rec.subtasks.size() == 3);
    for (const auto& s : rec.subtasks) {
      CHECK(!s.done);
      CHECK(!s.ea_invoked);  // no scores, no trigger
      if (s.id == "gather")  // first node reaches the judge and fails there
        CHECK(s.error.find("malformed-after-retries") != std::string::npos);
      else  // downstream nodes lack their predecessor's result
        CHECK(s.error.find("missing-dependency") != std::string::npos);
    }
    // judge budget: only the first node is judged, 1 + 2 retries
    int judge_calls = 0;
    for (const auto& e : rec.backend_log)
      if (e.kind == "judge") judge_calls++;
    CHECK(judge_calls == 3);
  }

  SUBCASE("a planner that goes silent mid-run fails the run record") {
    ScriptedBackend b;
    b.add_rule(AssistantKind::planner, kDecomposeTaskHeader, chain_graph_json());
    b.add_rule(AssistantKind::planner, kPlannerActionHeader, "mumble");  // never JSON
    b.add_rule(AssistantKind::workflow_generator, "", "");
    b.add_rule(AssistantKind::reasoner, "", "out");
    b.add_rule(AssistantKind::coder, "", "out");
    b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
    b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
               R"({"complexity":0.5,"completeness":0.5,"reflection":"r"})");
    RunConfig cfg = offline_cfg();
    RunRecord rec = run("demo", cfg, b);
    CHECK(rec.status == "failed");
    CHECK(rec.error.find("malformed-after-retries") != std::string::npos);
    CHECK(!rec.planner_trace.empty());  // partial trace preserved
  }
}

TEST_CASE("write_back_scores") {
  ScriptedBackend b = happy_script();
  RunConfig cfg = offline_cfg();
  RunRecord rec = run("demo task", cfg, b);
  REQUIRE(rec.status == "completed");

  ScoreDb db;
  int inserted = write_back_scores(rec, db, 0.8);
  CHECK(inserted == 3);
  CHECK(db.size() == 3);

  SUBCASE("repeat write-back is a no-op") {
    CHECK(write_back_scores(rec, db, 0.8) == 0);
    CHECK(db.size() == 3);
  }

  SUBCASE("written values equal the judge-emitted values in the record") {
    for (const auto& s : rec.subtasks) {
      const SubtaskRecord* r = db.find(rec.run_id + ":" + s.id);
      REQUIRE(r);
      CHECK(r->complexity == *s.complexity);
      CHECK(r->completeness == *s.completeness);
      CHECK(r->content == s.description);
      CHECK(r->cluster_id.has_value());
    }
  }
}

TEST_CASE("run uses the v-cycle when enabled") {
  // Two-node chain whose only pair is profitable with the neutral empty-db
  // prior (0.25 everywhere, ma = 0, zero-advantage merges eligible), so the
  // optimized graph is the single merged node.
  ScriptedBackend b;
  b.add_rule(AssistantKind::planner, kDecomposeTaskHeader,
             R"({"nodes":[{"id":"a","description":"first half"},
                           {"id":"b","description":"second half"}],
                 "edges":[{"from":"a","to":"b"}]})");
  b.add_rule(AssistantKind::planner, kPlannerActionHeader, R"({"action":"proceed"})");
  b.add_rule(AssistantKind::planner, kFinalAnswerHeader, "merged final");
  b.add_rule(AssistantKind::decomposer, "", "{}");
  b.add_rule(AssistantKind::workflow_generator, "", "");
  b.add_rule(AssistantKind::reasoner, "", "out");
  b.add_rule(AssistantKind::coder, "", "out");
  b.add_rule(AssistantKind::judge, kJudgeWorkflowHeader, judge_json(0.9, 0.9, 0.9));
  b.add_rule(AssistantKind::judge, kSubtaskScoreHeader,
             R"({"complexity":0.5,"completeness":0.5,"reflection":"r"})");
  RunConfig cfg;
  cfg.seed = 3;
  cfg.enable_vcycle = true;
  RunRecord rec = run("demo", cfg, b);
  CHECK(rec.status == "completed");
  CHECK(rec.initial_graph.nodes.size() == 2);
  CHECK(rec.optimized_graph.nodes.size() == 1);
  CHECK(rec.optimized_graph.has_node("a+b"));
  CHECK(!rec.vcycle_trace.empty());
  REQUIRE(rec.subtasks.size() == 1);
  CHECK(rec.subtasks[0].id == "a+b");
}

TEST_CASE("run record persistence round-trips") {
  ScriptedBackend b = happy_script();
  RunConfig cfg = offline_cfg();
  RunRecord rec = run("demo task", cfg, b);

  std::string path = "test_run_record.json";
  save_run_record(rec, path);
  RunRecord loaded = load_run_record(path);
  CHECK(run_record_to_json(loaded) == run_record_to_json(rec));
  std::remove(path.c_str());
}

TEST_CASE("seed_db runs each task unoptimized and writes scores back") {
  ScriptedBackend b = happy_script();
  RunConfig cfg;
  cfg.seed = 5;
  ScoreDb db;
  SeedDbSummary summary = seed_db({"demo task", "another demo task"}, cfg, b, db);
  CHECK(summary.tasks_run == 2);
  CHECK(summary.records_inserted == 6);
  CHECK(db.size() == 6);
  for (const auto& r : db.records()) CHECK(r.cluster_id.has_value());
}

TEST_CASE("run config validation") {
  json good = run_config_to_json(RunConfig{});
  RunConfig parsed = run_config_from_json(good);
  CHECK(parsed.rerun_limit == 3);
  CHECK(parsed.jump_budget == 5);
  CHECK(parsed.evolve.trigger_threshold == 0.8);
  CHECK(parsed.evolve.max_iterations == 15);

  SUBCASE("bad weights are rejected") {
    json bad = good;
    bad["evolve"]["weights"] = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(run_config_from_json(bad), Error);
  }
  SUBCASE("bad backend mode is rejected") {
    json bad = good;
    bad["backend"] = "telepathy";
    try {
      run_config_from_json(bad);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_config);
    }
  }
  SUBCASE("zero step budget is rejected") {
    json bad = good;
    bad["step_budget"] = 0;
    CHECK_THROWS_AS(run_config_from_json(bad), Error);
  }
}
