#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/task_graph.hpp"
#include "polymath/workflow.hpp"

namespace polymath {

// ---------------------------------------------------------------------------
// Multi-objective scores
// ---------------------------------------------------------------------------

struct EvolveWeights {
  double instruction_following = 0.25;
  double correctness = 0.5;
  double plan_progress = 0.25;

  bool valid() const {
    double sum = instruction_following + correctness + plan_progress;
    return std::abs(sum - 1.0) < 1e-9 && instruction_following >= 0 && correctness >= 0 &&
           plan_progress >= 0;
  }
};

struct EvaluationScores {
  double instruction_following = 0.0;
  double correctness = 0.0;
  double plan_progress = 0.0;
  double combined = 0.0;  // weighted sum per the configured weights
  std::string reflections;

  static EvaluationScores make(double inst, double corr, double plan, const EvolveWeights& w,
                               std::string reflections = "") {
    EvaluationScores s;
    s.instruction_following = clamp01(inst);
    s.correctness = clamp01(corr);
    s.plan_progress = clamp01(plan);
    s.combined = w.instruction_following * s.instruction_following +
                 w.correctness * s.correctness + w.plan_progress * s.plan_progress;
    s.reflections = std::move(reflections);
    return s;
  }
};

inline void to_json(json& j, const EvaluationScores& s) {
  j = json{{"instruction_following", s.instruction_following},
           {"correctness", s.correctness},
           {"plan_progress", s.plan_progress},
           {"combined", s.combined},
           {"reflections", s.reflections}};
}

inline void from_json(const json& j, EvaluationScores& s) {
  s.instruction_following = j.at("instruction_following").get<double>();
  s.correctness = j.at("correctness").get<double>();
  s.plan_progress = j.at("plan_progress").get<double>();
  s.combined = j.at("combined").get<double>();
  s.reflections = j.value("reflections", "");
}

// ---------------------------------------------------------------------------
// Candidates and the program database
// ---------------------------------------------------------------------------

using CellCoords = std::pair<int, int>;  // (node-count bucket, prompt-length bucket)

struct Candidate {
  std::string id;
  std::string source;
  std::optional<EvaluationScores> scores;
  std::string output;  // workflow output of the evaluation run
  std::optional<std::string> parent_id;
  int generation = 0;
  int island = 0;
  std::optional<CellCoords> cell;
  std::string error;  // set when evaluation failed

  double combined_or_zero() const { return scores ? scores->combined : 0.0; }
};

// Feature descriptor: node-count bucket in {1,2,3,4,5+} and total prompt
// length bucket over {<200, <500, <1000, >=1000} characters.
inline CellCoords cell_of(const Workflow& w) {
  int node_bucket = std::min<int>(static_cast<int>(w.nodes.size()), 5);
  std::size_t prompt_chars = 0;
  for (const auto& n : w.nodes) prompt_chars += n.prompt.size();
  int len_bucket;
  if (prompt_chars < 200) len_bucket = 0;
  else if (prompt_chars < 500) len_bucket = 1;
  else if (prompt_chars < 1000) len_bucket = 2;
  else len_bucket = 3;
  return {node_bucket, len_bucket};
}

enum class AdmissionKind { new_cell, displaced, rejected_by_cell };

struct AdmissionOutcome {
  AdmissionKind kind = AdmissionKind::new_cell;
  std::string displaced_id;  // set for displaced
};

inline const char* admission_kind_name(AdmissionKind k) {
  switch (k) {
    case AdmissionKind::new_cell: return "new-cell";
    case AdmissionKind::displaced: return "displaced";
    case AdmissionKind::rejected_by_cell: return "rejected-by-cell";
  }
  return "unknown";
}

class ProgramDatabase {
 public:
  explicit ProgramDatabase(int island_count = 2, std::uint64_t rng_seed = 0)
      : islands_(std::max(1, island_count)), rng_(rng_seed), rng_seed_(rng_seed) {}

  std::uint64_t rng_seed() const { return rng_seed_; }
  std::mt19937_64& rng() { return rng_; }
  int island_count() const { return static_cast<int>(islands_.size()); }
  std::size_t size() const { return order_.size(); }
  const std::vector<std::string>& island(int i) const { return islands_.at(i); }
  const std::map<CellCoords, std::string>& grid() const { return grid_; }

  const Candidate& get(const std::string& id) const { return candidates_.at(id); }
  bool contains(const std::string& id) const { return candidates_.count(id) > 0; }

  std::string next_id() { return "c" + std::to_string(id_counter_++); }

  // Stores the candidate on its island; a scored candidate takes its grid
  // cell iff the cell is empty or it strictly beats the incumbent.
  AdmissionOutcome admit(Candidate c) {
    if (contains(c.id)) throw Error(ErrorCode::duplicate_id, "candidate '" + c.id + "' exists");
    if (c.island < 0 || c.island >= island_count())
      throw Error(ErrorCode::invalid_argument, "island out of range");
    AdmissionOutcome outcome;
    outcome.kind = AdmissionKind::rejected_by_cell;
    if (c.scores) {
      if (!c.cell) c.cell = cell_of(parse_workflow(c.source));
      auto it = grid_.find(*c.cell);
      if (it == grid_.end()) {
        grid_[*c.cell] = c.id;
        outcome.kind = AdmissionKind::new_cell;
      } else if (c.scores->combined > candidates_.at(it->second).combined_or_zero()) {
        outcome.kind = AdmissionKind::displaced;
        outcome.displaced_id = it->second;
        it->second = c.id;
      }
    }
    islands_[c.island].push_back(c.id);
    order_.push_back(c.id);
    candidates_[c.id] = std::move(c);
    return outcome;
  }

  // Best combined score wins; ties go to the earliest admitted.
  std::optional<std::string> best_id() const {
    std::optional<std::string> best;
    double best_score = -1.0;
    for (const auto& id : order_) {
      const Candidate& c = candidates_.at(id);
      if (!c.scores) continue;
      if (c.scores->combined > best_score) {
        best_score = c.scores->combined;
        best = id;
      }
    }
    return best;
  }

  std::optional<std::string> island_best_id(int island) const {
    std::optional<std::string> best;
    double best_score = -1.0;
    for (const auto& id : order_) {
      const Candidate& c = candidates_.at(id);
      if (c.island != island || !c.scores) continue;
      if (c.scores->combined > best_score) {
        best_score = c.scores->combined;
        best = id;
      }
    }
    return best;
  }

  // Ring migration: every island's best candidate is copied (fresh id, same
  // source and scores) to the next island. Returns the number of copies; a
  // single-island database is a warned no-op.
  int migrate() {
    if (island_count() < 2) return 0;
    struct Move {
      Candidate copy;
      int to;
    };
    std::vector<Move> moves;
    for (int i = 0; i < island_count(); ++i) {
      auto best = island_best_id(i);
      if (!best) continue;
      Candidate copy = candidates_.at(*best);
      copy.id = next_id();
      copy.parent_id = *best;
      copy.island = (i + 1) % island_count();
      moves.push_back({std::move(copy), (i + 1) % island_count()});
    }
    for (auto& m : moves) {
      // Re-admission applies the usual grid rule to the copy.
      admit(std::move(m.copy));
    }
    return static_cast<int>(moves.size());
  }

 private:
  std::map<std::string, Candidate> candidates_;
  std::vector<std::string> order_;  // admission order
  std::vector<std::vector<std::string>> islands_;
  std::map<CellCoords, std::string> grid_;
  std::mt19937_64 rng_;
  std::uint64_t rng_seed_ = 0;
  long long id_counter_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline constexpr const char* kJudgeWorkflowHeader = "Evaluate the workflow output.";

struct WorkflowEvaluation {
  EvaluationScores scores;
  std::string output;
  int steps = 0;
  int judge_attempts = 1;
};

inline std::string graph_status_summary(const ExecutionState& state) {
  std::string out;
  for (const auto& id : state.order()) {
    const Subtask* n = state.graph().find(id);
    if (!n) continue;
    out += "- [" + n->id + "] " + truncate_text(n->description, 100) + " (" +
           subtask_status_name(n->status) + ")\n";
  }
  return out;
}

// Executes the workflow on the subtask input, then asks the judge for the
// three component scores and reflections. Component scores are clamped to
// [0,1]; combined is their weighted sum.
inline WorkflowEvaluation evaluate_workflow(const Workflow& w, const ExecutionState& graph_state,
                                            const Subtask& subtask, const SubtaskInput& input,
                                            Backend& backend, const EvolveWeights& weights,
                                            int step_budget = 50, int parse_retries = 2) {
  if (!weights.valid()) throw Error(ErrorCode::invalid_config, "weights must sum to 1");
  WorkflowResult run = execute_workflow(w, input, backend, step_budget);

  std::string prompt = kJudgeWorkflowHeader;
  prompt += "\nSubtask [" + subtask.id + "]: " + subtask.description + "\n";
  prompt += "User instructions: " + input.task_input + "\n";
  prompt += "Task flow graph status:\n" + graph_status_summary(graph_state);
  prompt += "Workflow output:\n" + run.output + "\n";
  prompt += "Score instruction_following (follows the user instructions), correctness "
            "(accuracy relative to the request), and plan_progress (alignment with the "
            "task flow graph expectations), each in [0,1], and give brief reflections. "
            "Respond with JSON {\"instruction_following\": x, \"correctness\": y, "
            "\"plan_progress\": z, \"reflections\": \"...\"}.";
  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::judge).system_prompt},
      {"user", prompt},
  };
  ParsedFields fields = complete_structured(backend, AssistantKind::judge, messages,
                                            {{"instruction_following", true, 0.0, 1.0, true},
                                             {"correctness", true, 0.0, 1.0, true},
                                             {"plan_progress", true, 0.0, 1.0, true},
                                             {"reflections", false, 0, 0, false}},
                                            parse_retries);
  WorkflowEvaluation eval;
  eval.scores = EvaluationScores::make(fields.number("instruction_following"),
                                       fields.number("correctness"), fields.number("plan_progress"),
                                       weights, fields.text("reflections"));
  eval.output = run.output;
  eval.steps = run.steps_executed;
  eval.judge_attempts = fields.attempts;
  return eval;
}

// ---------------------------------------------------------------------------
// Prompt sampling and proposal generation
// ---------------------------------------------------------------------------

struct ContextEntry {
  std::string id;
  std::string source;
  std::optional<EvaluationScores> scores;
  std::string error;
};

struct PromptContext {
  std::string problem;
  std::vector<ContextEntry> entries;
  std::string reference_source;  // frozen-region reference for proposals
};

// Selects up to n candidates from the island: always the island's best, the
// remainder drawn score-proportionally without replacement using the database
// rng. An empty island yields a problem-only context.
inline PromptContext sample_context(ProgramDatabase& db, int island, int n,
                                    const std::string& problem) {
  if (island < 0 || island >= db.island_count())
    throw Error(ErrorCode::invalid_argument, "island out of range");
  PromptContext ctx;
  ctx.problem = problem;
  const auto& members = db.island(island);
  if (members.empty()) {
    if (auto global = db.best_id()) ctx.reference_source = db.get(*global).source;
    return ctx;
  }

  auto best = db.island_best_id(island);
  std::vector<std::string> chosen;
  if (best) chosen.push_back(*best);

  std::vector<std::string> pool;
  for (const auto& id : members)
    if (!best || id != *best) pool.push_back(id);

  while (static_cast<int>(chosen.size()) < n && !pool.empty()) {
    double total = 0.0;
    for (const auto& id : pool) total += db.get(id).combined_or_zero();
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = db.rng()() % pool.size();
    } else {
      std::uniform_real_distribution<double> dist(0.0, total);
      double r = dist(db.rng());
      double acc = 0.0;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += db.get(pool[i]).combined_or_zero();
        if (r <= acc) {
          pick = i;
          break;
        }
        pick = i;
      }
    }
    chosen.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<long>(pick));
  }

  for (const auto& id : chosen) {
    const Candidate& c = db.get(id);
    ctx.entries.push_back({c.id, c.source, c.scores, c.error});
  }
  if (best) ctx.reference_source = db.get(*best).source;
  else if (auto global = db.best_id()) ctx.reference_source = db.get(*global).source;
  return ctx;
}

inline constexpr const char* kGenerateWorkflowHeader = "Improve the workflow.";

inline std::string strip_code_fence(const std::string& text) {
  std::string t = trim(text);
  if (!starts_with(t, "```")) return t;
  std::size_t first_newline = t.find('\n');
  if (first_newline == std::string::npos) return t;
  std::size_t closing = t.rfind("```");
  if (closing == std::string::npos || closing <= first_newline) return t;
  return trim(t.substr(first_newline + 1, closing - first_newline - 1));
}

class InvalidProposal : public Error {
 public:
  explicit InvalidProposal(const std::string& reason)
      : Error(ErrorCode::invalid_proposal, reason) {}
};

// Asks the generator for a next-generation workflow source. The reply must
// parse as a valid workflow whose frozen region is byte-identical to the
// reference candidate's; invalid replies are reissued with the reason
// appended, up to `retries` extra attempts.
inline std::string propose(const PromptContext& ctx, Backend& generator, int retries = 2,
                           int* calls_used = nullptr) {
  std::string prompt = kGenerateWorkflowHeader;
  prompt += "\nProblem: " + ctx.problem + "\n";
  if (!ctx.entries.empty()) {
    prompt += "Previously discovered workflows (scores and reflections attached):\n";
    for (const auto& e : ctx.entries) {
      prompt += "### Candidate " + e.id;
      if (e.scores)
        prompt += " combined=" + std::to_string(e.scores->combined) +
                  " instruction_following=" + std::to_string(e.scores->instruction_following) +
                  " correctness=" + std::to_string(e.scores->correctness) +
                  " plan_progress=" + std::to_string(e.scores->plan_progress);
      if (!e.error.empty()) prompt += " FAILED: " + e.error;
      prompt += "\n";
      if (e.scores && !e.scores->reflections.empty())
        prompt += "Reflections: " + e.scores->reflections + "\n";
      prompt += e.source + "\n";
    }
  }
  prompt += "Write the full next-generation workflow source. Modify only the content between "
            "# REPLACE-START and # REPLACE-END; everything outside must stay byte-identical.";

  std::optional<std::string> reference_frozen;
  if (!ctx.reference_source.empty())
    reference_frozen = frozen_region(parse_workflow(ctx.reference_source));

  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::workflow_generator).system_prompt},
      {"user", prompt},
  };
  std::string last_reason;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    ChatResponse resp = generator.complete(AssistantKind::workflow_generator, messages);
    if (calls_used) (*calls_used)++;
    std::string source = strip_code_fence(resp.content);
    try {
      Workflow w = parse_workflow(source);
      if (reference_frozen && frozen_region(w) != *reference_frozen)
        throw InvalidProposal("text outside replace blocks was modified");
      return serialize_workflow(w);
    } catch (const Error& e) {
      last_reason = e.what();
    }
    messages.push_back({"assistant", resp.content});
    messages.push_back({"user", "That workflow was rejected (" + last_reason +
                                    "). Emit the corrected full workflow source."});
  }
  throw InvalidProposal(last_reason);
}

// ---------------------------------------------------------------------------
// The evolve loop
// ---------------------------------------------------------------------------

struct EvolveConfig {
  int max_iterations = 15;
  double trigger_threshold = 0.8;
  int islands = 2;
  int migration_interval = 5;
  int sample_size = 3;
  EvolveWeights weights;
  int proposal_retries = 2;
  int step_budget = 50;

  bool valid() const {
    return max_iterations > 0 && trigger_threshold > 0.0 && trigger_threshold <= 1.0 &&
           islands > 0 && migration_interval > 0 && sample_size > 0 && weights.valid();
  }
};

struct IterationRecord {
  int iteration = 0;
  int island = 0;
  std::string candidate_id;
  std::string parent_id;
  std::optional<CellCoords> cell;
  std::optional<EvaluationScores> scores;
  std::string admission;
  std::string error;
};

inline void to_json(json& j, const IterationRecord& r) {
  j = json{{"iteration", r.iteration}, {"island", r.island}, {"candidate", r.candidate_id},
           {"parent", r.parent_id},    {"admission", r.admission}};
  if (r.cell) j["cell"] = {r.cell->first, r.cell->second};
  if (r.scores) j["scores"] = *r.scores;
  if (!r.error.empty()) j["error"] = r.error;
}

struct EvolveResult {
  Candidate best;
  std::vector<IterationRecord> history;
  bool all_proposals_invalid = false;
  int backend_calls = 0;
};

// Self-reflection-guided evolutionary search. Seeds island 0 with the
// already-evaluated initial candidate; each iteration samples a round-robin
// island, proposes, evaluates, and admits; migrates on the configured
// interval; stops early once any candidate reaches the trigger threshold.
// Judge+generator calls are hard-capped at max_iterations * (1 +
// proposal_retries) + 1 so the declared budget holds even under adversarial
// retry patterns.
inline EvolveResult evolve(const std::string& initial_source,
                           const EvaluationScores& initial_scores, const Subtask& subtask,
                           const ExecutionState& graph_state, const SubtaskInput& input,
                           const EvolveConfig& cfg, Backend& backend,
                           std::uint64_t rng_seed = 0) {
  if (!cfg.valid()) throw Error(ErrorCode::invalid_config, "invalid evolve config");
  Workflow initial_wf = parse_workflow(initial_source);  // throws on bad input

  ProgramDatabase db(cfg.islands, rng_seed);
  Candidate initial;
  initial.id = db.next_id();
  initial.source = serialize_workflow(initial_wf);
  initial.scores = initial_scores;
  initial.generation = 0;
  initial.island = 0;
  db.admit(initial);

  EvolveResult result;
  result.best = db.get(initial.id);
  const int call_cap = cfg.max_iterations * (1 + cfg.proposal_retries) + 1;
  int calls = 0;
  bool any_valid_proposal = false;

  std::string problem = "Subtask [" + subtask.id + "]: " + subtask.description +
                        "\nTask: " + input.task_input;

  for (int iteration = 1; iteration <= cfg.max_iterations; ++iteration) {
    if (calls >= call_cap) break;
    int island = (iteration - 1) % cfg.islands;
    IterationRecord record;
    record.iteration = iteration;
    record.island = island;

    PromptContext ctx = sample_context(db, island, cfg.sample_size, problem);

    // Retries are trimmed to whatever budget remains so the cap is exact.
    int proposal_retries = std::min(cfg.proposal_retries, call_cap - calls - 1);
    std::string source;
    try {
      source = propose(ctx, backend, proposal_retries, &calls);
    } catch (const InvalidProposal& e) {
      record.admission = "proposal-invalid";
      record.error = e.what();
      result.history.push_back(record);
      if (calls >= call_cap) break;
      continue;
    }
    any_valid_proposal = true;

    Candidate cand;
    cand.id = db.next_id();
    cand.source = source;
    cand.island = island;
    std::string parent = ctx.entries.empty() ? initial.id : ctx.entries.front().id;
    cand.parent_id = parent;
    cand.generation = db.get(parent).generation + 1;
    record.candidate_id = cand.id;
    record.parent_id = parent;

    if (calls >= call_cap) {
      record.admission = "budget-stop";
      result.history.push_back(record);
      break;
    }
    int judge_retries = std::min(2, call_cap - calls - 1);
    try {
      WorkflowEvaluation eval =
          evaluate_workflow(parse_workflow(source), graph_state, subtask, input, backend,
                            cfg.weights, cfg.step_budget, judge_retries);
      calls += eval.judge_attempts;
      cand.scores = eval.scores;
      cand.output = eval.output;
    } catch (const Error& e) {
      calls += 1 + judge_retries;
      cand.error = e.what();
      record.error = e.what();
    }

    AdmissionOutcome outcome = db.admit(cand);
    record.cell = db.get(cand.id).cell;
    record.scores = cand.scores;
    if (record.admission.empty())
      record.admission = cand.scores ? admission_kind_name(outcome.kind) : "not-scored";
    result.history.push_back(record);

    if (cand.scores && cand.scores->combined >= cfg.trigger_threshold) break;
    if (iteration % cfg.migration_interval == 0) db.migrate();
  }

  result.all_proposals_invalid = !any_valid_proposal;
  result.backend_calls = calls;
  if (auto best = db.best_id()) result.best = db.get(*best);
  return result;
}

// Line-delimited JSON history, one line per iteration.
inline std::string history_to_jsonl(const std::vector<IterationRecord>& history) {
  std::string out;
  for (const auto& r : history) {
    json j = r;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace polymath
