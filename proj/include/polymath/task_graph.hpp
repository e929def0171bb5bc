#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/util.hpp"

namespace polymath {

// ---------------------------------------------------------------------------
// Task flow graph data model
// ---------------------------------------------------------------------------

enum class SubtaskStatus { pending, running, done, failed };

inline const char* subtask_status_name(SubtaskStatus s) {
  switch (s) {
    case SubtaskStatus::pending: return "pending";
    case SubtaskStatus::running: return "running";
    case SubtaskStatus::done: return "done";
    case SubtaskStatus::failed: return "failed";
  }
  return "unknown";
}

struct Subtask {
  std::string id;
  std::string description;
  std::vector<std::string> depends_on;  // derived from dependency edges
  SubtaskStatus status = SubtaskStatus::pending;
  std::optional<std::string> result;
  int rerun_count = 0;
};

enum class EdgeKind { dependency, jump };

struct FlowEdge {
  std::string from;
  std::string to;
  EdgeKind kind = EdgeKind::dependency;
  std::optional<std::string> jump_condition;  // present iff kind == jump

  friend bool operator==(const FlowEdge& a, const FlowEdge& b) {
    return a.from == b.from && a.to == b.to && a.kind == b.kind &&
           a.jump_condition == b.jump_condition;
  }
};

struct TaskFlowGraph {
  std::string task_input;
  std::vector<Subtask> nodes;  // insertion order preserved; ids unique
  std::vector<FlowEdge> edges;

  const Subtask* find(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
  Subtask* find(const std::string& id) {
    for (auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
  bool has_node(const std::string& id) const { return find(id) != nullptr; }

  std::vector<FlowEdge> dependency_edges() const {
    std::vector<FlowEdge> out;
    for (const auto& e : edges)
      if (e.kind == EdgeKind::dependency) out.push_back(e);
    return out;
  }

  // Recomputes each node's depends_on from the dependency edges. Call after
  // any structural change; the field is a derived convenience.
  void sync_depends_on() {
    for (auto& n : nodes) {
      n.depends_on.clear();
      for (const auto& e : edges)
        if (e.kind == EdgeKind::dependency && e.to == n.id) n.depends_on.push_back(e.from);
      std::sort(n.depends_on.begin(), n.depends_on.end());
      n.depends_on.erase(std::unique(n.depends_on.begin(), n.depends_on.end()),
                         n.depends_on.end());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON interchange format
// ---------------------------------------------------------------------------
// {task_input, nodes:[{id, description, depends_on}], edges:[{from, to, kind,
//  jump_condition?}]} — the canonical format for all modules and the CLI.

inline json graph_to_json(const TaskFlowGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes) {
    json jn{{"id", n.id}, {"description", n.description}, {"depends_on", n.depends_on}};
    if (n.status != SubtaskStatus::pending) jn["status"] = subtask_status_name(n.status);
    if (n.result) jn["result"] = *n.result;
    if (n.rerun_count > 0) jn["rerun_count"] = n.rerun_count;
    nodes.push_back(std::move(jn));
  }
  json edges = json::array();
  for (const auto& e : g.edges) {
    json je{{"from", e.from},
            {"to", e.to},
            {"kind", e.kind == EdgeKind::dependency ? "dependency" : "jump"}};
    if (e.jump_condition) je["jump_condition"] = *e.jump_condition;
    edges.push_back(std::move(je));
  }
  return json{{"task_input", g.task_input}, {"nodes", nodes}, {"edges", edges}};
}

inline TaskFlowGraph graph_from_json(const json& j) try {
  TaskFlowGraph g;
  if (!j.is_object() || !j.contains("nodes"))
    throw Error(ErrorCode::parse_error, "graph JSON must be an object with a nodes array");
  g.task_input = j.value("task_input", "");
  std::set<std::pair<std::string, std::string>> dep_edges_seen;
  for (const auto& jn : j.at("nodes")) {
    Subtask n;
    n.id = jn.at("id").get<std::string>();
    n.description = jn.value("description", "");
    if (jn.contains("status")) {
      std::string s = jn.at("status").get<std::string>();
      if (s == "pending") n.status = SubtaskStatus::pending;
      else if (s == "running") n.status = SubtaskStatus::running;
      else if (s == "done") n.status = SubtaskStatus::done;
      else if (s == "failed") n.status = SubtaskStatus::failed;
      else throw Error(ErrorCode::parse_error, "unknown subtask status: " + s);
    }
    if (jn.contains("result")) n.result = jn.at("result").get<std::string>();
    n.rerun_count = jn.value("rerun_count", 0);
    if (jn.contains("depends_on"))
      for (const auto& d : jn.at("depends_on"))
        n.depends_on.push_back(d.get<std::string>());
    g.nodes.push_back(std::move(n));
  }
  if (j.contains("edges")) {
    for (const auto& je : j.at("edges")) {
      FlowEdge e;
      e.from = je.at("from").get<std::string>();
      e.to = je.at("to").get<std::string>();
      std::string kind = je.value("kind", "dependency");
      if (kind == "dependency") e.kind = EdgeKind::dependency;
      else if (kind == "jump") e.kind = EdgeKind::jump;
      else throw Error(ErrorCode::parse_error, "unknown edge kind: " + kind);
      if (je.contains("jump_condition"))
        e.jump_condition = je.at("jump_condition").get<std::string>();
      if (e.kind == EdgeKind::dependency) dep_edges_seen.insert({e.from, e.to});
      g.edges.push_back(std::move(e));
    }
  }
  // depends_on entries without a matching edge are shorthand; synthesize the
  // dependency edge so edges stay the single source of truth.
  for (const auto& n : g.nodes) {
    for (const auto& d : n.depends_on) {
      if (!dep_edges_seen.count({d, n.id})) {
        g.edges.push_back(FlowEdge{d, n.id, EdgeKind::dependency, std::nullopt});
        dep_edges_seen.insert({d, n.id});
      }
    }
  }
  g.sync_depends_on();
  return g;
} catch (const json::exception& e) {
  throw Error(ErrorCode::parse_error, std::string("malformed graph JSON: ") + e.what());
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class ViolationKind {
  duplicate_id,
  dangling_reference,
  self_edge,
  dependency_cycle,
  jump_condition_mismatch,
  status_result_mismatch,
};

inline const char* violation_kind_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::duplicate_id: return "duplicate-id";
    case ViolationKind::dangling_reference: return "dangling-reference";
    case ViolationKind::self_edge: return "self-edge";
    case ViolationKind::dependency_cycle: return "dependency-cycle";
    case ViolationKind::jump_condition_mismatch: return "jump-condition-mismatch";
    case ViolationKind::status_result_mismatch: return "status-result-mismatch";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  std::string message;
  std::vector<std::string> ids;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }

  std::string summary() const {
    std::string out;
    for (const auto& v : violations) {
      out += violation_kind_name(v.kind);
      out += ": ";
      out += v.message;
      out += "\n";
    }
    return out;
  }
};

// Diagnostics are data, not failures: the report lists every violated
// invariant and an empty report means the graph is valid.
inline ValidationReport validate_graph(const TaskFlowGraph& g) {
  ValidationReport report;
  std::set<std::string> ids;
  std::set<std::string> dups;
  for (const auto& n : g.nodes) {
    if (!ids.insert(n.id).second) dups.insert(n.id);
  }
  for (const auto& id : dups)
    report.violations.push_back(
        {ViolationKind::duplicate_id, "node id '" + id + "' declared more than once", {id}});

  for (const auto& n : g.nodes) {
    bool has_result = n.result.has_value();
    bool is_done = n.status == SubtaskStatus::done;
    if (has_result != is_done)
      report.violations.push_back({ViolationKind::status_result_mismatch,
                                   "node '" + n.id + "' result presence does not match done status",
                                   {n.id}});
  }

  for (const auto& e : g.edges) {
    for (const std::string& endpoint : {e.from, e.to}) {
      if (!ids.count(endpoint))
        report.violations.push_back({ViolationKind::dangling_reference,
                                     "edge references unknown node '" + endpoint + "'",
                                     {endpoint}});
    }
    if (e.from == e.to)
      report.violations.push_back(
          {ViolationKind::self_edge, "edge from '" + e.from + "' to itself", {e.from}});
    bool has_cond = e.jump_condition.has_value();
    if (has_cond != (e.kind == EdgeKind::jump))
      report.violations.push_back({ViolationKind::jump_condition_mismatch,
                                   "edge " + e.from + "->" + e.to +
                                       " jump_condition presence does not match kind",
                                   {e.from, e.to}});
  }

  // Cycle check on the dependency subgraph (jump edges may close cycles).
  // Kahn elimination; whatever cannot be eliminated is grouped into strongly
  // connected components so each cycle is reported once with its members.
  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& id : ids) indegree[id] = 0;
  for (const auto& e : g.edges) {
    if (e.kind != EdgeKind::dependency) continue;
    if (!ids.count(e.from) || !ids.count(e.to) || e.from == e.to) continue;
    adj[e.from].push_back(e.to);
    indegree[e.to]++;
  }
  std::queue<std::string> ready;
  for (const auto& [id, deg] : indegree)
    if (deg == 0) ready.push(id);
  std::size_t removed = 0;
  auto work = indegree;
  while (!ready.empty()) {
    std::string id = ready.front();
    ready.pop();
    removed++;
    for (const auto& next : adj[id])
      if (--work[next] == 0) ready.push(next);
  }
  if (removed < ids.size()) {
    std::set<std::string> leftover;
    for (const auto& [id, deg] : work)
      if (deg > 0) leftover.insert(id);
    // Tarjan over the leftover subgraph.
    std::map<std::string, int> index, low;
    std::map<std::string, bool> on_stack;
    std::vector<std::string> stack;
    int counter = 0;
    std::vector<std::vector<std::string>> sccs;
    std::function<void(const std::string&)> strongconnect = [&](const std::string& v) {
      index[v] = low[v] = counter++;
      stack.push_back(v);
      on_stack[v] = true;
      for (const auto& w : adj[v]) {
        if (!leftover.count(w)) continue;
        if (!index.count(w)) {
          strongconnect(w);
          low[v] = std::min(low[v], low[w]);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
      }
      if (low[v] == index[v]) {
        std::vector<std::string> scc;
        while (true) {
          std::string w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          scc.push_back(w);
          if (w == v) break;
        }
        if (scc.size() > 1) {
          std::sort(scc.begin(), scc.end());
          sccs.push_back(std::move(scc));
        }
      }
    };
    for (const auto& v : leftover)
      if (!index.count(v)) strongconnect(v);
    std::sort(sccs.begin(), sccs.end());
    for (const auto& scc : sccs) {
      std::string members;
      for (const auto& id : scc) {
        if (!members.empty()) members += ", ";
        members += id;
      }
      report.violations.push_back(
          {ViolationKind::dependency_cycle, "dependency cycle among {" + members + "}", scc});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Topological order
// ---------------------------------------------------------------------------

// Kahn's algorithm; ties among simultaneously-ready nodes broken by ascending
// lexicographic node id so the order is deterministic.
inline std::vector<std::string> topological_order(const TaskFlowGraph& g) {
  auto report = validate_graph(g);
  for (const auto& v : report.violations) {
    if (v.kind == ViolationKind::dependency_cycle)
      throw Error(ErrorCode::cycle_detected, v.message);
  }
  if (!report.ok())
    throw Error(ErrorCode::validation_error, report.summary());

  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& n : g.nodes) indegree[n.id] = 0;
  for (const auto& e : g.edges) {
    if (e.kind != EdgeKind::dependency) continue;
    adj[e.from].push_back(e.to);
    indegree[e.to]++;
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [id, deg] : indegree)
    if (deg == 0) ready.push(id);
  std::vector<std::string> order;
  while (!ready.empty()) {
    std::string id = ready.top();
    ready.pop();
    order.push_back(id);
    for (const auto& next : adj[id])
      if (--indegree[next] == 0) ready.push(next);
  }
  return order;
}

// Dependency-downstream closure of `start`, including `start` itself.
inline std::set<std::string> downstream_closure(const TaskFlowGraph& g, const std::string& start) {
  std::set<std::string> seen{start};
  std::queue<std::string> frontier;
  frontier.push(start);
  while (!frontier.empty()) {
    std::string cur = frontier.front();
    frontier.pop();
    for (const auto& e : g.edges) {
      if (e.kind != EdgeKind::dependency || e.from != cur) continue;
      if (seen.insert(e.to).second) frontier.push(e.to);
    }
  }
  return seen;
}

// ---------------------------------------------------------------------------
// Subtask input assembly
// ---------------------------------------------------------------------------

struct SubtaskInputEntry {
  std::string id;
  std::string description;
  std::string result;
};

struct SubtaskInput {
  std::string task_input;
  std::string subtask_id;
  std::string subtask_description;
  std::vector<SubtaskInputEntry> dependencies;  // topological order

  std::string render() const {
    std::string out = "Task: " + task_input + "\n";
    out += "Subtask [" + subtask_id + "]: " + subtask_description + "\n";
    if (!dependencies.empty()) {
      out += "Intermediate results:\n";
      for (const auto& d : dependencies)
        out += "- [" + d.id + "] " + d.description + " => " + d.result + "\n";
    }
    return out;
  }
};

inline SubtaskInput assemble_input(const TaskFlowGraph& g, const std::string& node_id,
                                   const std::map<std::string, std::string>& results) {
  const Subtask* node = g.find(node_id);
  if (!node) throw Error(ErrorCode::invalid_argument, "unknown node '" + node_id + "'");
  SubtaskInput input;
  input.task_input = g.task_input;
  input.subtask_id = node->id;
  input.subtask_description = node->description;

  std::vector<std::string> order = topological_order(g);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

  std::vector<std::string> preds;
  for (const auto& e : g.edges)
    if (e.kind == EdgeKind::dependency && e.to == node_id) preds.push_back(e.from);
  std::sort(preds.begin(), preds.end(),
            [&](const std::string& a, const std::string& b) { return pos[a] < pos[b]; });
  preds.erase(std::unique(preds.begin(), preds.end()), preds.end());

  for (const auto& p : preds) {
    auto it = results.find(p);
    if (it == results.end())
      throw Error(ErrorCode::missing_dependency,
                  "predecessor '" + p + "' of '" + node_id + "' has no result");
    const Subtask* pn = g.find(p);
    input.dependencies.push_back({p, pn ? pn->description : "", it->second});
  }
  return input;
}

// ---------------------------------------------------------------------------
// Planner actions and execution state
// ---------------------------------------------------------------------------

struct PlannerAction {
  enum class Kind { proceed, rerun, jump, finalize };
  Kind kind = Kind::proceed;
  std::string target;  // for rerun/jump

  static PlannerAction proceed() { return {Kind::proceed, ""}; }
  static PlannerAction rerun(std::string t) { return {Kind::rerun, std::move(t)}; }
  static PlannerAction jump(std::string t) { return {Kind::jump, std::move(t)}; }
  static PlannerAction finalize() { return {Kind::finalize, ""}; }
};

inline const char* planner_action_name(PlannerAction::Kind k) {
  switch (k) {
    case PlannerAction::Kind::proceed: return "proceed";
    case PlannerAction::Kind::rerun: return "rerun";
    case PlannerAction::Kind::jump: return "jump";
    case PlannerAction::Kind::finalize: return "finalize";
  }
  return "unknown";
}

struct TraceEvent {
  int seq = 0;          // logical clock; deterministic
  std::string node_id;
  std::string action;
  std::string detail;
  std::string timestamp;  // wall clock; excluded from determinism checks
};

inline void to_json(json& j, const TraceEvent& e) {
  j = json{{"seq", e.seq}, {"node", e.node_id}, {"action", e.action}, {"detail", e.detail},
           {"timestamp", e.timestamp}};
}

struct ExecutionLimits {
  int rerun_limit = 3;
  int jump_budget = 5;
};

class ExecutionState {
 public:
  ExecutionState() = default;
  explicit ExecutionState(TaskFlowGraph graph)
      : graph_(std::move(graph)), order_(topological_order(graph_)) {}

  const TaskFlowGraph& graph() const { return graph_; }
  const std::vector<std::string>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }
  bool finalized() const { return finalized_; }
  bool at_end() const { return cursor_ >= order_.size(); }
  int jumps_taken() const { return jumps_taken_; }
  const std::map<std::string, std::string>& results() const { return results_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }

  const std::string& current_node_id() const {
    static const std::string none = "";
    if (order_.empty()) return none;
    if (cursor_ >= order_.size()) return order_.back();
    return order_[cursor_];
  }

  void mark_running(const std::string& id) {
    Subtask* n = must_find(id);
    n->status = SubtaskStatus::running;
    append_trace(id, "execute", "");
  }

  void record_result(const std::string& id, const std::string& result) {
    Subtask* n = must_find(id);
    n->status = SubtaskStatus::done;
    n->result = result;
    results_[id] = result;
    append_trace(id, "done", "");
  }

  void record_failure(const std::string& id, const std::string& error) {
    Subtask* n = must_find(id);
    n->status = SubtaskStatus::failed;
    n->result.reset();
    results_.erase(id);
    append_trace(id, "failed", error);
  }

  void note(const std::string& id, const std::string& action, const std::string& detail) {
    append_trace(id, action, detail);
  }

  friend void apply_planner_action(ExecutionState& state, const PlannerAction& action,
                                   const ExecutionLimits& limits);

 private:
  Subtask* must_find(const std::string& id) {
    Subtask* n = graph_.find(id);
    if (!n) throw Error(ErrorCode::invalid_argument, "unknown node '" + id + "'");
    return n;
  }

  void append_trace(const std::string& id, const std::string& action, const std::string& detail) {
    trace_.push_back({static_cast<int>(trace_.size()), id, action, detail, iso_timestamp_now()});
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < order_.size(); ++i)
      if (order_[i] == id) return i;
    throw Error(ErrorCode::invalid_argument, "node '" + id + "' not in execution order");
  }

  TaskFlowGraph graph_;
  std::vector<std::string> order_;
  std::size_t cursor_ = 0;
  std::map<std::string, std::string> results_;
  std::vector<TraceEvent> trace_;
  int jumps_taken_ = 0;
  bool finalized_ = false;
};

// Mutates node status, results, cursor, and trace only — never topology.
// proceed advances the cursor; rerun resets the target and moves the cursor
// to it; jump moves the cursor to the jump target and resets the target's
// dependency-downstream closure; finalize marks the run complete.
inline void apply_planner_action(ExecutionState& state, const PlannerAction& action,
                                 const ExecutionLimits& limits) {
  switch (action.kind) {
    case PlannerAction::Kind::proceed: {
      std::string at = state.current_node_id();
      if (state.cursor_ < state.order_.size()) state.cursor_++;
      state.append_trace(at, "proceed", "");
      return;
    }
    case PlannerAction::Kind::rerun: {
      Subtask* target = state.graph_.find(action.target);
      if (!target)
        throw Error(ErrorCode::validation_error, "rerun target '" + action.target + "' unknown");
      if (target->rerun_count + 1 > limits.rerun_limit)
        throw Error(ErrorCode::rerun_limit_exceeded,
                    "node '" + action.target + "' already rerun " +
                        std::to_string(target->rerun_count) + " times (limit " +
                        std::to_string(limits.rerun_limit) + ")");
      target->rerun_count++;
      target->status = SubtaskStatus::pending;
      target->result.reset();
      state.results_.erase(action.target);
      state.cursor_ = state.index_of(action.target);
      state.append_trace(action.target, "rerun", "count=" + std::to_string(target->rerun_count));
      return;
    }
    case PlannerAction::Kind::jump: {
      if (!state.graph_.has_node(action.target))
        throw Error(ErrorCode::validation_error, "jump target '" + action.target + "' unknown");
      const std::string& from = state.current_node_id();
      bool sanctioned = false;
      for (const auto& e : state.graph_.edges)
        if (e.kind == EdgeKind::jump && e.from == from && e.to == action.target) sanctioned = true;
      if (!sanctioned)
        throw Error(ErrorCode::illegal_jump,
                    "no jump edge from '" + from + "' to '" + action.target + "'");
      if (state.jumps_taken_ + 1 > limits.jump_budget)
        throw Error(ErrorCode::jump_budget_exceeded,
                    "jump budget " + std::to_string(limits.jump_budget) + " exhausted");
      state.jumps_taken_++;
      // Stale results must not leak into re-executed paths: reset the whole
      // dependency-downstream closure of the target.
      for (const auto& id : downstream_closure(state.graph_, action.target)) {
        Subtask* n = state.graph_.find(id);
        n->status = SubtaskStatus::pending;
        n->result.reset();
        state.results_.erase(id);
      }
      state.cursor_ = state.index_of(action.target);
      state.append_trace(action.target, "jump", "from=" + from);
      return;
    }
    case PlannerAction::Kind::finalize: {
      state.finalized_ = true;
      state.append_trace(state.current_node_id(), "finalize", "");
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Final answer aggregation
// ---------------------------------------------------------------------------

inline constexpr const char* kFinalAnswerHeader = "Produce the final answer.";

inline std::string build_final_answer_prompt(const ExecutionState& state) {
  std::string prompt = kFinalAnswerHeader;
  prompt += "\nTask: " + state.graph().task_input + "\n";
  prompt += "Subtask results in execution order:\n";
  for (const auto& id : state.order()) {
    const Subtask* n = state.graph().find(id);
    if (!n) continue;
    prompt += "- [" + n->id + "] " + n->description + " => ";
    if (n->result) prompt += *n->result;
    else prompt += "(" + std::string(subtask_status_name(n->status)) + ")";
    prompt += "\n";
  }
  prompt += "Combine these results into the final answer to the task.";
  return prompt;
}

inline std::string aggregate_final_answer(const ExecutionState& state, Backend& planner) {
  std::vector<ChatMessage> messages = {
      {"system", default_role_configs().at(AssistantKind::planner).system_prompt},
      {"user", build_final_answer_prompt(state)},
  };
  return planner.complete(AssistantKind::planner, messages).content;
}

}  // namespace polymath
