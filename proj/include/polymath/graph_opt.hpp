#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/score_db.hpp"
#include "polymath/task_graph.hpp"

namespace polymath {

// ---------------------------------------------------------------------------
// Merge advantage and matchings
// ---------------------------------------------------------------------------

inline constexpr const char* kMergedDescriptionSeparator = "\n---\n";

// Advantage of merging two adjacent subtasks: the merged pair's estimated
// effective score minus the mean of the individual scores. Positive values
// justify coarsening.
inline double merge_advantage(double s_i, double s_j, double s_ij) {
  return s_ij - (s_i + s_j) / 2.0;
}

// Mean effective score of a proposed sub-graph minus the parent's score.
// Positive values justify relaxation.
inline double decomposition_advantage(double parent_score, const std::vector<double>& sub_scores) {
  if (sub_scores.empty()) throw Error(ErrorCode::invalid_argument, "no sub scores");
  double sum = 0.0;
  for (double s : sub_scores) sum += s;
  return sum / static_cast<double>(sub_scores.size()) - parent_score;
}

struct MergeCandidate {
  std::string node_i;  // edge source
  std::string node_j;  // edge target
  double advantage = 0.0;
  EffectiveScoreEstimate merged_estimate;
};

struct Matching {
  std::vector<MergeCandidate> pairs;
  std::set<std::string> used;

  double total_advantage() const {
    double t = 0.0;
    for (const auto& p : pairs) t += p.advantage;
    return t;
  }
};

// Greedy scan of a descending-sorted candidate list: stop at the first
// negative advantage, select a pair iff neither endpoint is already used.
// Zero-advantage pairs are eligible. Classic 1/2-approximation of the
// maximum-weight matching.
inline Matching greedy_coarsen(const std::vector<MergeCandidate>& edges) {
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (edges[i - 1].advantage < edges[i].advantage)
      throw Error(ErrorCode::unsorted_input,
                  "candidates must be sorted descending by advantage");
  Matching m;
  for (const auto& e : edges) {
    if (e.advantage < 0.0) break;
    if (m.used.count(e.node_i) || m.used.count(e.node_j)) continue;
    m.pairs.push_back(e);
    m.used.insert(e.node_i);
    m.used.insert(e.node_j);
  }
  return m;
}

// Exhaustive maximum-weight matching over the non-negative-advantage edges.
// Test oracle only: caps at 16 distinct nodes. Ties resolved toward the
// lexicographically smallest (node_i, node_j) pair sequence.
inline Matching exact_matching_oracle(std::vector<MergeCandidate> edges) {
  std::set<std::string> node_ids;
  for (const auto& e : edges) {
    node_ids.insert(e.node_i);
    node_ids.insert(e.node_j);
  }
  if (node_ids.size() > 16)
    throw Error(ErrorCode::too_large, "oracle limited to 16 nodes, got " +
                                          std::to_string(node_ids.size()));
  edges.erase(std::remove_if(edges.begin(), edges.end(),
                             [](const MergeCandidate& e) { return e.advantage < 0.0; }),
              edges.end());
  std::sort(edges.begin(), edges.end(), [](const MergeCandidate& a, const MergeCandidate& b) {
    return std::make_pair(a.node_i, a.node_j) < std::make_pair(b.node_i, b.node_j);
  });

  Matching best;
  double best_total = 0.0;
  std::vector<std::size_t> best_picked;

  std::vector<std::size_t> picked;
  std::set<std::string> used;
  std::function<void(std::size_t, double)> search = [&](std::size_t idx, double total) {
    if (idx == edges.size()) {
      // Indices follow the sorted edge order, so index sequences compare the
      // same way pair-id sequences do; the empty sequence is smallest.
      bool better = total > best_total || (total == best_total && picked < best_picked);
      if (better) {
        best_total = total;
        best_picked = picked;
        best.pairs.clear();
        best.used.clear();
        for (std::size_t i : picked) {
          best.pairs.push_back(edges[i]);
          best.used.insert(edges[i].node_i);
          best.used.insert(edges[i].node_j);
        }
      }
      return;
    }
    const auto& e = edges[idx];
    if (!used.count(e.node_i) && !used.count(e.node_j)) {
      used.insert(e.node_i);
      used.insert(e.node_j);
      picked.push_back(idx);
      search(idx + 1, total + e.advantage);
      picked.pop_back();
      used.erase(e.node_i);
      used.erase(e.node_j);
    }
    search(idx + 1, total);
  };
  search(0, 0.0);
  return best;
}

// ---------------------------------------------------------------------------
// Candidate scoring
// ---------------------------------------------------------------------------

// One candidate per dependency edge. The merged content handed to the
// estimator is the ordered concatenation of both descriptions joined by a
// separator line. Returned sorted descending by advantage, ties by ascending
// (node_i, node_j).
inline std::vector<MergeCandidate> score_merge_candidates(const TaskFlowGraph& g,
                                                          const ScoreDb& db, Backend& estimator,
                                                          int k) {
  std::map<std::string, double> node_scores;
  auto score_of = [&](const std::string& id, const std::string& content) {
    auto it = node_scores.find(id);
    if (it != node_scores.end()) return it->second;
    double s = db.estimate_effective_score(content, k, estimator).effective;
    node_scores[id] = s;
    return s;
  };

  std::vector<MergeCandidate> candidates;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : g.edges) {
    if (e.kind != EdgeKind::dependency) continue;
    if (!seen.insert({e.from, e.to}).second) continue;
    const Subtask* a = g.find(e.from);
    const Subtask* b = g.find(e.to);
    if (!a || !b) continue;
    double s_i = score_of(a->id, a->description);
    double s_j = score_of(b->id, b->description);
    std::string merged_content = a->description + kMergedDescriptionSeparator + b->description;
    EffectiveScoreEstimate merged = db.estimate_effective_score(merged_content, k, estimator);
    MergeCandidate c;
    c.node_i = a->id;
    c.node_j = b->id;
    c.merged_estimate = merged;
    c.advantage = merge_advantage(s_i, s_j, merged.effective);
    candidates.push_back(std::move(c));
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const MergeCandidate& a, const MergeCandidate& b) {
              if (a.advantage != b.advantage) return a.advantage > b.advantage;
              return std::make_pair(a.node_i, a.node_j) < std::make_pair(b.node_i, b.node_j);
            });
  return candidates;
}

// ---------------------------------------------------------------------------
// Applying merges (graph projection to the next coarser level)
// ---------------------------------------------------------------------------

struct MergeApplyResult {
  TaskFlowGraph graph;
  std::vector<std::pair<std::string, std::string>> applied;
  std::vector<std::pair<std::string, std::string>> skipped;  // contraction would close a cycle
};

namespace detail {

// True iff a dependency path from `from` to `to` of length >= 2 exists, i.e.
// contracting the direct edge would close a cycle.
inline bool has_indirect_dependency_path(const TaskFlowGraph& g, const std::string& from,
                                         const std::string& to) {
  std::set<std::string> seen;
  std::vector<std::string> frontier;
  for (const auto& e : g.edges)
    if (e.kind == EdgeKind::dependency && e.from == from && e.to != to)
      if (seen.insert(e.to).second) frontier.push_back(e.to);
  while (!frontier.empty()) {
    std::string cur = frontier.back();
    frontier.pop_back();
    if (cur == to) return true;
    for (const auto& e : g.edges)
      if (e.kind == EdgeKind::dependency && e.from == cur)
        if (seen.insert(e.to).second) frontier.push_back(e.to);
  }
  return false;
}

inline void dedupe_edges(TaskFlowGraph& g) {
  std::vector<FlowEdge> out;
  for (const auto& e : g.edges) {
    if (e.from == e.to) continue;
    bool dup = false;
    for (const auto& kept : out)
      if (kept == e) dup = true;
    if (!dup) out.push_back(e);
  }
  g.edges = std::move(out);
}

}  // namespace detail

// Contracts each matched pair into one node whose id is "i+j" and whose
// description is the ordered concatenation. External edges re-point to the
// merged node; duplicates collapse; self-loops vanish. Pairs are applied in
// the matching's order and a pair whose contraction would close a dependency
// cycle (an alternative path exists between its endpoints) is skipped, so a
// valid graph always maps to a valid graph.
inline MergeApplyResult apply_merges(const TaskFlowGraph& g, const Matching& m) {
  std::set<std::string> used_check;
  for (const auto& p : m.pairs) {
    if (!g.has_node(p.node_i) || !g.has_node(p.node_j))
      throw Error(ErrorCode::invalid_matching,
                  "pair (" + p.node_i + "," + p.node_j + ") references unknown nodes");
    bool edge_exists = false;
    for (const auto& e : g.edges)
      if (e.kind == EdgeKind::dependency && e.from == p.node_i && e.to == p.node_j)
        edge_exists = true;
    if (!edge_exists)
      throw Error(ErrorCode::invalid_matching,
                  "pair (" + p.node_i + "," + p.node_j + ") is not a dependency edge");
    if (!used_check.insert(p.node_i).second || !used_check.insert(p.node_j).second)
      throw Error(ErrorCode::invalid_matching, "node merged twice in one level");
  }

  MergeApplyResult result;
  result.graph = g;
  for (const auto& p : m.pairs) {
    TaskFlowGraph& cur = result.graph;
    if (detail::has_indirect_dependency_path(cur, p.node_i, p.node_j)) {
      result.skipped.emplace_back(p.node_i, p.node_j);
      continue;
    }
    Subtask merged;
    merged.id = p.node_i + "+" + p.node_j;
    if (cur.has_node(merged.id)) {  // an unrelated node already bears that name
      result.skipped.emplace_back(p.node_i, p.node_j);
      continue;
    }
    const Subtask* a = cur.find(p.node_i);
    const Subtask* b = cur.find(p.node_j);
    merged.description = a->description + kMergedDescriptionSeparator + b->description;

    std::vector<Subtask> nodes;
    bool inserted = false;
    for (const auto& n : cur.nodes) {
      if (n.id == p.node_i || n.id == p.node_j) {
        if (!inserted) {
          nodes.push_back(merged);
          inserted = true;
        }
        continue;
      }
      nodes.push_back(n);
    }
    for (auto& e : cur.edges) {
      if (e.from == p.node_i || e.from == p.node_j) e.from = merged.id;
      if (e.to == p.node_i || e.to == p.node_j) e.to = merged.id;
    }
    cur.nodes = std::move(nodes);
    detail::dedupe_edges(cur);
    result.applied.emplace_back(p.node_i, p.node_j);
  }
  result.graph.sync_depends_on();
  return result;
}

// ---------------------------------------------------------------------------
// Relaxation (decomposition)
// ---------------------------------------------------------------------------

inline constexpr const char* kDecomposeSubtaskHeader = "Propose a decomposition of the subtask.";
inline constexpr int kMaxDecompositionNodes = 4;

struct DecompositionProposal {
  std::string parent;
  std::vector<Subtask> sub_nodes;   // 1..4
  std::vector<FlowEdge> sub_edges;  // acyclic over sub_nodes
  double advantage = 0.0;
};

namespace detail {

// Parses a decomposer reply of the form {"nodes":[{"id","description"}],
// "edges":[{"from","to"}]}. An absent or empty nodes array means "no
// decomposition proposed". Throws invalid_proposal on structural violations.
inline std::optional<DecompositionProposal> parse_decomposition(const std::string& parent,
                                                                const std::string& reply,
                                                                const TaskFlowGraph& g) try {
  auto obj = extract_json_object(reply);
  if (!obj) return std::nullopt;  // nothing proposed
  if (!obj->contains("nodes") || !obj->at("nodes").is_array() || obj->at("nodes").empty())
    return std::nullopt;

  DecompositionProposal p;
  p.parent = parent;
  std::set<std::string> sub_ids;
  for (const auto& jn : obj->at("nodes")) {
    Subtask n;
    n.id = jn.at("id").get<std::string>();
    n.description = jn.value("description", "");
    if (!sub_ids.insert(n.id).second)
      throw Error(ErrorCode::invalid_proposal, "duplicate sub-node id '" + n.id + "'");
    if (g.has_node(n.id) && n.id != parent)
      throw Error(ErrorCode::invalid_proposal, "sub-node id '" + n.id + "' collides with graph");
    if (n.id == parent)
      throw Error(ErrorCode::invalid_proposal, "sub-node id equals parent id");
    p.sub_nodes.push_back(std::move(n));
  }
  if (p.sub_nodes.size() > kMaxDecompositionNodes)
    throw Error(ErrorCode::invalid_proposal,
                "proposal has " + std::to_string(p.sub_nodes.size()) + " nodes (max 4)");
  if (obj->contains("edges")) {
    for (const auto& je : obj->at("edges")) {
      FlowEdge e;
      e.from = je.at("from").get<std::string>();
      e.to = je.at("to").get<std::string>();
      e.kind = EdgeKind::dependency;
      if (!sub_ids.count(e.from) || !sub_ids.count(e.to))
        throw Error(ErrorCode::invalid_proposal,
                    "sub-edge " + e.from + "->" + e.to + " references unknown sub-node");
      if (e.from == e.to)
        throw Error(ErrorCode::invalid_proposal, "sub-edge loops on '" + e.from + "'");
      p.sub_edges.push_back(std::move(e));
    }
  }
  // Acyclicity of the sub-graph.
  TaskFlowGraph sub;
  sub.nodes = p.sub_nodes;
  sub.edges = p.sub_edges;
  auto report = validate_graph(sub);
  if (!report.ok())
    throw Error(ErrorCode::invalid_proposal, "sub-graph invalid: " + report.summary());
  return p;
} catch (const json::exception& e) {
  throw Error(ErrorCode::invalid_proposal, std::string("malformed proposal JSON: ") + e.what());
}

inline std::vector<std::string> subgraph_roots(const DecompositionProposal& p) {
  std::set<std::string> has_in;
  for (const auto& e : p.sub_edges) has_in.insert(e.to);
  std::vector<std::string> roots;
  for (const auto& n : p.sub_nodes)
    if (!has_in.count(n.id)) roots.push_back(n.id);
  return roots;
}

inline std::vector<std::string> subgraph_terminals(const DecompositionProposal& p) {
  std::set<std::string> has_out;
  for (const auto& e : p.sub_edges) has_out.insert(e.from);
  std::vector<std::string> terminals;
  for (const auto& n : p.sub_nodes)
    if (!has_out.count(n.id)) terminals.push_back(n.id);
  return terminals;
}

}  // namespace detail

struct RelaxNodeTrace {
  std::string node;
  double node_score = 0.0;
  double advantage = 0.0;
  int sub_nodes = 0;
  std::string outcome;  // "applied" | "skipped" | "no-proposal" | "invalid-proposal"
};

struct RelaxResult {
  TaskFlowGraph graph;
  int applied_count = 0;
  std::vector<RelaxNodeTrace> details;
};

// One relaxation sweep: visit nodes in topological order, ask the decomposer
// for a candidate sub-graph (max 4 nodes), apply it iff the decomposition
// advantage is strictly positive. Incoming edges connect to every sub-graph
// root; outgoing edges are redirected from every terminal. Invalid proposals
// are rejected and counted as skipped, never fatal.
inline RelaxResult relax_pass(const TaskFlowGraph& g, const ScoreDb& db, Backend& decomposer,
                              Backend& estimator, int k) {
  RelaxResult result;
  result.graph = g;
  std::vector<std::string> visit_order = topological_order(g);

  for (const auto& node_id : visit_order) {
    TaskFlowGraph& cur = result.graph;
    const Subtask* node = cur.find(node_id);
    if (!node) continue;
    RelaxNodeTrace trace;
    trace.node = node_id;

    double node_score = db.estimate_effective_score(node->description, k, estimator).effective;
    trace.node_score = node_score;

    std::string prompt = kDecomposeSubtaskHeader;
    prompt += "\nSubtask [" + node->id + "]: " + node->description + "\n";
    prompt += "Propose at most " + std::to_string(kMaxDecompositionNodes) +
              " sub-nodes as JSON {\"nodes\":[{\"id\",\"description\"}],"
              "\"edges\":[{\"from\",\"to\"}]}; reply {} to keep the subtask whole.";
    std::vector<ChatMessage> messages = {
        {"system", default_role_configs().at(AssistantKind::decomposer).system_prompt},
        {"user", prompt},
    };
    std::string reply = decomposer.complete(AssistantKind::decomposer, messages).content;

    std::optional<DecompositionProposal> proposal;
    try {
      proposal = detail::parse_decomposition(node_id, reply, cur);
    } catch (const Error& e) {
      trace.outcome = "invalid-proposal";
      result.details.push_back(trace);
      continue;
    }
    if (!proposal) {
      trace.outcome = "no-proposal";
      result.details.push_back(trace);
      continue;
    }

    std::vector<double> sub_scores;
    for (const auto& sn : proposal->sub_nodes)
      sub_scores.push_back(db.estimate_effective_score(sn.description, k, estimator).effective);
    double da = decomposition_advantage(node_score, sub_scores);
    proposal->advantage = da;
    trace.advantage = da;
    trace.sub_nodes = static_cast<int>(proposal->sub_nodes.size());

    if (da <= 0.0) {
      trace.outcome = "skipped";
      result.details.push_back(trace);
      continue;
    }

    // Replace the node with the sub-graph.
    std::vector<std::string> roots = detail::subgraph_roots(*proposal);
    std::vector<std::string> terminals = detail::subgraph_terminals(*proposal);
    std::vector<FlowEdge> new_edges;
    for (const auto& e : cur.edges) {
      if (e.from != node_id && e.to != node_id) {
        new_edges.push_back(e);
        continue;
      }
      if (e.to == node_id && e.from != node_id) {
        for (const auto& r : roots) {
          FlowEdge in = e;
          in.to = r;
          new_edges.push_back(in);
        }
      } else if (e.from == node_id && e.to != node_id) {
        for (const auto& t : terminals) {
          FlowEdge out = e;
          out.from = t;
          new_edges.push_back(out);
        }
      }
      // e.from == e.to == node_id cannot happen in a valid graph
    }
    std::vector<Subtask> new_nodes;
    for (const auto& n : cur.nodes) {
      if (n.id == node_id) {
        for (const auto& sn : proposal->sub_nodes) new_nodes.push_back(sn);
      } else {
        new_nodes.push_back(n);
      }
    }
    cur.nodes = std::move(new_nodes);
    cur.edges = std::move(new_edges);
    for (const auto& se : proposal->sub_edges) cur.edges.push_back(se);
    detail::dedupe_edges(cur);
    cur.sync_depends_on();
    result.applied_count++;
    trace.outcome = "applied";
    result.details.push_back(trace);
  }
  return result;
}

// ---------------------------------------------------------------------------
// V-cycle
// ---------------------------------------------------------------------------

struct VCycleConfig {
  int max_coarsen_levels = 3;
  int max_relax_levels = 3;
  int top_k = 5;
};

struct LevelTrace {
  int level = 0;
  std::string phase;  // "coarsen" | "relax"
  int nodes_before = 0;
  int nodes_after = 0;
  json detail;  // candidates / selections / decompositions, per phase
};

inline void to_json(json& j, const LevelTrace& t) {
  j = json{{"level", t.level},
           {"phase", t.phase},
           {"nodes_before", t.nodes_before},
           {"nodes_after", t.nodes_after},
           {"detail", t.detail}};
}

struct VCycleResult {
  TaskFlowGraph graph;
  std::vector<LevelTrace> levels;
};

class VCycleError : public Error {
 public:
  VCycleError(const std::string& message, TaskFlowGraph last_valid)
      : Error(ErrorCode::validation_error, message), last_valid_(std::move(last_valid)) {}
  const TaskFlowGraph& last_valid_graph() const { return last_valid_; }

 private:
  TaskFlowGraph last_valid_;
};

// Coarsen level-by-level until the level bound is reached or all merge
// advantages are negative, then relax until the level bound or a pass that
// applies zero decompositions.
inline VCycleResult v_cycle(const TaskFlowGraph& g0, const VCycleConfig& cfg, const ScoreDb& db,
                            Backend& estimator, Backend& decomposer) {
  if (cfg.max_coarsen_levels < 1 || cfg.max_relax_levels < 1)
    throw Error(ErrorCode::invalid_config, "v-cycle level bounds must be >= 1");
  auto initial_report = validate_graph(g0);
  if (!initial_report.ok())
    throw Error(ErrorCode::validation_error, "input graph invalid: " + initial_report.summary());

  VCycleResult result;
  result.graph = g0;
  try {
    for (int level = 1; level <= cfg.max_coarsen_levels; ++level) {
      LevelTrace trace;
      trace.level = level;
      trace.phase = "coarsen";
      trace.nodes_before = static_cast<int>(result.graph.nodes.size());

      std::vector<MergeCandidate> candidates =
          score_merge_candidates(result.graph, db, estimator, cfg.top_k);
      json jc = json::array();
      for (const auto& c : candidates)
        jc.push_back({{"i", c.node_i}, {"j", c.node_j}, {"advantage", c.advantage}});
      trace.detail["candidates"] = jc;

      bool any_non_negative = false;
      for (const auto& c : candidates)
        if (c.advantage >= 0.0) any_non_negative = true;
      if (candidates.empty() || !any_non_negative) {
        trace.nodes_after = trace.nodes_before;
        trace.detail["stop"] = candidates.empty() ? "no-edges" : "all-advantages-negative";
        result.levels.push_back(std::move(trace));
        break;
      }

      Matching m = greedy_coarsen(candidates);
      json js = json::array();
      for (const auto& p : m.pairs)
        js.push_back({{"i", p.node_i}, {"j", p.node_j}, {"advantage", p.advantage}});
      trace.detail["selected"] = js;

      MergeApplyResult merged = apply_merges(result.graph, m);
      json ja = json::array();
      for (const auto& [i, j] : merged.applied) ja.push_back({{"i", i}, {"j", j}});
      trace.detail["applied"] = ja;
      json jskip = json::array();
      for (const auto& [i, j] : merged.skipped) jskip.push_back({{"i", i}, {"j", j}});
      trace.detail["skipped"] = jskip;

      result.graph = std::move(merged.graph);
      trace.nodes_after = static_cast<int>(result.graph.nodes.size());
      bool applied_any = !merged.applied.empty();
      result.levels.push_back(std::move(trace));
      if (!applied_any) break;
    }

    for (int level = 1; level <= cfg.max_relax_levels; ++level) {
      LevelTrace trace;
      trace.level = level;
      trace.phase = "relax";
      trace.nodes_before = static_cast<int>(result.graph.nodes.size());

      RelaxResult relaxed = relax_pass(result.graph, db, decomposer, estimator, cfg.top_k);
      json jd = json::array();
      for (const auto& d : relaxed.details)
        jd.push_back({{"node", d.node},
                      {"score", d.node_score},
                      {"advantage", d.advantage},
                      {"sub_nodes", d.sub_nodes},
                      {"outcome", d.outcome}});
      trace.detail["decompositions"] = jd;
      trace.detail["applied_count"] = relaxed.applied_count;

      result.graph = std::move(relaxed.graph);
      trace.nodes_after = static_cast<int>(result.graph.nodes.size());
      int applied = relaxed.applied_count;
      result.levels.push_back(std::move(trace));
      if (applied == 0) break;
    }
  } catch (const Error& e) {
    throw VCycleError(std::string("v-cycle aborted: ") + e.what(), result.graph);
  }

  auto report = validate_graph(result.graph);
  if (!report.ok())
    throw VCycleError("v-cycle produced an invalid graph: " + report.summary(), g0);
  return result;
}

}  // namespace polymath
