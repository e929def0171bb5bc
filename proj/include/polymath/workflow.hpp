#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "polymath/errors.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/task_graph.hpp"
#include "polymath/util.hpp"

namespace polymath {

// ---------------------------------------------------------------------------
// Workflow model
// ---------------------------------------------------------------------------
// A subtask workflow is a small program of assistant-invoking nodes joined by
// links. Source format (line-oriented):
//
//   entry <id>
//   node <id> <assistant-kind>
//     <prompt line>
//     <prompt line>
//   link <from> -> <to>
//   link <from> -> <to> if: <condition text>
//   link <from> -> <to> loop: <n>
//   # REPLACE-START / # REPLACE-END delimit the evolvable region
//
// Prompt lines are indented by two spaces. Lines starting with '#' other than
// the replace markers are comments.

enum class LinkKind { sequence, conditional, loop };

struct WorkflowLink {
  std::string from;
  std::string to;
  LinkKind kind = LinkKind::sequence;
  std::string condition;  // conditional only
  int max_repeats = 0;    // loop only; >= 1

  friend bool operator==(const WorkflowLink& a, const WorkflowLink& b) {
    return a.from == b.from && a.to == b.to && a.kind == b.kind && a.condition == b.condition &&
           a.max_repeats == b.max_repeats;
  }
};

struct WorkflowNode {
  std::string id;
  AssistantKind assistant = AssistantKind::reasoner;
  std::string prompt;
  bool evolvable = false;

  friend bool operator==(const WorkflowNode& a, const WorkflowNode& b) {
    return a.id == b.id && a.assistant == b.assistant && a.prompt == b.prompt &&
           a.evolvable == b.evolvable;
  }
};

namespace detail {
inline std::tuple<std::string, std::string, int, std::string, int> link_sort_key(
    const WorkflowLink& l) {
  return {l.from, l.to, static_cast<int>(l.kind), l.condition, l.max_repeats};
}
}  // namespace detail

struct Workflow {
  std::vector<WorkflowNode> nodes;  // declaration order
  std::vector<WorkflowLink> links;  // kept sorted canonically
  std::string entry;

  const WorkflowNode* find(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }

  bool node_evolvable(const std::string& id) const {
    const WorkflowNode* n = find(id);
    return n && n->evolvable;
  }

  void normalize() {
    std::sort(links.begin(), links.end(), [](const WorkflowLink& a, const WorkflowLink& b) {
      return detail::link_sort_key(a) < detail::link_sort_key(b);
    });
  }

  friend bool operator==(const Workflow& a, const Workflow& b) {
    return a.entry == b.entry && a.nodes == b.nodes && a.links == b.links;
  }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline std::vector<std::string> workflow_violations(const Workflow& w) {
  std::vector<std::string> out;
  std::set<std::string> ids;
  for (const auto& n : w.nodes) {
    if (!ids.insert(n.id).second) out.push_back("duplicate node id '" + n.id + "'");
    if (n.prompt.empty()) out.push_back("node '" + n.id + "' has an empty prompt");
  }
  if (w.nodes.empty()) out.push_back("workflow has no nodes");
  if (w.entry.empty()) out.push_back("missing entry declaration");
  else if (!ids.count(w.entry)) out.push_back("entry references unknown node '" + w.entry + "'");
  for (const auto& l : w.links) {
    if (!ids.count(l.from)) out.push_back("link references unknown node '" + l.from + "'");
    if (!ids.count(l.to)) out.push_back("link references unknown node '" + l.to + "'");
    if (l.kind == LinkKind::loop && l.max_repeats < 1)
      out.push_back("loop link " + l.from + "->" + l.to + " must repeat at least once");
  }
  // Reachability from entry over directed links.
  if (!w.entry.empty() && ids.count(w.entry)) {
    std::set<std::string> seen{w.entry};
    std::vector<std::string> frontier{w.entry};
    while (!frontier.empty()) {
      std::string cur = frontier.back();
      frontier.pop_back();
      for (const auto& l : w.links)
        if (l.from == cur && ids.count(l.to) && seen.insert(l.to).second) frontier.push_back(l.to);
    }
    for (const auto& n : w.nodes)
      if (!seen.count(n.id)) out.push_back("node '" + n.id + "' unreachable from entry");
  }
  bool any_evolvable = false;
  for (const auto& n : w.nodes) any_evolvable |= n.evolvable;
  if (!any_evolvable) out.push_back("no evolvable node (nothing inside a replace block)");
  return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

inline constexpr const char* kReplaceStart = "# REPLACE-START";
inline constexpr const char* kReplaceEnd = "# REPLACE-END";

inline Workflow parse_workflow(const std::string& source) {
  Workflow w;
  std::vector<std::string> lines = split_lines(source);
  bool in_replace = false;
  WorkflowNode* open_node = nullptr;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& raw = lines[i];
    std::string line_no = std::to_string(i + 1);

    if (starts_with(raw, "  ")) {
      if (!open_node)
        throw Error(ErrorCode::parse_error, "line " + line_no + ": indented line outside a node");
      if (!open_node->prompt.empty()) open_node->prompt += "\n";
      open_node->prompt += raw.substr(2);
      continue;
    }
    std::string line = trim(raw);
    if (line.empty()) {
      continue;  // blank ends nothing by itself; prompts are contiguous indented lines
    }
    open_node = nullptr;

    if (line == kReplaceStart) {
      if (in_replace)
        throw Error(ErrorCode::parse_error, "line " + line_no + ": nested replace block");
      in_replace = true;
      continue;
    }
    if (line == kReplaceEnd) {
      if (!in_replace)
        throw Error(ErrorCode::parse_error, "line " + line_no + ": unmatched replace end");
      in_replace = false;
      continue;
    }
    if (line[0] == '#') continue;  // comment

    if (starts_with(line, "entry ")) {
      w.entry = trim(line.substr(6));
      continue;
    }
    if (starts_with(line, "node ")) {
      std::string rest = trim(line.substr(5));
      std::size_t sp = rest.find(' ');
      if (sp == std::string::npos)
        throw Error(ErrorCode::parse_error, "line " + line_no + ": node needs id and assistant");
      WorkflowNode n;
      n.id = trim(rest.substr(0, sp));
      std::string kind = trim(rest.substr(sp + 1));
      auto k = parse_assistant_kind(kind);
      if (!k)
        throw Error(ErrorCode::parse_error,
                    "line " + line_no + ": unknown assistant kind '" + kind + "'");
      n.assistant = *k;
      n.evolvable = in_replace;
      w.nodes.push_back(std::move(n));
      open_node = &w.nodes.back();
      continue;
    }
    if (starts_with(line, "link ")) {
      std::string rest = trim(line.substr(5));
      std::size_t arrow = rest.find("->");
      if (arrow == std::string::npos)
        throw Error(ErrorCode::parse_error, "line " + line_no + ": link needs '->'");
      WorkflowLink l;
      l.from = trim(rest.substr(0, arrow));
      std::string tail = trim(rest.substr(arrow + 2));
      std::size_t if_pos = tail.find(" if: ");
      std::size_t loop_pos = tail.find(" loop: ");
      if (if_pos != std::string::npos) {
        l.to = trim(tail.substr(0, if_pos));
        l.kind = LinkKind::conditional;
        l.condition = trim(tail.substr(if_pos + 5));
        if (l.condition.empty())
          throw Error(ErrorCode::parse_error, "line " + line_no + ": empty condition");
      } else if (loop_pos != std::string::npos) {
        l.to = trim(tail.substr(0, loop_pos));
        l.kind = LinkKind::loop;
        try {
          l.max_repeats = std::stoi(trim(tail.substr(loop_pos + 7)));
        } catch (const std::exception&) {
          throw Error(ErrorCode::parse_error, "line " + line_no + ": loop count not a number");
        }
      } else {
        l.to = tail;
        l.kind = LinkKind::sequence;
      }
      if (l.from.empty() || l.to.empty())
        throw Error(ErrorCode::parse_error, "line " + line_no + ": link endpoints missing");
      w.links.push_back(std::move(l));
      continue;
    }
    throw Error(ErrorCode::parse_error, "line " + line_no + ": unrecognized directive '" +
                                            truncate_text(line, 40) + "'");
  }
  if (in_replace) throw Error(ErrorCode::parse_error, "unterminated replace block");

  w.normalize();
  auto violations = workflow_violations(w);
  if (!violations.empty()) {
    std::string msg;
    for (const auto& v : violations) msg += v + "; ";
    throw Error(ErrorCode::validation_error, msg);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------
// entry first; nodes in declaration order with each maximal run of evolvable
// nodes wrapped in replace markers; then frozen links sorted; then evolvable
// links (at least one evolvable endpoint) in their own replace block. Stable
// across runs, so serialize(parse(serialize(w))) is byte-identical.

inline std::string serialize_workflow(const Workflow& w) {
  std::string out = "entry " + w.entry + "\n";
  bool in_block = false;
  for (const auto& n : w.nodes) {
    if (n.evolvable && !in_block) {
      out += kReplaceStart;
      out += "\n";
      in_block = true;
    } else if (!n.evolvable && in_block) {
      out += kReplaceEnd;
      out += "\n";
      in_block = false;
    }
    out += "node " + n.id + " " + assistant_kind_name(n.assistant) + "\n";
    for (const auto& line : split_lines(n.prompt)) out += "  " + line + "\n";
  }
  if (in_block) {
    out += kReplaceEnd;
    out += "\n";
  }

  auto render_link = [](const WorkflowLink& l) {
    std::string s = "link " + l.from + " -> " + l.to;
    if (l.kind == LinkKind::conditional) s += " if: " + l.condition;
    else if (l.kind == LinkKind::loop) s += " loop: " + std::to_string(l.max_repeats);
    return s + "\n";
  };

  std::vector<WorkflowLink> sorted_links = w.links;
  std::sort(sorted_links.begin(), sorted_links.end(),
            [](const WorkflowLink& a, const WorkflowLink& b) {
              return detail::link_sort_key(a) < detail::link_sort_key(b);
            });
  std::vector<WorkflowLink> frozen, evolvable;
  for (const auto& l : sorted_links) {
    if (w.node_evolvable(l.from) || w.node_evolvable(l.to)) evolvable.push_back(l);
    else frozen.push_back(l);
  }
  for (const auto& l : frozen) out += render_link(l);
  if (!evolvable.empty()) {
    out += kReplaceStart;
    out += "\n";
    for (const auto& l : evolvable) out += render_link(l);
    out += kReplaceEnd;
    out += "\n";
  }
  return out;
}

// The non-evolvable region of a canonical serialization: every line outside
// replace blocks. Evolution must leave this byte-identical.
inline std::string frozen_region(const Workflow& w) {
  std::string out;
  bool inside = false;
  for (const auto& line : split_lines(serialize_workflow(w))) {
    if (line == kReplaceStart) {
      inside = true;
      continue;
    }
    if (line == kReplaceEnd) {
      inside = false;
      continue;
    }
    if (!inside) out += line + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct TranscriptEntry {
  std::string node_id;
  std::string prompt_sent;
  std::string response;
};

struct WorkflowResult {
  std::string output;
  std::vector<TranscriptEntry> transcript;
  int steps_executed = 0;
};

class WorkflowBudgetExhausted : public Error {
 public:
  WorkflowBudgetExhausted(const std::string& message, WorkflowResult partial)
      : Error(ErrorCode::budget_exhausted, message), partial_(std::move(partial)) {}
  const WorkflowResult& partial() const { return partial_; }

 private:
  WorkflowResult partial_;
};

inline constexpr const char* kConditionHeader = "Evaluate the condition.";
inline constexpr const char* kLoopHeader = "Decide whether the loop should repeat.";

namespace detail {

inline bool affirmative(const std::string& response) {
  std::string t = to_lower(trim(response));
  return starts_with(t, "yes") || starts_with(t, "true");
}

inline std::string transcript_digest(const std::vector<TranscriptEntry>& transcript) {
  std::string out;
  for (const auto& e : transcript)
    out += "[" + e.node_id + "] " + truncate_text(e.response, 200) + "\n";
  return out;
}

}  // namespace detail

// Walks the workflow from its entry node. Sequence links always traverse;
// conditional links traverse iff the backend answers the condition
// affirmatively against the transcript so far; loop links re-enter at most
// max_repeats times, each re-entry confirmed by the backend. The first
// traversable outgoing link in canonical order wins; no traversable link
// ends the run. Output is the final node's response.
inline WorkflowResult execute_workflow(const Workflow& w, const SubtaskInput& input,
                                       Backend& backend, int step_budget = 50) {
  if (step_budget < 1) throw Error(ErrorCode::invalid_argument, "step budget must be positive");
  auto violations = workflow_violations(w);
  if (!violations.empty())
    throw Error(ErrorCode::validation_error, "cannot execute invalid workflow");

  WorkflowResult result;
  std::map<const WorkflowLink*, int> loop_taken;
  std::string current = w.entry;

  while (true) {
    if (result.steps_executed >= step_budget) {
      WorkflowResult partial = result;
      throw WorkflowBudgetExhausted(
          "step budget " + std::to_string(step_budget) + " exhausted at node '" + current + "'",
          std::move(partial));
    }
    const WorkflowNode* node = w.find(current);

    std::string prompt = node->prompt;
    prompt += "\n\n" + input.render();
    if (!result.transcript.empty()) {
      prompt += "Previous step outputs:\n" + detail::transcript_digest(result.transcript);
    }
    std::vector<ChatMessage> messages = {
        {"system", default_role_configs().at(node->assistant).system_prompt},
        {"user", prompt},
    };
    ChatResponse resp;
    try {
      resp = backend.complete(node->assistant, messages);
    } catch (const Error& e) {
      throw Error(e.code(), "workflow node '" + current + "': " + e.what());
    }
    result.transcript.push_back({current, prompt, resp.content});
    result.steps_executed = static_cast<int>(result.transcript.size());
    result.output = resp.content;

    // Pick the next link.
    const WorkflowLink* next = nullptr;
    for (const auto& l : w.links) {
      if (l.from != current) continue;
      if (l.kind == LinkKind::sequence) {
        next = &l;
        break;
      }
      if (l.kind == LinkKind::conditional) {
        std::string q = kConditionHeader;
        q += "\nCondition: " + l.condition + "\n";
        q += "Transcript so far:\n" + detail::transcript_digest(result.transcript);
        q += "Answer yes or no.";
        std::vector<ChatMessage> qm = {
            {"system", default_role_configs().at(AssistantKind::judge).system_prompt},
            {"user", q}};
        if (detail::affirmative(backend.complete(AssistantKind::judge, qm).content)) {
          next = &l;
          break;
        }
        continue;
      }
      if (l.kind == LinkKind::loop) {
        if (loop_taken[&l] >= l.max_repeats) continue;
        std::string q = kLoopHeader;
        q += "\nLoop edge: " + l.from + " -> " + l.to + " (repeat " +
             std::to_string(loop_taken[&l] + 1) + " of " + std::to_string(l.max_repeats) + ")\n";
        q += "Transcript so far:\n" + detail::transcript_digest(result.transcript);
        q += "Answer yes or no.";
        std::vector<ChatMessage> qm = {
            {"system", default_role_configs().at(AssistantKind::judge).system_prompt},
            {"user", q}};
        if (detail::affirmative(backend.complete(AssistantKind::judge, qm).content)) {
          loop_taken[&l]++;
          next = &l;
          break;
        }
        continue;
      }
    }
    if (!next) break;
    current = next->to;
  }
  return result;
}

}  // namespace polymath
