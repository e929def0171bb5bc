#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/util.hpp"

namespace polymath {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Assistant roles
// ---------------------------------------------------------------------------

enum class AssistantKind {
  coder,
  reasoner,
  file_reader,
  planner,
  decomposer,
  estimator,
  judge,
  workflow_generator,
};

inline const char* assistant_kind_name(AssistantKind k) {
  switch (k) {
    case AssistantKind::coder: return "coder";
    case AssistantKind::reasoner: return "reasoner";
    case AssistantKind::file_reader: return "file_reader";
    case AssistantKind::planner: return "planner";
    case AssistantKind::decomposer: return "decomposer";
    case AssistantKind::estimator: return "estimator";
    case AssistantKind::judge: return "judge";
    case AssistantKind::workflow_generator: return "workflow_generator";
  }
  return "unknown";
}

inline std::optional<AssistantKind> parse_assistant_kind(const std::string& s) {
  static const std::map<std::string, AssistantKind> table = {
      {"coder", AssistantKind::coder},
      {"reasoner", AssistantKind::reasoner},
      {"file_reader", AssistantKind::file_reader},
      {"planner", AssistantKind::planner},
      {"decomposer", AssistantKind::decomposer},
      {"estimator", AssistantKind::estimator},
      {"judge", AssistantKind::judge},
      {"workflow_generator", AssistantKind::workflow_generator},
  };
  auto it = table.find(s);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

inline const std::vector<AssistantKind>& all_assistant_kinds() {
  static const std::vector<AssistantKind> kinds = {
      AssistantKind::coder,        AssistantKind::reasoner,
      AssistantKind::file_reader,  AssistantKind::planner,
      AssistantKind::decomposer,   AssistantKind::estimator,
      AssistantKind::judge,        AssistantKind::workflow_generator,
  };
  return kinds;
}

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct ChatParams {
  double temperature = 0.0;
  int max_tokens = 2048;
};

struct ChatResponse {
  std::string content;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  double latency_ms = 0.0;
};

// Per-role model name and system prompt, fixed at startup.
struct RoleConfig {
  std::string model;
  std::string system_prompt;
};

inline std::map<AssistantKind, RoleConfig> default_role_configs() {
  // Documented default mapping: one general model for most roles and a
  // reasoning model for the reasoner. Pure configuration, overridable.
  std::map<AssistantKind, RoleConfig> cfg;
  cfg[AssistantKind::coder] = {"gpt-4o", "You are a coding assistant. You write, execute, and debug code, and you return results."};
  cfg[AssistantKind::reasoner] = {"o1", "You are a reasoning assistant. Think carefully and answer precisely."};
  cfg[AssistantKind::file_reader] = {"gpt-4o", "You are a file reading assistant. You digest documents and answer questions about them."};
  cfg[AssistantKind::planner] = {"gpt-4o", "You are a task flow planner. You decompose tasks, monitor execution, and aggregate results."};
  cfg[AssistantKind::decomposer] = {"gpt-4o", "You decompose subtasks into small dependency subgraphs."};
  cfg[AssistantKind::estimator] = {"gpt-4o", "You estimate subtask complexity and completeness scores from historical evidence."};
  cfg[AssistantKind::judge] = {"gpt-4o", "You are an impartial judge. You score outputs and explain your reasoning briefly."};
  cfg[AssistantKind::workflow_generator] = {"gpt-4o", "You write and improve subtask workflow programs in the workflow source format."};
  return cfg;
}

// One entry per outbound request; the run record snapshots this log.
struct RequestLogEntry {
  int seq = 0;
  std::string kind;
  std::string fingerprint;      // hex of fnv1a64 over kind + message contents
  std::string request_excerpt;  // truncated last user message
  std::string response_excerpt;
};

inline void to_json(json& j, const RequestLogEntry& e) {
  j = json{{"seq", e.seq},
           {"kind", e.kind},
           {"fingerprint", e.fingerprint},
           {"request", e.request_excerpt},
           {"response", e.response_excerpt}};
}

// ---------------------------------------------------------------------------
// Backend interface
// ---------------------------------------------------------------------------

class Backend {
 public:
  Backend() = default;
  Backend(Backend&&) = default;
  Backend& operator=(Backend&&) = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;
  virtual ~Backend() = default;

  virtual ChatResponse complete(AssistantKind kind,
                                const std::vector<ChatMessage>& messages,
                                const ChatParams& params = {}) = 0;

  // Reads are meant for quiesced backends (after a run); writes are locked.
  const std::vector<RequestLogEntry>& request_log() const { return log_; }
  int request_count() const { return static_cast<int>(log_.size()); }
  void clear_request_log() { log_.clear(); }

 protected:
  static void check_messages(const std::vector<ChatMessage>& messages) {
    if (messages.empty() || messages.front().role != "system")
      throw Error(ErrorCode::invalid_argument,
                  "messages must be non-empty and start with the system prompt");
  }

  void record_request(AssistantKind kind, const std::vector<ChatMessage>& messages,
                      const std::string& response) {
    std::string all;
    for (const auto& m : messages) all += m.content;
    std::string last_user;
    for (const auto& m : messages)
      if (m.role == "user") last_user = m.content;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(assistant_kind_name(kind) + all)));
    RequestLogEntry e;
    e.kind = assistant_kind_name(kind);
    e.fingerprint = buf;
    e.request_excerpt = truncate_text(last_user, 200);
    e.response_excerpt = truncate_text(response, 200);
    std::lock_guard<std::mutex> lock(*log_mu_);
    e.seq = static_cast<int>(log_.size());
    log_.push_back(std::move(e));
  }

 private:
  std::vector<RequestLogEntry> log_;
  std::unique_ptr<std::mutex> log_mu_ = std::make_unique<std::mutex>();
};

// ---------------------------------------------------------------------------
// Scripted backend (deterministic test double)
// ---------------------------------------------------------------------------

// First-rule-wins matching over a request fingerprint built from the role
// name and the concatenated message contents. A rule with uses > 0 expires
// after serving that many requests, which is how retry scenarios are
// scripted (N canned bad replies, then a good one).
struct ScriptRule {
  std::optional<AssistantKind> kind;
  std::string contains;  // substring of the fingerprint text; empty matches all
  std::string response;
  int uses = 0;  // 0 = unlimited
  int served = 0;
};

class ScriptedBackend : public Backend {
 public:
  ScriptedBackend() = default;
  explicit ScriptedBackend(std::string default_response)
      : default_response_(std::move(default_response)) {}

  ScriptedBackend& add_rule(ScriptRule rule) {
    rules_.push_back(std::move(rule));
    return *this;
  }

  ScriptedBackend& add_rule(std::optional<AssistantKind> kind, std::string contains,
                            std::string response, int uses = 0) {
    return add_rule(ScriptRule{kind, std::move(contains), std::move(response), uses, 0});
  }

  void set_default_response(std::string r) { default_response_ = std::move(r); }

  ChatResponse complete(AssistantKind kind, const std::vector<ChatMessage>& messages,
                        const ChatParams& = {}) override {
    check_messages(messages);
    std::lock_guard<std::mutex> lock(*mu_);
    std::string text = assistant_kind_name(kind);
    text += "\n";
    for (const auto& m : messages) {
      text += m.content;
      text += "\n";
    }
    std::string response = default_response_;
    for (auto& rule : rules_) {
      if (rule.kind && *rule.kind != kind) continue;
      if (!rule.contains.empty() && text.find(rule.contains) == std::string::npos) continue;
      if (rule.uses > 0 && rule.served >= rule.uses) continue;
      rule.served++;
      response = rule.response;
      break;
    }
    record_request(kind, messages, response);
    return ChatResponse{response, 0, 0, 0.0};
  }

  // Script file format: {"default": "...", "rules": [{"kind"?, "contains"?,
  // "response", "uses"?}]}. Unknown kinds are a config error.
  static ScriptedBackend from_json(const json& j) try {
    ScriptedBackend b;
    if (j.contains("default")) b.default_response_ = j.at("default").get<std::string>();
    if (j.contains("rules")) {
      for (const auto& r : j.at("rules")) {
        ScriptRule rule;
        if (r.contains("kind")) {
          auto k = parse_assistant_kind(r.at("kind").get<std::string>());
          if (!k) throw Error(ErrorCode::invalid_config,
                              "unknown assistant kind in script: " + r.at("kind").get<std::string>());
          rule.kind = *k;
        }
        if (r.contains("contains")) rule.contains = r.at("contains").get<std::string>();
        rule.response = r.at("response").is_string() ? r.at("response").get<std::string>()
                                                     : r.at("response").dump();
        if (r.contains("uses")) rule.uses = r.at("uses").get<int>();
        b.rules_.push_back(std::move(rule));
      }
    }
    return b;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("malformed script: ") + e.what());
  }

 private:
  std::vector<ScriptRule> rules_;
  std::string default_response_ = "{}";
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

// ---------------------------------------------------------------------------
// Structured output parsing
// ---------------------------------------------------------------------------

struct FieldSpec {
  std::string name;
  bool numeric = true;
  double min = 0.0;
  double max = 1.0;
  bool required = true;
};

struct ParsedFields {
  std::map<std::string, double> numbers;
  std::map<std::string, std::string> strings;
  bool clamped = false;
  int attempts = 1;

  double number(const std::string& name) const { return numbers.at(name); }
  std::string text(const std::string& name, const std::string& fallback = "") const {
    auto it = strings.find(name);
    return it == strings.end() ? fallback : it->second;
  }
};

// Pulls the first balanced JSON object out of free text, so judges may wrap
// their JSON in prose or code fences.
inline std::optional<json> extract_json_object(const std::string& text) {
  std::size_t start = text.find('{');
  while (start != std::string::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') depth++;
      else if (c == '}') {
        depth--;
        if (depth == 0) {
          try {
            return json::parse(text.substr(start, i - start + 1));
          } catch (const json::exception&) {
            break;  // malformed; try the next '{'
          }
        }
      }
    }
    start = text.find('{', start + 1);
  }
  return std::nullopt;
}

// Requests JSON output and parses it against a flat field schema. Malformed
// replies are reissued with an appended correction message up to `retries`
// times; numeric fields outside their declared range are clamped and flagged.
inline ParsedFields complete_structured(Backend& backend, AssistantKind kind,
                                        std::vector<ChatMessage> messages,
                                        const std::vector<FieldSpec>& schema,
                                        int retries = 2, const ChatParams& params = {}) {
  if (schema.empty()) throw Error(ErrorCode::invalid_argument, "empty schema");
  std::string last_error;
  for (int attempt = 0; attempt <= retries; ++attempt) {
    ChatResponse resp = backend.complete(kind, messages, params);
    auto obj = extract_json_object(resp.content);
    if (obj) {
      ParsedFields out;
      out.attempts = attempt + 1;
      bool ok = true;
      for (const auto& field : schema) {
        if (!obj->contains(field.name)) {
          if (!field.required) continue;
          last_error = "missing field '" + field.name + "'";
          ok = false;
          break;
        }
        const json& v = obj->at(field.name);
        if (field.numeric) {
          if (!v.is_number()) {
            last_error = "field '" + field.name + "' is not a number";
            ok = false;
            break;
          }
          double d = v.get<double>();
          if (d < field.min || d > field.max) {
            d = std::min(field.max, std::max(field.min, d));
            out.clamped = true;
          }
          out.numbers[field.name] = d;
        } else {
          if (!v.is_string()) {
            last_error = "field '" + field.name + "' is not a string";
            ok = false;
            break;
          }
          out.strings[field.name] = v.get<std::string>();
        }
      }
      if (ok) return out;
    } else {
      last_error = "no JSON object found in response";
    }
    messages.push_back({"assistant", resp.content});
    messages.push_back({"user", "The previous reply was invalid (" + last_error +
                                    "). Respond again with exactly one JSON object "
                                    "containing the required fields."});
  }
  throw Error(ErrorCode::malformed_after_retries, last_error);
}

// Shared handle bundle passed through the engine. All roles may point at one
// backend object (the usual case) or be overridden individually in tests.
struct Backends {
  std::shared_ptr<Backend> backend;

  Backend& get() const {
    if (!backend) throw Error(ErrorCode::invalid_config, "no backend configured");
    return *backend;
  }
};

}  // namespace polymath
