#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/llm_backend.hpp"
#include "polymath/util.hpp"

namespace polymath {

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim() const = 0;
  // Deterministic per provider; output is unit-normalized.
  virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Token-hash bag-of-words embedder: each lowercased alphanumeric token is
// FNV-hashed into one of `dim` buckets, counts accumulated, then the vector
// is L2-normalized. Fully offline and reproducible.
class HashEmbedder : public Embedder {
 public:
  explicit HashEmbedder(int dim = 256) : dim_(dim) {}

  int dim() const override { return dim_; }

  std::vector<double> embed(const std::string& text) const override {
    if (text.empty()) throw Error(ErrorCode::invalid_argument, "cannot embed empty text");
    std::vector<double> v(dim_, 0.0);
    for (const auto& token : tokenize(text))
      v[fnv1a64(token) % static_cast<std::uint64_t>(dim_)] += 1.0;
    double norm_sq = 0.0;
    for (double x : v) norm_sq += x * x;
    if (norm_sq == 0.0) {
      // No alphanumeric tokens at all; fall back to hashing the raw text.
      v[fnv1a64(text) % static_cast<std::uint64_t>(dim_)] = 1.0;
      return v;
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
    return v;
  }

 private:
  int dim_;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw Error(ErrorCode::invalid_argument, "embedding dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Records and cluster statistics
// ---------------------------------------------------------------------------

struct SubtaskRecord {
  std::string id;
  std::string content;
  std::vector<double> embedding;  // unit-normalized
  double complexity = 0.0;        // tractability: higher = easier to execute well
  double completeness = 0.0;
  std::string reflection;
  std::optional<int> cluster_id;
};

struct ClusterStats {
  int cluster_id = 0;
  int size = 0;
  double mean_completeness = 0.0;
  double std_completeness = 0.0;  // population std; zero for singletons
  double mean_complexity = 0.0;
  double std_complexity = 0.0;
};

inline void to_json(json& j, const ClusterStats& s) {
  j = json{{"cluster_id", s.cluster_id},
           {"size", s.size},
           {"mean_completeness", s.mean_completeness},
           {"std_completeness", s.std_completeness},
           {"mean_complexity", s.mean_complexity},
           {"std_complexity", s.std_complexity}};
}

struct EffectiveScoreEstimate {
  double complexity_est = 0.0;
  double completeness_est = 0.0;
  double effective = 0.0;  // always complexity_est * completeness_est
  std::vector<std::string> neighbors;

  static EffectiveScoreEstimate make(double complexity, double completeness,
                                     std::vector<std::string> neighbors = {}) {
    EffectiveScoreEstimate e;
    e.complexity_est = clamp01(complexity);
    e.completeness_est = clamp01(completeness);
    e.effective = e.complexity_est * e.completeness_est;
    e.neighbors = std::move(neighbors);
    return e;
  }
};

// ---------------------------------------------------------------------------
// Score database
// ---------------------------------------------------------------------------

inline constexpr const char* kEstimatorHeader = "Estimate complexity and completeness scores.";
inline constexpr double kEmptyDbPrior = 0.5;

class ScoreDb {
 public:
  ScoreDb() : embedder_(std::make_shared<HashEmbedder>(256)) {}
  explicit ScoreDb(std::shared_ptr<Embedder> embedder) : embedder_(std::move(embedder)) {}

  const Embedder& embedder() const { return *embedder_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<SubtaskRecord>& records() const { return records_; }
  const std::map<int, ClusterStats>& clusters() const { return clusters_; }

  const SubtaskRecord* find(const std::string& id) const {
    for (const auto& r : records_)
      if (r.id == id) return &r;
    return nullptr;
  }

  void insert(SubtaskRecord record) {
    if (find(record.id))
      throw Error(ErrorCode::duplicate_id, "record '" + record.id + "' already present");
    if (record.embedding.empty() && !record.content.empty())
      record.embedding = embedder_->embed(record.content);
    if (static_cast<int>(record.embedding.size()) != embedder_->dim())
      throw Error(ErrorCode::invalid_argument, "embedding dimension mismatch on insert");
    double norm_sq = 0.0;
    for (double x : record.embedding) norm_sq += x * x;
    if (std::abs(std::sqrt(norm_sq) - 1.0) > 1e-6)
      throw Error(ErrorCode::invalid_argument,
                  "record '" + record.id + "' embedding is not unit-normalized");
    if (record.complexity < 0.0 || record.complexity > 1.0 || record.completeness < 0.0 ||
        record.completeness > 1.0)
      throw Error(ErrorCode::invalid_argument,
                  "record '" + record.id + "' scores must be in [0,1]");
    record.cluster_id.reset();  // assignment deferred to recluster
    records_.push_back(std::move(record));
  }

  // Greedy leader clustering: records scanned in ascending id order; a record
  // joins the first existing cluster whose leader has cosine similarity >=
  // threshold, else founds a new cluster with itself as leader. Deterministic,
  // hence idempotent for a fixed threshold.
  void recluster(double similarity_threshold) {
    if (similarity_threshold <= 0.0 || similarity_threshold >= 1.0)
      throw Error(ErrorCode::invalid_argument, "similarity threshold must be in (0,1)");
    std::vector<SubtaskRecord*> by_id;
    by_id.reserve(records_.size());
    for (auto& r : records_) by_id.push_back(&r);
    std::sort(by_id.begin(), by_id.end(),
              [](const SubtaskRecord* a, const SubtaskRecord* b) { return a->id < b->id; });

    std::vector<const SubtaskRecord*> leaders;
    for (SubtaskRecord* r : by_id) {
      int assigned = -1;
      for (std::size_t c = 0; c < leaders.size(); ++c) {
        if (cosine_similarity(r->embedding, leaders[c]->embedding) >= similarity_threshold) {
          assigned = static_cast<int>(c);
          break;
        }
      }
      if (assigned < 0) {
        assigned = static_cast<int>(leaders.size());
        leaders.push_back(r);
      }
      r->cluster_id = assigned;
    }
    recompute_cluster_stats();
  }

  void recompute_cluster_stats() {
    clusters_.clear();
    std::map<int, std::vector<const SubtaskRecord*>> members;
    for (const auto& r : records_)
      if (r.cluster_id) members[*r.cluster_id].push_back(&r);
    for (const auto& [cid, recs] : members) {
      ClusterStats s;
      s.cluster_id = cid;
      s.size = static_cast<int>(recs.size());
      double sum_c = 0.0, sum_d = 0.0;
      for (const auto* r : recs) {
        sum_c += r->completeness;
        sum_d += r->complexity;
      }
      s.mean_completeness = sum_c / s.size;
      s.mean_complexity = sum_d / s.size;
      double var_c = 0.0, var_d = 0.0;
      for (const auto* r : recs) {
        var_c += (r->completeness - s.mean_completeness) * (r->completeness - s.mean_completeness);
        var_d += (r->complexity - s.mean_complexity) * (r->complexity - s.mean_complexity);
      }
      s.std_completeness = std::sqrt(var_c / s.size);
      s.std_complexity = std::sqrt(var_d / s.size);
      clusters_[cid] = s;
    }
  }

  // The min(k, size) most similar records, descending similarity, ties broken
  // by ascending id.
  std::vector<SubtaskRecord> top_k(const std::vector<double>& query, int k) const {
    if (records_.empty()) throw Error(ErrorCode::empty_db, "top_k on empty database");
    if (k <= 0) throw Error(ErrorCode::invalid_argument, "k must be positive");
    std::vector<std::pair<double, const SubtaskRecord*>> scored;
    scored.reserve(records_.size());
    for (const auto& r : records_)
      scored.emplace_back(cosine_similarity(query, r.embedding), &r);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second->id < b.second->id;
    });
    std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
    std::vector<SubtaskRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(*scored[i].second);
    return out;
  }

  std::vector<SubtaskRecord> top_k(const std::string& text, int k) const {
    return top_k(embedder_->embed(text), k);
  }

  // Estimates complexity/completeness for a new subtask from its top-K
  // neighbors and their clusters' statistics. An empty database returns the
  // neutral prior without consulting the estimator.
  EffectiveScoreEstimate estimate_effective_score(const std::string& task_content, int k,
                                                  Backend& estimator,
                                                  int parse_retries = 2) const {
    if (records_.empty())
      return EffectiveScoreEstimate::make(kEmptyDbPrior, kEmptyDbPrior);

    std::vector<SubtaskRecord> neighbors = top_k(task_content, k);
    std::vector<std::string> neighbor_ids;
    std::set<int> neighbor_clusters;
    for (const auto& n : neighbors) {
      neighbor_ids.push_back(n.id);
      if (n.cluster_id) neighbor_clusters.insert(*n.cluster_id);
    }

    std::string prompt = kEstimatorHeader;
    prompt += "\nSubtask: " + task_content + "\n";
    prompt += "Complexity in [0,1] rates how tractable the subtask is at this granularity "
              "(higher = more likely to be executed well); completeness in [0,1] rates how "
              "fully such subtasks get solved.\n";
    prompt += "Most similar historical subtasks:\n";
    for (const auto& n : neighbors) {
      prompt += "- [" + n.id + "] complexity=" + std::to_string(n.complexity) +
                " completeness=" + std::to_string(n.completeness) + " :: " +
                truncate_text(n.content, 160);
      if (!n.reflection.empty()) prompt += " | reflection: " + truncate_text(n.reflection, 160);
      prompt += "\n";
    }
    if (!neighbor_clusters.empty()) {
      prompt += "Cluster statistics of those neighbors:\n";
      double pooled_n = 0.0, pooled_c = 0.0, pooled_d = 0.0, pooled_c2 = 0.0, pooled_d2 = 0.0;
      for (int cid : neighbor_clusters) {
        auto it = clusters_.find(cid);
        if (it == clusters_.end()) continue;
        const ClusterStats& s = it->second;
        prompt += "- cluster " + std::to_string(cid) + ": size=" + std::to_string(s.size) +
                  " mu_c=" + std::to_string(s.mean_completeness) +
                  " sigma_c=" + std::to_string(s.std_completeness) +
                  " mu_d=" + std::to_string(s.mean_complexity) +
                  " sigma_d=" + std::to_string(s.std_complexity) + "\n";
        pooled_n += s.size;
        pooled_c += s.size * s.mean_completeness;
        pooled_d += s.size * s.mean_complexity;
        pooled_c2 += s.size * (s.std_completeness * s.std_completeness +
                               s.mean_completeness * s.mean_completeness);
        pooled_d2 += s.size * (s.std_complexity * s.std_complexity +
                               s.mean_complexity * s.mean_complexity);
      }
      if (pooled_n > 0.0) {
        double mc = pooled_c / pooled_n, md = pooled_d / pooled_n;
        double sc = std::sqrt(std::max(0.0, pooled_c2 / pooled_n - mc * mc));
        double sd = std::sqrt(std::max(0.0, pooled_d2 / pooled_n - md * md));
        prompt += "Pooled: mu_c=" + std::to_string(mc) + " sigma_c=" + std::to_string(sc) +
                  " mu_d=" + std::to_string(md) + " sigma_d=" + std::to_string(sd) + "\n";
      }
    }
    prompt += "Respond with JSON {\"complexity\": x, \"completeness\": y}.";

    std::vector<ChatMessage> messages = {
        {"system", default_role_configs().at(AssistantKind::estimator).system_prompt},
        {"user", prompt},
    };
    ParsedFields fields = complete_structured(
        estimator, AssistantKind::estimator, messages,
        {{"complexity", true, 0.0, 1.0, true}, {"completeness", true, 0.0, 1.0, true}},
        parse_retries);
    return EffectiveScoreEstimate::make(fields.number("complexity"),
                                        fields.number("completeness"),
                                        std::move(neighbor_ids));
  }

  // -------------------------------------------------------------------------
  // Persistence: line-delimited JSON with a header line declaring the
  // embedding dimension. Cluster assignments are not persisted; they are
  // recomputed on load.
  // -------------------------------------------------------------------------

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + path + "'");
    json header{{"format", "polymath-scoredb"}, {"version", 1}, {"embedding_dim", embedder_->dim()}};
    out << header.dump() << "\n";
    for (const auto& r : records_) {
      json jr{{"id", r.id},
              {"content", r.content},
              {"embedding", r.embedding},
              {"complexity", r.complexity},
              {"completeness", r.completeness},
              {"reflection", r.reflection}};
      out << jr.dump() << "\n";
    }
  }

  static ScoreDb load(const std::string& path, double cluster_threshold = 0.8,
                      std::shared_ptr<Embedder> embedder = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_error, "cannot read '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
      throw Error(ErrorCode::parse_error, "score db file is empty (missing header)");
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "polymath-scoredb")
      throw Error(ErrorCode::parse_error, "not a score db file: bad header line");
    int dim = header.at("embedding_dim").get<int>();
    if (!embedder) embedder = std::make_shared<HashEmbedder>(dim);
    if (embedder->dim() != dim)
      throw Error(ErrorCode::invalid_config, "embedder dimension does not match file header");
    ScoreDb db(embedder);
    int line_no = 1;
    while (std::getline(in, line)) {
      line_no++;
      if (trim(line).empty()) continue;
      try {
        json jr = json::parse(line);
        SubtaskRecord r;
        r.id = jr.at("id").get<std::string>();
        r.content = jr.value("content", "");
        r.embedding = jr.at("embedding").get<std::vector<double>>();
        r.complexity = jr.at("complexity").get<double>();
        r.completeness = jr.at("completeness").get<double>();
        r.reflection = jr.value("reflection", "");
        if (static_cast<int>(r.embedding.size()) != dim)
          throw Error(ErrorCode::parse_error,
                      "record '" + r.id + "' embedding dimension mismatch");
        db.insert(std::move(r));
      } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error,
                    "line " + std::to_string(line_no) + " of '" + path + "': " + e.what());
      }
    }
    if (!db.empty()) db.recluster(cluster_threshold);
    return db;
  }

 private:
  std::shared_ptr<Embedder> embedder_;
  std::vector<SubtaskRecord> records_;
  std::map<int, ClusterStats> clusters_;
};

}  // namespace polymath
