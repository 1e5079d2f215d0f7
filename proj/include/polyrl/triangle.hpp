#pragma once
#include <array>
#include <cstdint>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "polyrl/env.hpp"
#include "polyrl/rng.hpp"

namespace polyrl {

// Undirected graph on at most 64 nodes; adjacency kept as one bitmask per node.
struct TriangleConfig {
  int32_t graph_id = 0;
  int nodes = 0;
  std::vector<uint64_t> adj;

  bool adjacent(int u, int v) const { return u != v && ((adj[u] >> v) & 1); }

  void add_edge(int u, int v) {
    if (u < 0 || v < 0 || u >= nodes || v >= nodes) throw ConfigError("edge endpoint out of range");
    if (u == v) throw ConfigError("self loops not allowed");
    adj[u] |= (1ull << v);
    adj[v] |= (1ull << u);
  }

  int edge_count() const {
    int total = 0;
    for (int u = 0; u < nodes; ++u)
      for (int v = u + 1; v < nodes; ++v)
        if (adjacent(u, v)) ++total;
    return total;
  }

  std::vector<std::array<int32_t, 3>> all_triangles() const {
    std::vector<std::array<int32_t, 3>> out;
    for (int a = 0; a < nodes; ++a)
      for (int b = a + 1; b < nodes; ++b) {
        if (!adjacent(a, b)) continue;
        uint64_t common = adj[a] & adj[b];
        common &= ~((b < 63 ? (1ull << (b + 1)) : 0) - 1);  // c > b only
        while (common) {
          int c = __builtin_ctzll(common);
          common &= common - 1;
          out.push_back({int32_t(a), int32_t(b), int32_t(c)});
        }
      }
    return out;
  }

  uint64_t hash() const {
    ByteWriter w;
    w.u32(uint32_t(graph_id));
    w.u32(uint32_t(nodes));
    for (uint64_t a : adj) w.u64(a);
    return fnv1a64(w.data());
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "graph: " << graph_id << "\n";
    out << "nodes: " << nodes << "\n";
    out << "edges:\n";
    for (int u = 0; u < nodes; ++u)
      for (int v = u + 1; v < nodes; ++v)
        if (adjacent(u, v)) out << u << " " << v << "\n";
    return out.str();
  }

  static TriangleConfig parse(const std::string& text) {
    TriangleConfig cfg;
    std::istringstream in(text);
    std::string line;
    bool in_edges = false, saw_nodes = false;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == ';') continue;
      if (line == "edges:") { in_edges = true; continue; }
      auto colon = line.find(':');
      if (!in_edges && colon != std::string::npos) {
        std::string key = line.substr(0, colon);
        std::string val = line.substr(colon + 1);
        if (key == "graph") { cfg.graph_id = std::stoi(val); continue; }
        if (key == "nodes") {
          cfg.nodes = std::stoi(val);
          if (cfg.nodes < 3 || cfg.nodes > 64) throw ConfigError("node count must be in [3, 64]");
          cfg.adj.assign(cfg.nodes, 0);
          saw_nodes = true;
          continue;
        }
        throw ConfigError("unknown graph key: " + key);
      }
      if (!in_edges) throw ConfigError("unexpected line before edges: " + line);
      if (!saw_nodes) throw ConfigError("edges listed before node count");
      std::istringstream ev(line);
      int u, v;
      if (!(ev >> u >> v)) throw ConfigError("bad edge line: " + line);
      cfg.add_edge(u, v);
    }
    if (!saw_nodes) throw ConfigError("graph file missing node count");
    return cfg;
  }
};

inline TriangleConfig make_random_graph(int nodes, double edge_prob, uint64_t seed,
                                        int32_t graph_id) {
  if (nodes < 3 || nodes > 64) throw ConfigError("node count must be in [3, 64]");
  if (edge_prob < 0.0 || edge_prob > 1.0) throw ConfigError("edge probability must be in [0, 1]");
  TriangleConfig cfg;
  cfg.graph_id = graph_id;
  cfg.nodes = nodes;
  cfg.adj.assign(nodes, 0);
  Rng rng = make_rng(seed, {streams::init, uint64_t(uint32_t(graph_id))});
  for (int u = 0; u < nodes; ++u)
    for (int v = u + 1; v < nodes; ++v)
      if (rng.uniform() < edge_prob) cfg.add_edge(u, v);
  return cfg;
}

inline bool triangle_verify(const TriangleConfig& cfg, const std::array<int32_t, 3>& toks) {
  int a = toks[0], b = toks[1], c = toks[2];
  if (a == b || a == c || b == c) return false;
  if (a < 0 || b < 0 || c < 0 || a >= cfg.nodes || b >= cfg.nodes || c >= cfg.nodes) return false;
  return cfg.adjacent(a, b) && cfg.adjacent(b, c) && cfg.adjacent(a, c);
}

inline std::array<int32_t, 3> sorted_triple(const std::array<int32_t, 3>& t) {
  std::array<int32_t, 3> s = t;
  std::sort(s.begin(), s.end());
  return s;
}

// Emit three node tokens; reward 1 when they form a triangle of the graph.
// Observation: [graph_id, tokens_emitted, first_token + 1, second_token + 1]
// (0 marks an empty slot). Step info is the emitted token, which makes
// node-set trajectory signatures directly available.
class TriangleEnv final : public Environment {
 public:
  explicit TriangleEnv(const TriangleConfig& cfg) : cfg_(cfg) {
    if (cfg_.nodes < 3 || cfg_.nodes > 64) throw ConfigError("node count must be in [3, 64]");
    if (int(cfg_.adj.size()) != cfg_.nodes) throw ConfigError("adjacency size mismatch");
    hash_ = cfg_.hash();
    reset();
  }

  int action_count() const override { return cfg_.nodes; }
  int horizon() const override { return 3; }
  bool terminal() const override { return count_ == 3; }
  bool succeeded() const override { return success_; }
  uint64_t config_hash() const override { return hash_; }
  int32_t current_info() const override { return count_ == 0 ? -1 : toks_[count_ - 1]; }
  const TriangleConfig& config() const { return cfg_; }

  void reset() override {
    count_ = 0;
    toks_ = {-1, -1, -1};
    success_ = false;
  }

  StepOutcome step(int action) override {
    if (terminal()) throw UsageError("step after terminal");
    if (action < 0 || action >= cfg_.nodes) throw UsageError("invalid node token");
    toks_[count_++] = action;
    StepOutcome out;
    out.info = action;
    if (count_ == 3) {
      success_ = triangle_verify(cfg_, toks_);
      out.reward = success_ ? 1.0 : 0.0;
      out.terminal = true;
    }
    out.observation = observation();
    return out;
  }

  Obs observation() const override {
    return {cfg_.graph_id, count_, count_ > 0 ? toks_[0] + 1 : 0, count_ > 1 ? toks_[1] + 1 : 0};
  }

  EnvState snapshot() const override {
    EnvState s;
    s.config_hash = hash_;
    s.words = {count_, toks_[0], toks_[1], toks_[2], success_ ? 1 : 0};
    return s;
  }

  void restore(const EnvState& s) override {
    if (s.config_hash != hash_) throw ConfigError("snapshot config hash mismatch");
    if (s.words.size() != 5) throw ConfigError("snapshot word count mismatch");
    count_ = int32_t(s.words[0]);
    toks_ = {int32_t(s.words[1]), int32_t(s.words[2]), int32_t(s.words[3])};
    success_ = s.words[4] != 0;
  }

  std::unique_ptr<Environment> clone() const override {
    auto e = std::make_unique<TriangleEnv>(cfg_);
    e->restore(snapshot());
    return e;
  }

  std::array<int32_t, 3> tokens() const { return toks_; }

 private:
  TriangleConfig cfg_;
  uint64_t hash_ = 0;
  int32_t count_ = 0;
  std::array<int32_t, 3> toks_ = {-1, -1, -1};
  bool success_ = false;
};

// Every observation a policy can see on these graphs: one empty-prefix
// observation, one per first token, one per (first, second) pair.
inline std::vector<Obs> triangle_obs_universe(const std::vector<TriangleConfig>& configs) {
  std::vector<Obs> out;
  for (const auto& cfg : configs) {
    out.push_back({cfg.graph_id, 0, 0, 0});
    for (int a = 0; a < cfg.nodes; ++a) out.push_back({cfg.graph_id, 1, a + 1, 0});
    for (int a = 0; a < cfg.nodes; ++a)
      for (int b = 0; b < cfg.nodes; ++b) out.push_back({cfg.graph_id, 2, a + 1, b + 1});
  }
  return out;
}

// Pretraining mixture per graph: with probability 1/3 a full triangle episode
// (random triangle, random vertex order, 3 samples, triple recorded as seen),
// otherwise a single edge in a random orientation (2 samples, no completion).
inline Dataset generate_triangle_pretrain(const std::vector<TriangleConfig>& configs,
                                          int samples_per_graph, uint64_t seed) {
  if (samples_per_graph < 1) throw UsageError("sample count must be >= 1");
  Dataset data;
  for (size_t gi = 0; gi < configs.size(); ++gi) {
    const auto& cfg = configs[gi];
    auto tris = cfg.all_triangles();
    std::vector<std::pair<int, int>> edges;
    for (int u = 0; u < cfg.nodes; ++u)
      for (int v = u + 1; v < cfg.nodes; ++v)
        if (cfg.adjacent(u, v)) edges.push_back({u, v});
    if (tris.empty()) throw ConfigError("graph has no triangles; cannot build pretraining data");
    if (edges.empty()) throw ConfigError("graph has no edges");

    TriangleEnv env(cfg);
    for (int s = 0; s < samples_per_graph; ++s) {
      Rng rng = make_rng(seed, {streams::demo, uint64_t(gi), uint64_t(s)});
      env.reset();
      if (rng.uniform() < 1.0 / 3.0) {
        auto tri = tris[rng.uniform_int(tris.size())];
        std::vector<int32_t> order(tri.begin(), tri.end());
        rng.shuffle(order);
        for (int32_t tok : order) {
          data.samples.push_back({env.observation(), tok});
          env.step(tok);
        }
        data.seen_triangles[cfg.graph_id].insert(sorted_triple(tri));
        data.triangle_samples += 3;
      } else {
        auto [u, v] = edges[rng.uniform_int(edges.size())];
        if (rng.uniform() < 0.5) std::swap(u, v);
        data.samples.push_back({env.observation(), u});
        env.step(u);
        data.samples.push_back({env.observation(), v});
        env.step(v);
        data.edge_samples += 2;
      }
      data.demo_count++;
    }
  }
  return data;
}

}  // namespace polyrl
