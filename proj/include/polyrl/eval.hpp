#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyrl/env.hpp"
#include "polyrl/policy.hpp"
#include "polyrl/rollout.hpp"
#include "polyrl/rooms.hpp"
#include "polyrl/serial.hpp"
#include "polyrl/setobj.hpp"
#include "polyrl/triangle.hpp"

namespace polyrl {

// Unbiased estimator 1 - C(R-s, k)/C(R, k) of the probability that at least
// one of k attempts drawn from R rollouts succeeds.
inline double pass_at_k(int successes, int rollouts, int k) {
  if (rollouts < 1 || k < 1) throw UsageError("need rollouts >= 1 and k >= 1");
  if (k > rollouts) throw UsageError("pass@k needs k <= rollouts");
  if (successes < 0 || successes > rollouts) throw UsageError("success count out of range");
  if (rollouts - successes < k) return 1.0;
  double q = 1.0;
  for (int i = 0; i < k; ++i) q *= double(rollouts - successes - i) / double(rollouts - i);
  return 1.0 - q;
}

struct ConfigEval {
  int config_index = 0;
  uint64_t config_hash = 0;
  int rollouts = 0;
  int successes = 0;
  double mean_return = 0.0;
  std::vector<double> pass_at;  // aligned with the report k grid
};

struct GraphCreativity {
  int config_index = 0;
  uint64_t config_hash = 0;
  int attempts = 0;
  int valid = 0;
  long long unique_valid = 0;
  long long unique_unseen = 0;
  double validity = 0.0;
  double creativity = 0.0;
  std::vector<double> diff_at;
};

struct CreativityReport {
  int attempts = 0;
  std::vector<int> k_grid;
  std::vector<GraphCreativity> graphs;
  double validity = 0.0;
  double diversity = 0.0;  // mean unique-valid count per graph
  double creativity = 0.0;
  std::vector<double> diff_at;
};

struct EvalReport {
  std::vector<int> k_grid;
  std::vector<ConfigEval> configs;
  double aggregate_success = 0.0;
  double aggregate_return = 0.0;
  std::vector<double> aggregate_pass_at;
  bool has_creativity = false;
  CreativityReport creativity;
};

inline void check_k_grid(const std::vector<int>& k_grid, int rollouts) {
  if (k_grid.empty()) throw UsageError("empty k grid");
  for (int k : k_grid)
    if (k < 1 || k > rollouts) throw UsageError("k grid entry outside [1, rollouts]");
}

// Per-config success counts and pass@k, then means across configs. Seeds are
// aggregated by the caller: per-config first, then configs, then seeds.
inline EvalReport evaluate_suite(const PolicyModel& policy, const std::vector<Environment*>& envs,
                                 int rollouts, const std::vector<int>& k_grid, uint64_t seed) {
  if (envs.empty()) throw UsageError("empty evaluation suite");
  check_k_grid(k_grid, rollouts);
  EvalReport rep;
  rep.k_grid = k_grid;
  rep.aggregate_pass_at.assign(k_grid.size(), 0.0);
  for (size_t ci = 0; ci < envs.size(); ++ci) {
    Environment& env = *envs[ci];
    ConfigEval ce;
    ce.config_index = int(ci);
    ce.config_hash = env.config_hash();
    ce.rollouts = rollouts;
    for (int r = 0; r < rollouts; ++r) {
      Rng rng = make_rng(seed, {streams::eval, uint64_t(ci), uint64_t(r)});
      env.reset();
      Trajectory t = run_episode(env, policy, nullptr, rng, nullptr, 1.0);
      if (t.success) ce.successes++;
      ce.mean_return += t.ret / double(rollouts);
    }
    for (size_t j = 0; j < k_grid.size(); ++j)
      ce.pass_at.push_back(pass_at_k(ce.successes, rollouts, k_grid[j]));
    rep.aggregate_success += double(ce.successes) / double(rollouts) / double(envs.size());
    rep.aggregate_return += ce.mean_return / double(envs.size());
    for (size_t j = 0; j < k_grid.size(); ++j)
      rep.aggregate_pass_at[j] += ce.pass_at[j] / double(envs.size());
    rep.configs.push_back(std::move(ce));
  }
  return rep;
}

// Triangle generation quality. Identity is the sorted node triple; creativity
// counts distinct valid triples absent from the pretraining data, as a
// fraction of attempts.
inline CreativityReport creativity_metrics(const PolicyModel& policy,
                                           const std::vector<TriangleConfig>& graphs, int attempts,
                                           const std::vector<int>& k_grid,
                                           const std::map<int, std::set<std::array<int32_t, 3>>>& seen,
                                           uint64_t seed) {
  if (graphs.empty()) throw UsageError("empty graph suite");
  check_k_grid(k_grid, attempts);
  CreativityReport rep;
  rep.attempts = attempts;
  rep.k_grid = k_grid;
  rep.diff_at.assign(k_grid.size(), 0.0);
  static const std::set<std::array<int32_t, 3>> kNoneSeen;
  for (size_t gi = 0; gi < graphs.size(); ++gi) {
    TriangleEnv env(graphs[gi]);
    GraphCreativity gc;
    gc.config_index = int(gi);
    gc.config_hash = graphs[gi].hash();
    gc.attempts = attempts;
    std::vector<std::array<int32_t, 3>> triples;
    std::vector<bool> is_valid;
    for (int a = 0; a < attempts; ++a) {
      Rng rng = make_rng(seed, {streams::eval, 1000003 + uint64_t(gi), uint64_t(a)});
      env.reset();
      Trajectory t = run_episode(env, policy, nullptr, rng, nullptr, 1.0);
      if (t.steps.size() != 3) throw InternalError("triangle episode not three steps");
      triples.push_back(sorted_triple({int32_t(t.steps[0].action), int32_t(t.steps[1].action),
                                       int32_t(t.steps[2].action)}));
      is_valid.push_back(t.success);
      if (t.success) gc.valid++;
    }
    auto seen_it = seen.find(graphs[gi].graph_id);
    const auto& seen_set = seen_it == seen.end() ? kNoneSeen : seen_it->second;
    std::set<std::array<int32_t, 3>> uniq, unseen;
    for (int a = 0; a < attempts; ++a)
      if (is_valid[size_t(a)]) {
        uniq.insert(triples[size_t(a)]);
        if (!seen_set.count(triples[size_t(a)])) unseen.insert(triples[size_t(a)]);
      }
    gc.unique_valid = (long long)(uniq.size());
    gc.unique_unseen = (long long)(unseen.size());
    gc.validity = double(gc.valid) / double(attempts);
    gc.creativity = double(gc.unique_unseen) / double(attempts);
    for (size_t j = 0; j < k_grid.size(); ++j) {
      int k = k_grid[j];
      Rng rng = make_rng(seed, {streams::eval, 2000003 + uint64_t(gi), uint64_t(k)});
      const int reps = 1000;
      std::vector<int> idx;
      for (int a = 0; a < attempts; ++a) idx.push_back(a);
      double mean = 0.0;
      for (int rep_i = 0; rep_i < reps; ++rep_i) {
        for (int a = 0; a < k; ++a) {
          uint64_t pick = uint64_t(a) + rng.uniform_int(uint64_t(attempts - a));
          std::swap(idx[size_t(a)], idx[size_t(pick)]);
        }
        std::set<std::array<int32_t, 3>> got;
        for (int a = 0; a < k; ++a)
          if (is_valid[size_t(idx[size_t(a)])]) got.insert(triples[size_t(idx[size_t(a)])]);
        mean += double(got.size()) / double(reps);
      }
      gc.diff_at.push_back(mean);
    }
    if (gc.creativity > gc.validity + 1e-12) throw InternalError("creativity above validity");
    if (gc.unique_valid > attempts) throw InternalError("diversity above attempt count");
    rep.validity += gc.validity / double(graphs.size());
    rep.diversity += double(gc.unique_valid) / double(graphs.size());
    rep.creativity += gc.creativity / double(graphs.size());
    for (size_t j = 0; j < k_grid.size(); ++j) rep.diff_at[j] += gc.diff_at[j] / double(graphs.size());
    rep.graphs.push_back(std::move(gc));
  }
  return rep;
}

struct PerturbationSuite {
  uint64_t config_hash = 0;
  std::vector<EnvState> starts;
  int rooms_visited = 0;
  int resampled = 0;  // unsolvable candidates skipped
  std::vector<std::string> warnings;
};

// Rooms reached under high-temperature sampling, then up to per_room solvable
// free cells in each as fresh start states.
inline PerturbationSuite build_perturbation_suite(const PolicyModel& pretrained,
                                                  const RoomsConfig& config, double temperature,
                                                  int rollouts, int per_room, Rng& rng) {
  if (temperature <= 0.0) throw UsageError("need temperature > 0");
  if (rollouts < 1 || per_room < 1) throw UsageError("need rollouts >= 1 and per_room >= 1");
  RoomsEnv env(config);
  PerturbationSuite suite;
  suite.config_hash = env.config_hash();
  PolicyModel hot = pretrained;
  hot.net.temperature = temperature;
  std::set<int32_t> visited;
  for (int r = 0; r < rollouts; ++r) {
    env.reset();
    Trajectory t = run_episode(env, hot, nullptr, rng, nullptr, 1.0);
    if (t.start_info >= 0) visited.insert(t.start_info);
    for (const auto& s : t.steps)
      if (s.info >= 0) visited.insert(s.info);
  }
  suite.rooms_visited = int(visited.size());
  RoomsEnv probe(config);
  for (int32_t room : visited) {
    std::vector<std::pair<int, int>> cells;
    env.reset();
    for (int y = 0; y < config.height(); ++y)
      for (int x = 0; x < config.width(); ++x)
        if (env.room_at(x, y) == room && env.is_floor(x, y) && env.object_at(x, y) < 0)
          cells.push_back({x, y});
    if (cells.empty()) {
      suite.warnings.push_back("room " + std::to_string(room) + " has no free cell; skipped");
      continue;
    }
    rng.shuffle(cells);
    int accepted = 0;
    for (const auto& c : cells) {
      if (accepted >= per_room) break;
      int dir = int(rng.uniform_int(4));
      EnvState start = env.start_state_at(c.first, c.second, dir);
      probe.restore(start);
      if (plan_mission(probe, true).has_value()) {
        suite.starts.push_back(start);
        accepted++;
      } else {
        suite.resampled++;
      }
    }
    if (accepted < per_room)
      suite.warnings.push_back("room " + std::to_string(room) + ": only " +
                               std::to_string(accepted) + " solvable starts");
  }
  return suite;
}

// One rollout per perturbed start; fraction succeeding.
inline double perturbation_eval(const PolicyModel& policy, const RoomsConfig& config,
                                const PerturbationSuite& suite, uint64_t seed) {
  if (suite.starts.empty()) throw UsageError("empty perturbation suite");
  RoomsEnv env(config);
  if (env.config_hash() != suite.config_hash) throw ConfigError("suite built for another config");
  int wins = 0;
  for (size_t i = 0; i < suite.starts.size(); ++i) {
    env.restore(suite.starts[i]);
    Rng rng = make_rng(seed, {streams::perturb, uint64_t(i)});
    Trajectory t = run_episode(env, policy, nullptr, rng, nullptr, 1.0);
    if (t.success) wins++;
  }
  return double(wins) / double(suite.starts.size());
}

struct DiversityProbe {
  double mean_diversity = 0.0;
  long long sets = 0;
};

// Measures the set-diversity a policy induces under the vine collection and
// set-formation procedure, so methods that never form sets during training
// can be compared on equal footing.
inline DiversityProbe set_diversity_probe(const std::vector<Environment*>& envs,
                                          const PolicyModel& policy, int N, int n, int M, int p,
                                          int B, uint64_t seed) {
  if (envs.empty()) throw UsageError("empty environment suite");
  BudgetPlan plan = plan_budget(N, p, B, n);
  DiversityProbe probe;
  double sum = 0.0;
  for (size_t e = 0; e < envs.size(); ++e) {
    CollectionResult res = collect_vine_data(*envs[e], policy, nullptr, plan, seed, e);
    for (size_t bi = 0; bi < res.batches.size(); ++bi) {
      Rng rng = make_rng(seed, {streams::form_sets, uint64_t(e), uint64_t(bi)});
      FormedSets fs = form_sets(res.batches[bi], n, M, rng);
      for (const auto& set : fs.sets) {
        std::vector<Signature> sigs;
        for (int m : set.members) sigs.push_back(res.batches[bi].vines[size_t(m)].signature());
        sum += signature_set_diversity(sigs);
        probe.sets++;
      }
    }
  }
  probe.mean_diversity = probe.sets ? sum / double(probe.sets) : 0.0;
  return probe;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["schema"] = "polyrl.eval.v1";
  j["k_grid"] = rep.k_grid;
  j["aggregate_success"] = rep.aggregate_success;
  j["aggregate_return"] = rep.aggregate_return;
  j["aggregate_pass_at"] = rep.aggregate_pass_at;
  j["configs"] = nlohmann::json::array();
  for (const auto& ce : rep.configs)
    j["configs"].push_back({{"config_index", ce.config_index},
                            {"config_hash", ce.config_hash},
                            {"rollouts", ce.rollouts},
                            {"successes", ce.successes},
                            {"mean_return", ce.mean_return},
                            {"pass_at", ce.pass_at}});
  j["has_creativity"] = rep.has_creativity;
  if (rep.has_creativity) {
    const auto& cr = rep.creativity;
    nlohmann::json c;
    c["attempts"] = cr.attempts;
    c["k_grid"] = cr.k_grid;
    c["validity"] = cr.validity;
    c["diversity"] = cr.diversity;
    c["creativity"] = cr.creativity;
    c["diff_at"] = cr.diff_at;
    c["graphs"] = nlohmann::json::array();
    for (const auto& g : cr.graphs)
      c["graphs"].push_back({{"config_index", g.config_index},
                             {"config_hash", g.config_hash},
                             {"attempts", g.attempts},
                             {"valid", g.valid},
                             {"unique_valid", g.unique_valid},
                             {"unique_unseen", g.unique_unseen},
                             {"validity", g.validity},
                             {"creativity", g.creativity},
                             {"diff_at", g.diff_at}});
    j["creativity_report"] = c;
  }
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  if (j.at("schema").get<std::string>() != "polyrl.eval.v1")
    throw SerializeError("unknown metrics schema");
  EvalReport rep;
  rep.k_grid = j.at("k_grid").get<std::vector<int>>();
  rep.aggregate_success = j.at("aggregate_success").get<double>();
  rep.aggregate_return = j.at("aggregate_return").get<double>();
  rep.aggregate_pass_at = j.at("aggregate_pass_at").get<std::vector<double>>();
  for (const auto& cj : j.at("configs")) {
    ConfigEval ce;
    ce.config_index = cj.at("config_index").get<int>();
    ce.config_hash = cj.at("config_hash").get<uint64_t>();
    ce.rollouts = cj.at("rollouts").get<int>();
    ce.successes = cj.at("successes").get<int>();
    ce.mean_return = cj.at("mean_return").get<double>();
    ce.pass_at = cj.at("pass_at").get<std::vector<double>>();
    rep.configs.push_back(std::move(ce));
  }
  rep.has_creativity = j.at("has_creativity").get<bool>();
  if (rep.has_creativity) {
    const auto& c = j.at("creativity_report");
    auto& cr = rep.creativity;
    cr.attempts = c.at("attempts").get<int>();
    cr.k_grid = c.at("k_grid").get<std::vector<int>>();
    cr.validity = c.at("validity").get<double>();
    cr.diversity = c.at("diversity").get<double>();
    cr.creativity = c.at("creativity").get<double>();
    cr.diff_at = c.at("diff_at").get<std::vector<double>>();
    for (const auto& gj : c.at("graphs")) {
      GraphCreativity g;
      g.config_index = gj.at("config_index").get<int>();
      g.config_hash = gj.at("config_hash").get<uint64_t>();
      g.attempts = gj.at("attempts").get<int>();
      g.valid = gj.at("valid").get<int>();
      g.unique_valid = gj.at("unique_valid").get<long long>();
      g.unique_unseen = gj.at("unique_unseen").get<long long>();
      g.validity = gj.at("validity").get<double>();
      g.creativity = gj.at("creativity").get<double>();
      g.diff_at = gj.at("diff_at").get<std::vector<double>>();
      cr.graphs.push_back(std::move(g));
    }
  }
  return rep;
}

inline void write_eval_jsonl(const EvalReport& rep, const std::string& jsonl_path) {
  std::ofstream out(jsonl_path, std::ios::binary);
  if (!out) throw UsageError("cannot open for writing: " + jsonl_path);
  out << eval_report_to_json(rep).dump() << "\n";
  if (!out) throw UsageError("write failed: " + jsonl_path);
}

inline void write_eval_csv(const EvalReport& rep, const std::string& csv_path) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw UsageError("cannot open for writing: " + csv_path);
  out << "metric,config_index,k,value\n";
  for (size_t j = 0; j < rep.k_grid.size(); ++j)
    out << "pass_at,-1," << rep.k_grid[j] << "," << format_g17(rep.aggregate_pass_at[j]) << "\n";
  for (const auto& ce : rep.configs)
    for (size_t j = 0; j < rep.k_grid.size(); ++j)
      out << "pass_at," << ce.config_index << "," << rep.k_grid[j] << ","
          << format_g17(ce.pass_at[j]) << "\n";
  if (rep.has_creativity) {
    for (size_t j = 0; j < rep.creativity.k_grid.size(); ++j)
      out << "diff_at,-1," << rep.creativity.k_grid[j] << ","
          << format_g17(rep.creativity.diff_at[j]) << "\n";
    for (const auto& g : rep.creativity.graphs)
      for (size_t j = 0; j < rep.creativity.k_grid.size(); ++j)
        out << "diff_at," << g.config_index << "," << rep.creativity.k_grid[j] << ","
            << format_g17(g.diff_at[j]) << "\n";
  }
  if (!out) throw UsageError("write failed: " + csv_path);
}

// Line-delimited record plus a flat comma-separated curve table, both
// byte-stable for identical inputs.
inline void emit_metrics(const EvalReport& rep, const std::string& jsonl_path,
                         const std::string& csv_path) {
  write_eval_jsonl(rep, jsonl_path);
  write_eval_csv(rep, csv_path);
}

inline EvalReport read_metrics(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path, std::ios::binary);
  if (!in) throw UsageError("cannot open: " + jsonl_path);
  std::string line;
  if (!std::getline(in, line)) throw SerializeError("empty metrics file");
  return eval_report_from_json(nlohmann::json::parse(line));
}

}  // namespace polyrl
