#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "polyrl/eval.hpp"
#include "polyrl/rooms.hpp"
#include "polyrl/triangle.hpp"

using namespace polyrl;

namespace {

TriangleConfig complete_graph(int nodes, int id) {
  TriangleConfig cfg;
  cfg.graph_id = id;
  cfg.nodes = nodes;
  cfg.adj.assign((size_t)nodes, 0);
  for (int a = 0; a < nodes; ++a)
    for (int b = a + 1; b < nodes; ++b) cfg.add_edge(a, b);
  return cfg;
}

PolicyModel uniform_policy(const std::vector<TriangleConfig>& cfgs, int actions) {
  return PolicyModel::tabular(triangle_obs_universe(cfgs), actions, 1.0);
}

// Pins logits so the policy emits tokens 0, 1, 2 with overwhelming probability.
PolicyModel memorized_policy(const TriangleConfig& cfg) {
  auto universe = triangle_obs_universe({cfg});
  PolicyModel pol = PolicyModel::tabular(universe, cfg.nodes, 1.0);
  const std::vector<Obs> prefix = {
      Obs{cfg.graph_id, 0, 0, 0},
      Obs{cfg.graph_id, 1, 1, 0},
      Obs{cfg.graph_id, 2, 1, 2},
  };
  for (int step = 0; step < 3; ++step) {
    int row = -1;
    for (size_t u = 0; u < universe.size(); ++u)
      if (universe[u] == prefix[step]) row = (int)u;
    REQUIRE(row >= 0);
    pol.net.params[(size_t)row * cfg.nodes + step] = 50.0;
  }
  return pol;
}

// Always emits token 0, so every attempt repeats a vertex and fails the census.
PolicyModel stuck_policy(const TriangleConfig& cfg) {
  auto universe = triangle_obs_universe({cfg});
  PolicyModel pol = PolicyModel::tabular(universe, cfg.nodes, 1.0);
  for (size_t u = 0; u < universe.size(); ++u) pol.net.params[u * cfg.nodes] = 50.0;
  return pol;
}

const char* kTwoRoom = R"(grid:
#########
#...#...#
#...D...#
#...#...#
#########
objects:
ball red 7 1
mission: goto red ball
start: 1 1 E
horizon: 40
shaping: 0.5
)";

}  // namespace

TEST_CASE("pass@k closed form and guards") {
  CHECK(pass_at_k(5, 10, 2) == Catch::Approx(7.0 / 9.0).margin(1e-15));
  CHECK(pass_at_k(10, 10, 1) == 1.0);
  CHECK(pass_at_k(0, 10, 3) == 0.0);
  CHECK(pass_at_k(9, 10, 2) == 1.0);  // fewer failures than draws
  CHECK(pass_at_k(1, 1, 1) == 1.0);

  CHECK_THROWS_AS(pass_at_k(0, 0, 1), UsageError);
  CHECK_THROWS_AS(pass_at_k(1, 10, 0), UsageError);
  CHECK_THROWS_AS(pass_at_k(1, 10, 11), UsageError);
  CHECK_THROWS_AS(pass_at_k(-1, 10, 2), UsageError);
  CHECK_THROWS_AS(pass_at_k(11, 10, 2), UsageError);
}

TEST_CASE("pass@k matches exhaustive subset enumeration") {
  for (int R = 1; R <= 8; ++R) {
    for (int s = 0; s <= R; ++s) {
      for (int k = 1; k <= R; ++k) {
        long long total = 0, hit = 0;
        for (int mask = 0; mask < (1 << R); ++mask) {
          if (__builtin_popcount((unsigned)mask) != k) continue;
          ++total;
          if ((unsigned)mask & ((1u << s) - 1u)) ++hit;
        }
        double expected = (double)hit / (double)total;
        CHECK(pass_at_k(s, R, k) == Catch::Approx(expected).margin(1e-12));
      }
      for (int k = 1; k < R; ++k)
        CHECK(pass_at_k(s, R, k) <= pass_at_k(s, R, k + 1) + 1e-15);
    }
  }
}

TEST_CASE("evaluate_suite: memorized policy solves every rollout") {
  TriangleConfig cfg = complete_graph(4, 7);
  TriangleEnv env(cfg);
  PolicyModel pol = memorized_policy(cfg);
  std::vector<Environment*> envs = {&env};

  EvalReport rep = evaluate_suite(pol, envs, 16, {1, 2, 4, 8, 16}, 99);
  REQUIRE(rep.configs.size() == 1);
  const ConfigEval& ce = rep.configs[0];
  CHECK(ce.config_index == 0);
  CHECK(ce.config_hash == env.config_hash());
  CHECK(ce.rollouts == 16);
  CHECK(ce.successes == 16);
  CHECK(ce.mean_return == 1.0);
  REQUIRE(ce.pass_at.size() == 5);
  for (double v : ce.pass_at) CHECK(v == 1.0);
  CHECK(rep.aggregate_success == 1.0);
  CHECK(rep.aggregate_return == 1.0);
  for (double v : rep.aggregate_pass_at) CHECK(v == 1.0);
  CHECK_FALSE(rep.has_creativity);
}

TEST_CASE("evaluate_suite: uniform policy statistics and determinism") {
  TriangleConfig g0 = complete_graph(4, 0);
  TriangleConfig g1 = complete_graph(4, 1);
  TriangleEnv e0(g0), e1(g1);
  std::vector<Environment*> envs = {&e0, &e1};
  PolicyModel pol = uniform_policy({g0, g1}, 4);

  EvalReport rep = evaluate_suite(pol, envs, 200, {1, 2, 5, 10}, 31);
  REQUIRE(rep.configs.size() == 2);
  // Uniform draws on a complete 4-graph succeed iff all three tokens are
  // distinct: 4*3*2 / 4^3 = 0.375.
  CHECK(rep.aggregate_success > 0.25);
  CHECK(rep.aggregate_success < 0.5);
  // Terminal reward is 0/1, so the mean return tracks the success rate.
  CHECK(rep.aggregate_return == Catch::Approx(rep.aggregate_success).margin(1e-12));
  for (const ConfigEval& ce : rep.configs) {
    REQUIRE(ce.pass_at.size() == 4);
    for (size_t i = 0; i + 1 < ce.pass_at.size(); ++i)
      CHECK(ce.pass_at[i] <= ce.pass_at[i + 1] + 1e-15);
  }

  EvalReport again = evaluate_suite(pol, envs, 200, {1, 2, 5, 10}, 31);
  CHECK(eval_report_to_json(rep).dump() == eval_report_to_json(again).dump());

  EvalReport other = evaluate_suite(pol, envs, 200, {1, 2, 5, 10}, 32);
  CHECK(eval_report_to_json(rep).dump() != eval_report_to_json(other).dump());

  std::vector<Environment*> none;
  CHECK_THROWS_AS(evaluate_suite(pol, none, 10, {1}, 0), UsageError);
  CHECK_THROWS_AS(evaluate_suite(pol, envs, 10, {}, 0), UsageError);
  CHECK_THROWS_AS(evaluate_suite(pol, envs, 10, {0}, 0), UsageError);
  CHECK_THROWS_AS(evaluate_suite(pol, envs, 10, {11}, 0), UsageError);
}

TEST_CASE("creativity: memorized triple is valid but not novel") {
  TriangleConfig cfg = complete_graph(4, 3);
  PolicyModel pol = memorized_policy(cfg);
  std::map<int, std::set<std::array<int32_t, 3>>> seen;
  seen[3].insert({0, 1, 2});

  CreativityReport rep = creativity_metrics(pol, {cfg}, 50, {1, 5}, seen, 17);
  REQUIRE(rep.graphs.size() == 1);
  const GraphCreativity& gc = rep.graphs[0];
  CHECK(gc.attempts == 50);
  CHECK(gc.valid == 50);
  CHECK(gc.validity == 1.0);
  CHECK(gc.unique_valid == 1);
  CHECK(gc.unique_unseen == 0);
  CHECK(gc.creativity == 0.0);
  // One distinct triple in any subsample; the estimate averages 1000 replicates.
  for (double v : gc.diff_at) CHECK(v == Catch::Approx(1.0).margin(1e-12));
  CHECK(rep.validity == 1.0);
  CHECK(rep.diversity == 1.0);
  CHECK(rep.creativity == 0.0);

  // Without the memory bank the same triple counts as novel.
  CreativityReport fresh = creativity_metrics(pol, {cfg}, 50, {1, 5}, {}, 17);
  CHECK(fresh.graphs[0].unique_unseen == 1);
  CHECK(fresh.graphs[0].creativity == Catch::Approx(1.0 / 50.0).margin(1e-15));
}

TEST_CASE("creativity: stuck policy never completes a census") {
  TriangleConfig cfg = complete_graph(4, 0);
  PolicyModel pol = stuck_policy(cfg);
  CreativityReport rep = creativity_metrics(pol, {cfg}, 40, {1, 4}, {}, 5);
  const GraphCreativity& gc = rep.graphs[0];
  CHECK(gc.valid == 0);
  CHECK(gc.validity == 0.0);
  CHECK(gc.unique_valid == 0);
  CHECK(gc.creativity == 0.0);
  for (double v : gc.diff_at) CHECK(v == 0.0);
  CHECK(rep.diversity == 0.0);
}

TEST_CASE("creativity: uniform policy discovers all four triangles") {
  TriangleConfig cfg = complete_graph(4, 0);
  PolicyModel pol = uniform_policy({cfg}, 4);
  CreativityReport rep = creativity_metrics(pol, {cfg}, 400, {1, 2, 4, 8}, {}, 2026);
  const GraphCreativity& gc = rep.graphs[0];

  CHECK(gc.validity > 0.27);
  CHECK(gc.validity < 0.48);
  CHECK(gc.unique_valid == 4);
  CHECK(gc.unique_unseen == 4);
  CHECK(gc.creativity == Catch::Approx(4.0 / 400.0).margin(1e-15));
  CHECK(gc.creativity <= gc.validity);

  REQUIRE(gc.diff_at.size() == 4);
  // diff@1 estimates the validity of the attempt pool.
  CHECK(gc.diff_at[0] == Catch::Approx(gc.validity).margin(0.06));
  for (size_t i = 0; i + 1 < gc.diff_at.size(); ++i)
    CHECK(gc.diff_at[i] <= gc.diff_at[i + 1] + 1e-12);
  const std::vector<int> ks = {1, 2, 4, 8};
  for (size_t i = 0; i < ks.size(); ++i)
    CHECK(gc.diff_at[i] <= std::min((double)ks[i], 4.0) + 1e-12);
  // Coupon-collector estimate for 4 equally likely triples at success rate 3/8.
  double predicted = 4.0 * (1.0 - std::pow(1.0 - 3.0 / 32.0, 8.0));
  CHECK(gc.diff_at[3] == Catch::Approx(predicted).margin(0.8));

  // Once every triangle is banked, novelty drops to zero.
  std::map<int, std::set<std::array<int32_t, 3>>> seen;
  seen[0] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  CreativityReport banked = creativity_metrics(pol, {cfg}, 400, {1, 2, 4, 8}, seen, 2026);
  CHECK(banked.graphs[0].unique_unseen == 0);
  CHECK(banked.graphs[0].creativity == 0.0);
  CHECK(banked.graphs[0].unique_valid == 4);

  CreativityReport again = creativity_metrics(pol, {cfg}, 400, {1, 2, 4, 8}, {}, 2026);
  CHECK(again.graphs[0].validity == gc.validity);
  CHECK(again.graphs[0].diff_at == gc.diff_at);

  CHECK_THROWS_AS(creativity_metrics(pol, {}, 10, {1}, {}, 0), UsageError);
  CHECK_THROWS_AS(creativity_metrics(pol, {cfg}, 10, {11}, {}, 0), UsageError);
}

TEST_CASE("perturbation suite: visited-room starts on the two-room layout") {
  RoomsConfig cfg = RoomsConfig::parse(kTwoRoom);
  RoomsEnv env(cfg);
  PolicyModel pol =
      PolicyModel::mlp(FeatureKind::rooms, kRoomsFeatureDim, 16, kRoomsActions, 1.0, 5);

  Rng rng(77);
  PerturbationSuite suite = build_perturbation_suite(pol, cfg, 8.0, 30, 3, rng);
  CHECK(suite.config_hash == env.config_hash());
  CHECK(suite.rooms_visited >= 1);
  REQUIRE(!suite.starts.empty());
  CHECK((int)suite.starts.size() <= suite.rooms_visited * 3);
  for (const EnvState& st : suite.starts) {
    RoomsEnv probe(cfg);
    probe.restore(st);
    CHECK_FALSE(probe.terminal());
  }

  Rng rng2(77);
  PerturbationSuite again = build_perturbation_suite(pol, cfg, 8.0, 30, 3, rng2);
  CHECK(again.starts == suite.starts);
  CHECK(again.rooms_visited == suite.rooms_visited);
  CHECK(again.resampled == suite.resampled);
  CHECK(again.warnings == suite.warnings);

  Rng rng3(78);
  CHECK_THROWS_AS(build_perturbation_suite(pol, cfg, 0.0, 30, 3, rng3), UsageError);
  CHECK_THROWS_AS(build_perturbation_suite(pol, cfg, 8.0, 0, 3, rng3), UsageError);
  CHECK_THROWS_AS(build_perturbation_suite(pol, cfg, 8.0, 30, 0, rng3), UsageError);
}

TEST_CASE("perturbation_eval: bounded, deterministic, and config-checked") {
  RoomsConfig cfg = RoomsConfig::parse(kTwoRoom);
  PolicyModel pol =
      PolicyModel::mlp(FeatureKind::rooms, kRoomsFeatureDim, 16, kRoomsActions, 1.0, 5);
  Rng rng(41);
  PerturbationSuite suite = build_perturbation_suite(pol, cfg, 6.0, 20, 2, rng);

  double rate = perturbation_eval(pol, cfg, suite, 9);
  CHECK(rate >= 0.0);
  CHECK(rate <= 1.0);
  CHECK(perturbation_eval(pol, cfg, suite, 9) == rate);

  PerturbationSuite empty;
  empty.config_hash = suite.config_hash;
  CHECK_THROWS_AS(perturbation_eval(pol, cfg, empty, 9), UsageError);

  std::string other_text(kTwoRoom);
  other_text.replace(other_text.find("horizon: 40"), 11, "horizon: 50");
  RoomsConfig other = RoomsConfig::parse(other_text);
  CHECK_THROWS_AS(perturbation_eval(pol, other, suite, 9), ConfigError);
}

TEST_CASE("eval report serialization and metrics files") {
  TriangleConfig cfg = complete_graph(4, 0);
  TriangleEnv env(cfg);
  std::vector<Environment*> envs = {&env};
  PolicyModel pol = uniform_policy({cfg}, 4);

  EvalReport rep = evaluate_suite(pol, envs, 50, {1, 5, 25}, 7);
  rep.has_creativity = true;
  rep.creativity = creativity_metrics(pol, {cfg}, 60, {1, 5, 25}, {}, 8);

  nlohmann::json j = eval_report_to_json(rep);
  CHECK(j.at("schema") == "polyrl.eval.v1");
  EvalReport back = eval_report_from_json(j);
  CHECK(eval_report_to_json(back).dump() == j.dump());

  nlohmann::json bad = j;
  bad["schema"] = "polyrl.eval.v2";
  CHECK_THROWS_AS(eval_report_from_json(bad), SerializeError);

  const std::string jsonl = "test_eval_metrics.jsonl";
  const std::string csv = "test_eval_curves.csv";
  emit_metrics(rep, jsonl, csv);

  EvalReport read = read_metrics(jsonl);
  CHECK(eval_report_to_json(read).dump() == j.dump());

  std::ifstream cin(csv);
  REQUIRE(cin.good());
  std::string header;
  std::getline(cin, header);
  CHECK(header == "metric,config_index,k,value");
  bool saw_aggregate = false;
  for (std::string line; std::getline(cin, line);)
    if (line.find(",-1,") != std::string::npos) saw_aggregate = true;
  CHECK(saw_aggregate);
  cin.close();
  std::remove(jsonl.c_str());
  std::remove(csv.c_str());
}

TEST_CASE("set diversity probe counts sets and stays in range") {
  TriangleConfig g0 = complete_graph(4, 0);
  TriangleConfig g1 = complete_graph(4, 1);
  TriangleEnv e0(g0), e1(g1);
  std::vector<Environment*> envs = {&e0, &e1};
  PolicyModel pol = uniform_policy({g0, g1}, 4);

  DiversityProbe probe = set_diversity_probe(envs, pol, 4, 2, 3, 2, 40, 123);
  // 4 seed rollouts and p = 2 give 8 vine batches per environment, M = 3 sets each.
  CHECK(probe.sets == 48);
  CHECK(probe.mean_diversity >= 0.0);
  CHECK(probe.mean_diversity <= 1.0);

  DiversityProbe again = set_diversity_probe(envs, pol, 4, 2, 3, 2, 40, 123);
  CHECK(again.mean_diversity == probe.mean_diversity);
  CHECK(again.sets == probe.sets);

  std::vector<Environment*> none;
  CHECK_THROWS_AS(set_diversity_probe(none, pol, 4, 2, 3, 2, 40, 123), UsageError);
}
