#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "polyrl/eval.hpp"
#include "polyrl/policy.hpp"
#include "polyrl/rooms.hpp"
#include "polyrl/theorysuite.hpp"
#include "polyrl/train.hpp"
#include "polyrl/triangle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace polyrl;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string first_meaningful_line(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    if (line[a] == '#' || line[a] == ';') continue;
    return line.substr(a);
  }
  return "";
}

struct EnvSuite {
  bool rooms = false;
  std::vector<RoomsConfig> rooms_configs;
  std::vector<TriangleConfig> triangle_configs;
  std::vector<std::unique_ptr<Environment>> owned;
  std::vector<Environment*> envs;
  std::vector<std::string> names;
};

void add_config_text(EnvSuite& suite, const std::string& text, const std::string& name,
                     uint64_t seed) {
  std::string head = first_meaningful_line(text);
  if (head.rfind("grid:", 0) == 0) {
    if (!suite.owned.empty() && !suite.rooms) throw ConfigError("mixed environment kinds in suite");
    suite.rooms = true;
    RoomsConfig cfg = RoomsConfig::parse(text);
    suite.owned.push_back(make_rooms_env(cfg, seed));
    suite.rooms_configs.push_back(std::move(cfg));
  } else if (head.rfind("graph:", 0) == 0) {
    if (!suite.owned.empty() && suite.rooms) throw ConfigError("mixed environment kinds in suite");
    suite.rooms = false;
    TriangleConfig cfg = TriangleConfig::parse(text);
    suite.owned.push_back(std::make_unique<TriangleEnv>(cfg));
    suite.triangle_configs.push_back(std::move(cfg));
  } else {
    throw ConfigError("unrecognized config (want grid: or graph: header): " + name);
  }
  suite.names.push_back(name);
}

// A suite path is either one environment config or a manifest of config
// paths, one per line, relative to the manifest's directory.
EnvSuite load_env_suite(const std::string& path, uint64_t seed) {
  EnvSuite suite;
  std::string text = read_text_file(path);
  std::string head = first_meaningful_line(text);
  if (head.rfind("grid:", 0) == 0 || head.rfind("graph:", 0) == 0) {
    add_config_text(suite, text, path, seed);
  } else {
    fs::path base = fs::path(path).parent_path();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      size_t b = line.find_last_not_of(" \t\r");
      std::string entry = line.substr(a, b - a + 1);
      if (entry[0] == '#' || entry[0] == ';') continue;
      fs::path p(entry);
      if (p.is_relative()) p = base / p;
      add_config_text(suite, read_text_file(p.string()), p.string(), seed);
    }
    if (suite.owned.empty()) throw ConfigError("suite manifest lists no configs: " + path);
  }
  for (auto& e : suite.owned) suite.envs.push_back(e.get());
  if (!suite.rooms) {
    for (const auto& cfg : suite.triangle_configs)
      if (cfg.nodes != suite.triangle_configs.front().nodes)
        throw ConfigError("triangle suite graphs must share a node count");
  }
  return suite;
}

TrainState fresh_state_for(const EnvSuite& suite, int hidden, double temperature, uint64_t seed) {
  if (suite.rooms) {
    PolicyModel pol = PolicyModel::mlp(FeatureKind::rooms, kRoomsFeatureDim, hidden, kRoomsActions,
                                       temperature, seed);
    CriticModel cri = CriticModel::mlp(FeatureKind::rooms, kRoomsFeatureDim, hidden, seed);
    return TrainState{std::move(pol), std::move(cri), {}, {}, {}, 0};
  }
  auto universe = triangle_obs_universe(suite.triangle_configs);
  int actions = suite.triangle_configs.front().nodes;
  PolicyModel pol = PolicyModel::tabular(universe, actions, temperature);
  CriticModel cri = CriticModel::tabular(universe);
  return TrainState{std::move(pol), std::move(cri), {}, {}, {}, 0};
}

json seen_to_json(const std::map<int, std::set<std::array<int32_t, 3>>>& seen) {
  json j = json::object();
  for (const auto& [gid, tris] : seen) {
    json arr = json::array();
    for (const auto& t : tris) arr.push_back({t[0], t[1], t[2]});
    j[std::to_string(gid)] = arr;
  }
  return j;
}

std::map<int, std::set<std::array<int32_t, 3>>> seen_from_json(const json& j) {
  std::map<int, std::set<std::array<int32_t, 3>>> seen;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto& s = seen[std::stoi(it.key())];
    for (const auto& t : it.value()) s.insert({t[0].get<int32_t>(), t[1].get<int32_t>(), t[2].get<int32_t>()});
  }
  return seen;
}

json apply_config_file(TrainConfig& cfg, const std::string& path) {
  json j = json::parse(read_text_file(path));
  if (j.contains("method")) cfg.method = method_from(j["method"].get<std::string>());
  if (j.contains("ucb")) cfg.ucb = j["ucb"].get<bool>();
  if (j.contains("ppo_epochs")) cfg.ppo_epochs = j["ppo_epochs"].get<int>();
  if (j.contains("minibatch")) cfg.minibatch = j["minibatch"].get<int>();
  if (j.contains("gamma")) cfg.gamma = j["gamma"].get<double>();
  if (j.contains("lambda")) cfg.lambda = j["lambda"].get<double>();
  if (j.contains("clip_eps")) cfg.clip_eps = j["clip_eps"].get<double>();
  if (j.contains("actor_lr")) cfg.actor_lr = j["actor_lr"].get<double>();
  if (j.contains("critic_lr")) cfg.critic_lr = j["critic_lr"].get<double>();
  if (j.contains("value_coef")) cfg.value_coef = j["value_coef"].get<double>();
  if (j.contains("kl_coef")) cfg.kl_coef = j["kl_coef"].get<double>();
  if (j.contains("max_grad_norm")) cfg.max_grad_norm = j["max_grad_norm"].get<double>();
  if (j.contains("temperature")) cfg.temperature = j["temperature"].get<double>();
  if (j.contains("N")) cfg.N = j["N"].get<int>();
  if (j.contains("n")) cfg.n = j["n"].get<int>();
  if (j.contains("M")) cfg.M = j["M"].get<int>();
  if (j.contains("p")) cfg.p = j["p"].get<int>();
  if (j.contains("W")) cfg.W = j["W"].get<int>();
  if (j.contains("B")) cfg.B = j["B"].get<int>();
  if (j.contains("lambda_ucb")) cfg.lambda_ucb = j["lambda_ucb"].get<double>();
  if (j.contains("ucb_reset_per_iteration"))
    cfg.ucb_reset_per_iteration = j["ucb_reset_per_iteration"].get<bool>();
  if (j.contains("iterations")) cfg.iterations = j["iterations"].get<int>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("rollout_criterion")) {
    std::string c = j["rollout_criterion"].get<std::string>();
    if (c == "equal_spacing") cfg.rollout_criterion = RolloutStateCriterion::equal_spacing;
    else if (c == "policy_entropy") cfg.rollout_criterion = RolloutStateCriterion::policy_entropy;
    else if (c == "critic_loss") cfg.rollout_criterion = RolloutStateCriterion::critic_loss;
    else throw ConfigError("unknown rollout criterion: " + c);
  }
  if (j.contains("diversity")) {
    std::string d = j["diversity"].get<std::string>();
    if (d == "room_set") cfg.diversity = DiversityKind::room_set;
    else if (d == "node_set") cfg.diversity = DiversityKind::node_set;
    else throw ConfigError("unknown diversity kind: " + d);
  }
  if (j.contains("optimizer")) {
    std::string o = j["optimizer"].get<std::string>();
    if (o == "sgd") cfg.optimizer = OptKind::sgd;
    else if (o == "adam") cfg.optimizer = OptKind::adam;
    else throw ConfigError("unknown optimizer: " + o);
  }
  return j;
}

int cmd_pretrain(const std::string& suite_path, const std::string& out_path, uint64_t seed,
                 int hidden, double temperature, int epochs, int minibatch, double lr,
                 double entropy_coef, double holdout, int demos, double noise, int samples,
                 std::string seen_path) {
  EnvSuite suite = load_env_suite(suite_path, seed);
  TrainState state = fresh_state_for(suite, hidden, temperature, seed);
  Dataset data;
  if (suite.rooms) {
    data = generate_rooms_demos(suite.rooms_configs, demos, noise, seed);
  } else {
    data = generate_triangle_pretrain(suite.triangle_configs, samples, seed);
    if (seen_path.empty()) seen_path = out_path + ".seen.json";
    std::ofstream out(seen_path, std::ios::binary);
    if (!out) throw UsageError("cannot open for writing: " + seen_path);
    out << seen_to_json(data.seen_triangles).dump() << "\n";
  }
  PretrainConfig pc;
  pc.epochs = epochs;
  pc.minibatch = minibatch;
  pc.lr = lr;
  pc.entropy_coef = entropy_coef;
  pc.holdout_frac = holdout;
  pc.seed = seed;
  PretrainReport rep = pretrain_bc(state.policy, data, pc);
  write_file_bytes(out_path, save_checkpoint_bytes(state, seed));
  json j;
  j["schema"] = "polyrl.pretrain.v1";
  j["samples"] = data.samples.size();
  j["train_count"] = rep.train_count;
  j["holdout_count"] = rep.holdout_count;
  j["final_train_loss"] = rep.final_train_loss;
  j["holdout_ce"] = rep.holdout_ce;
  j["holdout_accuracy"] = rep.holdout_accuracy;
  j["checkpoint"] = out_path;
  if (!suite.rooms) j["seen"] = seen_path;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& out_path,
                 const std::string& suite_path, const std::string& metrics_path, TrainConfig cfg,
                 bool resume, bool kl_sweep, int checkpoint_every) {
  cfg.validate();
  EnvSuite suite = load_env_suite(suite_path, cfg.seed);
  uint64_t root_seed = 0;
  TrainState state = load_checkpoint_bytes(read_file_bytes(ckpt_path), &root_seed);
  if (!resume) state.completed_iterations = 0;
  apply_optimizer_config(state, cfg);
  state.policy.net.temperature = cfg.temperature;

  if (kl_sweep) {
    double best_coef = cfg.kl_coef, best_success = -1.0;
    for (double coef : kl_sweep_values()) {
      TrainConfig c = cfg;
      c.kl_coef = coef;
      TrainState trial = state;
      train_run(trial, suite.envs, c, nullptr);
      EvalReport er = evaluate_suite(trial.policy, suite.envs, 32, {1}, mix_seed(cfg.seed, 0xe7a1));
      json line;
      line["schema"] = "polyrl.klsweep.v1";
      line["kl_coef"] = coef;
      line["final_success"] = er.aggregate_success;
      std::cout << line.dump() << "\n";
      if (er.aggregate_success > best_success) {
        best_success = er.aggregate_success;
        best_coef = coef;
      }
    }
    std::cout << json{{"schema", "polyrl.klsweep.v1"}, {"selected_kl_coef", best_coef}}.dump()
              << "\n";
    cfg.kl_coef = best_coef;
  }

  std::unique_ptr<std::ofstream> metrics;
  if (!metrics_path.empty()) {
    auto mode = resume ? std::ios::binary | std::ios::app : std::ios::binary;
    metrics = std::make_unique<std::ofstream>(metrics_path, mode);
    if (!*metrics) throw UsageError("cannot open for writing: " + metrics_path);
  }
  for (uint64_t it = state.completed_iterations; it < uint64_t(cfg.iterations); ++it) {
    IterationReport rep = run_iteration(state, suite.envs, cfg, it);
    state.completed_iterations = it + 1;
    if (metrics) {
      *metrics << report_to_json(rep, cfg).dump() << "\n";
      metrics->flush();
    }
    if (checkpoint_every > 0 && state.completed_iterations % uint64_t(checkpoint_every) == 0)
      write_file_bytes(out_path, save_checkpoint_bytes(state, cfg.seed));
  }
  write_file_bytes(out_path, save_checkpoint_bytes(state, cfg.seed));
  json j;
  j["schema"] = "polyrl.finetune.v1";
  j["method"] = method_name(cfg.method);
  j["iterations"] = state.completed_iterations;
  j["checkpoint"] = out_path;
  if (!metrics_path.empty()) j["metrics"] = metrics_path;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& suite_path, int rollouts,
             std::vector<int> k_grid, const std::string& out_path, const std::string& csv_path,
             uint64_t seed, bool creativity, const std::string& seen_path, int attempts,
             bool perturb, double perturb_temperature, int perturb_rollouts, int per_room,
             bool probe, int probe_N, int probe_n, int probe_M, int probe_p, int probe_B) {
  EnvSuite suite = load_env_suite(suite_path, seed);
  uint64_t root_seed = 0;
  TrainState state = load_checkpoint_bytes(read_file_bytes(ckpt_path), &root_seed);
  if (k_grid.empty()) k_grid = {1, 2, 4, 8, 16};
  EvalReport rep = evaluate_suite(state.policy, suite.envs, rollouts, k_grid, seed);
  if (creativity) {
    if (suite.rooms) throw UsageError("creativity metrics need a triangle suite");
    if (seen_path.empty()) throw UsageError("creativity metrics need --seen");
    auto seen = seen_from_json(json::parse(read_text_file(seen_path)));
    rep.creativity = creativity_metrics(state.policy, suite.triangle_configs,
                                        attempts > 0 ? attempts : rollouts, k_grid, seen, seed);
    rep.has_creativity = true;
  }
  if (!out_path.empty() && !csv_path.empty()) emit_metrics(rep, out_path, csv_path);
  else if (!out_path.empty()) write_eval_jsonl(rep, out_path);

  json j = eval_report_to_json(rep);
  if (perturb) {
    if (!suite.rooms) throw UsageError("perturbation harness needs a rooms suite");
    json rows = json::array();
    for (size_t ci = 0; ci < suite.rooms_configs.size(); ++ci) {
      Rng rng = make_rng(seed, {streams::perturb, 0x50, uint64_t(ci)});
      PerturbationSuite ps = build_perturbation_suite(state.policy, suite.rooms_configs[ci],
                                                      perturb_temperature, perturb_rollouts,
                                                      per_room, rng);
      double p1 = ps.starts.empty()
                      ? 0.0
                      : perturbation_eval(state.policy, suite.rooms_configs[ci], ps, seed);
      rows.push_back({{"config_index", ci},
                      {"rooms_visited", ps.rooms_visited},
                      {"starts", ps.starts.size()},
                      {"resampled", ps.resampled},
                      {"warnings", ps.warnings},
                      {"pass_at_1", p1}});
    }
    j["perturbation"] = rows;
  }
  if (probe) {
    DiversityProbe dp =
        set_diversity_probe(suite.envs, state.policy, probe_N, probe_n, probe_M, probe_p, probe_B, seed);
    j["set_diversity_probe"] = {{"mean_diversity", dp.mean_diversity}, {"sets", dp.sets}};
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_theory(int trees, int states, int actions, int depth, int deep, int bandits, uint64_t seed) {
  int passed = 0, total = 0;
  auto line = [&](bool ok, const std::string& text) {
    total++;
    if (ok) passed++;
    std::cout << (ok ? "PASS " : "FAIL ") << text << "\n";
  };

  auto rows = run_perf_diff_suite(trees, states, actions, 2, 0.3, depth, seed);
  for (const auto& r : rows) {
    std::ostringstream os;
    os << "perf-diff tree " << r.index << " (states=" << r.states << " actions=" << r.actions
       << " depth=" << r.depth << "): |lhs-rhs|=" << format_g17(r.abs_diff)
       << " tol=" << format_g17(r.tol);
    line(r.pass, os.str());
    std::ostringstream os2;
    os2 << "value-consistency tree " << r.index << ": gap=" << format_g17(r.dual_gap)
        << " tol=1e-12";
    line(r.dual_pass, os2.str());
  }

  GeometricRow geo = run_geometric_check();
  {
    std::ostringstream os;
    os << "geometric chain: value=" << format_g17(geo.value) << " partial="
       << format_g17(geo.partial) << " limit=" << format_g17(geo.limit)
       << " truncation-gap=" << format_g17(geo.truncation_gap) << " (tol 1e-12), limit-gap="
       << format_g17(geo.limit_gap) << " (tail " << format_g17(geo.tail) << ")";
    line(geo.pass, os.str());
  }

  for (const auto& r : run_deep_perf_diff(deep, mix_seed(seed, 0xdeef))) {
    std::ostringstream os;
    os << "deep perf-diff tree " << r.index << " (depth=" << r.depth
       << "): |lhs-rhs|=" << format_g17(r.abs_diff) << " tol=" << format_g17(r.tol);
    line(r.pass, os.str());
  }

  for (const auto& r : run_entropy_suite(bandits, 6, 3, seed)) {
    std::ostringstream os;
    os << "entropy bandit " << r.tag << " (arms=" << r.arms << " n=" << r.n << "): err=["
       << format_g17(r.err[0]) << ", " << format_g17(r.err[1]) << ", " << format_g17(r.err[2])
       << "] ratios=[" << format_g17(r.ratio[0]) << ", " << format_g17(r.ratio[1])
       << "] want [3.5, 4.5]" << (r.underflow ? " (underflow carve-out)" : "");
    line(r.ratio_ok, os.str());
    std::ostringstream os2;
    os2 << "entropy-sign bandit " << r.tag << ": exact and first-order deltas agree at alpha=1e-4";
    line(r.sign_ok, os2.str());
  }

  for (const auto& r : verify_prop_53({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}, {2, 3, 4})) {
    std::ostringstream os;
    os << "scaffold-bound p=" << r.p << " n=" << r.n << ": lambda=" << format_g17(r.lambda)
       << " bound=" << format_g17(r.bound) << " negativity "
       << (r.negativity_applies ? "expected" : "not expected");
    line(r.bound_ok && r.negativity_ok, os.str());
  }
  for (int q : {1, 2})
    for (double p : {0.1, 0.2})
      for (int n : {2, 3}) {
        Prop54Row r = verify_prop_54(q, p, n);
        std::ostringstream os;
        os << "scaffold-transfer q=" << q << " p=" << p << " n=" << n
           << ": lambda=" << format_g17(r.lambda) << " bound=" << format_g17(r.bound);
        line(r.ok, os.str());
      }

  Def55Result d = run_def55_check();
  {
    std::ostringstream os;
    os << "polychromic-validation: cov(phi_R, sum R)=" << format_g17(d.report.cond1_cov)
       << " (expect " << format_g17(d.expected_cond1)
       << "), min rewarding -cov=" << format_g17(d.report.cond2_min_neg_cov)
       << ", ranges match=" << (d.report.range_pass ? "yes" : "no");
    line(d.report.pass && d.matches_expected, os.str());
  }

  std::cout << "theory: " << passed << "/" << total << " checks passed\n";
  return passed == total ? 0 : 1;
}

int cmd_plotdata(const std::string& in_path, const std::string& out_path,
                 std::vector<std::string> fields) {
  std::ifstream in(in_path, std::ios::binary);
  if (!in) throw UsageError("cannot open: " + in_path);
  std::string first;
  if (!std::getline(in, first)) throw SerializeError("empty metrics file");
  json j0 = json::parse(first);
  std::string schema = j0.value("schema", "");
  if (schema == "polyrl.eval.v1") {
    write_eval_csv(eval_report_from_json(j0), out_path);
    std::cout << json{{"schema", schema}, {"out", out_path}}.dump() << "\n";
    return 0;
  }
  if (schema != "polyrl.train.v1") throw SerializeError("unknown metrics schema: " + schema);
  if (fields.empty())
    fields = {"mean_return", "success_rate", "policy_loss", "value_loss",
              "kl",          "entropy",      "mean_set_diversity"};
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw UsageError("cannot open for writing: " + out_path);
  out << "iteration";
  for (const auto& f : fields) out << "," << f;
  out << "\n";
  std::string line = first;
  do {
    json j = json::parse(line);
    out << j.at("iteration").get<long long>();
    for (const auto& f : fields) out << "," << format_g17(j.at(f).get<double>());
    out << "\n";
  } while (std::getline(in, line) && !line.empty());
  std::cout << json{{"schema", schema}, {"out", out_path}}.dump() << "\n";
  return 0;
}

int cmd_describe(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw UsageError("cannot open: " + path);
  char head[8] = {0};
  probe.read(head, 8);
  std::string magic(head, size_t(std::max<std::streamsize>(probe.gcount(), 0)));
  json j;
  j["path"] = path;
  if (magic.rfind(kCheckpointMagic, 0) == 0) {
    uint64_t root_seed = 0;
    TrainState st = load_checkpoint_bytes(read_file_bytes(path), &root_seed);
    j["kind"] = "checkpoint";
    j["root_seed"] = root_seed;
    j["completed_iterations"] = st.completed_iterations;
    j["policy_kind"] = st.policy.net.kind == ParamKind::tabular ? "tabular" : "mlp";
    j["policy_params"] = st.policy.param_count();
    j["actions"] = st.policy.action_count();
    j["critic_params"] = st.critic.param_count();
    j["temperature"] = st.policy.temperature();
    j["visit_states"] = st.counts.counts.size();
  } else if (magic.rfind("PLRLMDL1", 0) == 0) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    Net net = Net::load(r);
    j["kind"] = "model";
    j["parameterization"] = net.kind == ParamKind::tabular ? "tabular" : "mlp";
    j["params"] = net.param_count();
    j["out_dim"] = net.out_dim;
    j["temperature"] = net.temperature;
  } else {
    std::string text = read_text_file(path);
    std::string headline = first_meaningful_line(text);
    if (headline.rfind("grid:", 0) == 0) {
      RoomsConfig cfg = RoomsConfig::parse(text);
      RoomsEnv env(cfg);
      j["kind"] = "rooms-config";
      j["width"] = cfg.width();
      j["height"] = cfg.height();
      j["rooms"] = env.room_count();
      j["objects"] = cfg.objects.size();
      j["mission"] = cfg.mission.to_string();
      j["horizon"] = cfg.horizon;
      j["hash"] = cfg.hash();
      auto plan = plan_mission(env);
      if (!plan) plan = plan_mission(env, true);
      j["plan_length"] = plan ? json(plan->size()) : json(nullptr);
    } else if (headline.rfind("graph:", 0) == 0) {
      TriangleConfig cfg = TriangleConfig::parse(text);
      j["kind"] = "triangle-config";
      j["graph_id"] = cfg.graph_id;
      j["nodes"] = cfg.nodes;
      j["edges"] = cfg.edge_count();
      j["triangles"] = cfg.all_triangles().size();
      j["hash"] = cfg.hash();
    } else if (!headline.empty() && headline[0] == '{') {
      json line = json::parse(headline);
      j["kind"] = "metrics";
      j["schema"] = line.value("schema", "unknown");
    } else {
      throw UsageError("unrecognized file format: " + path);
    }
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-objective policy optimization toolkit"};
  app.require_subcommand(1);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Behavior-clone a policy from scripted demonstrations");
  std::string pre_suite, pre_out, pre_seen;
  uint64_t pre_seed = 0;
  int pre_hidden = 64, pre_epochs = 40, pre_minibatch = 64, pre_demos = 50, pre_samples = 200;
  double pre_temp = 1.0, pre_lr = 1e-3, pre_entropy = 0.01, pre_holdout = 0.2, pre_noise = 0.1;
  pre->add_option("--suite", pre_suite, "environment config or manifest")->required();
  pre->add_option("--out", pre_out, "output checkpoint path")->required();
  pre->add_option("--seed", pre_seed, "rng seed");
  pre->add_option("--hidden", pre_hidden, "mlp hidden width");
  pre->add_option("--temperature", pre_temp, "softmax temperature");
  pre->add_option("--epochs", pre_epochs, "training epochs");
  pre->add_option("--minibatch", pre_minibatch, "minibatch size");
  pre->add_option("--lr", pre_lr, "learning rate");
  pre->add_option("--entropy-coef", pre_entropy, "entropy bonus coefficient");
  pre->add_option("--holdout", pre_holdout, "holdout fraction");
  pre->add_option("--demos", pre_demos, "demonstrations per rooms config");
  pre->add_option("--noise", pre_noise, "random-action fraction in demos");
  pre->add_option("--samples", pre_samples, "pretraining samples per graph");
  pre->add_option("--seen", pre_seen, "output path for seen-triangle sidecar");

  // finetune
  auto* fin = app.add_subcommand("finetune", "Optimize a pretrained policy with a set-level or baseline method");
  std::string fin_ckpt, fin_out, fin_suite, fin_metrics, fin_config, fin_method = "poly_ppo";
  std::string fin_criterion = "equal_spacing", fin_diversity, fin_opt;
  bool fin_resume = false, fin_sweep = false, fin_ucb = false;
  int fin_every = 0;
  TrainConfig fcfg;
  fin->add_option("--ckpt", fin_ckpt, "input checkpoint")->required();
  fin->add_option("--out", fin_out, "output checkpoint")->required();
  fin->add_option("--suite", fin_suite, "environment config or manifest")->required();
  fin->add_option("--metrics", fin_metrics, "metrics output path (line-delimited records)");
  fin->add_option("--config", fin_config, "training config file (json); flags override");
  fin->add_option("--method", fin_method, "ppo | poly_ppo | reinforce | ppo_vines");
  fin->add_flag("--ucb", fin_ucb, "add count-based exploration bonus");
  fin->add_option("--epochs", fcfg.ppo_epochs, "update epochs per iteration");
  fin->add_option("--minibatch", fcfg.minibatch, "minibatch size");
  fin->add_option("--gamma", fcfg.gamma, "discount");
  fin->add_option("--lambda", fcfg.lambda, "advantage estimation lambda");
  fin->add_option("--clip-eps", fcfg.clip_eps, "surrogate clip width");
  fin->add_option("--actor-lr", fcfg.actor_lr, "policy learning rate");
  fin->add_option("--critic-lr", fcfg.critic_lr, "critic learning rate");
  fin->add_option("--value-coef", fcfg.value_coef, "critic loss coefficient");
  fin->add_option("--kl-coef", fcfg.kl_coef, "KL penalty coefficient");
  fin->add_flag("--kl-sweep", fin_sweep, "sweep the KL coefficient and keep the best");
  fin->add_option("--max-grad-norm", fcfg.max_grad_norm, "gradient clip");
  fin->add_option("--temperature", fcfg.temperature, "softmax temperature");
  fin->add_option("-N,--seed-rollouts", fcfg.N, "seed rollouts per iteration");
  fin->add_option("-n,--set-size", fcfg.n, "set size");
  fin->add_option("-M,--sets", fcfg.M, "sets per vine batch");
  fin->add_option("-p,--rollout-states", fcfg.p, "rollout states per seed rollout");
  fin->add_option("-W,--window", fcfg.W, "advantage assignment window");
  fin->add_option("-B,--budget", fcfg.B, "trajectory budget per iteration");
  fin->add_option("--lambda-ucb", fcfg.lambda_ucb, "exploration bonus scale");
  fin->add_flag("--ucb-reset", fcfg.ucb_reset_per_iteration, "reset visit counts each iteration");
  fin->add_option("--iterations", fcfg.iterations, "training iterations");
  fin->add_option("--seed", fcfg.seed, "rng seed");
  fin->add_option("--criterion", fin_criterion, "equal_spacing | policy_entropy | critic_loss");
  fin->add_option("--diversity", fin_diversity, "room_set | node_set (default by env kind)");
  fin->add_option("--optimizer", fin_opt, "sgd | adam");
  fin->add_flag("--resume", fin_resume, "continue from the checkpoint's iteration counter");
  fin->add_option("--checkpoint-every", fin_every, "save every k iterations");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a config suite");
  std::string ev_ckpt, ev_suite, ev_out, ev_csv, ev_seen;
  uint64_t ev_seed = 0;
  int ev_rollouts = 64, ev_attempts = 0;
  std::vector<int> ev_k;
  bool ev_creativity = false, ev_perturb = false, ev_probe = false;
  double ev_ptemp = 2.0;
  int ev_prolls = 100, ev_proom = 10;
  int ev_pN = 8, ev_pn = 4, ev_pM = 4, ev_pp = 2, ev_pB = 136;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--suite", ev_suite, "environment config or manifest")->required();
  ev->add_option("--rollouts", ev_rollouts, "rollouts per config");
  ev->add_option("--k", ev_k, "pass@k grid")->delimiter(',');
  ev->add_option("--out", ev_out, "metrics output path (line-delimited records)");
  ev->add_option("--csv", ev_csv, "curve table output path");
  ev->add_option("--seed", ev_seed, "rng seed");
  ev->add_flag("--creativity", ev_creativity, "triangle creativity metrics");
  ev->add_option("--seen", ev_seen, "seen-triangle sidecar from pretraining");
  ev->add_option("--attempts", ev_attempts, "generation attempts per graph (default: rollouts)");
  ev->add_flag("--perturb", ev_perturb, "perturbed-start generalization harness");
  ev->add_option("--perturb-temperature", ev_ptemp, "exploration temperature for room discovery");
  ev->add_option("--perturb-rollouts", ev_prolls, "discovery rollouts per config");
  ev->add_option("--per-room", ev_proom, "perturbed starts per room");
  ev->add_flag("--set-diversity", ev_probe, "set-diversity probe under vine collection");
  ev->add_option("--probe-N", ev_pN, "probe seed rollouts");
  ev->add_option("--probe-n", ev_pn, "probe set size");
  ev->add_option("--probe-M", ev_pM, "probe sets per batch");
  ev->add_option("--probe-p", ev_pp, "probe rollout states per seed");
  ev->add_option("--probe-B", ev_pB, "probe trajectory budget");

  // theory
  auto* th = app.add_subcommand("theory", "Run the exact finite-instance verification suite");
  int th_trees = 20, th_states = 16, th_actions = 4, th_depth = 6, th_deep = 3, th_bandits = 10;
  uint64_t th_seed = 1;
  th->add_option("--trees", th_trees, "random tree instances");
  th->add_option("--states", th_states, "max states per tree");
  th->add_option("--actions", th_actions, "max actions per tree");
  th->add_option("--depth", th_depth, "verification depth");
  th->add_option("--deep", th_deep, "deep-horizon instances");
  th->add_option("--bandits", th_bandits, "random bandit instances");
  th->add_option("--seed", th_seed, "rng seed");

  // plotdata
  auto* pl = app.add_subcommand("plotdata", "Convert metrics records into flat curve tables");
  std::string pl_in, pl_out;
  std::vector<std::string> pl_fields;
  pl->add_option("--in", pl_in, "metrics file (line-delimited records)")->required();
  pl->add_option("--out", pl_out, "csv output path")->required();
  pl->add_option("--fields", pl_fields, "columns for training metrics")->delimiter(',');

  // describe
  auto* de = app.add_subcommand("describe", "Summarize a checkpoint, config, or metrics file");
  std::string de_path;
  de->add_option("path", de_path, "file to describe")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(pre))
      return cmd_pretrain(pre_suite, pre_out, pre_seed, pre_hidden, pre_temp, pre_epochs,
                          pre_minibatch, pre_lr, pre_entropy, pre_holdout, pre_demos, pre_noise,
                          pre_samples, pre_seen);
    if (app.got_subcommand(fin)) {
      TrainConfig parsed = fcfg;  // flag values plus defaults
      json cj;
      bool w_given = fin->count("--window") > 0;
      if (!fin_config.empty()) {
        fcfg = TrainConfig{};
        cj = apply_config_file(fcfg, fin_config);
        // command-line flags take precedence over the config file
        auto keep = [&](const char* name, auto TrainConfig::* field) {
          if (fin->count(name)) fcfg.*field = parsed.*field;
        };
        keep("--epochs", &TrainConfig::ppo_epochs);
        keep("--minibatch", &TrainConfig::minibatch);
        keep("--gamma", &TrainConfig::gamma);
        keep("--lambda", &TrainConfig::lambda);
        keep("--clip-eps", &TrainConfig::clip_eps);
        keep("--actor-lr", &TrainConfig::actor_lr);
        keep("--critic-lr", &TrainConfig::critic_lr);
        keep("--value-coef", &TrainConfig::value_coef);
        keep("--kl-coef", &TrainConfig::kl_coef);
        keep("--max-grad-norm", &TrainConfig::max_grad_norm);
        keep("--temperature", &TrainConfig::temperature);
        keep("--seed-rollouts", &TrainConfig::N);
        keep("--set-size", &TrainConfig::n);
        keep("--sets", &TrainConfig::M);
        keep("--rollout-states", &TrainConfig::p);
        keep("--window", &TrainConfig::W);
        keep("--budget", &TrainConfig::B);
        keep("--lambda-ucb", &TrainConfig::lambda_ucb);
        keep("--ucb-reset", &TrainConfig::ucb_reset_per_iteration);
        keep("--iterations", &TrainConfig::iterations);
        keep("--seed", &TrainConfig::seed);
        w_given = w_given || cj.contains("W");
      }
      if (fin->count("--method") || !cj.contains("method")) fcfg.method = method_from(fin_method);
      if (fin->count("--ucb")) fcfg.ucb = fin_ucb;
      if (fin->count("--criterion") || !cj.contains("rollout_criterion")) {
        if (fin_criterion == "equal_spacing")
          fcfg.rollout_criterion = RolloutStateCriterion::equal_spacing;
        else if (fin_criterion == "policy_entropy")
          fcfg.rollout_criterion = RolloutStateCriterion::policy_entropy;
        else if (fin_criterion == "critic_loss")
          fcfg.rollout_criterion = RolloutStateCriterion::critic_loss;
        else throw ConfigError("unknown rollout criterion: " + fin_criterion);
      }
      if (!fin_diversity.empty()) {
        if (fin_diversity == "room_set") fcfg.diversity = DiversityKind::room_set;
        else if (fin_diversity == "node_set") fcfg.diversity = DiversityKind::node_set;
        else throw ConfigError("unknown diversity kind: " + fin_diversity);
      } else if (!cj.contains("diversity")) {
        EnvSuite peek = load_env_suite(fin_suite, fcfg.seed);
        fcfg.diversity = peek.rooms ? DiversityKind::room_set : DiversityKind::node_set;
        if (!w_given && !peek.rooms) fcfg.W = 0;
      }
      if (!fin_opt.empty()) {
        if (fin_opt == "sgd") fcfg.optimizer = OptKind::sgd;
        else if (fin_opt == "adam") fcfg.optimizer = OptKind::adam;
        else throw ConfigError("unknown optimizer: " + fin_opt);
      }
      return cmd_finetune(fin_ckpt, fin_out, fin_suite, fin_metrics, fcfg, fin_resume, fin_sweep,
                          fin_every);
    }
    if (app.got_subcommand(ev))
      return cmd_eval(ev_ckpt, ev_suite, ev_rollouts, ev_k, ev_out, ev_csv, ev_seed, ev_creativity,
                      ev_seen, ev_attempts, ev_perturb, ev_ptemp, ev_prolls, ev_proom, ev_probe,
                      ev_pN, ev_pn, ev_pM, ev_pp, ev_pB);
    if (app.got_subcommand(th))
      return cmd_theory(th_trees, th_states, th_actions, th_depth, th_deep, th_bandits, th_seed);
    if (app.got_subcommand(pl)) return cmd_plotdata(pl_in, pl_out, pl_fields);
    if (app.got_subcommand(de)) return cmd_describe(de_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
