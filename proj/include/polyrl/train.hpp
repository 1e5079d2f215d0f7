#pragma once
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyrl/advantage.hpp"
#include "polyrl/dist.hpp"
#include "polyrl/env.hpp"
#include "polyrl/policy.hpp"
#include "polyrl/rollout.hpp"
#include "polyrl/setobj.hpp"

namespace polyrl {

enum class Method : uint32_t { ppo = 0, poly_ppo = 1, reinforce = 2, ppo_vines = 3 };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::ppo: return "ppo";
    case Method::poly_ppo: return "poly_ppo";
    case Method::reinforce: return "reinforce";
    case Method::ppo_vines: return "ppo_vines";
  }
  return "?";
}
inline Method method_from(const std::string& s) {
  for (uint32_t m = 0; m <= 3; ++m)
    if (s == method_name(Method(m))) return Method(m);
  throw ConfigError("unknown method: " + s);
}

struct TrainConfig {
  Method method = Method::poly_ppo;
  bool ucb = false;
  int ppo_epochs = 2;  // K
  int minibatch = 64;
  double gamma = 1.0;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double actor_lr = 1e-5;
  double critic_lr = 1e-4;
  double value_coef = 0.5;
  double kl_coef = 0.01;
  double max_grad_norm = 0.5;
  double temperature = 1.0;
  int N = 8, n = 4, M = 4, p = 2;
  int W = 5;  // 5 on rooms, 0 on triangle
  int B = 136;
  double lambda_ucb = 1.0;  // active only when ucb is on
  bool ucb_reset_per_iteration = false;
  int iterations = 300;
  uint64_t seed = 0;
  RolloutStateCriterion rollout_criterion = RolloutStateCriterion::equal_spacing;
  DiversityKind diversity = DiversityKind::room_set;
  OptKind optimizer = OptKind::sgd;

  void validate() const {
    if (N <= n || n < 1) throw ConfigError("need N > n >= 1");
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("need gamma in (0, 1]");
    if (clip_eps <= 0.0) throw ConfigError("need clip epsilon > 0");
    if (M < 2) throw ConfigError("need M >= 2");
    if (ppo_epochs < 1 || minibatch < 1 || iterations < 1) throw ConfigError("bad schedule");
    if (W < 0 || p < 1 || B < N) throw ConfigError("bad vine parameters");
    if (actor_lr <= 0.0 || critic_lr <= 0.0 || temperature <= 0.0)
      throw ConfigError("bad learning parameters");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("need lambda in [0, 1]");
    if (lambda_ucb < 0.0 || value_coef < 0.0 || kl_coef < 0.0)
      throw ConfigError("coefficients must be >= 0");
  }
};

inline const std::vector<double>& kl_sweep_values() {
  static const std::vector<double> v{0.005, 0.01, 0.05, 0.1};
  return v;
}

struct IterationReport {
  int iteration = 0;
  int config_index = 0;
  long long trajectory_count = 0;
  double mean_return = 0.0;   // over full-episode trajectories
  double success_rate = 0.0;
  double policy_loss = 0.0;   // last epoch mean
  double value_loss = 0.0;
  double kl = 0.0;
  double entropy = 0.0;       // mean policy entropy at batch observations, post-update
  double mean_set_diversity = 0.0;
  AdvantageStats adv;
  std::vector<std::string> warnings;
};

// Clipped-surrogate loss over the minibatch records; accumulates the loss
// gradient w.r.t. policy parameters. Gradient flows through the unclipped
// branch whenever it attains the min.
inline double ppo_loss(const PolicyModel& policy, const std::vector<const Trajectory*>& trajs,
                       const std::vector<AdvantageRecord>& records,
                       const std::vector<size_t>& idx, double epsilon,
                       std::vector<double>& grad) {
  if (idx.empty()) throw UsageError("empty minibatch");
  double loss = 0.0;
  double inv = 1.0 / double(idx.size());
  for (size_t i : idx) {
    const auto& r = records[i];
    const auto& step = trajs[size_t(r.traj_id)]->steps[size_t(r.step)];
    double lp = policy.logprob(step.obs, step.action);
    double ratio = std::exp(lp - r.behavior_logprob);
    if (!std::isfinite(ratio))
      throw InternalError("non-finite importance ratio at trajectory " +
                          std::to_string(r.traj_id) + " step " + std::to_string(r.step));
    double clipped = std::min(std::max(ratio, 1.0 - epsilon), 1.0 + epsilon);
    double a = r.advantage;
    double surrogate = std::min(ratio * a, clipped * a);
    loss -= inv * surrogate;
    if (ratio * a <= clipped * a)
      policy.add_logprob_grad(step.obs, step.action, -inv * a * ratio, grad);
  }
  return loss;
}

// Mean KL(behavior || policy) over the minibatch observations; accumulates
// coef times its gradient.
inline double kl_penalty(const PolicyModel& behavior, const PolicyModel& policy,
                         const std::vector<const Trajectory*>& trajs,
                         const std::vector<AdvantageRecord>& records,
                         const std::vector<size_t>& idx, double coef,
                         std::vector<double>& grad) {
  if (idx.empty()) throw UsageError("empty minibatch");
  double total = 0.0;
  double inv = 1.0 / double(idx.size());
  for (size_t i : idx) {
    const auto& r = records[i];
    const Obs& obs = trajs[size_t(r.traj_id)]->steps[size_t(r.step)].obs;
    auto pb = behavior.action_distribution(obs);
    total += kl_divergence(pb, policy.action_distribution(obs));
    if (coef != 0.0) policy.add_kl_grad(obs, pb, coef * inv, grad);
  }
  return total * inv;
}

// Mean squared error of the critic against the stored regression targets;
// accumulates coef times its gradient.
inline double value_loss(const CriticModel& critic, const std::vector<const Trajectory*>& trajs,
                         const std::vector<AdvantageRecord>& records,
                         const std::vector<size_t>& idx, double coef,
                         std::vector<double>& grad) {
  if (idx.empty()) throw UsageError("empty minibatch");
  double loss = 0.0;
  double inv = 1.0 / double(idx.size());
  for (size_t i : idx) {
    const auto& r = records[i];
    const Obs& obs = trajs[size_t(r.traj_id)]->steps[size_t(r.step)].obs;
    double v = critic.value(obs);
    loss += inv * (v - r.ret_target) * (v - r.ret_target);
    if (coef != 0.0) critic.add_value_grad(obs, coef * inv * 2.0 * (v - r.ret_target), grad);
  }
  return loss;
}

// One ascent step on sum_t grad log pi * (R - mean R), batch-mean scaled.
inline void reinforce_update(PolicyModel& policy, const std::vector<Trajectory>& trajs, double lr,
                             double max_grad_norm) {
  if (trajs.size() < 2) throw UsageError("reinforce needs at least two trajectories");
  double baseline = 0.0;
  for (const auto& t : trajs) baseline += t.ret;
  baseline /= double(trajs.size());
  std::vector<double> grad(policy.param_count(), 0.0);
  double inv = 1.0 / double(trajs.size());
  for (const auto& t : trajs) {
    double w = (t.ret - baseline) * inv;
    if (w == 0.0) continue;
    for (const auto& s : t.steps) policy.add_logprob_grad(s.obs, s.action, -w, grad);
  }
  Optimizer opt = Optimizer::sgd(lr, max_grad_norm);
  opt.step(policy.net.params, grad);
}

struct TrainState {
  PolicyModel policy;
  CriticModel critic;
  VisitCounts counts;
  Optimizer actor_opt, critic_opt;
  uint64_t completed_iterations = 0;
};

// Checkpoints persist optimizer moments but not step sizes; those belong to
// the run config. Call this on any fresh or resumed state before training.
inline void apply_optimizer_config(TrainState& state, const TrainConfig& cfg) {
  state.actor_opt.kind = cfg.optimizer;
  state.actor_opt.lr = cfg.actor_lr;
  state.actor_opt.max_grad_norm = cfg.max_grad_norm;
  state.critic_opt.kind = cfg.optimizer;
  state.critic_opt.lr = cfg.critic_lr;
  state.critic_opt.max_grad_norm = cfg.max_grad_norm;
}

inline TrainState make_train_state(PolicyModel policy, CriticModel critic, const TrainConfig& cfg) {
  TrainState st{std::move(policy), std::move(critic), {}, {}, {}, 0};
  apply_optimizer_config(st, cfg);
  return st;
}

// One full training iteration of the configured method on the iteration's
// round-robin environment. The behavior policy is the parameter snapshot at
// entry; it is refreshed implicitly by collecting the next iteration's data
// with the then-current parameters.
inline IterationReport run_iteration(TrainState& state, const std::vector<Environment*>& envs,
                                     const TrainConfig& cfg, uint64_t iteration,
                                     const DiversityFunction* diversity_override = nullptr) {
  cfg.validate();
  if (envs.empty()) throw UsageError("empty environment suite");
  IterationReport rep;
  rep.iteration = int(iteration);
  rep.config_index = int(iteration % envs.size());
  Environment& env = *envs[size_t(rep.config_index)];

  if (cfg.ucb && cfg.ucb_reset_per_iteration) state.counts.counts.clear();
  double ucb_coef = cfg.ucb ? cfg.lambda_ucb : 0.0;

  PolicyModel behavior = state.policy;  // snapshot for ratios and the KL penalty

  if (cfg.method == Method::reinforce) {
    auto trajs = collect_episodes(env, behavior, nullptr, cfg.B, cfg.seed, iteration, cfg.gamma);
    rep.trajectory_count = (long long)(trajs.size());
    double baseline = 0.0;
    for (const auto& t : trajs) baseline += t.ret;
    baseline /= double(trajs.size());
    for (const auto& t : trajs) {
      rep.mean_return += t.ret / double(trajs.size());
      rep.success_rate += t.success ? 1.0 / double(trajs.size()) : 0.0;
      for (const auto& s : t.steps)
        rep.policy_loss -= (t.ret - baseline) * s.behavior_logprob / double(trajs.size());
    }
    reinforce_update(state.policy, trajs, cfg.actor_lr, cfg.max_grad_norm);
    std::vector<const Trajectory*> ptrs;
    for (const auto& t : trajs) ptrs.push_back(&t);
    if (cfg.ucb) update_visit_counts(state.counts, ptrs, state.policy.action_count());
    double h = 0.0;
    long long hs = 0;
    for (const auto& t : trajs)
      for (const auto& s : t.steps) {
        h += state.policy.entropy_at(s.obs);
        hs++;
      }
    rep.entropy = hs ? h / double(hs) : 0.0;
    return rep;
  }

  // data collection
  CollectionResult vines;
  std::vector<Trajectory> episodes;
  AssembledBatch batch;
  bool vine_method = cfg.method == Method::poly_ppo || cfg.method == Method::ppo_vines;
  if (vine_method) {
    BudgetPlan plan = plan_budget(cfg.N, cfg.p, cfg.B, cfg.n);
    vines = collect_vine_data(env, behavior, &state.critic, plan, cfg.seed, iteration,
                              cfg.rollout_criterion, cfg.gamma);
    if (vines.degenerate_episodes)
      rep.warnings.push_back("episode shorter than p; fewer rollout states selected");
    if (vines.total_trajectories() > cfg.B)
      throw InternalError("collected trajectory count exceeds budget");

    DiversityFunction div;
    if (diversity_override) div = *diversity_override;
    else div.kind = cfg.diversity;

    std::vector<FormedSets> formed;
    std::vector<std::vector<double>> scores;
    double div_sum = 0.0;
    long long div_count = 0;
    for (size_t bi = 0; bi < vines.batches.size(); ++bi) {
      Rng rng = make_rng(cfg.seed, {streams::form_sets, iteration, uint64_t(bi)});
      FormedSets fs = form_sets(vines.batches[bi], cfg.n, cfg.M, rng);
      if (fs.repetition_fallback)
        rep.warnings.push_back("fewer distinct sets than M; sampling with repetition");
      if (cfg.method == Method::poly_ppo)
        scores.push_back(score_sets(vines.batches[bi], fs, div));
      else
        scores.push_back(score_sets_mean_return(vines.batches[bi], fs));
      for (const auto& set : fs.sets) {
        std::vector<Signature> sigs;
        for (int m : set.members) sigs.push_back(vines.batches[bi].vines[size_t(m)].signature());
        div_sum += signature_set_diversity(sigs);
        div_count++;
      }
      formed.push_back(std::move(fs));
    }
    rep.mean_set_diversity = div_count ? div_sum / double(div_count) : 0.0;
    batch = assemble_advantages(vines, formed, scores, cfg.W, cfg.gamma, cfg.lambda, state.counts,
                                ucb_coef);
    rep.trajectory_count = vines.total_trajectories();
    for (const auto& t : vines.seeds) {
      rep.mean_return += t.ret / double(vines.seeds.size());
      rep.success_rate += t.success ? 1.0 / double(vines.seeds.size()) : 0.0;
    }
  } else {
    episodes = collect_episodes(env, behavior, &state.critic, cfg.B, cfg.seed, iteration, cfg.gamma);
    batch = assemble_gae_advantages(episodes, cfg.gamma, cfg.lambda, state.counts, ucb_coef);
    rep.trajectory_count = (long long)(episodes.size());
    for (const auto& t : episodes) {
      rep.mean_return += t.ret / double(episodes.size());
      rep.success_rate += t.success ? 1.0 / double(episodes.size()) : 0.0;
    }
  }
  if (batch.stats.norm.degenerate)
    rep.warnings.push_back("zero-variance advantage batch left unnormalized");
  rep.adv = batch.stats;
  if (cfg.ucb) update_visit_counts(state.counts, batch.trajs, state.policy.action_count());

  // K epochs of minibatch updates
  std::vector<size_t> order(batch.records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> actor_grad(state.policy.param_count(), 0.0);
  std::vector<double> critic_grad(state.critic.param_count(), 0.0);
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, {streams::shuffle, iteration, uint64_t(epoch)});
    rng.shuffle(order);
    double ep_pol = 0.0, ep_val = 0.0, ep_kl = 0.0;
    long long nb = 0;
    for (size_t b = 0; b < order.size(); b += size_t(cfg.minibatch)) {
      size_t end = std::min(order.size(), b + size_t(cfg.minibatch));
      std::vector<size_t> idx(order.begin() + b, order.begin() + end);
      std::fill(actor_grad.begin(), actor_grad.end(), 0.0);
      std::fill(critic_grad.begin(), critic_grad.end(), 0.0);
      double lp = ppo_loss(state.policy, batch.trajs, batch.records, idx, cfg.clip_eps, actor_grad);
      double lk = kl_penalty(behavior, state.policy, batch.trajs, batch.records, idx, cfg.kl_coef,
                             actor_grad);
      double lv = value_loss(state.critic, batch.trajs, batch.records, idx, cfg.value_coef,
                             critic_grad);
      if (!std::isfinite(lp) || !std::isfinite(lk) || !std::isfinite(lv))
        throw InternalError("non-finite loss at iteration " + std::to_string(iteration));
      state.actor_opt.step(state.policy.net.params, actor_grad);
      state.critic_opt.step(state.critic.net.params, critic_grad);
      ep_pol += lp;
      ep_val += lv;
      ep_kl += lk;
      nb++;
    }
    rep.policy_loss = ep_pol / double(nb);
    rep.value_loss = ep_val / double(nb);
    rep.kl = ep_kl / double(nb);
  }

  double h = 0.0;
  for (const auto& r : batch.records)
    h += state.policy.entropy_at(batch.trajs[size_t(r.traj_id)]->steps[size_t(r.step)].obs);
  rep.entropy = batch.records.empty() ? 0.0 : h / double(batch.records.size());
  return rep;
}

inline nlohmann::json report_to_json(const IterationReport& rep, const TrainConfig& cfg) {
  nlohmann::json j;
  j["schema"] = "polyrl.train.v1";
  j["iteration"] = rep.iteration;
  j["method"] = method_name(cfg.method);
  j["ucb"] = cfg.ucb;
  j["config_index"] = rep.config_index;
  j["trajectories"] = rep.trajectory_count;
  j["budget"] = cfg.B;
  j["mean_return"] = rep.mean_return;
  j["success_rate"] = rep.success_rate;
  j["policy_loss"] = rep.policy_loss;
  j["value_loss"] = rep.value_loss;
  j["kl"] = rep.kl;
  j["entropy"] = rep.entropy;
  j["mean_set_diversity"] = rep.mean_set_diversity;
  j["adv"] = {{"gae_count", rep.adv.gae_count},   {"gae_mean", rep.adv.gae_mean},
              {"gae_std", rep.adv.gae_std},       {"poly_count", rep.adv.poly_count},
              {"poly_mean", rep.adv.poly_mean},   {"poly_std", rep.adv.poly_std},
              {"norm_mean", rep.adv.norm.mean},   {"norm_std", rep.adv.norm.stddev},
              {"norm_degenerate", rep.adv.norm.degenerate}};
  j["warnings"] = rep.warnings;
  return j;
}

constexpr char kCheckpointMagic[] = "PLRLCKP1";

inline std::vector<uint8_t> save_checkpoint_bytes(const TrainState& state, uint64_t root_seed) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.u64(root_seed);
  w.u64(state.completed_iterations);
  state.policy.net.save(w);
  state.critic.net.save(w);
  state.counts.save(w);
  state.actor_opt.save(w);
  state.critic_opt.save(w);
  return w.take();
}

inline TrainState load_checkpoint_bytes(const std::vector<uint8_t>& bytes, uint64_t* root_seed) {
  ByteReader r(bytes);
  char magic[8];
  r.bytes(magic, 8);
  if (std::string(magic, 8) != kCheckpointMagic) throw SerializeError("bad checkpoint magic");
  uint64_t seed = r.u64();
  if (root_seed) *root_seed = seed;
  TrainState st{{Net{}}, {Net{}}, {}, {}, {}, 0};
  st.completed_iterations = r.u64();
  st.policy.net = Net::load(r);
  st.critic.net = Net::load(r);
  st.counts.load(r);
  st.actor_opt.load(r);
  st.critic_opt.load(r);
  if (!r.done()) throw SerializeError("trailing bytes in checkpoint");
  return st;
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw UsageError("write failed: " + path);
}

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Iterates the configured method from the state's completed iteration count
// to cfg.iterations, emitting one JSON line per iteration.
inline std::vector<IterationReport> train_run(TrainState& state,
                                              const std::vector<Environment*>& envs,
                                              const TrainConfig& cfg,
                                              std::ostream* metrics = nullptr) {
  cfg.validate();
  std::vector<IterationReport> reports;
  for (uint64_t it = state.completed_iterations; it < uint64_t(cfg.iterations); ++it) {
    IterationReport rep = run_iteration(state, envs, cfg, it);
    state.completed_iterations = it + 1;
    if (metrics) *metrics << report_to_json(rep, cfg).dump() << "\n";
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace polyrl
