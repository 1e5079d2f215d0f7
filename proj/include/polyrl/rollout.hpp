#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "polyrl/env.hpp"
#include "polyrl/policy.hpp"
#include "polyrl/rng.hpp"

namespace polyrl {

struct StepRecord {
  int32_t snapshot_id = -1;  // state before the action, -1 when not pooled
  Obs obs;
  int32_t action = 0;
  double reward = 0.0;
  double behavior_logprob = 0.0;
  double critic_value = 0.0;
  int32_t info = -1;
};

struct Trajectory {
  std::vector<StepRecord> steps;
  bool terminal = false;
  bool success = false;
  double ret = 0.0;               // gamma-discounted sum of step rewards
  int32_t start_info = -1;        // info at the trajectory's first state
  int32_t rollout_state_id = -1;  // -1: seed rollout; else pool id of the branch state
  uint64_t origin_seed = 0;

  int length() const { return int(steps.size()); }
  bool is_vine() const { return rollout_state_id >= 0; }

  // Set of nonnegative info labels touched (visited rooms / emitted nodes),
  // including the start state's label.
  std::vector<int32_t> signature() const {
    std::vector<int32_t> sig;
    if (start_info >= 0) sig.push_back(start_info);
    for (const auto& s : steps)
      if (s.info >= 0) sig.push_back(s.info);
    std::sort(sig.begin(), sig.end());
    sig.erase(std::unique(sig.begin(), sig.end()), sig.end());
    return sig;
  }
};

struct SnapshotPool {
  std::vector<EnvState> states;
  int32_t add(EnvState s) {
    states.push_back(std::move(s));
    return int32_t(states.size()) - 1;
  }
  const EnvState& at(int32_t id) const {
    if (id < 0 || size_t(id) >= states.size()) throw UsageError("bad snapshot id");
    return states[size_t(id)];
  }
  size_t size() const { return states.size(); }
};

// Runs the policy from the environment's current state to termination. The
// environment must already be positioned (reset or restored, non-terminal).
inline Trajectory run_episode(Environment& env, const PolicyModel& policy,
                              const CriticModel* critic, Rng& rng, SnapshotPool* pool,
                              double gamma = 1.0) {
  if (env.terminal()) throw UsageError("run_episode from a terminal state");
  Trajectory traj;
  traj.start_info = env.current_info();
  double disc = 1.0;
  while (!env.terminal()) {
    StepRecord rec;
    rec.obs = env.observation();
    if (pool) rec.snapshot_id = pool->add(env.snapshot());
    rec.critic_value = critic ? critic->value(rec.obs) : 0.0;
    auto [a, lp] = policy.sample_action(rec.obs, rng);
    rec.action = a;
    rec.behavior_logprob = lp;
    StepOutcome out = env.step(a);
    rec.reward = out.reward;
    rec.info = out.info;
    traj.ret += disc * out.reward;
    disc *= gamma;
    traj.steps.push_back(std::move(rec));
  }
  traj.terminal = true;
  traj.success = env.succeeded();
  return traj;
}

inline std::vector<Trajectory> collect_seed_rollouts(Environment& env, const PolicyModel& policy,
                                                     const CriticModel* critic, int N,
                                                     uint64_t root_seed, uint64_t iteration,
                                                     SnapshotPool& pool, double gamma = 1.0) {
  if (N < 1) throw UsageError("need at least one seed rollout");
  std::vector<Trajectory> out;
  out.reserve(N);
  for (int i = 0; i < N; ++i) {
    env.reset();
    uint64_t s = derive_seed(root_seed, {streams::seed_rollout, iteration, uint64_t(i)});
    Rng rng(s);
    Trajectory t = run_episode(env, policy, critic, rng, &pool, gamma);
    t.origin_seed = s;
    out.push_back(std::move(t));
  }
  return out;
}

enum class RolloutStateCriterion : uint32_t { equal_spacing = 0, policy_entropy = 1, critic_loss = 2 };

struct SelectedStates {
  std::vector<int> timesteps;  // strictly increasing, all non-terminal
  bool degenerate = false;     // trajectory shorter than p; fewer states selected
};

// Picks p branch timesteps along a trajectory. Equal spacing uses
// floor(k*T/(p+1)), k = 1..p; the alternative criteria rank timesteps by
// policy entropy or squared TD residual and keep the top p.
inline SelectedStates select_rollout_states(const Trajectory& traj, int p,
                                            RolloutStateCriterion crit = RolloutStateCriterion::equal_spacing,
                                            const PolicyModel* policy = nullptr,
                                            double gamma = 1.0) {
  if (p < 1) throw UsageError("need at least one rollout state");
  int T = traj.length();
  if (T < 1) throw UsageError("cannot select states on an empty trajectory");
  SelectedStates sel;
  if (T < p) {
    sel.degenerate = true;
    p = T;
  }
  if (crit == RolloutStateCriterion::equal_spacing) {
    for (int k = 1; k <= p; ++k) sel.timesteps.push_back(int(int64_t(k) * T / (p + 1)));
    return sel;
  }
  std::vector<std::pair<double, int>> scored;
  for (int t = 0; t < T; ++t) {
    double score;
    if (crit == RolloutStateCriterion::policy_entropy) {
      if (!policy) throw UsageError("entropy criterion needs the policy");
      score = policy->entropy_at(traj.steps[t].obs);
    } else {
      double next_v = t + 1 < T ? traj.steps[t + 1].critic_value : 0.0;
      double delta = traj.steps[t].reward + gamma * next_v - traj.steps[t].critic_value;
      score = delta * delta;
    }
    scored.push_back({score, t});
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int k = 0; k < p; ++k) sel.timesteps.push_back(scored[k].second);
  std::sort(sel.timesteps.begin(), sel.timesteps.end());
  return sel;
}

struct VineBatch {
  int32_t rollout_state_id = -1;
  int seed_index = -1;
  int timestep = -1;
  std::vector<Trajectory> vines;
};

inline VineBatch grow_vines(Environment& env, const PolicyModel& policy, const CriticModel* critic,
                            const EnvState& state, int32_t snapshot_id, int timestep, int N,
                            uint64_t root_seed, uint64_t iteration, uint64_t seed_index,
                            uint64_t state_index, double gamma = 1.0) {
  if (N < 1) throw UsageError("need at least one vine");
  VineBatch batch;
  batch.rollout_state_id = snapshot_id;
  batch.seed_index = int(seed_index);
  batch.timestep = timestep;
  batch.vines.reserve(N);
  for (int v = 0; v < N; ++v) {
    env.restore(state);
    uint64_t s = derive_seed(root_seed,
                             {streams::vine, iteration, seed_index, state_index, uint64_t(v)});
    Rng rng(s);
    Trajectory t = run_episode(env, policy, critic, rng, nullptr, gamma);
    t.rollout_state_id = snapshot_id;
    t.origin_seed = s;
    batch.vines.push_back(std::move(t));
  }
  return batch;
}

struct BudgetPlan {
  int N = 0;  // vines per rollout state, and seed rollout count
  int p = 0;  // rollout states per seed trajectory
  int n = 0;  // set size
  int B = 0;  // trajectory budget
  long long total = 0;          // N + p * N^2
  long long nominal_total = 0;  // N + N^2 (p - 1): the count when seed steps are not re-simulated
};

inline BudgetPlan plan_budget(int N, int p, int B, int n) {
  if (n < 1 || N <= n) throw ConfigError("need N > n >= 1 for set formation");
  if (p < 1) throw ConfigError("need p >= 1");
  if (B < N) throw ConfigError("budget below seed rollout count");
  BudgetPlan plan;
  plan.N = N;
  plan.p = p;
  plan.n = n;
  plan.B = B;
  plan.total = (long long)(N) + (long long)(p)*N * N;
  plan.nominal_total = (long long)(N) + (long long)(N)*N * (p - 1);
  if (plan.total > B) {
    std::ostringstream msg;
    msg << "trajectory budget infeasible: N + p*N^2 = " << plan.total << " > B = " << B
        << "; feasible (N, p) alternatives:";
    int listed = 0;
    for (int cn = N; cn > n && listed < 6; --cn)
      for (int cp = p; cp >= 1 && listed < 6; --cp) {
        long long tot = (long long)(cn) + (long long)(cp)*cn * cn;
        if (tot <= B) {
          msg << " (N=" << cn << ", p=" << cp << ", total=" << tot << ")";
          ++listed;
        }
      }
    if (listed == 0) msg << " none with N > " << n;
    throw ConfigError(msg.str());
  }
  return plan;
}

struct CollectionResult {
  std::vector<Trajectory> seeds;
  std::vector<VineBatch> batches;
  SnapshotPool pool;
  bool degenerate_episodes = false;  // some trajectory was shorter than p

  long long total_trajectories() const {
    long long t = (long long)(seeds.size());
    for (const auto& b : batches) t += (long long)(b.vines.size());
    return t;
  }
};

// Full vine-sampling pass: N seed rollouts, p branch states each, N vines per
// branch state. Every trajectory is independently reproducible from
// (root_seed, iteration, indices).
inline CollectionResult collect_vine_data(Environment& env, const PolicyModel& policy,
                                          const CriticModel* critic, const BudgetPlan& plan,
                                          uint64_t root_seed, uint64_t iteration,
                                          RolloutStateCriterion crit = RolloutStateCriterion::equal_spacing,
                                          double gamma = 1.0) {
  CollectionResult res;
  res.seeds = collect_seed_rollouts(env, policy, critic, plan.N, root_seed, iteration, res.pool, gamma);
  for (size_t i = 0; i < res.seeds.size(); ++i) {
    SelectedStates sel = select_rollout_states(res.seeds[i], plan.p, crit, &policy, gamma);
    if (sel.degenerate) res.degenerate_episodes = true;
    for (size_t k = 0; k < sel.timesteps.size(); ++k) {
      int t = sel.timesteps[k];
      int32_t snap_id = res.seeds[i].steps[t].snapshot_id;
      res.batches.push_back(grow_vines(env, policy, critic, res.pool.at(snap_id), snap_id, t,
                                       plan.N, root_seed, iteration, i, k, gamma));
    }
  }
  return res;
}

// Budget-matched plain episode collection for the non-vine baselines.
inline std::vector<Trajectory> collect_episodes(Environment& env, const PolicyModel& policy,
                                                const CriticModel* critic, long long count,
                                                uint64_t root_seed, uint64_t iteration,
                                                double gamma = 1.0) {
  if (count < 1) throw UsageError("need at least one episode");
  std::vector<Trajectory> out;
  out.reserve(size_t(count));
  for (long long i = 0; i < count; ++i) {
    env.reset();
    uint64_t s = derive_seed(root_seed, {streams::seed_rollout, iteration, uint64_t(i)});
    Rng rng(s);
    Trajectory t = run_episode(env, policy, critic, rng, nullptr, gamma);
    t.origin_seed = s;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace polyrl
