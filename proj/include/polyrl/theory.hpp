#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "polyrl/dist.hpp"
#include "polyrl/rng.hpp"
#include "polyrl/setobj.hpp"

namespace polyrl {

template <class F>
inline void for_each_tuple(int A, int n, F&& fn) {
  std::vector<int> tuple(n, 0);
  while (true) {
    fn(const_cast<const std::vector<int>&>(tuple));
    int pos = n - 1;
    while (pos >= 0 && ++tuple[pos] == A) tuple[pos--] = 0;
    if (pos < 0) return;
  }
}

// Deterministic finite MDP with n-way set branching: from state s a set of n
// actions is drawn iid from the policy, the set reward f(s, a_{1:n}) accrues,
// and each member continues independently at next[s][a_i]. Terminal states
// self-loop with f forced to zero.
struct TreeMDP {
  int states = 0;
  int actions = 0;
  int n = 1;
  double gamma = 0.3;
  std::vector<std::vector<int>> next;  // [state][action]
  std::vector<bool> terminal;

  void validate() const {
    if (states < 1 || states > 32) throw ConfigError("tree states must be in [1, 32]");
    if (actions < 1 || actions > 6) throw ConfigError("tree actions must be in [1, 6]");
    if (n < 1 || gamma <= 0.0 || gamma * n >= 1.0)
      throw ConfigError("need 0 < gamma * n < 1");
    if (int(next.size()) != states || int(terminal.size()) != states)
      throw ConfigError("tree table size mismatch");
    for (int s = 0; s < states; ++s) {
      if (int(next[s].size()) != actions) throw ConfigError("tree row size mismatch");
      for (int a = 0; a < actions; ++a) {
        if (next[s][a] < 0 || next[s][a] >= states) throw ConfigError("transition out of range");
        if (terminal[s] && next[s][a] != s) throw ConfigError("terminal states must self-loop");
      }
    }
  }
};

using TreePolicy = std::vector<std::vector<double>>;       // [state][action]
using TreeSetFn = std::function<double(int, const std::vector<int>&)>;

inline void check_tree_policy(const TreeMDP& tree, const TreePolicy& pi) {
  if (int(pi.size()) != tree.states) throw ConfigError("policy state count mismatch");
  for (const auto& row : pi) {
    if (int(row.size()) != tree.actions) throw ConfigError("policy action count mismatch");
    double s = 0;
    for (double p : row) {
      if (p < 0) throw ConfigError("negative probability");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("policy row does not sum to 1");
  }
}

inline long long tuple_count(int A, int n) {
  long long c = 1;
  for (int i = 0; i < n; ++i) c *= A;
  return c;
}

inline void check_tree_budget(const TreeMDP& tree, int depth) {
  double terms = double(tree.states) * (depth + 1) * double(tuple_count(tree.actions, tree.n));
  if (terms > 1e7)
    throw ConfigError("exact set-value enumeration too large; reduce depth or tree size");
}

inline double tree_f_sup(const TreeMDP& tree, const TreeSetFn& f) {
  double sup = 0.0;
  for (int s = 0; s < tree.states; ++s)
    for_each_tuple(tree.actions, tree.n,
                   [&](const std::vector<int>& t) { sup = std::max(sup, std::abs(f(s, t))); });
  return sup;
}

// Truncation bound for depth-capped set values: sum_{t>D} (gamma n)^t f_sup.
inline double tree_value_tail(const TreeMDP& tree, const TreeSetFn& f, int depth) {
  double gn = tree.gamma * tree.n;
  return std::pow(gn, depth + 1) / (1.0 - gn) * tree_f_sup(tree, f);
}

// Backward dynamic program over remaining depth:
// V[d](s) = E_{a_{1:n}}[ f(s, a_{1:n}) + gamma * sum_i V[d-1](next(s, a_i)) ].
inline std::vector<std::vector<double>> set_value_table(const TreeMDP& tree, const TreePolicy& pi,
                                                        const TreeSetFn& f, int depth) {
  tree.validate();
  check_tree_policy(tree, pi);
  if (depth < 0) throw UsageError("depth must be >= 0");
  check_tree_budget(tree, depth);
  std::vector<std::vector<double>> V(depth + 1, std::vector<double>(tree.states, 0.0));
  for (int d = 0; d <= depth; ++d)
    for (int s = 0; s < tree.states; ++s) {
      double acc = 0.0;
      for_each_tuple(tree.actions, tree.n, [&](const std::vector<int>& t) {
        double w = 1.0;
        for (int a : t) w *= pi[s][a];
        if (w == 0.0) return;
        double term = f(s, t);
        if (d > 0)
          for (int a : t) term += tree.gamma * V[d - 1][tree.next[s][a]];
        acc += w * term;
      });
      V[d][s] = acc;
    }
  return V;
}

inline double set_value(const TreeMDP& tree, const TreePolicy& pi, const TreeSetFn& f, int depth,
                        int state = 0) {
  return set_value_table(tree, pi, f, depth)[depth][state];
}

namespace detail {
// Top-down memoized recursion, deliberately a separate code path from the
// backward table so identity checks compare independent computations.
struct ForwardValue {
  const TreeMDP& tree;
  const TreePolicy& pi;
  const TreeSetFn& f;
  std::vector<std::vector<double>> memo;  // [depth][state]
  std::vector<std::vector<bool>> have;

  ForwardValue(const TreeMDP& t, const TreePolicy& p, const TreeSetFn& fn, int depth)
      : tree(t), pi(p), f(fn) {
    memo.assign(depth + 1, std::vector<double>(t.states, 0.0));
    have.assign(depth + 1, std::vector<bool>(t.states, false));
  }

  double q(int s, const std::vector<int>& tuple, int depth) {
    double total = f(s, tuple);
    if (depth > 0)
      for (int a : tuple) total += tree.gamma * value(tree.next[s][a], depth - 1);
    return total;
  }

  double value(int s, int depth) {
    if (have[depth][s]) return memo[depth][s];
    double acc = 0.0;
    for_each_tuple(tree.actions, tree.n, [&](const std::vector<int>& t) {
      double w = 1.0;
      for (int a : t) w *= pi[s][a];
      if (w > 0.0) acc += w * q(s, t, depth);
    });
    have[depth][s] = true;
    memo[depth][s] = acc;
    return acc;
  }
};
}  // namespace detail

inline double set_q_value(const TreeMDP& tree, const TreePolicy& pi, const TreeSetFn& f,
                          const std::vector<int>& root_actions, int depth, int state = 0) {
  tree.validate();
  check_tree_policy(tree, pi);
  if (int(root_actions.size()) != tree.n) throw UsageError("root action set must have n members");
  for (int a : root_actions)
    if (a < 0 || a >= tree.actions) throw UsageError("root action out of range");
  if (depth < 0) throw UsageError("depth must be >= 0");
  check_tree_budget(tree, depth);
  detail::ForwardValue fv(tree, pi, f, depth);
  return fv.q(state, root_actions, depth);
}

struct PerfDiff {
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_diff = 0.0;
  double tail = 0.0;  // analytic truncation allowance at this depth
};

// Set performance difference: lhs is the difference of depth-capped set
// values; rhs integrates the behavior policy's set advantage over the target
// policy's gamma^t-weighted branching occupancy. Equality is exact in the
// infinite-depth limit; the reported tail bounds the truncation error.
inline PerfDiff verify_perf_diff(const TreeMDP& tree, const TreePolicy& theta,
                                 const TreePolicy& beta, const TreeSetFn& f, int depth) {
  tree.validate();
  check_tree_policy(tree, theta);
  check_tree_policy(tree, beta);
  check_tree_budget(tree, depth);

  auto v_theta = set_value_table(tree, theta, f, depth);
  auto v_beta = set_value_table(tree, beta, f, depth);
  PerfDiff out;
  out.lhs = v_theta[depth][0] - v_beta[depth][0];

  // Mean set advantage of beta under theta's action draws, per state.
  detail::ForwardValue q_beta(tree, beta, f, depth);
  std::vector<double> abar(tree.states, 0.0);
  for (int s = 0; s < tree.states; ++s) {
    double eq = 0.0;
    for_each_tuple(tree.actions, tree.n, [&](const std::vector<int>& t) {
      double w = 1.0;
      for (int a : t) w *= theta[s][a];
      if (w > 0.0) eq += w * q_beta.q(s, t, depth);
    });
    abar[s] = eq - v_beta[depth][s];
  }

  // Branching occupancy: rho_{t+1}(s') = sum_s rho_t(s) * n * P_theta(s -> s').
  std::vector<double> rho(tree.states, 0.0);
  rho[0] = 1.0;
  double disc = 1.0;
  out.rhs = 0.0;
  for (int t = 0; t <= depth; ++t) {
    for (int s = 0; s < tree.states; ++s) out.rhs += disc * rho[s] * abar[s];
    std::vector<double> nxt(tree.states, 0.0);
    for (int s = 0; s < tree.states; ++s) {
      if (rho[s] == 0.0) continue;
      for (int a = 0; a < tree.actions; ++a)
        nxt[tree.next[s][a]] += rho[s] * tree.n * theta[s][a];
    }
    rho.swap(nxt);
    disc *= tree.gamma;
  }

  double gn = tree.gamma * tree.n;
  double f_sup = tree_f_sup(tree, f);
  double t_v = std::pow(gn, depth + 1) / (1.0 - gn) * f_sup;
  double a_sup = 2.0 * f_sup / (1.0 - gn);
  double geom = (1.0 - std::pow(gn, depth + 1)) / (1.0 - gn);
  out.tail = 2.0 * t_v + geom * 2.0 * t_v + std::pow(gn, depth + 1) / (1.0 - gn) * a_sup;
  out.abs_diff = std::abs(out.lhs - out.rhs);
  return out;
}

inline TreeMDP make_random_tree(int states, int actions, int n, double gamma, uint64_t seed) {
  TreeMDP tree;
  tree.states = states;
  tree.actions = actions;
  tree.n = n;
  tree.gamma = gamma;
  Rng rng = make_rng(seed, {streams::theory, 1});
  tree.terminal.assign(states, false);
  for (int s = 1; s < states; ++s) tree.terminal[s] = rng.uniform() < 0.2;
  tree.next.assign(states, std::vector<int>(actions, 0));
  for (int s = 0; s < states; ++s)
    for (int a = 0; a < actions; ++a)
      tree.next[s][a] = tree.terminal[s] ? s : int(rng.uniform_int(states));
  tree.validate();
  return tree;
}

inline TreePolicy make_random_tree_policy(const TreeMDP& tree, uint64_t seed) {
  Rng rng = make_rng(seed, {streams::theory, 2});
  TreePolicy pi(tree.states, std::vector<double>(tree.actions, 0.0));
  for (auto& row : pi) {
    double total = 0.0;
    for (double& p : row) {
      p = 0.05 + rng.uniform();
      total += p;
    }
    for (double& p : row) p /= total;
  }
  return pi;
}

// Pure hash-based objective in [0, 1], zero at terminal states.
inline TreeSetFn make_random_tree_objective(const TreeMDP& tree, uint64_t seed) {
  std::vector<bool> terminal = tree.terminal;
  return [terminal, seed](int s, const std::vector<int>& tuple) {
    if (terminal[size_t(s)]) return 0.0;
    uint64_t h = mix_seed(seed, 0xf00dull);
    h = mix_seed(h, uint64_t(s));
    for (int a : tuple) h = mix_seed(h, uint64_t(a) + 1);
    return double(h >> 11) * 0x1.0p-53;
  };
}

// ---- softmax bandits (horizon 1) -----------------------------------------

struct Bandit {
  std::vector<double> logits;
  std::vector<double> rewards;
  int n = 1;

  int arms() const { return int(logits.size()); }
  std::vector<double> probs() const { return softmax(logits); }
  void validate() const {
    if (arms() < 2 || arms() > 8) throw ConfigError("bandit needs 2..8 arms");
    if (int(rewards.size()) != arms()) throw ConfigError("reward table size mismatch");
    if (n < 1 || n > 4) throw ConfigError("set size must be in [1, 4]");
  }
};

using BanditSetFn = std::function<double(const std::vector<int>&)>;

// Working set objective: mean reward times distinct-fraction diversity with
// the all-identical override (singleton sets score 0 diversity).
inline BanditSetFn bandit_fpoly(const Bandit& bandit) {
  std::vector<double> rewards = bandit.rewards;
  return [rewards](const std::vector<int>& tuple) {
    double mean = 0.0;
    for (int a : tuple) mean += rewards[size_t(a)];
    mean /= double(tuple.size());
    std::vector<int> sorted = tuple;
    std::sort(sorted.begin(), sorted.end());
    int distinct = int(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
    double d = distinct == 1 ? 0.0 : double(distinct) / double(tuple.size());
    return mean * d;
  };
}

namespace detail {
struct BanditTables {
  int A = 0, n = 1;
  long long tuples = 0;
  std::vector<double> w;          // tuple probability under the bandit policy
  std::vector<double> f;          // objective per tuple
  std::vector<double> mean_logp;  // (1/n) sum_i log pi(a_i)
  std::vector<std::vector<int>> counts;  // per tuple, count of each action
};

inline BanditTables bandit_tables(const Bandit& bandit, const BanditSetFn& f) {
  bandit.validate();
  BanditTables t;
  t.A = bandit.arms();
  t.n = bandit.n;
  if (tuple_count(t.A, 2 * t.n) > 20000000)
    throw ConfigError("bandit enumeration too large");
  auto p = bandit.probs();
  std::vector<double> logp(p.size());
  for (size_t i = 0; i < p.size(); ++i) logp[i] = std::log(p[i]);
  for_each_tuple(t.A, t.n, [&](const std::vector<int>& tuple) {
    double w = 1.0, lp = 0.0;
    std::vector<int> c(t.A, 0);
    for (int a : tuple) {
      w *= p[size_t(a)];
      lp += logp[size_t(a)];
      c[size_t(a)]++;
    }
    t.w.push_back(w);
    t.f.push_back(f(tuple));
    t.mean_logp.push_back(lp / double(t.n));
    t.counts.push_back(std::move(c));
  });
  t.tuples = (long long)(t.w.size());
  return t;
}
}  // namespace detail

// Exact expected logit gradient of the set objective (score-function form):
// g_a = E[f * C_a] - n * pi_a * E[f], with C_a the count of a in the tuple.
inline std::vector<double> bandit_logit_gradient(const Bandit& bandit, const BanditSetFn& f) {
  auto t = detail::bandit_tables(bandit, f);
  auto p = bandit.probs();
  double ef = 0.0;
  std::vector<double> efc(t.A, 0.0);
  for (size_t i = 0; i < t.w.size(); ++i) {
    ef += t.w[i] * t.f[i];
    for (int a = 0; a < t.A; ++a) efc[size_t(a)] += t.w[i] * t.f[i] * t.counts[i][size_t(a)];
  }
  std::vector<double> g(t.A);
  for (int a = 0; a < t.A; ++a) g[size_t(a)] = efc[size_t(a)] - t.n * p[size_t(a)] * ef;
  return g;
}

// Entropy change after one exact-gradient ascent step on the logits.
inline double entropy_delta_exact(const Bandit& bandit, const BanditSetFn& f, double alpha) {
  auto g = bandit_logit_gradient(bandit, f);
  std::vector<double> z = bandit.logits;
  for (size_t a = 0; a < z.size(); ++a) z[a] += alpha * g[a];
  return entropy_of(softmax(z)) - entropy_of(bandit.probs());
}

// First-order entropy prediction: -alpha * Cov over tuples of the mean member
// log-probability against the inner covariance Cov(f, overlap with the outer
// tuple), both by literal exact enumeration.
inline double entropy_delta_approx(const Bandit& bandit, const BanditSetFn& f, double alpha) {
  auto t = detail::bandit_tables(bandit, f);
  double ef = 0.0;
  for (size_t i = 0; i < t.w.size(); ++i) ef += t.w[i] * t.f[i];

  // inner(outer) = Cov_{inner tuples}(f, sum_{i,j} 1{inner_i = outer_j})
  std::vector<double> inner(t.w.size(), 0.0);
  for (size_t o = 0; o < t.w.size(); ++o) {
    double e_fk = 0.0, e_k = 0.0;
    for (size_t i = 0; i < t.w.size(); ++i) {
      double overlap = 0.0;
      for (int a = 0; a < t.A; ++a)
        overlap += double(t.counts[i][size_t(a)]) * double(t.counts[o][size_t(a)]);
      e_fk += t.w[i] * t.f[i] * overlap;
      e_k += t.w[i] * overlap;
    }
    inner[o] = e_fk - ef * e_k;
  }

  double e_l = 0.0, e_in = 0.0, e_l_in = 0.0;
  for (size_t o = 0; o < t.w.size(); ++o) {
    e_l += t.w[o] * t.mean_logp[o];
    e_in += t.w[o] * inner[o];
    e_l_in += t.w[o] * t.mean_logp[o] * inner[o];
  }
  (void)alpha;
  return -alpha * (e_l_in - e_l * e_in);
}

// Scaffold value of a reference action set: covariance of the objective with
// the pair-counted overlap statistic, normalized by I = n * (max reference
// multiplicity). For a homogeneous reference this reduces to the statistic
// (1/n) sum_i 1{a'_i = a}; for a fully distinct reference to overlap / n.
inline double scaffold_value(const Bandit& bandit, const BanditSetFn& f,
                             const std::vector<int>& ref) {
  if (int(ref.size()) != bandit.n) throw UsageError("reference set must have n members");
  auto t = detail::bandit_tables(bandit, f);
  std::vector<int> ref_count(t.A, 0);
  for (int a : ref) {
    if (a < 0 || a >= t.A) throw UsageError("reference action out of range");
    ref_count[size_t(a)]++;
  }
  int max_mult = 0;
  for (int c : ref_count) max_mult = std::max(max_mult, c);
  double I = double(bandit.n) * double(max_mult);

  double ef = 0.0, ek = 0.0, efk = 0.0;
  for (size_t i = 0; i < t.w.size(); ++i) {
    double k = 0.0;
    for (int a = 0; a < t.A; ++a) k += double(t.counts[i][size_t(a)]) * double(ref_count[size_t(a)]);
    k /= I;
    ef += t.w[i] * t.f[i];
    ek += t.w[i] * k;
    efk += t.w[i] * t.f[i] * k;
  }
  return efk - ef * ek;
}

inline Bandit make_random_bandit(int A, int n, uint64_t seed) {
  Bandit b;
  b.n = n;
  Rng rng = make_rng(seed, {streams::theory, 3});
  b.logits.resize(A);
  for (double& z : b.logits) z = 2.0 * rng.uniform() - 1.0;
  b.rewards.assign(A, 0.0);
  int rewarding = 1 + int(rng.uniform_int(A - 1));
  std::vector<int32_t> order(A);
  for (int a = 0; a < A; ++a) order[a] = a;
  rng.shuffle(order);
  for (int i = 0; i < rewarding; ++i) b.rewards[size_t(order[i])] = 1.0;
  b.validate();
  return b;
}

// Bandit with one rewarding action of mass p; remaining mass spread over
// three zero-reward actions.
inline Bandit make_single_reward_bandit(double p, int n) {
  if (p <= 0.0 || p >= 1.0) throw ConfigError("need p in (0, 1)");
  Bandit b;
  b.n = n;
  b.logits = {std::log(p), std::log((1.0 - p) / 3.0), std::log((1.0 - p) / 3.0),
              std::log((1.0 - p) / 3.0)};
  b.rewards = {1.0, 0.0, 0.0, 0.0};
  b.validate();
  return b;
}

struct Prop53Row {
  double p = 0.0;
  int n = 0;
  double lambda = 0.0;
  double bound = 0.0;
  bool bound_ok = false;
  bool negativity_applies = false;
  bool negativity_ok = true;
};

// Homogeneous reference sets: Lambda <= sqrt(p(1-p)/n) always, and Lambda < 0
// once p exceeds (n-1)/n.
inline std::vector<Prop53Row> verify_prop_53(const std::vector<double>& ps,
                                             const std::vector<int>& ns) {
  std::vector<Prop53Row> rows;
  for (int n : ns)
    for (double p : ps) {
      Bandit b = make_single_reward_bandit(p, n);
      std::vector<int> ref(n, 0);
      Prop53Row row;
      row.p = p;
      row.n = n;
      row.lambda = scaffold_value(b, bandit_fpoly(b), ref);
      row.bound = std::sqrt(p * (1.0 - p) / double(n));
      row.bound_ok = row.lambda <= row.bound + 1e-12;
      row.negativity_applies = p > double(n - 1) / double(n);
      row.negativity_ok = !row.negativity_applies || row.lambda < 0.0;
      rows.push_back(row);
    }
  return rows;
}

struct Prop54Row {
  int q = 0;
  double p = 0.0;
  int n = 0;
  double lambda = 0.0;
  double bound = 0.0;
  bool applicable = true;  // q = 0 degenerates to a report-only row
  bool ok = false;
};

// Heterogeneous reference: n distinct actions of mass p each (plus a dump
// action holding the rest), q of them rewarding. Lambda > q p^n (1-p) / n.
inline Prop54Row verify_prop_54(int q, double p, int n) {
  if (q < 0 || q > n) throw ConfigError("need 0 <= q <= n");
  if (p <= 0.0 || p >= 1.0 / double(n)) throw ConfigError("need p in (0, 1/n)");
  Bandit b;
  b.n = n;
  b.logits.assign(size_t(n) + 1, std::log(p));
  b.logits[size_t(n)] = std::log(1.0 - n * p);
  b.rewards.assign(size_t(n) + 1, 0.0);
  for (int i = 0; i < q; ++i) b.rewards[size_t(i)] = 1.0;
  b.validate();
  std::vector<int> ref(n);
  for (int i = 0; i < n; ++i) ref[size_t(i)] = i;
  Prop54Row row;
  row.q = q;
  row.p = p;
  row.n = n;
  row.lambda = scaffold_value(b, bandit_fpoly(b), ref);
  row.bound = double(q) * std::pow(p, n) * (1.0 - p) / double(n);
  row.applicable = q > 0;
  row.ok = !row.applicable || row.lambda > row.bound;
  return row;
}

struct EntropyAccuracyRow {
  uint64_t tag = 0;
  int arms = 0, n = 0;
  double err[3] = {0, 0, 0};  // |exact - approx| at alpha, alpha/2, alpha/4
  double ratio[2] = {0, 0};
  bool ratio_ok = true;
  bool underflow = false;  // some error below 1e-14; ratios not meaningful
  double exact_small = 0.0, approx_small = 0.0;  // values at alpha = 1e-4
  bool sign_ok = false;
};

// First-order accuracy of the entropy prediction: halving alpha should
// quarter the error; signs must agree at small alpha.
inline EntropyAccuracyRow entropy_accuracy_check(const Bandit& bandit, uint64_t tag) {
  auto f = bandit_fpoly(bandit);
  EntropyAccuracyRow row;
  row.tag = tag;
  row.arms = bandit.arms();
  row.n = bandit.n;
  const double alphas[3] = {1e-2, 5e-3, 2.5e-3};
  for (int i = 0; i < 3; ++i)
    row.err[i] = std::abs(entropy_delta_exact(bandit, f, alphas[i]) -
                          entropy_delta_approx(bandit, f, alphas[i]));
  for (int i = 0; i < 2; ++i) {
    if (row.err[i] < 1e-14 || row.err[i + 1] < 1e-14) {
      row.underflow = true;
      continue;
    }
    row.ratio[i] = row.err[i] / row.err[i + 1];
    if (row.ratio[i] < 3.5 || row.ratio[i] > 4.5) row.ratio_ok = false;
  }
  row.exact_small = entropy_delta_exact(bandit, f, 1e-4);
  row.approx_small = entropy_delta_approx(bandit, f, 1e-4);
  row.sign_ok = std::abs(row.exact_small) < 1e-14 ||
                (row.exact_small > 0) == (row.approx_small > 0);
  return row;
}

}  // namespace polyrl
