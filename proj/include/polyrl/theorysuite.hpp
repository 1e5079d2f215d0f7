#pragma once
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "polyrl/theory.hpp"

namespace polyrl {

struct PerfDiffRow {
  int index = 0;
  int states = 0, actions = 0, depth = 0;
  double lhs = 0, rhs = 0, abs_diff = 0, tol = 0;
  double dual_gap = 0;
  bool pass = false, dual_pass = false;
};

// Random-instance check of the set-level performance-difference identity,
// with the value/action-value consistency check on the same instance.
inline std::vector<PerfDiffRow> run_perf_diff_suite(int count, int max_states, int max_actions,
                                                    int n, double gamma, int depth, uint64_t seed,
                                                    double slack = 1e-9, double dual_tol = 1e-12) {
  if (count < 1 || max_states < 2 || max_actions < 2) throw UsageError("bad suite parameters");
  std::vector<PerfDiffRow> rows;
  for (int i = 0; i < count; ++i) {
    uint64_t s_i = mix_seed(seed, uint64_t(i));
    Rng pick = make_rng(s_i, {streams::theory, 0});
    int states = 2 + int(pick.uniform_int(uint64_t(max_states - 1)));
    int actions = 2 + int(pick.uniform_int(uint64_t(max_actions - 1)));
    TreeMDP tree = make_random_tree(states, actions, n, gamma, s_i);
    TreePolicy theta = make_random_tree_policy(tree, mix_seed(s_i, 1));
    TreePolicy beta = make_random_tree_policy(tree, mix_seed(s_i, 2));
    TreeSetFn f = make_random_tree_objective(tree, s_i);
    PerfDiff pd = verify_perf_diff(tree, theta, beta, f, depth);
    PerfDiffRow row;
    row.index = i;
    row.states = states;
    row.actions = actions;
    row.depth = depth;
    row.lhs = pd.lhs;
    row.rhs = pd.rhs;
    row.abs_diff = pd.abs_diff;
    row.tol = slack + pd.tail;
    row.pass = pd.abs_diff < row.tol;

    double v = set_value(tree, beta, f, depth, 0);
    double q_mean = 0.0;
    for_each_tuple(actions, n, [&](const std::vector<int>& tuple) {
      double w = 1.0;
      for (int a : tuple) w *= beta[0][size_t(a)];
      if (w == 0.0) return;
      q_mean += w * set_q_value(tree, beta, f, tuple, depth, 0);
    });
    row.dual_gap = std::fabs(v - q_mean);
    row.dual_pass = row.dual_gap <= dual_tol;
    rows.push_back(row);
  }
  return rows;
}

struct GeometricRow {
  double value = 0, partial = 0, limit = 2.5;
  double truncation_gap = 0, limit_gap = 0, tail = 0;
  bool pass = false;
};

// Single-state chain with f identically 1: the set value telescopes to the
// partial geometric sum of gamma*n, approaching 1/(1-gamma*n).
inline GeometricRow run_geometric_check(double gamma = 0.3, int n = 2, int depth = 20) {
  TreeMDP tree;
  tree.states = 1;
  tree.actions = 2;
  tree.n = n;
  tree.gamma = gamma;
  tree.next = {{0, 0}};
  tree.terminal = {false};
  tree.validate();
  TreePolicy pi{{0.5, 0.5}};
  TreeSetFn f = [](int, const std::vector<int>&) { return 1.0; };
  GeometricRow row;
  row.value = set_value(tree, pi, f, depth, 0);
  double r = gamma * double(n);
  row.partial = (1.0 - std::pow(r, double(depth + 1))) / (1.0 - r);
  row.limit = 1.0 / (1.0 - r);
  row.tail = std::pow(r, double(depth + 1)) / (1.0 - r);
  row.truncation_gap = std::fabs(row.value - row.partial);
  row.limit_gap = std::fabs(row.value - row.limit);
  row.pass = row.truncation_gap <= 1e-12 && row.limit_gap <= row.tail + 1e-12;
  return row;
}

// At large depth the analytic tail is far below the generic slack, so the
// identity must hold essentially to machine precision.
inline std::vector<PerfDiffRow> run_deep_perf_diff(int count, uint64_t seed, int depth = 55) {
  return run_perf_diff_suite(count, 8, 3, 2, 0.3, depth, seed, 1e-12, 1e-12);
}

inline std::vector<EntropyAccuracyRow> run_entropy_suite(int count, int max_arms, int max_n,
                                                         uint64_t seed) {
  if (count < 1) throw UsageError("need at least one bandit");
  if (max_arms < 2 || max_n < 2) throw UsageError("need at least two arms and n >= 2");
  std::vector<EntropyAccuracyRow> rows;
  for (int i = 0; i < count; ++i) {
    uint64_t s_i = mix_seed(seed, 0x3000 + uint64_t(i));
    Rng pick = make_rng(s_i, {streams::theory, 4});
    int arms = 2 + int(pick.uniform_int(uint64_t(max_arms - 1)));
    int n = 2 + (max_n > 2 ? int(pick.uniform_int(uint64_t(max_n - 1))) : 0);
    Bandit b = make_random_bandit(arms, n, s_i);
    rows.push_back(entropy_accuracy_check(b, uint64_t(i)));
  }
  return rows;
}

struct Def55Result {
  ValidateReport report;
  double expected_cond1 = 0.25;
  bool matches_expected = false;
};

// Certified instance: three arms with masses (0.5, 0.3, 0.2), only the first
// rewarding, n = 3.
inline Def55Result run_def55_check() {
  std::vector<double> probs{0.5, 0.3, 0.2};
  std::vector<double> rets{1.0, 0.0, 0.0};
  Def55Result out;
  out.report = validate_polychromic(factor_mean_return(), factor_signature_diversity(), probs,
                                    rets, 3, ValidateMode::enumerate);
  out.matches_expected = std::fabs(out.report.cond1_cov - out.expected_cond1) <= 1e-12;
  return out;
}

}  // namespace polyrl
