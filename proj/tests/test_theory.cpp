#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "polyrl/theorysuite.hpp"

using namespace polyrl;
using Catch::Approx;

namespace {

// Two states: every root action leads to the absorbing terminal state, and
// only the all-zeros root tuple pays.
struct HandTree {
  TreeMDP tree;
  TreePolicy pi;
  TreeSetFn f;
  HandTree() {
    tree.states = 2;
    tree.actions = 2;
    tree.n = 2;
    tree.gamma = 0.3;
    tree.next = {{1, 1}, {1, 1}};
    tree.terminal = {false, true};
    tree.validate();
    pi = {{0.6, 0.4}, {1.0, 0.0}};
    f = [](int s, const std::vector<int>& t) {
      if (s != 0) return 0.0;
      for (int a : t)
        if (a != 0) return 0.0;
      return 1.0;
    };
  }
};

}  // namespace

TEST_CASE("tuple enumeration is exhaustive and lexicographic") {
  REQUIRE(tuple_count(3, 3) == 27);
  REQUIRE(tuple_count(2, 4) == 16);
  std::vector<std::vector<int>> seen;
  for_each_tuple(3, 2, [&](const std::vector<int>& t) { seen.push_back(t); });
  REQUIRE((long long)(seen.size()) == tuple_count(3, 2));
  REQUIRE(seen.front() == std::vector<int>{0, 0});
  REQUIRE(seen.back() == std::vector<int>{2, 2});
  REQUIRE(std::set<std::vector<int>>(seen.begin(), seen.end()).size() == seen.size());
}

TEST_CASE("tree validation rejects malformed instances") {
  HandTree h;
  REQUIRE_NOTHROW(h.tree.validate());

  TreeMDP bad = h.tree;
  bad.gamma = 0.5;  // gamma * n = 1
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = h.tree;
  bad.next[1][0] = 0;  // terminal state must self-loop
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = h.tree;
  bad.next[0][1] = 5;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = h.tree;
  bad.next[0].push_back(0);
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  REQUIRE_THROWS_AS(check_tree_policy(h.tree, {{0.5, 0.5}}), ConfigError);
  REQUIRE_THROWS_AS(check_tree_policy(h.tree, {{0.7, 0.7}, {1.0, 0.0}}), ConfigError);
  REQUIRE_THROWS_AS(check_tree_policy(h.tree, {{-0.2, 1.2}, {1.0, 0.0}}), ConfigError);
}

TEST_CASE("the geometric chain telescopes to its closed form") {
  GeometricRow row = run_geometric_check();
  REQUIRE(row.limit == Approx(2.5).margin(1e-15));
  REQUIRE(row.truncation_gap <= 1e-12);
  REQUIRE(row.limit_gap <= row.tail + 1e-12);
  REQUIRE(row.pass);
  REQUIRE(row.value < row.limit);

  GeometricRow other = run_geometric_check(0.4, 2, 25);
  REQUIRE(other.limit == Approx(5.0).margin(1e-12));
  REQUIRE(other.pass);
}

TEST_CASE("set values and action values agree on the hand-built tree") {
  HandTree h;
  for (int depth : {1, 3, 7}) {
    REQUIRE(set_value(h.tree, h.pi, h.f, depth, 0) == Approx(0.36).margin(1e-12));
    REQUIRE(set_value(h.tree, h.pi, h.f, depth, 1) == Approx(0.0).margin(1e-15));
    REQUIRE(set_q_value(h.tree, h.pi, h.f, {0, 0}, depth, 0) == Approx(1.0).margin(1e-12));
    REQUIRE(set_q_value(h.tree, h.pi, h.f, {0, 1}, depth, 0) == Approx(0.0).margin(1e-15));

    double expect = 0.0;
    for_each_tuple(h.tree.actions, h.tree.n, [&](const std::vector<int>& t) {
      double w = 1.0;
      for (int a : t) w *= h.pi[0][size_t(a)];
      expect += w * set_q_value(h.tree, h.pi, h.f, t, depth, 0);
    });
    REQUIRE(set_value(h.tree, h.pi, h.f, depth, 0) == Approx(expect).margin(1e-12));
  }
  REQUIRE_THROWS_AS(set_q_value(HandTree().tree, HandTree().pi, HandTree().f, {0}, 3, 0),
                    UsageError);
  REQUIRE_THROWS_AS(set_q_value(HandTree().tree, HandTree().pi, HandTree().f, {0, 9}, 3, 0),
                    UsageError);
}

TEST_CASE("the value decomposes over root tuples on random instances") {
  for (uint64_t seed : {11ull, 12ull, 13ull}) {
    TreeMDP tree = make_random_tree(5, 3, 2, 0.3, seed);
    TreePolicy pi = make_random_tree_policy(tree, seed + 100);
    TreeSetFn f = make_random_tree_objective(tree, seed);
    int depth = 6;
    double v = set_value(tree, pi, f, depth, 0);
    double expect = 0.0;
    for_each_tuple(tree.actions, tree.n, [&](const std::vector<int>& t) {
      double w = 1.0;
      for (int a : t) w *= pi[0][size_t(a)];
      if (w > 0.0) expect += w * set_q_value(tree, pi, f, t, depth, 0);
    });
    REQUIRE(v == Approx(expect).margin(1e-12));
  }
}

TEST_CASE("the performance difference vanishes at equal policies") {
  TreeMDP tree = make_random_tree(6, 3, 2, 0.3, 21);
  TreePolicy pi = make_random_tree_policy(tree, 5);
  TreeSetFn f = make_random_tree_objective(tree, 21);
  PerfDiff pd = verify_perf_diff(tree, pi, pi, f, 10);
  REQUIRE(pd.lhs == Approx(0.0).margin(1e-12));
  REQUIRE(pd.abs_diff < 1e-9);
}

TEST_CASE("the performance difference matches its occupancy form") {
  for (uint64_t seed : {31ull, 32ull, 33ull, 34ull}) {
    TreeMDP tree = make_random_tree(6, 3, 2, 0.3, seed);
    TreePolicy theta = make_random_tree_policy(tree, mix_seed(seed, 1));
    TreePolicy beta = make_random_tree_policy(tree, mix_seed(seed, 2));
    TreeSetFn f = make_random_tree_objective(tree, seed);
    PerfDiff pd = verify_perf_diff(tree, theta, beta, f, 12);
    REQUIRE(pd.abs_diff < 1e-9 + pd.tail);
  }
}

TEST_CASE("a zero objective zeroes every term") {
  TreeMDP tree = make_random_tree(5, 3, 2, 0.3, 41);
  TreePolicy theta = make_random_tree_policy(tree, 1);
  TreePolicy beta = make_random_tree_policy(tree, 2);
  TreeSetFn zero = [](int, const std::vector<int>&) { return 0.0; };
  PerfDiff pd = verify_perf_diff(tree, theta, beta, zero, 8);
  REQUIRE(pd.lhs == 0.0);
  REQUIRE(pd.rhs == 0.0);
  REQUIRE(pd.tail == 0.0);
}

TEST_CASE("the enumeration budget guard trips before the work happens") {
  TreeMDP tree = make_random_tree(32, 6, 4, 0.2, 7);
  TreePolicy pi = make_random_tree_policy(tree, 7);
  TreeSetFn f = make_random_tree_objective(tree, 7);
  REQUIRE_THROWS_AS(set_value(tree, pi, f, 300, 0), ConfigError);
}

TEST_CASE("bandit validation enforces the enumerable regime") {
  Bandit b;
  b.logits = {0.0, 0.0};
  b.rewards = {1.0, 0.0};
  b.n = 2;
  REQUIRE_NOTHROW(b.validate());
  Bandit one = b;
  one.logits = {0.0};
  one.rewards = {1.0};
  REQUIRE_THROWS_AS(one.validate(), ConfigError);
  Bandit wide = b;
  wide.logits.assign(9, 0.0);
  wide.rewards.assign(9, 0.0);
  REQUIRE_THROWS_AS(wide.validate(), ConfigError);
  Bandit mismatch = b;
  mismatch.rewards = {1.0};
  REQUIRE_THROWS_AS(mismatch.validate(), ConfigError);
  Bandit deep = b;
  deep.n = 5;
  REQUIRE_THROWS_AS(deep.validate(), ConfigError);
}

TEST_CASE("the bandit set objective multiplies mean reward and diversity") {
  Bandit b;
  b.logits = {0.0, 0.0};
  b.rewards = {1.0, 0.0};
  b.n = 2;
  auto f = bandit_fpoly(b);
  REQUIRE(f({0, 0}) == 0.0);
  REQUIRE(f({1, 1}) == 0.0);
  REQUIRE(f({0, 1}) == Approx(0.5).margin(1e-15));
  REQUIRE(f({1, 0}) == Approx(0.5).margin(1e-15));

  Bandit b3 = b;
  b3.n = 3;
  auto f3 = bandit_fpoly(b3);
  REQUIRE(f3({0, 0, 1}) == Approx((2.0 / 3.0) * (2.0 / 3.0)).margin(1e-15));
}

TEST_CASE("the exact logit gradient matches the closed form at n = 1") {
  Bandit b;
  b.logits = {0.3, -0.2, 0.1};
  b.rewards = {1.0, 0.0, 0.5};
  b.n = 1;
  auto f = [&](const std::vector<int>& t) { return b.rewards[size_t(t[0])]; };
  auto g = bandit_logit_gradient(b, f);
  auto p = b.probs();
  double er = 0.0;
  for (int a = 0; a < 3; ++a) er += p[size_t(a)] * b.rewards[size_t(a)];
  for (int a = 0; a < 3; ++a)
    REQUIRE(g[size_t(a)] == Approx(p[size_t(a)] * (b.rewards[size_t(a)] - er)).margin(1e-12));
}

TEST_CASE("the exact logit gradient matches finite differences") {
  Bandit b;
  b.logits = {0.4, -0.1, 0.2};
  b.rewards = {1.0, 0.0, 1.0};
  b.n = 2;
  auto f = bandit_fpoly(b);
  auto g = bandit_logit_gradient(b, f);
  auto objective = [&](const Bandit& bb) {
    auto p = bb.probs();
    double total = 0.0;
    for_each_tuple(bb.arms(), bb.n, [&](const std::vector<int>& t) {
      double w = 1.0;
      for (int a : t) w *= p[size_t(a)];
      total += w * f(t);
    });
    return total;
  };
  double h = 1e-6;
  for (int a = 0; a < 3; ++a) {
    Bandit up = b, down = b;
    up.logits[size_t(a)] += h;
    down.logits[size_t(a)] -= h;
    double numeric = (objective(up) - objective(down)) / (2 * h);
    REQUIRE(g[size_t(a)] == Approx(numeric).margin(1e-6));
  }
}

TEST_CASE("a constant objective moves nothing") {
  Bandit b = make_random_bandit(4, 2, 3);
  BanditSetFn flat = [](const std::vector<int>&) { return 0.4; };
  for (double g : bandit_logit_gradient(b, flat)) REQUIRE(std::abs(g) < 1e-12);
  REQUIRE(std::abs(entropy_delta_exact(b, flat, 1e-2)) < 1e-12);
  REQUIRE(std::abs(entropy_delta_approx(b, flat, 1e-2)) < 1e-12);
  REQUIRE(std::abs(scaffold_value(b, flat, {0, 1})) < 1e-12);
}

TEST_CASE("the first-order entropy prediction converges at the right rate") {
  auto rows = run_entropy_suite(5, 4, 3, 2026);
  REQUIRE(rows.size() == 5);
  for (const auto& row : rows) {
    REQUIRE(row.sign_ok);
    if (!row.underflow) {
      REQUIRE(row.ratio_ok);
      REQUIRE(row.ratio[0] == Approx(4.0).margin(0.5));
      REQUIRE(row.ratio[1] == Approx(4.0).margin(0.5));
    }
  }
  REQUIRE_THROWS_AS(run_entropy_suite(0, 4, 3, 1), UsageError);
}

TEST_CASE("scaffold values obey the homogeneous-reference bound") {
  auto rows = verify_prop_53({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}, {2, 3, 4});
  REQUIRE(rows.size() == 27);
  bool saw_bound_oracle = false, saw_negative = false;
  for (const auto& row : rows) {
    REQUIRE(row.bound_ok);
    REQUIRE(row.negativity_ok);
    if (row.n == 4 && row.p == 0.5) {
      saw_bound_oracle = true;
      REQUIRE(row.bound == Approx(0.25).margin(1e-15));
    }
    if (row.n == 4 && row.p == 0.8) {
      REQUIRE(row.negativity_applies);
      REQUIRE(row.lambda < 0.0);
      saw_negative = true;
    }
  }
  REQUIRE(saw_bound_oracle);
  REQUIRE(saw_negative);

  // Direct spot check away from the grid.
  Bandit b = make_single_reward_bandit(0.9, 4);
  REQUIRE(scaffold_value(b, bandit_fpoly(b), {0, 0, 0, 0}) < 0.0);
  REQUIRE_THROWS_AS(scaffold_value(b, bandit_fpoly(b), {0, 0}), UsageError);
  REQUIRE_THROWS_AS(scaffold_value(b, bandit_fpoly(b), {0, 0, 0, 9}), UsageError);
}

TEST_CASE("scaffold values clear the heterogeneous lower bound") {
  Prop54Row row = verify_prop_54(1, 0.2, 2);
  REQUIRE(row.bound == Approx(0.016).margin(1e-15));
  REQUIRE(row.applicable);
  REQUIRE(row.ok);
  REQUIRE(row.lambda > row.bound);

  Prop54Row none = verify_prop_54(0, 0.2, 2);
  REQUIRE_FALSE(none.applicable);
  REQUIRE(none.ok);

  Prop54Row both = verify_prop_54(2, 0.2, 2);
  REQUIRE(both.ok);
  REQUIRE(both.bound == Approx(0.032).margin(1e-15));
  REQUIRE(both.lambda > row.lambda);

  REQUIRE_THROWS_AS(verify_prop_54(3, 0.2, 2), ConfigError);
  REQUIRE_THROWS_AS(verify_prop_54(1, 0.5, 2), ConfigError);
  REQUIRE_THROWS_AS(verify_prop_54(-1, 0.2, 2), ConfigError);
}

TEST_CASE("the single-reward bandit places its masses as stated") {
  Bandit b = make_single_reward_bandit(0.4, 2);
  auto p = b.probs();
  REQUIRE(p[0] == Approx(0.4).margin(1e-12));
  for (int a = 1; a < 4; ++a) REQUIRE(p[size_t(a)] == Approx(0.2).margin(1e-12));
  REQUIRE(b.rewards == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  REQUIRE_THROWS_AS(make_single_reward_bandit(0.0, 2), ConfigError);
  REQUIRE_THROWS_AS(make_single_reward_bandit(1.0, 2), ConfigError);
}

TEST_CASE("the random-instance identity suite passes at both depths") {
  auto rows = run_perf_diff_suite(3, 6, 3, 2, 0.3, 10, 616);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) {
    REQUIRE(row.pass);
    REQUIRE(row.dual_pass);
    REQUIRE(row.abs_diff < row.tol);
  }
  for (const auto& row : run_deep_perf_diff(2, 616)) {
    REQUIRE(row.pass);
    REQUIRE(row.dual_pass);
  }
  REQUIRE_THROWS_AS(run_perf_diff_suite(0, 6, 3, 2, 0.3, 10, 1), UsageError);
}

TEST_CASE("the certified factorization instance reproduces its covariance") {
  Def55Result res = run_def55_check();
  REQUIRE(res.matches_expected);
  REQUIRE(res.report.pass);
  REQUIRE(res.report.cond1_cov == Approx(0.25).margin(1e-12));
  REQUIRE(res.report.cond2_min_neg_cov == Approx(0.12).margin(1e-12));
}
