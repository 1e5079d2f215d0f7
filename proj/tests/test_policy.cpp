#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "polyrl/policy.hpp"

using namespace polyrl;
using Catch::Approx;

namespace {

std::vector<Obs> tiny_universe() { return {{0}, {1}, {2}}; }

// Central finite differences of a scalar function of the parameters.
template <class F>
std::vector<double> numeric_grad(std::vector<double>& params, F f, double h = 1e-6) {
  std::vector<double> g(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    double keep = params[i];
    params[i] = keep + h;
    double up = f();
    params[i] = keep - h;
    double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double max_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("distribution helpers hit the closed-form values") {
  REQUIRE(entropy_of({0.25, 0.25, 0.25, 0.25}) == Approx(std::log(4.0)).margin(1e-12));
  REQUIRE(entropy_of({0.5, 0.5, 0.0, 0.0}) == Approx(std::log(2.0)).margin(1e-12));
  REQUIRE(entropy_of({1.0, 0.0, 0.0}) == Approx(0.0).margin(1e-12));
  REQUIRE(kl_divergence({1.0, 0.0, 0.0, 0.0}, {0.25, 0.25, 0.25, 0.25}) ==
          Approx(std::log(4.0)).margin(1e-12));
  REQUIRE(kl_divergence({0.3, 0.7}, {0.3, 0.7}) == Approx(0.0).margin(1e-12));
  // Large logits stay finite through the log-sum-exp path.
  auto p = softmax({1000.0, 1000.0, 999.0});
  REQUIRE(std::isfinite(p[0]));
  REQUIRE(p[0] + p[1] + p[2] == Approx(1.0).margin(1e-12));
}

TEST_CASE("zero logits give the uniform distribution") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 7, 1.0);
  auto p = pol.action_distribution({0});
  for (double v : p) REQUIRE(v == Approx(1.0 / 7).margin(1e-12));
  double sum = 0;
  for (double v : p) sum += v;
  REQUIRE(sum == Approx(1.0).margin(1e-12));
}

TEST_CASE("a dominant logit concentrates the distribution") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  pol.net.params[0] = 10.0;  // row for obs {0}, action 0
  REQUIRE(pol.action_distribution({0})[0] > 0.99);
  // Other rows are untouched.
  REQUIRE(pol.action_distribution({1})[0] == Approx(0.25).margin(1e-12));
}

TEST_CASE("temperature flattens the distribution monotonically") {
  std::vector<double> logits{2.0, 0.5, -1.0, 0.0};
  std::vector<double> uniform(4, 0.25);
  double prev = 1e9;
  for (double t : {1.0, 10.0, 100.0}) {
    double d = kl_divergence(softmax(logits, t), uniform);
    REQUIRE(d < prev);
    prev = d;
  }
}

TEST_CASE("adding a constant to a state's logits changes nothing") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 5, 1.0);
  Rng rng(3);
  for (auto& v : pol.net.params) v = rng.uniform() - 0.5;
  auto before = pol.action_distribution({1});
  for (int a = 0; a < 5; ++a) pol.net.params[5 + a] += 7.25;  // row of obs {1}
  auto after = pol.action_distribution({1});
  for (int a = 0; a < 5; ++a) REQUIRE(after[size_t(a)] == Approx(before[size_t(a)]).margin(1e-12));
}

TEST_CASE("tabular log-probability gradient is indicator minus probability") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 3, 1.0);
  pol.net.params = {0.3, -0.2, 0.9, 0, 0, 0, 0, 0, 0};
  auto p = pol.action_distribution({0});
  std::vector<double> grad(pol.param_count(), 0.0);
  pol.add_logprob_grad({0}, 1, 1.0, grad);
  REQUIRE(grad[0] == Approx(-p[0]).margin(1e-12));
  REQUIRE(grad[1] == Approx(1.0 - p[1]).margin(1e-12));
  REQUIRE(grad[2] == Approx(-p[2]).margin(1e-12));
  for (size_t i = 3; i < grad.size(); ++i) REQUIRE(grad[i] == 0.0);
}

TEST_CASE("score function has zero mean over actions") {
  PolicyModel tab = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  PolicyModel mlp = PolicyModel::mlp(FeatureKind::identity, 3, 6, 4, 1.0, 77);
  Rng rng(8);
  for (auto& v : tab.net.params) v = rng.uniform() - 0.5;
  Obs tab_obs{2}, mlp_obs{1, -2, 3};
  for (PolicyModel* pol : {&tab, &mlp}) {
    const Obs& obs = pol == &tab ? tab_obs : mlp_obs;
    auto p = pol->action_distribution(obs);
    std::vector<double> acc(pol->param_count(), 0.0);
    for (int a = 0; a < 4; ++a) pol->add_logprob_grad(obs, a, p[size_t(a)], acc);
    for (double v : acc) REQUIRE(std::abs(v) < 1e-10);
  }
}

TEST_CASE("mlp gradients match finite differences") {
  PolicyModel pol = PolicyModel::mlp(FeatureKind::identity, 4, 5, 3, 1.3, 42);
  std::vector<Obs> probes{{1, 0, -2, 3}, {0, 1, 1, -1}, {2, 2, 0, 1}};
  for (const Obs& obs : probes) {
    for (int action = 0; action < 3; ++action) {
      std::vector<double> analytic(pol.param_count(), 0.0);
      pol.add_logprob_grad(obs, action, 1.0, analytic);
      auto numeric = numeric_grad(pol.net.params, [&] { return pol.logprob(obs, action); });
      REQUIRE(max_rel_err(analytic, numeric) < 1e-4);
    }
    // Entropy gradient through the same chain.
    std::vector<double> ah(pol.param_count(), 0.0);
    pol.add_entropy_grad(obs, 1.0, ah);
    auto nh = numeric_grad(pol.net.params, [&] { return pol.entropy_at(obs); });
    REQUIRE(max_rel_err(ah, nh) < 1e-4);
    // KL(ref || policy) gradient.
    std::vector<double> ref{0.5, 0.2, 0.3};
    std::vector<double> ak(pol.param_count(), 0.0);
    pol.add_kl_grad(obs, ref, 1.0, ak);
    auto nk = numeric_grad(pol.net.params,
                           [&] { return kl_divergence(ref, pol.action_distribution(obs)); });
    REQUIRE(max_rel_err(ak, nk) < 1e-4);
  }
}

TEST_CASE("critic gradients match finite differences") {
  CriticModel critic = CriticModel::mlp(FeatureKind::identity, 4, 5, 9);
  Obs obs{1, -1, 2, 0};
  std::vector<double> analytic(critic.net.params.size(), 0.0);
  critic.add_value_grad(obs, 1.0, analytic);
  auto numeric = numeric_grad(critic.net.params, [&] { return critic.value(obs); });
  REQUIRE(max_rel_err(analytic, numeric) < 1e-4);
}

TEST_CASE("sampling follows the distribution and reports its log-probability") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  Rng rng(555);
  const int draws = 100000;
  std::vector<int> count(4, 0);
  for (int i = 0; i < draws; ++i) {
    auto [a, lp] = pol.sample_action({0}, rng);
    REQUIRE(lp <= 0.0);
    REQUIRE(lp == Approx(pol.logprob({0}, a)).margin(1e-12));
    count[size_t(a)]++;
  }
  double sigma = std::sqrt(0.25 * 0.75 / draws);
  for (int a = 0; a < 4; ++a)
    REQUIRE(std::abs(double(count[size_t(a)]) / draws - 0.25) < 3.0 * sigma + 1e-9);

  pol.net.params[2] = 10.0;  // near-deterministic on action 2
  int modal = 0;
  for (int i = 0; i < 2000; ++i)
    if (pol.sample_action({0}, rng).first == 2) modal++;
  REQUIRE(double(modal) / 2000.0 >= 0.99);
}

TEST_CASE("models round-trip through bytes exactly") {
  PolicyModel pol = PolicyModel::mlp(FeatureKind::identity, 4, 6, 3, 0.7, 13);
  ByteWriter w;
  pol.net.save(w);
  std::vector<uint8_t> bytes = w.take();
  ByteReader r(bytes);
  Net back = Net::load(r);
  REQUIRE(r.done());
  REQUIRE(back.params == pol.net.params);
  REQUIRE(back.temperature == pol.net.temperature);
  REQUIRE(back.out_dim == pol.net.out_dim);

  PolicyModel tab = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  tab.net.params[5] = -0.25;
  ByteWriter w2;
  tab.net.save(w2);
  std::vector<uint8_t> bytes2 = w2.take();
  ByteReader r2(bytes2);
  Net tback = Net::load(r2);
  REQUIRE(tback.universe == tab.net.universe);
  REQUIRE(tback.params == tab.net.params);

  ByteWriter w3;
  tab.net.save(w3);
  auto bytes3 = w3.take();
  bytes3[0] = 'X';
  ByteReader r3(bytes3);
  REQUIRE_THROWS_AS(Net::load(r3), SerializeError);
}

TEST_CASE("gradient clipping rescales to the cap and reports the raw norm") {
  std::vector<double> g{3.0, 4.0};
  double pre = Optimizer::clip_grad_norm(g, 0.5);
  REQUIRE(pre == Approx(5.0).margin(1e-12));
  REQUIRE(norm_of(g) == Approx(0.5).margin(1e-12));
  std::vector<double> small{0.1, 0.0};
  REQUIRE(Optimizer::clip_grad_norm(small, 0.5) == Approx(0.1).margin(1e-12));
  REQUIRE(small[0] == 0.1);
}

TEST_CASE("sgd and adam steps match hand calculations") {
  Optimizer sgd = Optimizer::sgd(0.1, 10.0);
  std::vector<double> params{1.0, 1.0};
  std::vector<double> grad{0.2, 0.0};
  sgd.step(params, grad);
  REQUIRE(params[0] == Approx(0.98).margin(1e-15));
  REQUIRE(params[1] == 1.0);

  // First Adam step: bias correction makes the step lr * g / (|g| + eps).
  Optimizer adam = Optimizer::adam(0.1, 10.0);
  std::vector<double> ap{0.0, 0.0};
  std::vector<double> ag{0.2, -0.01};
  adam.step(ap, ag);
  REQUIRE(ap[0] == Approx(-0.1 * 0.2 / (0.2 + 1e-8)).margin(1e-9));
  REQUIRE(ap[1] == Approx(0.1 * 0.01 / (0.01 + 1e-8)).margin(1e-9));

  std::vector<double> wrong{1.0};
  std::vector<double> g3{1.0, 2.0};
  REQUIRE_THROWS_AS(sgd.step(wrong, g3), UsageError);
}

TEST_CASE("optimizer state round-trips") {
  Optimizer adam = Optimizer::adam(0.05, 0.5);
  std::vector<double> p{0.3, -0.2, 0.1};
  for (int i = 0; i < 3; ++i) {
    std::vector<double> g{0.1, 0.2, -0.3};
    adam.step(p, g);
  }
  ByteWriter w;
  adam.save(w);
  Optimizer back;
  std::vector<uint8_t> bytes = w.take();
  ByteReader r(bytes);
  back.load(r);
  REQUIRE(back.m == adam.m);
  REQUIRE(back.v == adam.v);
  REQUIRE(back.t == adam.t);
  REQUIRE(back.kind == adam.kind);
}

TEST_CASE("behavior cloning overfits a single demonstration") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  Dataset data;
  data.samples.push_back({{1}, 2});
  PretrainConfig cfg;
  cfg.epochs = 400;
  cfg.lr = 0.05;
  cfg.entropy_coef = 0.0;
  cfg.seed = 5;
  PretrainReport rep = pretrain_bc(pol, data, cfg);
  REQUIRE(rep.epoch_losses.size() == 400);
  REQUIRE(pol.action_distribution({1})[2] > 0.9);
  REQUIRE(rep.final_train_loss < rep.epoch_losses.front());
}

TEST_CASE("behavior cloning fits a consistent mapping and holds out a split") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  Dataset data;
  for (int i = 0; i < 100; ++i) data.samples.push_back({{int32_t(i % 3)}, int32_t((i % 3) + 1)});
  PretrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.05;
  cfg.entropy_coef = 0.001;
  cfg.seed = 1;
  PretrainReport rep = pretrain_bc(pol, data, cfg);
  REQUIRE(rep.holdout_count == 20);
  REQUIRE(rep.train_count == 80);
  REQUIRE(rep.holdout_accuracy == 1.0);
  REQUIRE(rep.holdout_ce < 0.5);
  REQUIRE_THROWS_AS(pretrain_bc(pol, Dataset{}, cfg), ConfigError);
}

TEST_CASE("a large entropy bonus keeps the policy near uniform") {
  PolicyModel pol = PolicyModel::tabular(tiny_universe(), 4, 1.0);
  Dataset data;
  for (int i = 0; i < 40; ++i) data.samples.push_back({{0}, 1});
  PretrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.05;
  cfg.entropy_coef = 50.0;
  cfg.seed = 2;
  pretrain_bc(pol, data, cfg);
  REQUIRE(pol.entropy_at({0}) > 0.95 * std::log(4.0));
}
