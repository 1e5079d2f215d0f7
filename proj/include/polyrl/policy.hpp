#pragma once
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "polyrl/dist.hpp"
#include "polyrl/env.hpp"
#include "polyrl/rng.hpp"
#include "polyrl/serial.hpp"

namespace polyrl {

inline std::string obs_key(const Obs& obs) {
  ByteWriter w;
  w.u32(uint32_t(obs.size()));
  for (int32_t v : obs) w.i64(v);
  const auto& b = w.data();
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

enum class ParamKind : uint32_t { tabular = 0, mlp = 1 };
enum class FeatureKind : uint32_t { identity = 0, rooms = 1 };

// Sparse one-hot encoding of a rooms observation:
// [x(16), y(16), dir(4), carried kind(5), carried color(7),
//  mission kind(3), c1(6), k1(4), c2(7), k2(5), 25 window cells x 29 codes].
constexpr int kRoomsFeatureDim = 16 + 16 + 4 + 5 + 7 + 3 + 6 + 4 + 7 + 5 + 25 * 29;

inline void decode_mission_id(int32_t id, int& mk, int& c1, int& k1, int& c2, int& k2) {
  c2 = 0;
  k2 = 0;
  if (id < 24) {
    mk = 0;
  } else if (id < 48) {
    mk = 1;
    id -= 24;
  } else {
    mk = 2;
    id -= 48;
    int second = id % 24;
    id /= 24;
    c2 = second / 4 + 1;
    k2 = second % 4 + 1;
  }
  c1 = id / 4 + 1;
  k1 = id % 4 + 1;
}

inline std::vector<std::pair<int, double>> encode_features(FeatureKind feat, const Obs& obs,
                                                           int in_dim) {
  std::vector<std::pair<int, double>> f;
  if (feat == FeatureKind::identity) {
    if (int(obs.size()) != in_dim) throw UsageError("identity features: observation length mismatch");
    f.reserve(obs.size());
    for (size_t i = 0; i < obs.size(); ++i) f.push_back({int(i), double(obs[i])});
    return f;
  }
  if (obs.size() != 31) throw UsageError("rooms features expect a 31-word observation");
  if (in_dim != kRoomsFeatureDim) throw UsageError("rooms features: dimension mismatch");
  f.reserve(35);
  int off = 0;
  auto one_hot = [&](int value, int width) {
    if (value < 0) value = 0;
    if (value >= width) value = width - 1;
    f.push_back({off + value, 1.0});
    off += width;
  };
  one_hot(obs[0], 16);
  one_hot(obs[1], 16);
  one_hot(obs[2], 4);
  one_hot(obs[3], 5);
  one_hot(obs[4], 7);
  int mk, c1, k1, c2, k2;
  decode_mission_id(obs[5], mk, c1, k1, c2, k2);
  one_hot(mk, 3);
  one_hot(c1 - 1, 6);
  one_hot(k1 - 1, 4);
  one_hot(c2, 7);
  one_hot(k2, 5);
  for (int cell = 0; cell < 25; ++cell) one_hot(obs[6 + cell], 29);
  return f;
}

// Function approximator producing raw (pre-temperature) output logits, either
// a lookup table over an enumerated observation universe or a one-hidden-layer
// tanh network over encoded features. Gradients flow through
// add_logit_cotangent: pass dL/d(raw logits) and it accumulates dL/d(params).
class Net {
 public:
  ParamKind kind = ParamKind::tabular;
  FeatureKind feat = FeatureKind::identity;
  int in_dim = 0, hidden = 0, out_dim = 0;
  double temperature = 1.0;
  std::vector<double> params;
  std::vector<Obs> universe;

  static Net tabular(std::vector<Obs> universe, int out_dim, double temperature) {
    if (universe.empty()) throw UsageError("tabular net needs a nonempty observation universe");
    if (out_dim < 1) throw UsageError("output dimension must be >= 1");
    Net n;
    n.kind = ParamKind::tabular;
    n.out_dim = out_dim;
    n.temperature = temperature;
    n.universe = std::move(universe);
    n.params.assign(n.universe.size() * size_t(out_dim), 0.0);
    n.build_index();
    return n;
  }

  static Net mlp(FeatureKind feat, int in_dim, int hidden, int out_dim, double temperature,
                 uint64_t seed, bool zero_output = false) {
    if (in_dim < 1 || hidden < 1 || out_dim < 1) throw UsageError("bad mlp dimensions");
    Net n;
    n.kind = ParamKind::mlp;
    n.feat = feat;
    n.in_dim = in_dim;
    n.hidden = hidden;
    n.out_dim = out_dim;
    n.temperature = temperature;
    n.params.assign(n.param_count_mlp(), 0.0);
    Rng rng(derive_seed(seed, {streams::init}));
    double r1 = std::sqrt(6.0 / (in_dim + hidden));
    for (size_t i = 0; i < size_t(in_dim) * hidden; ++i)
      n.params[i] = (2.0 * rng.uniform() - 1.0) * r1;
    if (!zero_output) {
      double r2 = std::sqrt(6.0 / (hidden + out_dim));
      size_t w2 = n.off_w2();
      for (size_t i = 0; i < size_t(hidden) * out_dim; ++i)
        n.params[w2 + i] = (2.0 * rng.uniform() - 1.0) * r2;
    }
    return n;
  }

  size_t param_count() const { return params.size(); }

  std::vector<double> raw_logits(const Obs& obs) const {
    if (kind == ParamKind::tabular) {
      size_t row = row_of(obs);
      return std::vector<double>(params.begin() + row * out_dim,
                                 params.begin() + (row + 1) * out_dim);
    }
    std::vector<double> h = hidden_act(obs);
    std::vector<double> z(out_dim, 0.0);
    size_t w2 = off_w2(), b2 = off_b2();
    for (int j = 0; j < hidden; ++j)
      for (int a = 0; a < out_dim; ++a) z[a] += params[w2 + size_t(j) * out_dim + a] * h[j];
    for (int a = 0; a < out_dim; ++a) z[a] += params[b2 + a];
    return z;
  }

  void add_logit_cotangent(const Obs& obs, const std::vector<double>& dz, double coef,
                           std::vector<double>& grad) const {
    if (grad.size() != params.size()) throw UsageError("gradient buffer size mismatch");
    if (int(dz.size()) != out_dim) throw UsageError("cotangent size mismatch");
    if (kind == ParamKind::tabular) {
      size_t row = row_of(obs);
      for (int a = 0; a < out_dim; ++a) grad[row * out_dim + a] += coef * dz[a];
      return;
    }
    std::vector<double> h = hidden_act(obs);
    size_t w2 = off_w2(), b2 = off_b2(), b1 = off_b1();
    std::vector<double> dh(hidden, 0.0);
    for (int j = 0; j < hidden; ++j) {
      for (int a = 0; a < out_dim; ++a) {
        grad[w2 + size_t(j) * out_dim + a] += coef * h[j] * dz[a];
        dh[j] += params[w2 + size_t(j) * out_dim + a] * dz[a];
      }
    }
    for (int a = 0; a < out_dim; ++a) grad[b2 + a] += coef * dz[a];
    for (int j = 0; j < hidden; ++j) dh[j] *= (1.0 - h[j] * h[j]);
    auto feats = encode_features(feat, obs, in_dim);
    for (const auto& [fi, fv] : feats)
      for (int j = 0; j < hidden; ++j) grad[size_t(fi) * hidden + j] += coef * fv * dh[j];
    for (int j = 0; j < hidden; ++j) grad[b1 + j] += coef * dh[j];
  }

  void save(ByteWriter& w) const {
    w.bytes("PLRLMDL1", 8);
    w.u32(uint32_t(kind));
    w.u32(uint32_t(feat));
    w.u32(uint32_t(in_dim));
    w.u32(uint32_t(hidden));
    w.u32(uint32_t(out_dim));
    w.f64(temperature);
    w.u32(uint32_t(universe.size()));
    for (const auto& obs : universe) {
      w.u32(uint32_t(obs.size()));
      for (int32_t v : obs) w.i64(v);
    }
    w.f64_vec(params);
  }

  static Net load(ByteReader& r) {
    char magic[8];
    r.bytes(magic, 8);
    if (std::string(magic, 8) != "PLRLMDL1") throw SerializeError("bad model magic");
    Net n;
    uint32_t k = r.u32(), f = r.u32();
    if (k > 1 || f > 1) throw SerializeError("unknown parameterization tag");
    n.kind = ParamKind(k);
    n.feat = FeatureKind(f);
    n.in_dim = int(r.u32());
    n.hidden = int(r.u32());
    n.out_dim = int(r.u32());
    n.temperature = r.f64();
    uint32_t ucount = r.u32();
    n.universe.resize(ucount);
    for (auto& obs : n.universe) {
      uint32_t len = r.u32();
      obs.resize(len);
      for (auto& v : obs) v = int32_t(r.i64());
    }
    n.params = r.f64_vec();
    size_t want = n.kind == ParamKind::tabular ? n.universe.size() * size_t(n.out_dim)
                                               : n.param_count_mlp();
    if (n.params.size() != want) throw SerializeError("parameter count mismatch in checkpoint");
    if (n.out_dim < 1 || n.temperature <= 0.0) throw SerializeError("bad model header");
    if (n.kind == ParamKind::tabular) n.build_index();
    return n;
  }

  size_t off_b1() const { return size_t(in_dim) * hidden; }
  size_t off_w2() const { return off_b1() + hidden; }
  size_t off_b2() const { return off_w2() + size_t(hidden) * out_dim; }
  size_t param_count_mlp() const { return off_b2() + out_dim; }

  size_t row_of(const Obs& obs) const {
    auto it = index_.find(obs_key(obs));
    if (it == index_.end()) throw UsageError("observation outside the enumerated universe");
    return it->second;
  }

 private:
  void build_index() {
    index_.clear();
    for (size_t i = 0; i < universe.size(); ++i) {
      auto [it, fresh] = index_.insert({obs_key(universe[i]), i});
      (void)it;
      if (!fresh) throw UsageError("duplicate observation in universe");
    }
  }

  std::vector<double> hidden_act(const Obs& obs) const {
    auto feats = encode_features(feat, obs, in_dim);
    std::vector<double> h(params.begin() + off_b1(), params.begin() + off_w2());
    for (const auto& [fi, fv] : feats)
      for (int j = 0; j < hidden; ++j) h[j] += params[size_t(fi) * hidden + j] * fv;
    for (double& v : h) v = std::tanh(v);
    return h;
  }

  std::unordered_map<std::string, size_t> index_;
};

// Softmax policy over a Net's logits at the Net's temperature. All gradient
// entry points accumulate into a caller-owned flat buffer.
struct PolicyModel {
  Net net;

  static PolicyModel tabular(std::vector<Obs> universe, int actions, double temperature) {
    return {Net::tabular(std::move(universe), actions, temperature)};
  }
  static PolicyModel mlp(FeatureKind feat, int in_dim, int hidden, int actions, double temperature,
                         uint64_t seed) {
    return {Net::mlp(feat, in_dim, hidden, actions, temperature, seed)};
  }

  int action_count() const { return net.out_dim; }
  size_t param_count() const { return net.param_count(); }
  double temperature() const { return net.temperature; }

  std::vector<double> action_distribution(const Obs& obs) const {
    return softmax(net.raw_logits(obs), net.temperature);
  }
  double logprob(const Obs& obs, int action) const {
    if (action < 0 || action >= net.out_dim) throw UsageError("action out of range");
    return log_softmax(net.raw_logits(obs), net.temperature)[action];
  }
  double entropy_at(const Obs& obs) const { return entropy_of(action_distribution(obs)); }

  std::pair<int, double> sample_action(const Obs& obs, Rng& rng) const {
    auto lp = log_softmax(net.raw_logits(obs), net.temperature);
    std::vector<double> p(lp.size());
    for (size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i]);
    int a = rng.categorical(p);
    return {a, lp[a]};
  }

  // d log pi(a|obs) / d z = (onehot(a) - pi) / T
  void add_logprob_grad(const Obs& obs, int action, double coef, std::vector<double>& grad) const {
    auto p = action_distribution(obs);
    std::vector<double> dz(p.size());
    for (size_t i = 0; i < p.size(); ++i) dz[i] = ((int(i) == action ? 1.0 : 0.0) - p[i]) / net.temperature;
    net.add_logit_cotangent(obs, dz, coef, grad);
  }

  // d H(pi) / d z_b = -pi_b (log pi_b + H) / T
  void add_entropy_grad(const Obs& obs, double coef, std::vector<double>& grad) const {
    auto p = action_distribution(obs);
    double h = entropy_of(p);
    std::vector<double> dz(p.size(), 0.0);
    for (size_t i = 0; i < p.size(); ++i)
      if (p[i] > 0.0) dz[i] = -p[i] * (std::log(p[i]) + h) / net.temperature;
    net.add_logit_cotangent(obs, dz, coef, grad);
  }

  // d KL(pi_ref || pi) / d z = (pi - pi_ref) / T
  void add_kl_grad(const Obs& obs, const std::vector<double>& pi_ref, double coef,
                   std::vector<double>& grad) const {
    auto p = action_distribution(obs);
    if (pi_ref.size() != p.size()) throw UsageError("reference distribution size mismatch");
    std::vector<double> dz(p.size());
    for (size_t i = 0; i < p.size(); ++i) dz[i] = (p[i] - pi_ref[i]) / net.temperature;
    net.add_logit_cotangent(obs, dz, coef, grad);
  }
};

// Scalar state-value model; tabular rows or an mlp whose output layer starts
// at zero so initial values are exactly 0.
struct CriticModel {
  Net net;

  static CriticModel tabular(std::vector<Obs> universe) {
    return {Net::tabular(std::move(universe), 1, 1.0)};
  }
  static CriticModel mlp(FeatureKind feat, int in_dim, int hidden, uint64_t seed) {
    return {Net::mlp(feat, in_dim, hidden, 1, 1.0, mix_seed(seed, 0x63726974ull), true)};
  }

  size_t param_count() const { return net.param_count(); }
  double value(const Obs& obs) const { return net.raw_logits(obs)[0]; }
  void add_value_grad(const Obs& obs, double coef, std::vector<double>& grad) const {
    static const std::vector<double> one{1.0};
    net.add_logit_cotangent(obs, one, coef, grad);
  }
};

enum class OptKind : uint32_t { sgd = 0, adam = 1 };

// Global-norm gradient clipping followed by SGD or Adam. step() returns the
// pre-clip gradient norm and mutates the gradient in place when clipping.
struct Optimizer {
  OptKind kind = OptKind::sgd;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double max_grad_norm = 0.5;
  std::vector<double> m, v;
  int64_t t = 0;

  static Optimizer sgd(double lr, double max_grad_norm) {
    Optimizer o;
    o.kind = OptKind::sgd;
    o.lr = lr;
    o.max_grad_norm = max_grad_norm;
    return o;
  }
  static Optimizer adam(double lr, double max_grad_norm) {
    Optimizer o;
    o.kind = OptKind::adam;
    o.lr = lr;
    o.max_grad_norm = max_grad_norm;
    return o;
  }

  static double clip_grad_norm(std::vector<double>& grad, double max_norm) {
    double n = norm_of(grad);
    if (max_norm > 0.0 && n > max_norm) {
      double s = max_norm / n;
      for (double& g : grad) g *= s;
    }
    return n;
  }

  double step(std::vector<double>& params, std::vector<double>& grad) {
    if (params.size() != grad.size()) throw UsageError("optimizer size mismatch");
    double pre = clip_grad_norm(grad, max_grad_norm);
    if (kind == OptKind::sgd) {
      for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      return pre;
    }
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
      t = 0;
    }
    t += 1;
    double c1 = 1.0 - std::pow(beta1, double(t));
    double c2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
    return pre;
  }

  void save(ByteWriter& w) const {
    w.u32(uint32_t(kind));
    w.i64(t);
    w.f64_vec(m);
    w.f64_vec(v);
  }
  void load(ByteReader& r) {
    uint32_t k = r.u32();
    if (k > 1) throw SerializeError("unknown optimizer tag");
    kind = OptKind(k);
    t = r.i64();
    m = r.f64_vec();
    v = r.f64_vec();
  }
};

struct PretrainConfig {
  int epochs = 40;
  int minibatch = 64;
  double lr = 1e-3;
  double entropy_coef = 0.01;
  double holdout_frac = 0.2;
  double max_grad_norm = 0.5;
  OptKind opt = OptKind::adam;
  uint64_t seed = 0;
};

struct PretrainReport {
  size_t train_count = 0, holdout_count = 0;
  double final_train_loss = 0.0;
  double holdout_ce = 0.0;
  double holdout_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

// Behavior cloning: minimize cross-entropy minus an entropy bonus on a
// shuffled 80/20 split. Holdout metrics come from the final parameters.
inline PretrainReport pretrain_bc(PolicyModel& policy, const Dataset& data,
                                  const PretrainConfig& cfg) {
  if (data.samples.empty()) throw ConfigError("pretraining dataset is empty");
  if (cfg.epochs < 1 || cfg.minibatch < 1) throw ConfigError("bad pretraining schedule");
  Rng rng = make_rng(cfg.seed, {streams::pretrain});
  std::vector<size_t> idx(data.samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  size_t holdout = size_t(double(idx.size()) * cfg.holdout_frac);
  if (holdout >= idx.size()) holdout = idx.size() - 1;
  std::vector<size_t> hold(idx.begin(), idx.begin() + holdout);
  std::vector<size_t> train(idx.begin() + holdout, idx.end());

  Optimizer opt;
  opt.kind = cfg.opt;
  opt.lr = cfg.lr;
  opt.max_grad_norm = cfg.max_grad_norm;

  PretrainReport rep;
  rep.train_count = train.size();
  rep.holdout_count = hold.size();
  std::vector<double> grad(policy.param_count(), 0.0);
  for (int e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(train);
    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t b = 0; b < train.size(); b += cfg.minibatch) {
      size_t end = std::min(train.size(), b + cfg.minibatch);
      double inv = 1.0 / double(end - b);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (size_t i = b; i < end; ++i) {
        const auto& s = data.samples[train[i]];
        batch_loss += -policy.logprob(s.obs, s.action) - cfg.entropy_coef * policy.entropy_at(s.obs);
        policy.add_logprob_grad(s.obs, s.action, -inv, grad);
        policy.add_entropy_grad(s.obs, -cfg.entropy_coef * inv, grad);
      }
      opt.step(policy.net.params, grad);
      epoch_loss += batch_loss * inv;
      batches++;
    }
    rep.epoch_losses.push_back(batches ? epoch_loss / double(batches) : 0.0);
  }
  rep.final_train_loss = rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back();

  double ce = 0.0;
  size_t correct = 0;
  for (size_t i : hold) {
    const auto& s = data.samples[i];
    ce += -policy.logprob(s.obs, s.action);
    auto p = policy.action_distribution(s.obs);
    int best = 0;
    for (size_t a = 1; a < p.size(); ++a)
      if (p[a] > p[best]) best = int(a);
    if (best == s.action) correct++;
  }
  rep.holdout_ce = hold.empty() ? 0.0 : ce / double(hold.size());
  rep.holdout_accuracy = hold.empty() ? 0.0 : double(correct) / double(hold.size());
  return rep;
}

}  // namespace polyrl
