#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "polyrl/dist.hpp"
#include "polyrl/policy.hpp"
#include "polyrl/rollout.hpp"
#include "polyrl/setobj.hpp"

namespace polyrl {

enum class AdvSource : uint32_t { gae = 0, polychromic = 1 };

struct AdvantageRecord {
  int32_t traj_id = 0;
  int32_t step = 0;
  double advantage = 0.0;
  AdvSource source = AdvSource::gae;
  double ret_target = 0.0;  // critic regression target
  double behavior_logprob = 0.0;
};

struct GaeResult {
  std::vector<double> adv;
  std::vector<double> target;  // adv + recorded value
};

// Exponentially weighted TD residuals over the recorded critic values, with a
// zero bootstrap past the terminal step.
inline GaeResult gae(const Trajectory& traj, double gamma, double lambda) {
  int T = traj.length();
  GaeResult out;
  out.adv.assign(T, 0.0);
  out.target.assign(T, 0.0);
  double acc = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    double next_v = t + 1 < T ? traj.steps[t + 1].critic_value : 0.0;
    double delta = traj.steps[t].reward + gamma * next_v - traj.steps[t].critic_value;
    acc = delta + gamma * lambda * acc;
    out.adv[t] = acc;
    out.target[t] = acc + traj.steps[t].critic_value;
  }
  return out;
}

// (state, action) sampling counts accumulated over a whole run, keyed by the
// exact serialized observation.
struct VisitCounts {
  std::map<std::string, std::vector<int64_t>> counts;

  int64_t get(const Obs& obs, int action) const {
    auto it = counts.find(obs_key(obs));
    if (it == counts.end() || action < 0 || action >= int(it->second.size())) return 0;
    return it->second[size_t(action)];
  }
  void bump(const Obs& obs, int action, int action_count) {
    auto& row = counts[obs_key(obs)];
    if (row.empty()) row.assign(size_t(action_count), 0);
    if (action < 0 || action >= int(row.size())) throw UsageError("action out of range for counts");
    row[size_t(action)] += 1;
  }
  int64_t total() const {
    int64_t t = 0;
    for (const auto& [k, row] : counts)
      for (int64_t c : row) t += c;
    return t;
  }
  void save(ByteWriter& w) const {
    w.u32(uint32_t(counts.size()));
    for (const auto& [k, row] : counts) {
      w.str(k);
      w.i64_vec(row);
    }
  }
  void load(ByteReader& r) {
    counts.clear();
    uint32_t entries = r.u32();
    for (uint32_t i = 0; i < entries; ++i) {
      std::string k = r.str();
      counts[k] = r.i64_vec();
    }
  }
};

inline void update_visit_counts(VisitCounts& counts, const std::vector<const Trajectory*>& trajs,
                                int action_count) {
  for (const auto* t : trajs)
    for (const auto& s : t->steps) counts.bump(s.obs, s.action, action_count);
}

inline double ucb_bonus(const VisitCounts& counts, const Obs& obs, int action, double lambda_ucb) {
  if (lambda_ucb < 0.0) throw UsageError("ucb coefficient must be >= 0");
  if (lambda_ucb == 0.0) return 0.0;
  int64_t n = counts.get(obs, action);
  double scaled = n == 0 ? 1.0 : std::min(1.0, 1.0 / std::sqrt(double(n)));
  return lambda_ucb * scaled;
}

// Set-score advantages for one vine batch: every member step at offsets 0..W
// receives score(g_i) minus the mean score; a vine in several sets gets the
// containing sets' advantages averaged. Steps beyond W are not emitted here.
inline std::vector<AdvantageRecord> polychromic_advantages(const VineBatch& batch,
                                                           const FormedSets& formed,
                                                           const std::vector<double>& scores,
                                                           int W) {
  if (W < 0) throw UsageError("window must be >= 0");
  if (formed.sets.size() < 2 || formed.sets.size() != scores.size())
    throw UsageError("need M >= 2 scored sets");
  double baseline = mean_of(scores);
  std::vector<double> sum(batch.vines.size(), 0.0);
  std::vector<int> hits(batch.vines.size(), 0);
  for (size_t i = 0; i < formed.sets.size(); ++i)
    for (int m : formed.sets[i].members) {
      sum[size_t(m)] += scores[i] - baseline;
      hits[size_t(m)] += 1;
    }
  std::vector<AdvantageRecord> recs;
  for (size_t v = 0; v < batch.vines.size(); ++v) {
    if (hits[v] == 0) continue;
    double adv = sum[v] / double(hits[v]);
    int last = std::min(W, batch.vines[v].length() - 1);
    for (int t = 0; t <= last; ++t) {
      AdvantageRecord r;
      r.traj_id = int32_t(v);
      r.step = t;
      r.advantage = adv;
      r.source = AdvSource::polychromic;
      r.behavior_logprob = batch.vines[v].steps[t].behavior_logprob;
      recs.push_back(r);
    }
  }
  return recs;
}

struct NormStats {
  double mean = 0.0;
  double stddev = 0.0;
  bool degenerate = false;  // zero variance; records left unchanged
};

// Joint batch normalization across both sources (population statistics).
inline NormStats normalize_advantages(std::vector<AdvantageRecord>& records) {
  if (records.size() < 2) throw UsageError("normalization needs at least two records");
  std::vector<double> vals;
  vals.reserve(records.size());
  for (const auto& r : records) vals.push_back(r.advantage);
  NormStats st;
  st.mean = mean_of(vals);
  st.stddev = stddev_of(vals);
  if (st.stddev < 1e-12) {
    st.degenerate = true;
    return st;
  }
  for (auto& r : records) r.advantage = (r.advantage - st.mean) / st.stddev;
  return st;
}

struct AdvantageStats {
  long long gae_count = 0, poly_count = 0;
  double gae_mean = 0.0, gae_std = 0.0;
  double poly_mean = 0.0, poly_std = 0.0;
  NormStats norm;
};

struct AssembledBatch {
  std::vector<const Trajectory*> trajs;  // seeds first, then vines batch-major
  std::vector<AdvantageRecord> records;
  AdvantageStats stats;
};

// Full advantage assembly for one iteration of vine training: GAE everywhere,
// polychromic overrides inside the window, UCB bonus from counts accumulated
// through the previous iteration, then one joint normalization. Critic
// targets stay GAE-derived on every step, including overridden ones.
inline AssembledBatch assemble_advantages(const CollectionResult& data,
                                          const std::vector<FormedSets>& formed_per_batch,
                                          const std::vector<std::vector<double>>& scores_per_batch,
                                          int W, double gamma, double lambda,
                                          const VisitCounts& counts, double lambda_ucb) {
  if (formed_per_batch.size() != data.batches.size() ||
      scores_per_batch.size() != data.batches.size())
    throw UsageError("per-batch set data size mismatch");
  AssembledBatch out;
  for (const auto& t : data.seeds) out.trajs.push_back(&t);
  std::vector<int32_t> batch_base;
  for (const auto& b : data.batches) {
    batch_base.push_back(int32_t(out.trajs.size()));
    for (const auto& v : b.vines) out.trajs.push_back(&v);
  }

  std::vector<GaeResult> per_traj;
  per_traj.reserve(out.trajs.size());
  for (const auto* t : out.trajs) per_traj.push_back(gae(*t, gamma, lambda));

  // source / override value per (global traj, step) for windowed vine steps
  std::vector<std::vector<double>> override_val(out.trajs.size());
  for (size_t bi = 0; bi < data.batches.size(); ++bi) {
    auto recs = polychromic_advantages(data.batches[bi], formed_per_batch[bi],
                                       scores_per_batch[bi], W);
    for (const auto& r : recs) {
      size_t gid = size_t(batch_base[bi] + r.traj_id);
      if (override_val[gid].empty())
        override_val[gid].assign(size_t(out.trajs[gid]->length()), std::nan(""));
      override_val[gid][size_t(r.step)] = r.advantage;
    }
  }

  std::vector<double> gae_vals, poly_vals;
  for (size_t gid = 0; gid < out.trajs.size(); ++gid) {
    const auto* t = out.trajs[gid];
    for (int s = 0; s < t->length(); ++s) {
      AdvantageRecord r;
      r.traj_id = int32_t(gid);
      r.step = s;
      r.ret_target = per_traj[gid].target[size_t(s)];
      r.behavior_logprob = t->steps[size_t(s)].behavior_logprob;
      bool overridden = !override_val[gid].empty() && !std::isnan(override_val[gid][size_t(s)]);
      if (overridden) {
        r.source = AdvSource::polychromic;
        r.advantage = override_val[gid][size_t(s)];
        poly_vals.push_back(r.advantage);
      } else {
        r.source = AdvSource::gae;
        r.advantage = per_traj[gid].adv[size_t(s)];
        gae_vals.push_back(r.advantage);
      }
      r.advantage += ucb_bonus(counts, t->steps[size_t(s)].obs, t->steps[size_t(s)].action, lambda_ucb);
      out.records.push_back(r);
    }
  }

  out.stats.gae_count = (long long)(gae_vals.size());
  out.stats.poly_count = (long long)(poly_vals.size());
  out.stats.gae_mean = mean_of(gae_vals);
  out.stats.gae_std = stddev_of(gae_vals);
  out.stats.poly_mean = mean_of(poly_vals);
  out.stats.poly_std = stddev_of(poly_vals);
  out.stats.norm = normalize_advantages(out.records);
  return out;
}

// GAE-only assembly for plain-episode baselines, same UCB and normalization.
inline AssembledBatch assemble_gae_advantages(const std::vector<Trajectory>& trajs, double gamma,
                                              double lambda, const VisitCounts& counts,
                                              double lambda_ucb) {
  AssembledBatch out;
  for (const auto& t : trajs) out.trajs.push_back(&t);
  std::vector<double> gae_vals;
  for (size_t gid = 0; gid < out.trajs.size(); ++gid) {
    GaeResult g = gae(*out.trajs[gid], gamma, lambda);
    const auto* t = out.trajs[gid];
    for (int s = 0; s < t->length(); ++s) {
      AdvantageRecord r;
      r.traj_id = int32_t(gid);
      r.step = s;
      r.source = AdvSource::gae;
      r.advantage = g.adv[size_t(s)];
      r.ret_target = g.target[size_t(s)];
      r.behavior_logprob = t->steps[size_t(s)].behavior_logprob;
      gae_vals.push_back(r.advantage);
      r.advantage += ucb_bonus(counts, t->steps[size_t(s)].obs, t->steps[size_t(s)].action, lambda_ucb);
      out.records.push_back(r);
    }
  }
  out.stats.gae_count = (long long)(gae_vals.size());
  out.stats.gae_mean = mean_of(gae_vals);
  out.stats.gae_std = stddev_of(gae_vals);
  out.stats.norm = normalize_advantages(out.records);
  return out;
}

}  // namespace polyrl
