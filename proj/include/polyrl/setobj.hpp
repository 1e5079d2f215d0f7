#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "polyrl/dist.hpp"
#include "polyrl/rng.hpp"
#include "polyrl/rollout.hpp"

namespace polyrl {

using Signature = std::vector<int32_t>;

// Fraction of distinct signatures in the set, except that a set whose
// signatures are all identical scores 0 (this includes n = 1).
inline double signature_set_diversity(const std::vector<Signature>& sigs) {
  if (sigs.empty()) throw UsageError("diversity of an empty set");
  std::set<Signature> distinct(sigs.begin(), sigs.end());
  if (distinct.size() == 1) return 0.0;
  return double(distinct.size()) / double(sigs.size());
}

enum class DiversityKind : uint32_t { room_set = 0, node_set = 1, custom = 2 };

struct DiversityFunction {
  DiversityKind kind = DiversityKind::room_set;
  std::function<double(const std::vector<Signature>&)> custom;

  double operator()(const std::vector<Signature>& sigs) const {
    if (kind == DiversityKind::custom) {
      if (!custom) throw UsageError("custom diversity function not set");
      double d = custom(sigs);
      if (!(d >= 0.0 && d <= 1.0)) throw UsageError("diversity function left [0, 1]");
      return d;
    }
    return signature_set_diversity(sigs);
  }
};

inline double mean_return_objective(const std::vector<double>& returns) {
  if (returns.empty()) throw UsageError("objective over an empty set");
  return mean_of(returns);
}

// f = (mean return) * (set diversity); both factors in [0, 1].
inline double f_poly(const std::vector<double>& returns, const std::vector<Signature>& sigs,
                     const DiversityFunction& div) {
  if (returns.size() != sigs.size() || returns.empty()) throw UsageError("mismatched set members");
  for (double r : returns)
    if (!(r >= 0.0 && r <= 1.0)) throw UsageError("set objective needs returns in [0, 1]");
  return mean_of(returns) * div(sigs);
}

struct SetSample {
  std::vector<int> members;  // sorted distinct indices into the parent VineBatch
};

struct FormedSets {
  std::vector<SetSample> sets;
  bool repetition_fallback = false;  // fewer than M distinct sets exist
};

inline unsigned long long binomial_capped(int N, int n, unsigned long long cap) {
  if (n < 0 || n > N) return 0;
  if (n > N - n) n = N - n;
  unsigned __int128 c = 1;
  for (int i = 1; i <= n; ++i) {
    c = c * (unsigned __int128)(N - n + i) / (unsigned __int128)(i);
    if (c > cap) return cap + 1;
  }
  return (unsigned long long)(c);
}

// M sets of n distinct member indices from {0..N-1}. Sets are pairwise
// distinct as sets when possible; when C(N,n) < M the draw allows repeated
// sets and flags the fallback.
inline FormedSets form_set_indices(int N, int n, int M, Rng& rng) {
  if (n < 1 || N < n) throw UsageError("set formation needs N >= n >= 1");
  if (M < 2) throw UsageError("need at least two sets for the baseline");
  FormedSets out;
  unsigned long long combos = binomial_capped(N, n, 1ull << 62);
  bool enforce_distinct = combos >= (unsigned long long)(M);
  out.repetition_fallback = !enforce_distinct;

  std::set<std::vector<int>> seen;
  std::vector<int> pool(N);
  long long attempts = 0;
  while (int(out.sets.size()) < M) {
    if (++attempts > 200000) throw InternalError("set formation failed to find distinct sets");
    for (int i = 0; i < N; ++i) pool[i] = i;
    for (int j = 0; j < n; ++j) std::swap(pool[j], pool[j + int(rng.uniform_int(N - j))]);
    std::vector<int> members(pool.begin(), pool.begin() + n);
    std::sort(members.begin(), members.end());
    if (enforce_distinct && !seen.insert(members).second) continue;
    out.sets.push_back({std::move(members)});
  }
  return out;
}

inline FormedSets form_sets(const VineBatch& batch, int n, int M, Rng& rng) {
  return form_set_indices(int(batch.vines.size()), n, M, rng);
}

// Evaluates the set objective for each formed set of a vine batch.
inline std::vector<double> score_sets(const VineBatch& batch, const FormedSets& formed,
                                      const DiversityFunction& div) {
  std::vector<double> scores;
  scores.reserve(formed.sets.size());
  for (const auto& s : formed.sets) {
    std::vector<double> rets;
    std::vector<Signature> sigs;
    for (int m : s.members) {
      rets.push_back(batch.vines.at(size_t(m)).ret);
      sigs.push_back(batch.vines.at(size_t(m)).signature());
    }
    scores.push_back(f_poly(rets, sigs, div));
  }
  return scores;
}

inline std::vector<double> score_sets_mean_return(const VineBatch& batch, const FormedSets& formed) {
  std::vector<double> scores;
  scores.reserve(formed.sets.size());
  for (const auto& s : formed.sets) {
    std::vector<double> rets;
    for (int m : s.members) rets.push_back(batch.vines.at(size_t(m)).ret);
    scores.push_back(mean_return_objective(rets));
  }
  return scores;
}

// ---- factorization validator -------------------------------------------
// A set objective phi(tau_{1:n}) = phi_R * phi_d qualifies when, over iid
// draws from the policy: (1) phi_R covaries positively with the summed
// returns, (2) phi_d covaries negatively with the duplication count of every
// rewarding supported outcome, and (3) both factors span the same range.
// Condition (2) cannot hold over every outcome (the duplication counts sum
// to n, so the covariances sum to zero); the verdict therefore quantifies
// over rewarding outcomes only, while the report carries all of them.

using SetFactor =
    std::function<double(const std::vector<double>& returns, const std::vector<Signature>& sigs)>;

inline SetFactor factor_mean_return() {
  return [](const std::vector<double>& r, const std::vector<Signature>&) { return mean_of(r); };
}
inline SetFactor factor_signature_diversity() {
  return [](const std::vector<double>&, const std::vector<Signature>& s) {
    return signature_set_diversity(s);
  };
}

enum class ValidateMode : uint32_t { enumerate = 0, sample = 1 };

struct ValidateReport {
  double cond1_cov = 0.0;  // Cov(phi_R, sum_i R(tau_i))
  bool cond1_pass = false;
  std::vector<double> tau_cov;   // Cov(phi_d, #{i: tau_i = tau}) for every outcome
  double cond2_min_neg_cov = 0.0;  // min over rewarding supported tau of -tau_cov
  bool cond2_pass = false;
  double phi_r_inf = 0.0, phi_r_sup = 0.0, phi_d_inf = 0.0, phi_d_sup = 0.0;
  bool range_pass = false;
  bool pass = false;
  long long tuples = 0;
};

inline ValidateReport validate_polychromic(const SetFactor& phi_R, const SetFactor& phi_d,
                                           const std::vector<double>& policy_probs,
                                           const std::vector<double>& action_returns, int n,
                                           ValidateMode mode, long long samples = 0,
                                           uint64_t seed = 0) {
  int A = int(policy_probs.size());
  if (A < 2 || int(action_returns.size()) != A) throw UsageError("bad outcome space");
  if (n < 1) throw UsageError("set size must be >= 1");
  if (mode == ValidateMode::enumerate && (A > 8 || n > 4))
    throw ConfigError("exact enumeration limited to |A| <= 8 and n <= 4");
  if (mode == ValidateMode::sample && samples < 1000)
    throw ConfigError("sample mode needs at least 1000 samples to certify signs");

  double e_phir = 0, e_phir_sumr = 0, e_sumr = 0, e_phid = 0, wsum = 0;
  std::vector<double> e_phid_c(A, 0.0), e_c(A, 0.0);
  double r_inf = 1e300, r_sup = -1e300, d_inf = 1e300, d_sup = -1e300;
  long long tuples = 0;

  auto accumulate = [&](const std::vector<int>& tuple, double w) {
    wsum += w;
    std::vector<double> rets(n);
    std::vector<Signature> sigs(n);
    std::vector<int> counts(A, 0);
    double sumr = 0.0;
    for (int i = 0; i < n; ++i) {
      rets[i] = action_returns[tuple[i]];
      sigs[i] = {int32_t(tuple[i])};
      counts[tuple[i]]++;
      sumr += rets[i];
    }
    double pr = phi_R(rets, sigs), pd = phi_d(rets, sigs);
    e_phir += w * pr;
    e_phir_sumr += w * pr * sumr;
    e_sumr += w * sumr;
    e_phid += w * pd;
    for (int a = 0; a < A; ++a) {
      e_phid_c[a] += w * pd * counts[a];
      e_c[a] += w * counts[a];
    }
    r_inf = std::min(r_inf, pr);
    r_sup = std::max(r_sup, pr);
    d_inf = std::min(d_inf, pd);
    d_sup = std::max(d_sup, pd);
    tuples++;
  };

  if (mode == ValidateMode::enumerate) {
    std::vector<int> tuple(n, 0);
    while (true) {
      double w = 1.0;
      for (int i = 0; i < n; ++i) w *= policy_probs[tuple[i]];
      if (w > 0.0) accumulate(tuple, w);
      int pos = n - 1;
      while (pos >= 0 && ++tuple[pos] == A) tuple[pos--] = 0;
      if (pos < 0) break;
    }
  } else {
    Rng rng = make_rng(seed, {streams::theory});
    double w = 1.0 / double(samples);
    std::vector<int> tuple(n);
    for (long long s = 0; s < samples; ++s) {
      for (int i = 0; i < n; ++i) tuple[i] = rng.categorical(policy_probs);
      accumulate(tuple, w);
    }
  }

  if (wsum <= 0.0) throw UsageError("policy puts no mass on any outcome");

  // Normalizing by the accumulated weight keeps a constant factor's covariance
  // at exactly zero: its cross moment matches the plain moment bit for bit.
  ValidateReport rep;
  rep.tuples = tuples;
  rep.cond1_cov = e_phir_sumr / wsum - (e_phir / wsum) * (e_sumr / wsum);
  rep.cond1_pass = rep.cond1_cov > 0.0;
  rep.tau_cov.resize(A);
  bool any_rewarding = false;
  double min_neg = 1e300;
  for (int a = 0; a < A; ++a) {
    rep.tau_cov[a] = e_phid_c[a] / wsum - (e_phid / wsum) * (e_c[a] / wsum);
    if (policy_probs[a] > 0.0 && action_returns[a] > 0.0) {
      any_rewarding = true;
      min_neg = std::min(min_neg, -rep.tau_cov[a]);
    }
  }
  rep.cond2_min_neg_cov = any_rewarding ? min_neg : 0.0;
  rep.cond2_pass = any_rewarding && min_neg > 0.0;
  rep.phi_r_inf = r_inf;
  rep.phi_r_sup = r_sup;
  rep.phi_d_inf = d_inf;
  rep.phi_d_sup = d_sup;
  rep.range_pass = std::abs(r_inf - d_inf) <= 1e-9 && std::abs(r_sup - d_sup) <= 1e-9;
  rep.pass = rep.cond1_pass && rep.cond2_pass && rep.range_pass;
  return rep;
}

}  // namespace polyrl
