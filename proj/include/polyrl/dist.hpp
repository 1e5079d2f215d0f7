#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "polyrl/env.hpp"

namespace polyrl {

inline double logsumexp(const std::vector<double>& z) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(const std::vector<double>& z, double temperature = 1.0) {
  if (temperature <= 0.0) throw UsageError("temperature must be positive");
  std::vector<double> p(z.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v / temperature);
  double s = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] / temperature - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> log_softmax(const std::vector<double>& z, double temperature = 1.0) {
  if (temperature <= 0.0) throw UsageError("temperature must be positive");
  std::vector<double> l(z.size());
  for (size_t i = 0; i < z.size(); ++i) l[i] = z[i] / temperature;
  double lse = logsumexp(l);
  for (double& v : l) v -= lse;
  return l;
}

// Shannon entropy in nats; p log p taken as 0 at p = 0.
inline double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// KL(p || q); contributes +inf when p > 0 on a q-null atom.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw UsageError("KL over mismatched supports");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

// Population variance (divides by the count).
inline double variance_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean_of(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size());
}

inline double stddev_of(const std::vector<double>& v) { return std::sqrt(variance_of(v)); }

inline double dot_of(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_of(const std::vector<double>& v) { return std::sqrt(dot_of(v, v)); }

}  // namespace polyrl
