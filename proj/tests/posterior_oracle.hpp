#pragma once

// Brute-force enumeration oracle for the tempered Poisson spike-and-slab
// posterior, computed in long double with compensated (Kahan) accumulation.
// Independent of the library implementation: factorials and weights are
// built directly from the density definition.

#include <cmath>
#include <vector>

namespace airsum::test {

struct OracleMoments {
  long double m = 0.0L;
  long double v = 0.0L;
  long double p_active = 0.0L;
  bool defined = true;
};

class KahanSum {
 public:
  void add(long double value) {
    long double y = value - compensation_;
    long double t = total_ + y;
    compensation_ = (t - total_) - y;
    total_ = t;
  }
  long double value() const { return total_; }

 private:
  long double total_ = 0.0L;
  long double compensation_ = 0.0L;
};

inline OracleMoments posterior_oracle(long double r, long double v, long double alpha,
                                      long double lambda, long double tau, int x_max) {
  std::vector<long double> logp(x_max + 1);
  long double exp_neg_lambda = std::exp(-lambda);
  long double p0 = (1.0L - alpha) + alpha * exp_neg_lambda;
  bool p0_zero = !(p0 > 0.0L);
  logp[0] = p0_zero ? -HUGE_VALL : std::log(p0);
  long double log_fact = 0.0L;
  for (int k = 1; k <= x_max; ++k) {
    log_fact += std::log(static_cast<long double>(k));
    logp[k] = (alpha > 0.0L)
                  ? std::log(alpha) + k * std::log(lambda) - lambda - log_fact
                  : -HUGE_VALL;
  }
  std::vector<long double> joint(x_max + 1);
  long double best = -HUGE_VALL;
  for (int k = 0; k <= x_max; ++k) {
    long double diff = r - static_cast<long double>(k);
    joint[k] = logp[k] - diff * diff / (2.0L * v);
    if (joint[k] > best) best = joint[k];
  }
  OracleMoments out;
  if (!std::isfinite(static_cast<double>(best))) {
    out.defined = false;
    return out;
  }
  KahanSum total, mean, second, w0;
  std::vector<long double> w(x_max + 1, 0.0L);
  for (int k = 0; k <= x_max; ++k) {
    if (!std::isfinite(static_cast<double>(joint[k]))) continue;
    w[k] = std::exp((joint[k] - best) / tau);
    total.add(w[k]);
    mean.add(w[k] * k);
    second.add(w[k] * static_cast<long double>(k) * k);
  }
  long double z = total.value();
  out.m = mean.value() / z;
  long double ex2 = second.value() / z;
  long double var = ex2 - out.m * out.m;
  out.v = var > 0.0L ? var : 0.0L;
  out.p_active = 1.0L - w[0] / z;
  return out;
}

}  // namespace airsum::test
