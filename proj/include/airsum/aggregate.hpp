#pragma once

#include <span>
#include <string_view>

#include "airsum/tensor.hpp"
#include "airsum/ura.hpp"
#include "airsum/vq.hpp"

namespace airsum::aggregate {

// Symmetric aggregation rules over recovered count vectors.
struct AggregationRule {
  enum class Kind { mean, trimmed_mean, majority };

  Kind kind = Kind::mean;
  double tau = 1.0;  // retained fraction, trimmed_mean only, in (0, 1]

  static AggregationRule mean();
  static AggregationRule trimmed_mean(double tau);
  static AggregationRule majority();

  // Accepts "mean", "majority", "trimmed_mean" or "trimmed_mean:<tau>".
  static AggregationRule parse(std::string_view text);
  std::string name() const;
};

// u_hat = (1/k_hat) sum_j x_j q_j. k_hat <= 0 yields a zero fragment (the
// caller is warned through the return flag of aggregate_round).
vq::Fragment mean_fragment(const ura::ActivityVector& x, const vq::QuantCodebook& cb,
                           double k_hat);

// Centroid of the most frequent codeword; ties are averaged.
vq::Fragment majority_fragment(const ura::ActivityVector& x, const vq::QuantCodebook& cb);

// Retains the most common codewords up to mass M = ceil(tau * k_hat); the
// final index contributes fractionally when it would overshoot, and a
// cutoff inside a tied group splits the remaining mass evenly across the
// group. The retained mass is exactly M.
vq::Fragment trimmed_fragment(const ura::ActivityVector& x, const vq::QuantCodebook& cb,
                              double k_hat, double tau);

// Applies the rule per slot, concatenates the fragments and strips the
// zero pad down to `length`.
num::Tensor aggregate_round(std::span<const ura::ActivityVector> slots,
                            const vq::QuantCodebook& cb, const AggregationRule& rule,
                            double ka_round, std::size_t length);

}  // namespace airsum::aggregate
