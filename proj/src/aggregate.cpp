#include "airsum/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "airsum/error.hpp"

namespace airsum::aggregate {

using num::Tensor;

AggregationRule AggregationRule::mean() { return {Kind::mean, 1.0}; }

AggregationRule AggregationRule::trimmed_mean(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw InvalidArgument("trimmed_mean: tau must be in (0, 1]");
  }
  return {Kind::trimmed_mean, tau};
}

AggregationRule AggregationRule::majority() { return {Kind::majority, 1.0}; }

AggregationRule AggregationRule::parse(std::string_view text) {
  if (text == "mean") return mean();
  if (text == "majority") return majority();
  if (text == "trimmed_mean") return trimmed_mean(0.8);
  constexpr std::string_view prefix = "trimmed_mean:";
  if (text.substr(0, prefix.size()) == prefix) {
    std::string tau_text(text.substr(prefix.size()));
    try {
      return trimmed_mean(std::stod(tau_text));
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad trimmed_mean fraction: " + tau_text);
    }
  }
  throw InvalidArgument("unknown aggregation rule: " + std::string(text));
}

std::string AggregationRule::name() const {
  switch (kind) {
    case Kind::mean: return "mean";
    case Kind::majority: return "majority";
    case Kind::trimmed_mean: return "trimmed_mean:" + std::to_string(tau);
  }
  return "unknown";
}

namespace {

void add_scaled_centroid(Tensor& acc, const vq::QuantCodebook& cb, std::size_t j,
                         double weight) {
  std::size_t d = cb.dim();
  for (std::size_t i = 0; i < d; ++i) acc[i] += weight * cb.centroids.at(i, j);
}

}  // namespace

vq::Fragment mean_fragment(const ura::ActivityVector& x, const vq::QuantCodebook& cb,
                           double k_hat) {
  if (x.size() != cb.size()) throw ShapeError("mean_fragment: count length mismatch");
  Tensor acc = Tensor::zeros({cb.dim()});
  if (!(k_hat > 0.0)) return acc;  // zero fragment; diagnostic handled by caller
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x.counts[j] != 0) add_scaled_centroid(acc, cb, j, static_cast<double>(x.counts[j]));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= k_hat;
  return acc;
}

vq::Fragment majority_fragment(const ura::ActivityVector& x, const vq::QuantCodebook& cb) {
  if (x.size() != cb.size()) throw ShapeError("majority_fragment: count length mismatch");
  std::int64_t best = 0;
  for (std::int64_t c : x.counts) best = std::max(best, c);
  if (best <= 0) throw InvalidArgument("majority_fragment: all counts zero");
  Tensor acc = Tensor::zeros({cb.dim()});
  std::size_t tied = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x.counts[j] == best) {
      add_scaled_centroid(acc, cb, j, 1.0);
      ++tied;
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= static_cast<double>(tied);
  return acc;
}

vq::Fragment trimmed_fragment(const ura::ActivityVector& x, const vq::QuantCodebook& cb,
                              double k_hat, double tau) {
  if (x.size() != cb.size()) throw ShapeError("trimmed_fragment: count length mismatch");
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("trimmed_fragment: bad tau");
  if (x.total() <= 0) throw InvalidArgument("trimmed_fragment: all counts zero");
  double mass = std::ceil(tau * k_hat);
  if (!(mass > 0.0)) throw InvalidArgument("trimmed_fragment: retained mass is zero");

  // positive counts sorted by descending count, index ascending inside ties
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x.counts[j] > 0) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x.counts[a] > x.counts[b];
  });

  Tensor acc = Tensor::zeros({cb.dim()});
  double remaining = mass;
  std::size_t pos = 0;
  while (pos < order.size() && remaining > 0.0) {
    // walk one tied group at a time
    std::int64_t count = x.counts[order[pos]];
    std::size_t group_end = pos;
    while (group_end < order.size() && x.counts[order[group_end]] == count) ++group_end;
    std::size_t group_size = group_end - pos;
    double group_mass = static_cast<double>(count) * static_cast<double>(group_size);
    if (group_mass <= remaining) {
      for (std::size_t g = pos; g < group_end; ++g) {
        add_scaled_centroid(acc, cb, order[g], static_cast<double>(count));
      }
      remaining -= group_mass;
    } else if (group_size == 1) {
      // fractional contribution of the final included index
      add_scaled_centroid(acc, cb, order[pos], remaining);
      remaining = 0.0;
    } else {
      // cutoff inside a tied group: split the remaining mass evenly
      double share = remaining / static_cast<double>(group_size);
      for (std::size_t g = pos; g < group_end; ++g) {
        add_scaled_centroid(acc, cb, order[g], share);
      }
      remaining = 0.0;
    }
    pos = group_end;
  }

  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= mass;
  return acc;
}

num::Tensor aggregate_round(std::span<const ura::ActivityVector> slots,
                            const vq::QuantCodebook& cb, const AggregationRule& rule,
                            double ka_round, std::size_t length) {
  std::size_t d = cb.dim();
  std::size_t expected = (length + d - 1) / d;
  if (slots.size() != expected) {
    throw ShapeError("aggregate_round: expected " + std::to_string(expected) +
                     " slots, got " + std::to_string(slots.size()));
  }
  std::vector<vq::Fragment> fragments;
  fragments.reserve(slots.size());
  for (const ura::ActivityVector& x : slots) {
    switch (rule.kind) {
      case AggregationRule::Kind::mean:
        fragments.push_back(mean_fragment(x, cb, ka_round));
        break;
      case AggregationRule::Kind::majority:
        fragments.push_back(majority_fragment(x, cb));
        break;
      case AggregationRule::Kind::trimmed_mean:
        fragments.push_back(trimmed_fragment(x, cb, ka_round, rule.tau));
        break;
    }
  }
  return vq::defragment(fragments, length);
}

}  // namespace airsum::aggregate
