#include "airsum/vq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "airsum/error.hpp"

namespace airsum::vq {

using num::Tensor;

CurvatureProxy CurvatureProxy::from_fragments(std::span<const Fragment> fragments,
                                              double epsilon) {
  if (fragments.empty()) throw InvalidArgument("curvature proxy: no fragments");
  std::size_t d = fragments[0].size();
  CurvatureProxy proxy;
  proxy.epsilon = epsilon;
  proxy.mean.assign(d, 0.0);
  proxy.scale.assign(d, 0.0);
  for (const Fragment& f : fragments) {
    if (f.size() != d) throw ShapeError("curvature proxy: fragment length mismatch");
    for (std::size_t i = 0; i < d; ++i) proxy.mean[i] += f[i];
  }
  double inv_n = 1.0 / static_cast<double>(fragments.size());
  for (double& m : proxy.mean) m *= inv_n;
  std::vector<double> var(d, 0.0);
  for (const Fragment& f : fragments) {
    for (std::size_t i = 0; i < d; ++i) {
      double c = f[i] - proxy.mean[i];
      var[i] += c * c;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    proxy.scale[i] = 1.0 / std::sqrt(var[i] * inv_n + epsilon);
    if (!std::isfinite(proxy.scale[i]) || proxy.scale[i] <= 0.0) {
      throw NumericError("curvature proxy: non-finite scale");
    }
  }
  return proxy;
}

Fragment QuantCodebook::centroid(std::size_t j) const {
  std::size_t d = dim();
  Tensor q = Tensor::zeros({d});
  for (std::size_t i = 0; i < d; ++i) q[i] = centroids.at(i, j);
  return q;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

// k-means++ seeding; `points` is row-major (count x d). Degenerate case:
// once every squared distance is zero, remaining seeds are drawn uniformly
// from the points (duplicates permitted).
std::vector<std::size_t> kmeanspp_seed(const std::vector<std::vector<double>>& points,
                                       std::size_t n, num::RngStream& rng) {
  std::size_t count = points.size();
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  chosen.push_back(rng.index(count));
  std::vector<double> d2(count);
  for (std::size_t i = 0; i < count; ++i) d2[i] = sq_dist(points[i], points[chosen[0]]);
  while (chosen.size() < n) {
    double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t next;
    if (total <= 0.0) {
      next = rng.index(count);
    } else {
      next = rng.categorical(d2);
    }
    chosen.push_back(next);
    for (std::size_t i = 0; i < count; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], points[next]));
    }
  }
  return chosen;
}

}  // namespace

QuantCodebook build_codebook(std::span<const Fragment> bs_fragments, std::size_t n,
                             const BuildOptions& options, num::RngStream& rng,
                             int round_index) {
  if (bs_fragments.empty()) throw InvalidArgument("build_codebook: no fragments");
  if (n == 0) throw InvalidArgument("build_codebook: n must be >= 1");
  std::size_t d = bs_fragments[0].size();

  // Seeding space: raw fragments, or whitened when a curvature proxy is given.
  std::vector<std::vector<double>> points(bs_fragments.size(), std::vector<double>(d));
  for (std::size_t p = 0; p < bs_fragments.size(); ++p) {
    const Fragment& f = bs_fragments[p];
    if (f.size() != d) throw ShapeError("build_codebook: fragment length mismatch");
    for (std::size_t i = 0; i < d; ++i) {
      points[p][i] = options.curvature
                         ? options.curvature->scale[i] * (f[i] - options.curvature->mean[i])
                         : f[i];
    }
  }

  std::vector<std::size_t> seeds = kmeanspp_seed(points, n, rng);

  // Centroids in the original space (mapped back when whitened).
  Tensor centroids = Tensor::zeros({d, n});
  for (std::size_t j = 0; j < n; ++j) {
    const auto& pt = points[seeds[j]];
    for (std::size_t i = 0; i < d; ++i) {
      double v = pt[i];
      if (options.curvature) {
        v = v / options.curvature->scale[i] + options.curvature->mean[i];
      }
      centroids.at(i, j) = v;
    }
  }

  // Assignment counts over the BS fragments -> popularity distribution.
  QuantCodebook cb{std::move(centroids), std::vector<double>(n, 0.0), round_index};
  std::vector<std::size_t> counts(n, 0);
  for (const Fragment& f : bs_fragments) counts[quantise(f, cb)]++;
  double total = static_cast<double>(bs_fragments.size());
  for (std::size_t j = 0; j < n; ++j) {
    cb.popularity[j] = static_cast<double>(counts[j]) / total;
  }

  if (options.order_by_popularity) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
      return cb.popularity[a] > cb.popularity[b];
    });
    Tensor sorted = Tensor::zeros({d, n});
    std::vector<double> pop_sorted(n);
    for (std::size_t j = 0; j < n; ++j) {
      pop_sorted[j] = cb.popularity[perm[j]];
      for (std::size_t i = 0; i < d; ++i) sorted.at(i, j) = cb.centroids.at(i, perm[j]);
    }
    cb.centroids = std::move(sorted);
    cb.popularity = std::move(pop_sorted);
  }
  return cb;
}

std::size_t quantise(const Fragment& u, const QuantCodebook& cb) {
  std::size_t d = cb.dim(), n = cb.size();
  if (u.size() != d) {
    throw ShapeError("quantise: fragment length " + std::to_string(u.size()) +
                     " vs codebook dim " + std::to_string(d));
  }
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double diff = u[i] - cb.centroids.at(i, j);
      acc += diff * diff;
    }
    if (acc < best_d2) {  // strict: ties keep the lowest index
      best_d2 = acc;
      best = j;
    }
  }
  return best;
}

ErrorFeedbackState::ErrorFeedbackState(std::size_t length, bool enabled)
    : accumulator_(Tensor::zeros({length})), enabled_(enabled) {}

Tensor ErrorFeedbackState::apply(const num::Tensor& update) const {
  if (!enabled_) return update;
  if (update.size() != accumulator_.size()) {
    throw ShapeError("error feedback: length mismatch");
  }
  Tensor s = Tensor::zeros(update.shape());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = update[i] + accumulator_[i];
  return s;
}

void ErrorFeedbackState::record_residual(const num::Tensor& s,
                                         const num::Tensor& dequantised) {
  if (!enabled_) return;
  if (s.size() != accumulator_.size() || dequantised.size() != accumulator_.size()) {
    throw ShapeError("error feedback: length mismatch");
  }
  for (std::size_t i = 0; i < accumulator_.size(); ++i) {
    accumulator_[i] = s[i] - dequantised[i];
  }
}

double ErrorFeedbackState::accumulator_norm() const { return num::norm2(accumulator_); }

std::vector<Fragment> fragment_update(const num::Tensor& update, std::size_t d) {
  if (d == 0) throw InvalidArgument("fragment_update: d must be positive");
  std::size_t w = update.size();
  std::size_t count = (w + d - 1) / d;
  std::vector<Fragment> out;
  out.reserve(count);
  for (std::size_t f = 0; f < count; ++f) {
    Tensor frag = Tensor::zeros({d});
    for (std::size_t i = 0; i < d; ++i) {
      std::size_t pos = f * d + i;
      frag[i] = pos < w ? update[pos] : 0.0;
    }
    out.push_back(std::move(frag));
  }
  return out;
}

num::Tensor defragment(std::span<const Fragment> fragments, std::size_t length) {
  Tensor out = Tensor::zeros({length});
  std::size_t pos = 0;
  for (const Fragment& f : fragments) {
    for (std::size_t i = 0; i < f.size() && pos < length; ++i) out[pos++] = f[i];
  }
  if (pos != length) throw ShapeError("defragment: fragments cover less than length");
  return out;
}

num::Tensor dequantise(std::span<const std::size_t> indices, const QuantCodebook& cb,
                       std::size_t length) {
  std::vector<Fragment> frags;
  frags.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= cb.size()) throw InvalidArgument("dequantise: index out of range");
    frags.push_back(cb.centroid(idx));
  }
  return defragment(frags, length);
}

}  // namespace airsum::vq
