#pragma once

#include <optional>
#include <span>
#include <vector>

#include "airsum/rng.hpp"
#include "airsum/tensor.hpp"

namespace airsum::vq {

// A fragment is a length-d slice of a model update.
using Fragment = num::Tensor;

// Diagonal whitening proxy built from the base station's fragment
// population: scale_i = 1/sqrt(var_i + epsilon).
struct CurvatureProxy {
  std::vector<double> mean;
  std::vector<double> scale;
  double epsilon = 1e-8;

  static CurvatureProxy from_fragments(std::span<const Fragment> fragments,
                                       double epsilon = 1e-8);
};

// Per-round quantisation codebook: d x n centroid matrix with a popularity
// distribution sorted non-increasing over columns.
struct QuantCodebook {
  num::Tensor centroids;           // (d, n), column j is centroid q_j
  std::vector<double> popularity;  // length n, sums to 1, non-increasing
  int round_index = 0;

  std::size_t dim() const { return centroids.extent(0); }
  std::size_t size() const { return centroids.extent(1); }
  Fragment centroid(std::size_t j) const;
};

struct BuildOptions {
  bool order_by_popularity = true;
  std::optional<CurvatureProxy> curvature;
};

// k-means++ seeding over the fragments (no Lloyd refinement), nearest
// neighbour assignment of the inputs to form the popularity distribution,
// then a sort by descending popularity. With a curvature proxy, seeding
// runs in the whitened space and centroids are mapped back.
QuantCodebook build_codebook(std::span<const Fragment> bs_fragments, std::size_t n,
                             const BuildOptions& options, num::RngStream& rng,
                             int round_index = 0);

// Index of the centroid nearest to u in Euclidean distance; ties resolve
// to the lowest index (the more popular centroid).
std::size_t quantise(const Fragment& u, const QuantCodebook& cb);

// Device-side error-feedback accumulator.
class ErrorFeedbackState {
 public:
  explicit ErrorFeedbackState(std::size_t length, bool enabled = true);

  // s = update + accumulator (or the update itself when disabled).
  num::Tensor apply(const num::Tensor& update) const;
  // accumulator <- s - Q(s); no-op when disabled.
  void record_residual(const num::Tensor& s, const num::Tensor& dequantised);

  bool enabled() const { return enabled_; }
  const num::Tensor& accumulator() const { return accumulator_; }
  double accumulator_norm() const;

 private:
  num::Tensor accumulator_;
  bool enabled_;
};

// Splits an update into ceil(W/d) fragments of length d, zero-padding the
// tail; defragment strips the pad again.
std::vector<Fragment> fragment_update(const num::Tensor& update, std::size_t d);
num::Tensor defragment(std::span<const Fragment> fragments, std::size_t length);

// De-quantisation of an index sequence back to a length-`length` vector.
num::Tensor dequantise(std::span<const std::size_t> indices, const QuantCodebook& cb,
                       std::size_t length);

}  // namespace airsum::vq
