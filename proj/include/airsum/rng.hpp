#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "airsum/tensor.hpp"

namespace airsum::num {

// Seeded, labelled random stream. The (seed, label) pair fully determines
// the sequence, independent of platform or thread schedule; forked child
// streams are independent of the parent and of each other. Generation is
// self-contained (xoshiro256** + Box-Muller) so sequences are reproducible
// across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string label);

  // Child stream labelled "<label>/<sublabel>".
  RngStream fork(std::string_view sublabel) const;

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform_in(double lo, double hi);

  // Unbiased integer in [0, n); n must be positive.
  std::size_t index(std::size_t n);

  // Standard normal draw (Box-Muller, cached spare).
  double gauss();
  Tensor gauss_tensor(const Shape& shape);
  // Entries are +1 or -1 with equal probability.
  Tensor rademacher_tensor(const Shape& shape);

  // Index drawn with probability proportional to weight. Weights must be
  // non-negative and not all zero.
  std::size_t categorical(std::span<const double> weights);

  // Fisher-Yates shuffle of an index span.
  void shuffle(std::span<std::size_t> values);

 private:
  std::uint64_t seed_ = 0;
  std::string label_;
  std::uint64_t state_[4] = {0, 0, 0, 0};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace airsum::num
