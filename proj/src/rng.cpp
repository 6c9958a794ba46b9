#include "airsum/rng.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "airsum/error.hpp"

namespace airsum::num {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string label)
    : seed_(seed), label_(std::move(label)) {
  std::uint64_t mix = seed_ ^ fnv1a64(label_);
  for (auto& s : state_) s = splitmix64(mix);
}

RngStream RngStream::fork(std::string_view sublabel) const {
  std::string child = label_;
  child += '/';
  child += sublabel;
  return RngStream(seed_, std::move(child));
}

std::uint64_t RngStream::next_u64() {
  // xoshiro256**
  std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_in(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::size_t RngStream::index(std::size_t n) {
  if (n == 0) throw InvalidArgument("RngStream::index: n must be positive");
  // rejection sampling to stay unbiased
  std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= bound);
  return static_cast<std::size_t>(draw % n);
}

double RngStream::gauss() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u strictly positive so log stays finite.
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 0.0);
  double v = uniform();
  double radius = std::sqrt(-2.0 * std::log(u));
  double angle = 2.0 * std::numbers::pi * v;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Tensor RngStream::gauss_tensor(const Shape& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.mutable_data()) v = gauss();
  return t;
}

Tensor RngStream::rademacher_tensor(const Shape& shape) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.mutable_data()) v = (next_u64() & 1) ? 1.0 : -1.0;
  return t;
}

std::size_t RngStream::categorical(std::span<const double> weights) {
  if (weights.empty()) throw InvalidArgument("categorical: empty weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidArgument("categorical: negative or NaN weight");
    total += w;
  }
  if (total <= 0.0) throw InvalidArgument("categorical: all weights zero");
  double u = uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) last_positive = i;
    cum += weights[i];
    if (u < cum && weights[i] > 0.0) return i;
  }
  return last_positive;  // guards against rounding at the upper edge
}

void RngStream::shuffle(std::span<std::size_t> values) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::size_t j = index(i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace airsum::num
