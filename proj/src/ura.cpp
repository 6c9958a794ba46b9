#include "airsum/ura.hpp"

#include <cmath>
#include <string>

#include "airsum/error.hpp"

namespace airsum::ura {

using num::Tensor;

const char* mode_name(CodebookMode mode) {
  switch (mode) {
    case CodebookMode::learned: return "learned";
    case CodebookMode::fixed_gaussian: return "fixed_gaussian";
    case CodebookMode::fixed_bernoulli: return "fixed_bernoulli";
  }
  return "unknown";
}

CodebookMode mode_from_name(std::string_view name) {
  if (name == "learned") return CodebookMode::learned;
  if (name == "fixed_gaussian") return CodebookMode::fixed_gaussian;
  if (name == "fixed_bernoulli") return CodebookMode::fixed_bernoulli;
  throw InvalidArgument("unknown codebook mode: " + std::string(name));
}

Tensor UraCodebook::synthesis() const {
  std::size_t n = codeword_count(), l = codeword_length();
  Tensor syn = Tensor::zeros({n, l});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < l; ++k) {
      double b = base.at(i, k);
      if (b == 0.0) continue;
      for (std::size_t j = 0; j < l; ++j) syn.at(i, j) += b * transform.at(k, j);
    }
  }
  return syn;
}

Tensor UraCodebook::sensing() const {
  Tensor syn = synthesis();
  std::size_t n = codeword_count(), l = codeword_length();
  Tensor c = Tensor::zeros({l, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j) c.at(j, i) = syn.at(i, j);
  return c;
}

UraCodebook init_codebook(std::size_t n, std::size_t l, CodebookMode mode,
                          num::RngStream& rng) {
  if (n == 0 || l == 0) throw InvalidArgument("init_codebook: n and l must be >= 1");
  UraCodebook cb;
  cb.mode = mode;
  cb.base = (mode == CodebookMode::fixed_bernoulli) ? rng.rademacher_tensor({n, l})
                                                    : rng.gauss_tensor({n, l});
  cb.transform = Tensor::identity(l);
  renormalise(cb);
  return cb;
}

std::int64_t ActivityVector::total() const {
  std::int64_t acc = 0;
  for (std::int64_t c : counts) acc += c;
  return acc;
}

ActivityVector encode_slot(std::span<const std::size_t> indices, std::size_t n) {
  ActivityVector x;
  x.counts.assign(n, 0);
  for (std::size_t idx : indices) {
    if (idx >= n) {
      throw InvalidArgument("encode_slot: index " + std::to_string(idx) +
                            " out of range for " + std::to_string(n) + " codewords");
    }
    x.counts[idx]++;
  }
  return x;
}

Tensor transmit(const ActivityVector& x, const num::Tensor& sensing) {
  std::size_t l = sensing.extent(0), n = sensing.extent(1);
  if (x.size() != n) throw ShapeError("transmit: activity length mismatch");
  Tensor y = Tensor::zeros({l});
  for (std::size_t j = 0; j < n; ++j) {
    double c = static_cast<double>(x.counts[j]);
    if (c == 0.0) continue;
    for (std::size_t i = 0; i < l; ++i) y[i] += sensing.at(i, j) * c;
  }
  return y;
}

Tensor transmit(const ActivityVector& x, const UraCodebook& cb) {
  return transmit(x, cb.sensing());
}

void renormalise(UraCodebook& cb) {
  std::size_t n = cb.codeword_count(), l = cb.codeword_length();
  Tensor syn = cb.synthesis();
  for (std::size_t i = 0; i < n; ++i) {
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < l; ++j) norm_sq += syn.at(i, j) * syn.at(i, j);
    double norm = std::sqrt(norm_sq);
    if (!(norm > 0.0)) {
      throw NumericError("renormalise: zero-norm codeword row " + std::to_string(i));
    }
    double inv = 1.0 / norm;
    for (std::size_t j = 0; j < l; ++j) cb.base.at(i, j) *= inv;
  }
}

double orthogonality_penalty(const UraCodebook& cb) {
  std::size_t l = cb.codeword_length();
  const Tensor& w = cb.transform;
  double penalty = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < l; ++k) acc += w.at(k, i) * w.at(k, j);
      double target = (i == j) ? 1.0 : 0.0;
      double diff = acc - target;
      penalty += diff * diff;
    }
  }
  return penalty;
}

}  // namespace airsum::ura
