#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "airsum/rng.hpp"
#include "airsum/tensor.hpp"

namespace airsum::ura {

enum class CodebookMode { learned, fixed_gaussian, fixed_bernoulli };

const char* mode_name(CodebookMode mode);
CodebookMode mode_from_name(std::string_view name);

// Shared codeword dictionary in the two-matrix form C_syn = D W, where
// D (n x l) holds base codewords and W (l x l) is a learned transform.
// Every row of D W has unit l2 norm after renormalisation; the sensing
// matrix used by the channel and decoder is C = (D W)^T of shape (l, n),
// whose columns are the codewords.
struct UraCodebook {
  num::Tensor base;       // D (n, l)
  num::Tensor transform;  // W (l, l)
  CodebookMode mode = CodebookMode::fixed_gaussian;

  std::size_t codeword_count() const { return base.extent(0); }   // n
  std::size_t codeword_length() const { return base.extent(1); }  // l
  bool trainable() const { return mode == CodebookMode::learned; }

  num::Tensor synthesis() const;  // D W, (n, l)
  num::Tensor sensing() const;    // (D W)^T, (l, n)
};

// D drawn standard Gaussian (or +-1 Bernoulli), W identity, rows of D W
// scaled to unit norm.
UraCodebook init_codebook(std::size_t n, std::size_t l, CodebookMode mode,
                          num::RngStream& rng);

// Per-codeword transmission counts for one fragment slot.
struct ActivityVector {
  std::vector<std::int64_t> counts;

  std::int64_t total() const;
  std::size_t size() const { return counts.size(); }
};

// counts[j] = number of devices whose quantiser chose index j.
ActivityVector encode_slot(std::span<const std::size_t> indices, std::size_t n);

// Noiseless superposed signal C x.
num::Tensor transmit(const ActivityVector& x, const num::Tensor& sensing);
num::Tensor transmit(const ActivityVector& x, const UraCodebook& cb);

// Rescales rows of D so that rows of D W have unit l2 norm. Applied as a
// projection after optimiser updates, never through the gradient tape.
void renormalise(UraCodebook& cb);

// Squared Frobenius norm of W^T W - I.
double orthogonality_penalty(const UraCodebook& cb);

}  // namespace airsum::ura
