#pragma once

#include <cstdint>

#include "airsum/rng.hpp"
#include "airsum/tensor.hpp"

namespace airsum::channel {

// AWGN multiple-access channel. SNR is the ratio of total received signal
// power to noise power; with unit-norm codewords the received power of a
// slot is ~K_a, so for a target SNR the per-sample noise variance scales
// linearly with the number of active devices:
//   sigma^2 = K_a / (l * 10^(snr_db/10)).
struct ChannelConfig {
  double snr_db = 10.0;
  std::int64_t ka_for_power = 0;  // active devices this slot
};

double noise_variance(const ChannelConfig& cfg, std::size_t codeword_length);

// y = signal + n with n ~ N(0, sigma^2 I).
num::Tensor apply(const num::Tensor& signal, const ChannelConfig& cfg,
                  num::RngStream& rng);

}  // namespace airsum::channel
