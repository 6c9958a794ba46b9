#include "airsum/channel.hpp"

#include <cmath>

#include "airsum/error.hpp"

namespace airsum::channel {

double noise_variance(const ChannelConfig& cfg, std::size_t codeword_length) {
  if (codeword_length == 0) throw InvalidArgument("noise_variance: l must be >= 1");
  if (cfg.ka_for_power < 0) throw InvalidArgument("noise_variance: negative ka");
  if (!std::isfinite(cfg.snr_db)) throw InvalidArgument("noise_variance: non-finite SNR");
  double snr_linear = std::pow(10.0, cfg.snr_db / 10.0);
  return static_cast<double>(cfg.ka_for_power) /
         (static_cast<double>(codeword_length) * snr_linear);
}

num::Tensor apply(const num::Tensor& signal, const ChannelConfig& cfg,
                  num::RngStream& rng) {
  double sigma = std::sqrt(noise_variance(cfg, signal.size()));
  num::Tensor y = num::Tensor::zeros(signal.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = signal[i] + sigma * rng.gauss();
  return y;
}

}  // namespace airsum::channel
