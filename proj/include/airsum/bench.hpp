#pragma once

#include <cstdint>
#include <span>

#include "airsum/feel.hpp"
#include "airsum/trainer.hpp"

namespace airsum::bench {

// Decoder-only benchmark over collected round records: per round, build the
// quantisation codebook from the BS update, quantise the device updates,
// superpose + add noise at the given SNR, decode every fragment slot, and
// score recovery accuracy and the active-device estimate.
struct DecodeBenchConfig {
  double snr_db = 10.0;
  std::size_t max_rounds = 0;  // 0 = all records
  std::size_t max_slots = 0;   // 0 = no cap
  bool popularity_ordering = true;
  bool curvature_aware = false;
  std::size_t fragment_dim = 20;
  std::size_t quant_codebook_size = 32;
  std::uint64_t noise_seed = 1;
  int threads = 1;
  // emit per-slot decoder diagnostics as JSON lines on stderr
  bool verbose = false;
};

struct DecodeBenchResult {
  double accuracy = 0.0;     // mean normalised l1 accuracy over slots
  double ka_mae = 0.0;       // mean |ka - ka_hat| over rounds, pre-rounding
  std::size_t slots = 0;
  std::size_t rounds = 0;
};

DecodeBenchResult run_decode_bench(std::span<const trainer::RoundRecord> records,
                                   const feel::CommModel& comm,
                                   const DecodeBenchConfig& config);

}  // namespace airsum::bench
