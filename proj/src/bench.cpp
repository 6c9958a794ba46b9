#include "airsum/bench.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <iostream>
#include <mutex>
#include <sstream>

#include "airsum/channel.hpp"
#include "airsum/error.hpp"
#include "airsum/parallel.hpp"

namespace airsum::bench {

using num::RngStream;
using num::Tensor;

DecodeBenchResult run_decode_bench(std::span<const trainer::RoundRecord> records,
                                   const feel::CommModel& comm,
                                   const DecodeBenchConfig& config) {
  if (records.empty()) throw InvalidArgument("run_decode_bench: no records");
  std::size_t n = comm.codebook.codeword_count();
  if (n != config.quant_codebook_size) {
    throw InvalidArgument("run_decode_bench: codebook size mismatch");
  }
  Tensor sensing = comm.codebook.sensing();
  decoder::DecodeOptions options = comm.decode_options();
  options.collect_diagnostics = config.verbose;
  RngStream root(config.noise_seed, "bench");
  std::mutex diag_mutex;

  std::size_t rounds = records.size();
  if (config.max_rounds > 0) rounds = std::min(rounds, config.max_rounds);

  DecodeBenchResult result;
  double acc_sum = 0.0, mae_sum = 0.0;
  for (std::size_t r = 0; r < rounds; ++r) {
    const trainer::RoundRecord& rec = records[r];
    std::size_t slots = trainer::slots_per_record(rec, config.fragment_dim);
    if (config.max_slots > 0 && result.slots >= config.max_slots) break;

    std::vector<vq::Fragment> bs_fragments =
        vq::fragment_update(rec.bs_update, config.fragment_dim);
    vq::BuildOptions build;
    build.order_by_popularity = config.popularity_ordering;
    if (config.curvature_aware) {
      build.curvature = vq::CurvatureProxy::from_fragments(bs_fragments);
    }
    RngStream cb_rng = root.fork("cb/r" + std::to_string(r));
    vq::QuantCodebook cb =
        vq::build_codebook(bs_fragments, n, build, cb_rng, rec.round_index);

    std::vector<ura::ActivityVector> truth(slots);
    {
      std::vector<std::vector<std::size_t>> indices(rec.device_updates.size());
      for (std::size_t dev = 0; dev < rec.device_updates.size(); ++dev) {
        std::vector<vq::Fragment> frags =
            vq::fragment_update(rec.device_updates[dev], config.fragment_dim);
        indices[dev].reserve(frags.size());
        for (const vq::Fragment& f : frags) indices[dev].push_back(vq::quantise(f, cb));
      }
      for (std::size_t s = 0; s < slots; ++s) {
        std::vector<std::size_t> slot_indices(indices.size());
        for (std::size_t dev = 0; dev < indices.size(); ++dev) {
          slot_indices[dev] = indices[dev][s];
        }
        truth[s] = ura::encode_slot(slot_indices, n);
      }
    }

    channel::ChannelConfig chan{config.snr_db, rec.ka};
    std::vector<Tensor> received(slots);
    for (std::size_t s = 0; s < slots; ++s) {
      RngStream noise = root.fork("noise/r" + std::to_string(r) + "/s" + std::to_string(s));
      received[s] = channel::apply(ura::transmit(truth[s], sensing), chan, noise);
    }

    std::vector<Tensor> x_real(slots);
    std::vector<double> ka_slots(slots);
    parallel_for(slots, resolve_threads(config.threads), [&](std::size_t s) {
      decoder::DecodeResult res = decoder::decode(received[s], sensing, comm.params, options);
      if (config.verbose) {
        std::ostringstream line;
        line << "{\"round\":" << r << ",\"slot\":" << s << ",\"layers\":[";
        for (std::size_t layer = 0; layer < res.diag.layers.size(); ++layer) {
          const decoder::LayerDiag& d = res.diag.layers[layer];
          if (layer) line << ',';
          line << "{\"residual_norm\":" << d.residual_norm << ",\"ka_hat\":" << d.ka_hat
               << ",\"sigma2\":" << d.sigma2 << '}';
        }
        line << "]}";
        std::lock_guard<std::mutex> lock(diag_mutex);
        std::cerr << line.str() << '\n';
      }
      x_real[s] = std::move(res.x_hat);
      ka_slots[s] = res.ka_hat;
    });

    double ka_hat = 0.0;
    for (double k : ka_slots) ka_hat += k;
    ka_hat /= static_cast<double>(slots);
    mae_sum += std::abs(static_cast<double>(rec.ka) - ka_hat);

    std::int64_t ka_round = std::max<std::int64_t>(0, std::llround(ka_hat));
    for (std::size_t s = 0; s < slots; ++s) {
      ura::ActivityVector projected =
          decoder::project_counts(x_real[s], static_cast<double>(ka_round));
      acc_sum += feel::recovery_accuracy(truth[s], projected);
    }
    result.slots += slots;
    result.rounds += 1;
  }

  result.accuracy = acc_sum / static_cast<double>(result.slots);
  result.ka_mae = mae_sum / static_cast<double>(result.rounds);
  return result;
}

}  // namespace airsum::bench
