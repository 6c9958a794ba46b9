#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "airsum/decoder.hpp"
#include "airsum/feel.hpp"
#include "airsum/tape.hpp"
#include "airsum/tensor.hpp"
#include "airsum/ura.hpp"

namespace airsum::trainer {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDatasetVersion = 1;

// One collected FEEL round: the raw BS update plus every active device's
// error-feedback-corrected update.
struct RoundRecord {
  int round_index = 0;
  num::Tensor bs_update;
  std::vector<num::Tensor> device_updates;
  int ka = 0;
};

struct TrainConfig {
  // slot counts; partitioned into whole rounds
  std::size_t train_samples = 64000;
  std::size_t val_samples = 8000;
  std::size_t test_samples = 10000;
  std::size_t batch_size = 64;
  int max_epochs = 500;
  int patience = 20;
  double tolerance = 1e-6;
  double learning_rate = 1e-4;
  int lr_halving_patience = 10;
  double lambda_l1 = 0.01;
  double lambda_w = 0.001;
  double lambda_k = 0.01;
  double lambda_q = 0.1;
  bool quant_loss_enabled = false;
  double snr_min_db = 0.0;
  double snr_max_db = 20.0;
  double grad_clip_norm = 10.0;  // global l2 clip per optimiser step; 0 = off
  int layers = 10;
  std::size_t codebook_size = 128;    // n
  std::size_t codeword_length = 64;   // l
  std::size_t fragment_dim = 20;      // d
  bool popularity_ordering = true;
  bool curvature_aware = false;
  ura::CodebookMode codebook_mode = ura::CodebookMode::learned;
  double prior_ka_mean = 0.0;  // 0 = mean ka of the training records
  std::uint64_t seed = 1;
};

struct Checkpoint {
  decoder::DecoderParams params;
  ura::UraCodebook codebook;
  TrainConfig config;
  int epoch = 0;
  double val_loss = std::numeric_limits<double>::infinity();
  double prior_ka_mean = 1.0;

  feel::CommModel comm_model() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
  double max_row_norm_error = 0.0;  // |row norm of DW - 1| after the epoch
};

using EpochSink = std::function<void(const EpochStats&)>;

struct TrainResult {
  Checkpoint best;
  bool nan_abort = false;
  std::string abort_reason;
  double initial_val_loss = std::numeric_limits<double>::infinity();
  std::vector<EpochStats> history;
};

// Runs the perfect-aggregation FEEL loop of `config` and stores one record
// per round. Throws on a divergent run.
std::vector<RoundRecord> collect_dataset(const feel::FeelConfig& config,
                                         num::RngStream& rng);

struct LossWeights {
  double l1 = 0.01;
  double w = 0.001;
  double k = 0.01;
  double q = 0.0;  // 0 when the quantisation term is disabled
};

// L = |x_hat - x|^2 + l1 |x_hat|_1 / (|x|_1 + eps) + w |W^T W - I|_F^2
//   + k (ka_hat - ka)^2 + q * quant_residual
num::Var compose_loss(num::Var x_hat, const num::Tensor& x_true, num::Var ka_hat,
                      double ka_true, num::Var transform, const LossWeights& weights,
                      double quant_residual = 0.0);

// One EM-coupled mini-batch of fragment slots.
struct SlotBatch {
  std::span<const num::Tensor> truth;  // per-slot ground-truth counts, length n
  int ka = 0;
  double quant_residual = 0.0;
};

// Builds the full training-loss graph for one mini-batch: codeword synthesis
// from (D, W), transmission of each slot's ground truth, fixed per-slot SNR
// draws and noise from `stream_tag`-labelled streams, the unrolled decode
// with shared EM state, and the composed loss averaged over slots. `leaves`
// are the trainable leaves in the optimiser's canonical order.
struct LossGraph {
  num::Var loss;
  std::vector<num::Var> leaves;
};
LossGraph build_loss_graph(num::Tape& tape, const decoder::DecoderParams& params,
                           const ura::UraCodebook& codebook, const SlotBatch& batch,
                           const TrainConfig& config, double prior_ka_mean,
                           const std::string& stream_tag, bool trainable = true);

// Offline end-to-end pre-training of the decoder and URA codebook on the
// collected records. Gradients accumulate over all slots of a round with
// one optimiser update per round; EM statistics are shared within each
// mini-batch of slots. Returns the best-validation checkpoint.
TrainResult train(std::span<const RoundRecord> records, const TrainConfig& config,
                  const EpochSink& sink = {}, const Checkpoint* resume = nullptr);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_dataset(std::span<const RoundRecord> records, const std::filesystem::path& path);
std::vector<RoundRecord> load_dataset(const std::filesystem::path& path);

// Splits whole records until each part covers its requested slot count.
struct DatasetSplit {
  std::span<const RoundRecord> train, val, test;
};
DatasetSplit split_records(std::span<const RoundRecord> records, const TrainConfig& config);

std::size_t slots_per_record(const RoundRecord& record, std::size_t fragment_dim);

}  // namespace airsum::trainer
