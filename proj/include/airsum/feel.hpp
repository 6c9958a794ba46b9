#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "airsum/aggregate.hpp"
#include "airsum/decoder.hpp"
#include "airsum/rng.hpp"
#include "airsum/tensor.hpp"
#include "airsum/ura.hpp"
#include "airsum/vq.hpp"

namespace airsum::feel {

// Synthetic classification task: Gaussian-mixture inputs, two-layer
// perceptron (or a linear softmax classifier when hidden == 0).
struct TaskSpec {
  std::size_t input_dim = 16;
  std::size_t hidden = 128;
  std::size_t classes = 8;

  std::size_t param_count() const;
};

struct SyntheticData {
  num::Tensor features;  // (count, input_dim)
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
};

// Balanced class labels; sample = class mean + unit Gaussian noise, class
// means drawn N(0, class_scale^2 I).
SyntheticData make_gaussian_mixture(const TaskSpec& task, std::size_t count,
                                    double class_scale, num::RngStream& rng);

namespace mlp {
num::Tensor init_weights(const TaskSpec& task, num::RngStream& rng);
void logits(const TaskSpec& task, const num::Tensor& w, std::span<const double> x,
            std::span<double> out);
double dataset_loss(const TaskSpec& task, const num::Tensor& w, const SyntheticData& data,
                    std::span<const std::size_t> idx);
double dataset_accuracy(const TaskSpec& task, const num::Tensor& w,
                        const SyntheticData& data, std::span<const std::size_t> idx);
}  // namespace mlp

// E epochs of minibatch SGD on the cross-entropy loss over the given
// sample indices; returns the parameter delta w_k - w.
num::Tensor local_train(const TaskSpec& task, const num::Tensor& w,
                        const SyntheticData& data, std::span<const std::size_t> idx,
                        int epochs, double lr, std::size_t batch, num::RngStream& rng);

// iid_fraction of the samples dealt uniformly; the remainder label-sorted,
// cut into contiguous shards and dealt sequentially. Per-device sizes are
// equal up to one sample.
std::vector<std::vector<std::size_t>> partition_data(std::span<const int> labels,
                                                     std::size_t total_devices,
                                                     double iid_fraction,
                                                     num::RngStream& rng);

// Replacement update for a corrupted device: IID Gaussian entries whose
// expected norm matches scale_norm (the running mean of honest norms).
num::Tensor corrupt(const num::Tensor& delta_w, double scale_norm, num::RngStream& rng);

// Normalised l1 accuracy 1 - |x - x_hat|_1 / |x|_1.
double recovery_accuracy(const ura::ActivityVector& x, const ura::ActivityVector& x_hat);

// Trained (or baseline) communication stack used by the digital uplink.
struct CommModel {
  decoder::DecoderParams params;
  ura::UraCodebook codebook;
  decoder::Mode mode = decoder::Mode::learned;
  double prior_ka_mean = 1.0;
  int x_max = 0;
  int layers = 0;

  decoder::DecodeOptions decode_options() const;
  static CommModel fixed_baseline(std::size_t n, std::size_t l, int layers,
                                  double prior_ka_mean, std::uint64_t seed);
};

struct UplinkConfig {
  enum class Kind { perfect, digital_ota };
  Kind kind = Kind::perfect;
  aggregate::AggregationRule rule = aggregate::AggregationRule::mean();
  double snr_db = 10.0;
  // Testing hook: bypass the decoder and hand the true activity vectors to
  // the aggregation path (perfect decoding).
  bool oracle_decode = false;
};

struct FeelConfig {
  std::size_t total_devices = 40;
  int ka_min = 2;
  int ka_max = 4;
  int rounds = 60;
  int local_epochs = 1;
  std::size_t local_batch = 32;
  double local_lr = 0.05;
  double global_lr = 1.0;
  double iid_fraction = 0.2;
  double corruption_fraction = 0.0;
  // corrupted-update noise norm as a multiple of the running honest norm
  double corruption_noise_scale = 1.0;
  bool error_feedback = true;
  bool include_bs = false;
  bool curvature_aware = false;
  bool popularity_ordering = true;
  TaskSpec task;
  std::size_t device_dataset_size = 4000;
  std::size_t bs_dataset_size = 512;
  std::size_t eval_dataset_size = 1024;
  double class_scale = 1.6;
  std::size_t fragment_dim = 20;
  std::size_t quant_codebook_size = 32;
  UplinkConfig uplink;
  std::uint64_t seed = 1;
  int threads = 1;

  std::size_t slot_count() const;
};

struct RoundMetrics {
  int round = 0;
  int ka_true = 0;
  double ka_hat = 0.0;  // pre-rounding, averaged across fragments
  double mae_running = 0.0;
  double recovery_acc = 0.0;
  double test_acc = 0.0;
  double global_loss = 0.0;
};

// One collected training-round record: raw BS update plus each active
// device's error-feedback-corrected update.
struct RoundRecordView {
  int round = 0;
  const num::Tensor& bs_update;
  const std::vector<num::Tensor>& device_updates;
  int ka = 0;
};

struct RunHooks {
  std::function<void(const RoundRecordView&)> on_record;
  std::ostream* metrics_csv = nullptr;  // header + one row per round
  bool verbose = false;
  // extra CSV columns
  std::string rule_label;
  double snr_db_label = 0.0;
  std::string mode_label;
  std::uint64_t seed_label = 0;
};

struct RunResult {
  std::vector<RoundMetrics> metrics;
  num::Tensor final_model;
  bool diverged = false;
  int ef_warnings = 0;

  double final_test_accuracy(std::size_t tail = 5) const;
};

// Number of corrupted devices in a round: round(fraction * ka).
std::size_t corrupt_count(double fraction, int ka);

void write_metrics_header(std::ostream& os);

// Full FEEL loop. `comm` must be provided for the digital uplink and is
// ignored for perfect aggregation.
RunResult run(const FeelConfig& config, const CommModel* comm, const RunHooks& hooks);

inline RunResult run(const FeelConfig& config) { return run(config, nullptr, {}); }

}  // namespace airsum::feel
