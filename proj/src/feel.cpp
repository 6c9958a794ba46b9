#include "airsum/feel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>

#include "airsum/channel.hpp"
#include "airsum/error.hpp"
#include "airsum/parallel.hpp"
#include "airsum/tape.hpp"

namespace airsum::feel {

using num::RngStream;
using num::Tensor;
using num::Var;

std::size_t TaskSpec::param_count() const {
  if (hidden == 0) return classes * input_dim + classes;
  return hidden * input_dim + hidden + classes * hidden + classes;
}

std::size_t FeelConfig::slot_count() const {
  std::size_t w = task.param_count();
  return (w + fragment_dim - 1) / fragment_dim;
}

SyntheticData make_gaussian_mixture(const TaskSpec& task, std::size_t count,
                                    double class_scale, RngStream& rng) {
  SyntheticData data;
  data.features = Tensor::zeros({count, task.input_dim});
  data.labels.resize(count);
  Tensor means = rng.fork("means").gauss_tensor({task.classes, task.input_dim});
  for (double& m : means.mutable_data()) m *= class_scale;
  // balanced labels, then shuffled
  for (std::size_t i = 0; i < count; ++i) data.labels[i] = static_cast<int>(i % task.classes);
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream shuffle_rng = rng.fork("shuffle");
  shuffle_rng.shuffle(perm);
  std::vector<int> shuffled(count);
  for (std::size_t i = 0; i < count; ++i) shuffled[i] = data.labels[perm[i]];
  data.labels = std::move(shuffled);
  RngStream noise = rng.fork("noise");
  for (std::size_t i = 0; i < count; ++i) {
    int label = data.labels[i];
    for (std::size_t j = 0; j < task.input_dim; ++j) {
      data.features.at(i, j) = means.at(label, j) + noise.gauss();
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// two-layer perceptron
// ---------------------------------------------------------------------------

namespace mlp {

namespace {

struct Unpacked {
  Tensor w1, b1, w2, b2;  // w2/b2 unused when hidden == 0
  bool has_hidden = false;
};

Unpacked unpack(const TaskSpec& task, const Tensor& w) {
  Unpacked u;
  u.has_hidden = task.hidden > 0;
  std::size_t pos = 0;
  auto take = [&](num::Shape shape) {
    std::size_t n = num::shape_size(shape);
    std::vector<double> data(w.data().begin() + pos, w.data().begin() + pos + n);
    pos += n;
    return Tensor::from_data(std::move(shape), std::move(data));
  };
  if (u.has_hidden) {
    u.w1 = take({task.hidden, task.input_dim});
    u.b1 = take({task.hidden});
    u.w2 = take({task.classes, task.hidden});
    u.b2 = take({task.classes});
  } else {
    u.w1 = take({task.classes, task.input_dim});
    u.b1 = take({task.classes});
  }
  return u;
}

Tensor pack(const TaskSpec& task, const Unpacked& u) {
  Tensor w = Tensor::zeros({task.param_count()});
  std::size_t pos = 0;
  auto put = [&](const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) w[pos++] = t[i];
  };
  put(u.w1);
  put(u.b1);
  if (u.has_hidden) {
    put(u.w2);
    put(u.b2);
  }
  return w;
}

}  // namespace

Tensor init_weights(const TaskSpec& task, RngStream& rng) {
  Unpacked u;
  u.has_hidden = task.hidden > 0;
  RngStream r = rng.fork("mlp_init");
  if (u.has_hidden) {
    u.w1 = r.gauss_tensor({task.hidden, task.input_dim});
    for (double& v : u.w1.mutable_data()) v *= std::sqrt(2.0 / task.input_dim);
    u.b1 = Tensor::zeros({task.hidden});
    u.w2 = r.gauss_tensor({task.classes, task.hidden});
    for (double& v : u.w2.mutable_data()) v *= std::sqrt(2.0 / task.hidden);
    u.b2 = Tensor::zeros({task.classes});
  } else {
    u.w1 = r.gauss_tensor({task.classes, task.input_dim});
    for (double& v : u.w1.mutable_data()) v *= std::sqrt(2.0 / task.input_dim);
    u.b1 = Tensor::zeros({task.classes});
  }
  return pack(task, u);
}

void logits(const TaskSpec& task, const Tensor& w, std::span<const double> x,
            std::span<double> out) {
  Unpacked u = unpack(task, w);
  if (!u.has_hidden) {
    for (std::size_t c = 0; c < task.classes; ++c) {
      double acc = u.b1[c];
      for (std::size_t j = 0; j < task.input_dim; ++j) acc += u.w1.at(c, j) * x[j];
      out[c] = acc;
    }
    return;
  }
  std::vector<double> h(task.hidden);
  for (std::size_t i = 0; i < task.hidden; ++i) {
    double acc = u.b1[i];
    for (std::size_t j = 0; j < task.input_dim; ++j) acc += u.w1.at(i, j) * x[j];
    h[i] = acc > 0.0 ? acc : 0.0;
  }
  for (std::size_t c = 0; c < task.classes; ++c) {
    double acc = u.b2[c];
    for (std::size_t i = 0; i < task.hidden; ++i) acc += u.w2.at(c, i) * h[i];
    out[c] = acc;
  }
}

namespace {

double sample_ce(const TaskSpec& task, std::span<const double> lg, int label) {
  double max_logit = lg[0];
  for (std::size_t c = 1; c < task.classes; ++c) max_logit = std::max(max_logit, lg[c]);
  double lse = 0.0;
  for (std::size_t c = 0; c < task.classes; ++c) lse += std::exp(lg[c] - max_logit);
  return max_logit + std::log(lse) - lg[label];
}

}  // namespace

double dataset_loss(const TaskSpec& task, const Tensor& w, const SyntheticData& data,
                    std::span<const std::size_t> idx) {
  if (idx.empty()) throw InvalidArgument("dataset_loss: empty index set");
  std::vector<double> lg(task.classes);
  std::vector<double> x(task.input_dim);
  double acc = 0.0;
  for (std::size_t i : idx) {
    for (std::size_t j = 0; j < task.input_dim; ++j) x[j] = data.features.at(i, j);
    logits(task, w, x, lg);
    acc += sample_ce(task, lg, data.labels[i]);
  }
  return acc / static_cast<double>(idx.size());
}

double dataset_accuracy(const TaskSpec& task, const Tensor& w, const SyntheticData& data,
                        std::span<const std::size_t> idx) {
  if (idx.empty()) throw InvalidArgument("dataset_accuracy: empty index set");
  std::vector<double> lg(task.classes);
  std::vector<double> x(task.input_dim);
  std::size_t hits = 0;
  for (std::size_t i : idx) {
    for (std::size_t j = 0; j < task.input_dim; ++j) x[j] = data.features.at(i, j);
    logits(task, w, x, lg);
    std::size_t best = 0;
    for (std::size_t c = 1; c < task.classes; ++c) {
      if (lg[c] > lg[best]) best = c;
    }
    if (static_cast<int>(best) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace mlp

// ---------------------------------------------------------------------------
// local SGD
// ---------------------------------------------------------------------------

namespace {

// Mean cross-entropy over a logits matrix (classes, batch) as a fused tape
// primitive; backward is (softmax - onehot) / batch.
Var cross_entropy_mean(Var logits, const std::vector<int>& labels) {
  const Tensor& lv = logits.value();
  std::size_t classes = lv.extent(0), batch = lv.extent(1);
  if (labels.size() != batch) throw ShapeError("cross_entropy_mean: label count mismatch");
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double max_logit = lv.at(0, b);
    for (std::size_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, lv.at(c, b));
    double lse = 0.0;
    for (std::size_t c = 0; c < classes; ++c) lse += std::exp(lv.at(c, b) - max_logit);
    total += max_logit + std::log(lse) - lv.at(static_cast<std::size_t>(labels[b]), b);
  }
  total /= static_cast<double>(batch);
  return logits.tape->make(
      "cross_entropy_mean", Tensor::scalar(total),
      [logits, labels, classes, batch](const Tensor& g, num::GradSink& sink) {
        const Tensor& lv = logits.value();
        Tensor gl = Tensor::zeros({classes, batch});
        double scale = g[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          double max_logit = lv.at(0, b);
          for (std::size_t c = 1; c < classes; ++c)
            max_logit = std::max(max_logit, lv.at(c, b));
          double lse = 0.0;
          for (std::size_t c = 0; c < classes; ++c) lse += std::exp(lv.at(c, b) - max_logit);
          for (std::size_t c = 0; c < classes; ++c) {
            double softmax = std::exp(lv.at(c, b) - max_logit) / lse;
            double onehot = (static_cast<int>(c) == labels[b]) ? 1.0 : 0.0;
            gl.at(c, b) += scale * (softmax - onehot);
          }
        }
        sink.add(logits.id, std::move(gl));
      });
}

}  // namespace

Tensor local_train(const TaskSpec& task, const Tensor& w, const SyntheticData& data,
                   std::span<const std::size_t> idx, int epochs, double lr,
                   std::size_t batch, RngStream& rng) {
  if (epochs < 1) throw InvalidArgument("local_train: epochs must be >= 1");
  if (idx.empty()) throw InvalidArgument("local_train: empty dataset");
  if (w.size() != task.param_count()) throw ShapeError("local_train: weight length mismatch");
  batch = std::min(batch == 0 ? idx.size() : batch, idx.size());

  // weight tensors mutated across minibatches, repacked at the end
  std::vector<Tensor> weights;
  std::vector<num::Shape> shapes;
  if (task.hidden > 0) {
    shapes = {{task.hidden, task.input_dim}, {task.hidden},
              {task.classes, task.hidden},   {task.classes}};
  } else {
    shapes = {{task.classes, task.input_dim}, {task.classes}};
  }
  std::size_t pos = 0;
  for (const auto& shape : shapes) {
    std::size_t count = num::shape_size(shape);
    std::vector<double> chunk(w.data().begin() + pos, w.data().begin() + pos + count);
    pos += count;
    weights.push_back(Tensor::from_data(shape, std::move(chunk)));
  }

  std::vector<std::size_t> order(idx.begin(), idx.end());
  for (int e = 0; e < epochs; ++e) {
    RngStream epoch_rng = rng.fork("epoch" + std::to_string(e));
    epoch_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t stop = std::min(start + batch, order.size());
      std::size_t bsize = stop - start;
      Tensor xb = Tensor::zeros({task.input_dim, bsize});
      std::vector<int> labels(bsize);
      for (std::size_t b = 0; b < bsize; ++b) {
        std::size_t i = order[start + b];
        labels[b] = data.labels[i];
        for (std::size_t j = 0; j < task.input_dim; ++j) {
          xb.at(j, b) = data.features.at(i, j);
        }
      }
      num::Tape tape;
      std::vector<Var> leaves;
      leaves.reserve(weights.size());
      for (const Tensor& t : weights) leaves.push_back(tape.leaf(t, true));
      Var x = tape.constant(std::move(xb));
      Var logits_var;
      if (task.hidden > 0) {
        Var h = num::relu(num::channel_bias(num::matmul(leaves[0], x), leaves[1]));
        logits_var = num::channel_bias(num::matmul(leaves[2], h), leaves[3]);
      } else {
        logits_var = num::channel_bias(num::matmul(leaves[0], x), leaves[1]);
      }
      Var loss = cross_entropy_mean(logits_var, labels);
      num::Gradients grads = tape.backward(loss);
      for (std::size_t t = 0; t < weights.size(); ++t) {
        const Tensor& g = grads.at(leaves[t]);
        auto wd = weights[t].mutable_data();
        for (std::size_t i = 0; i < wd.size(); ++i) wd[i] -= lr * g[i];
      }
    }
  }

  Tensor delta = Tensor::zeros({task.param_count()});
  pos = 0;
  for (const Tensor& t : weights) {
    for (std::size_t i = 0; i < t.size(); ++i, ++pos) delta[pos] = t[i] - w[pos];
  }
  delta.ensure_finite("local_train delta");
  return delta;
}

// ---------------------------------------------------------------------------
// partitioning, corruption, metrics helpers
// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> partition_data(std::span<const int> labels,
                                                     std::size_t total_devices,
                                                     double iid_fraction,
                                                     RngStream& rng) {
  if (total_devices == 0) throw InvalidArgument("partition_data: no devices");
  if (iid_fraction < 0.0 || iid_fraction > 1.0) {
    throw InvalidArgument("partition_data: iid_fraction outside [0,1]");
  }
  std::size_t count = labels.size();
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream r = rng.fork("partition");
  r.shuffle(perm);

  std::size_t n_iid = static_cast<std::size_t>(std::llround(iid_fraction * count));
  std::vector<std::vector<std::size_t>> devices(total_devices);

  // per-device target sizes, equal up to one sample
  std::vector<std::size_t> target(total_devices, count / total_devices);
  for (std::size_t k = 0; k < count % total_devices; ++k) target[k]++;

  // IID part: dealt round-robin
  for (std::size_t i = 0; i < n_iid; ++i) devices[i % total_devices].push_back(perm[i]);

  // non-IID remainder: label-sorted, contiguous shards whose sizes top each
  // device up to its target
  std::vector<std::size_t> rest(perm.begin() + n_iid, perm.end());
  std::stable_sort(rest.begin(), rest.end(),
                   [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });
  if (!rest.empty()) {
    std::size_t pos = 0;
    for (std::size_t k = 0; k < total_devices; ++k) {
      if (devices[k].size() > target[k]) {
        throw InvalidArgument("partition_data: iid deal exceeded device target");
      }
      std::size_t want = target[k] - devices[k].size();
      if (want == 0 && iid_fraction < 1.0) {
        // a device with no shard would break the sharding contract
        if (pos >= rest.size()) throw InvalidArgument("partition_data: fewer shards than devices");
      }
      for (std::size_t i = 0; i < want; ++i) {
        if (pos >= rest.size()) throw InvalidArgument("partition_data: fewer shards than devices");
        devices[k].push_back(rest[pos++]);
      }
    }
    if (pos != rest.size()) throw InvalidArgument("partition_data: unassigned samples");
  }
  return devices;
}

Tensor corrupt(const Tensor& delta_w, double scale_norm, RngStream& rng) {
  std::size_t w = delta_w.size();
  double sigma = scale_norm / std::sqrt(static_cast<double>(w));
  Tensor noise = Tensor::zeros(delta_w.shape());
  for (std::size_t i = 0; i < w; ++i) noise[i] = sigma * rng.gauss();
  return noise;
}

double recovery_accuracy(const ura::ActivityVector& x, const ura::ActivityVector& x_hat) {
  if (x.size() != x_hat.size()) throw ShapeError("recovery_accuracy: length mismatch");
  std::int64_t l1_true = 0, l1_err = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    l1_true += std::abs(x.counts[j]);
    l1_err += std::abs(x.counts[j] - x_hat.counts[j]);
  }
  if (l1_true == 0) throw InvalidArgument("recovery_accuracy: zero ground truth");
  return 1.0 - static_cast<double>(l1_err) / static_cast<double>(l1_true);
}

// ---------------------------------------------------------------------------
// communication model
// ---------------------------------------------------------------------------

decoder::DecodeOptions CommModel::decode_options() const {
  decoder::DecodeOptions options;
  options.mode = mode;
  options.prior_ka_mean = prior_ka_mean;
  options.x_max = x_max;
  return options;
}

CommModel CommModel::fixed_baseline(std::size_t n, std::size_t l, int layers,
                                    double prior_ka_mean, std::uint64_t seed) {
  CommModel comm;
  RngStream rng(seed, "fixed_baseline");
  comm.codebook = ura::init_codebook(n, l, ura::CodebookMode::fixed_gaussian, rng);
  comm.params = decoder::DecoderParams::fixed_defaults(layers);
  comm.mode = decoder::Mode::fixed;
  comm.prior_ka_mean = prior_ka_mean;
  comm.layers = layers;
  return comm;
}

// ---------------------------------------------------------------------------
// round loop
// ---------------------------------------------------------------------------

std::size_t corrupt_count(double fraction, int ka) {
  return static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(ka)));
}

double RunResult::final_test_accuracy(std::size_t tail) const {
  if (metrics.empty()) return 0.0;
  std::size_t take = std::min(tail, metrics.size());
  double acc = 0.0;
  for (std::size_t i = metrics.size() - take; i < metrics.size(); ++i) {
    acc += metrics[i].test_acc;
  }
  return acc / static_cast<double>(take);
}

void write_metrics_header(std::ostream& os) {
  os << "round,ka_true,ka_hat,mae_running,recovery_acc,test_acc,global_loss,"
        "rule,snr_db,mode,seed\n";
}

namespace {

void write_metrics_row(std::ostream& os, const RoundMetrics& m, const RunHooks& hooks) {
  os << m.round << ',' << m.ka_true << ',' << m.ka_hat << ',' << m.mae_running << ','
     << m.recovery_acc << ',' << m.test_acc << ',' << m.global_loss << ','
     << hooks.rule_label << ',' << hooks.snr_db_label << ',' << hooks.mode_label << ','
     << hooks.seed_label << '\n';
}

struct HonestNormTracker {
  double mean = 0.0;
  std::size_t count = 0;

  void add(double norm) {
    ++count;
    mean += (norm - mean) / static_cast<double>(count);
  }
};

}  // namespace

RunResult run(const FeelConfig& config, const CommModel* comm, const RunHooks& hooks) {
  if (config.ka_min < 1 || config.ka_max < config.ka_min ||
      static_cast<std::size_t>(config.ka_max) > config.total_devices) {
    throw InvalidArgument("run: ka range must lie within [1, total_devices]");
  }
  const bool digital = config.uplink.kind == UplinkConfig::Kind::digital_ota;
  if (digital) {
    if (comm == nullptr) throw InvalidArgument("run: digital uplink requires a CommModel");
    if (comm->codebook.codeword_count() != config.quant_codebook_size) {
      throw InvalidArgument("run: URA codebook size must match quantisation codebook size");
    }
  }

  RngStream root(config.seed, "feel");
  const std::size_t w_len = config.task.param_count();
  const std::size_t d = config.fragment_dim;
  const std::size_t slots = config.slot_count();
  const std::size_t n = config.quant_codebook_size;

  // datasets: device pool, BS local data, held-out evaluation set
  RngStream data_rng = root.fork("data");
  std::size_t total_samples =
      config.device_dataset_size + config.bs_dataset_size + config.eval_dataset_size;
  SyntheticData data = make_gaussian_mixture(config.task, total_samples,
                                             config.class_scale, data_rng);
  std::vector<int> device_labels(data.labels.begin(),
                                 data.labels.begin() + config.device_dataset_size);
  RngStream part_rng = root.fork("split");
  auto device_idx = partition_data(device_labels, config.total_devices,
                                   config.iid_fraction, part_rng);
  std::vector<std::size_t> bs_idx(config.bs_dataset_size);
  std::iota(bs_idx.begin(), bs_idx.end(), config.device_dataset_size);
  std::vector<std::size_t> eval_idx(config.eval_dataset_size);
  std::iota(eval_idx.begin(), eval_idx.end(),
            config.device_dataset_size + config.bs_dataset_size);

  RngStream model_rng = root.fork("model");
  Tensor w = mlp::init_weights(config.task, model_rng);

  std::vector<vq::ErrorFeedbackState> ef_states(
      config.total_devices, vq::ErrorFeedbackState(w_len, config.error_feedback));
  HonestNormTracker honest_norms;

  Tensor sensing;
  if (digital) sensing = comm->codebook.sensing();

  RunResult result;
  if (hooks.metrics_csv) write_metrics_header(*hooks.metrics_csv);
  double mae_sum = 0.0;

  for (int round = 0; round < config.rounds; ++round) {
    RngStream round_rng = root.fork("round" + std::to_string(round));
    RoundMetrics metrics;
    metrics.round = round;

    try {
      // active set
      RngStream ka_rng = round_rng.fork("ka");
      int ka = config.ka_min +
               static_cast<int>(ka_rng.index(config.ka_max - config.ka_min + 1));
      std::vector<std::size_t> all_devices(config.total_devices);
      std::iota(all_devices.begin(), all_devices.end(), 0);
      RngStream active_rng = round_rng.fork("active");
      active_rng.shuffle(all_devices);
      std::vector<std::size_t> active(all_devices.begin(), all_devices.begin() + ka);
      metrics.ka_true = ka;

      // BS local training and, for the digital uplink, the round's
      // quantisation codebook
      RngStream bs_rng = round_rng.fork("bs");
      Tensor bs_delta = local_train(config.task, w, data, bs_idx, config.local_epochs,
                                    config.local_lr, config.local_batch, bs_rng);
      vq::QuantCodebook cb;
      if (digital) {
        std::vector<vq::Fragment> bs_fragments = vq::fragment_update(bs_delta, d);
        vq::BuildOptions build;
        build.order_by_popularity = config.popularity_ordering;
        if (config.curvature_aware) {
          build.curvature = vq::CurvatureProxy::from_fragments(bs_fragments);
        }
        RngStream cb_rng = round_rng.fork("cb");
        cb = vq::build_codebook(bs_fragments, n, build, cb_rng, round);
      }

      // device updates
      std::vector<Tensor> deltas(active.size());
      for (std::size_t a = 0; a < active.size(); ++a) {
        RngStream dev_rng = round_rng.fork("dev" + std::to_string(active[a]));
        deltas[a] = local_train(config.task, w, data, device_idx[active[a]],
                                config.local_epochs, config.local_lr,
                                config.local_batch, dev_rng);
      }

      // corruption: replace round(fraction * ka) updates with scaled noise
      std::size_t n_corrupt = corrupt_count(config.corruption_fraction, ka);
      std::vector<char> corrupted(active.size(), 0);
      if (n_corrupt > 0) {
        std::vector<std::size_t> order(active.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream pick = round_rng.fork("corrupt_pick");
        pick.shuffle(order);
        for (std::size_t i = 0; i < n_corrupt; ++i) corrupted[order[i]] = 1;
      }
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (!corrupted[a]) honest_norms.add(num::norm2(deltas[a]));
      }
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (corrupted[a]) {
          RngStream noise = round_rng.fork("corrupt" + std::to_string(active[a]));
          deltas[a] = corrupt(deltas[a], honest_norms.mean * config.corruption_noise_scale,
                              noise);
        }
      }

      // Error feedback and quantisation. The perfect uplink idealises the
      // whole transmit path, quantiser included, so its residuals are zero
      // and the accumulators stay at zero.
      std::vector<Tensor> s_vectors(active.size());
      std::vector<std::vector<std::size_t>> indices(active.size());
      for (std::size_t a = 0; a < active.size(); ++a) {
        vq::ErrorFeedbackState& ef = ef_states[active[a]];
        s_vectors[a] = ef.apply(deltas[a]);
        if (!digital) {
          ef.record_residual(s_vectors[a], s_vectors[a]);
          continue;
        }
        std::vector<vq::Fragment> frags = vq::fragment_update(s_vectors[a], d);
        indices[a].reserve(frags.size());
        for (const vq::Fragment& f : frags) indices[a].push_back(vq::quantise(f, cb));
        Tensor dequant = vq::dequantise(indices[a], cb, w_len);
        ef.record_residual(s_vectors[a], dequant);
        if (ef.enabled() &&
            ef.accumulator_norm() > 5.0 * num::norm2(deltas[a])) {
          ++result.ef_warnings;
          if (hooks.verbose) {
            std::cerr << "[warn] round " << round << ": error-feedback accumulator of device "
                      << active[a] << " exceeds 5x the update norm\n";
          }
        }
      }

      if (hooks.on_record) {
        hooks.on_record(RoundRecordView{round, bs_delta, s_vectors, ka});
      }

      // uplink
      Tensor aggregate_update;
      if (!digital) {
        aggregate_update = Tensor::zeros({w_len});
        for (const Tensor& s : s_vectors) {
          for (std::size_t i = 0; i < w_len; ++i) aggregate_update[i] += s[i];
        }
        for (std::size_t i = 0; i < w_len; ++i) {
          aggregate_update[i] /= static_cast<double>(active.size());
        }
        metrics.ka_hat = static_cast<double>(ka);
        metrics.recovery_acc = 1.0;
      } else {
        std::vector<ura::ActivityVector> truth(slots);
        std::vector<Tensor> received(slots);
        channel::ChannelConfig chan{config.uplink.snr_db, ka};
        for (std::size_t i = 0; i < slots; ++i) {
          std::vector<std::size_t> slot_indices(active.size());
          for (std::size_t a = 0; a < active.size(); ++a) slot_indices[a] = indices[a][i];
          truth[i] = ura::encode_slot(slot_indices, n);
          RngStream noise = round_rng.fork("noise" + std::to_string(i));
          received[i] = channel::apply(ura::transmit(truth[i], sensing), chan, noise);
        }

        std::vector<Tensor> x_real(slots);
        std::vector<double> ka_slots(slots);
        if (config.uplink.oracle_decode) {
          for (std::size_t i = 0; i < slots; ++i) {
            Tensor exact = Tensor::zeros({n});
            for (std::size_t j = 0; j < n; ++j) {
              exact[j] = static_cast<double>(truth[i].counts[j]);
            }
            x_real[i] = std::move(exact);
            ka_slots[i] = static_cast<double>(ka);
          }
        } else {
          decoder::DecodeOptions options = comm->decode_options();
          parallel_for(slots, resolve_threads(config.threads), [&](std::size_t i) {
            decoder::DecodeResult res =
                decoder::decode(received[i], sensing, comm->params, options);
            x_real[i] = std::move(res.x_hat);
            ka_slots[i] = res.ka_hat;
          });
        }

        double ka_hat_round = 0.0;
        for (double k : ka_slots) ka_hat_round += k;
        ka_hat_round /= static_cast<double>(slots);
        metrics.ka_hat = ka_hat_round;
        std::int64_t ka_round = std::max<std::int64_t>(0, std::llround(ka_hat_round));

        std::vector<ura::ActivityVector> projected(slots);
        double acc_sum = 0.0;
        for (std::size_t i = 0; i < slots; ++i) {
          projected[i] = decoder::project_counts(x_real[i], static_cast<double>(ka_round));
          acc_sum += recovery_accuracy(truth[i], projected[i]);
        }
        metrics.recovery_acc = acc_sum / static_cast<double>(slots);

        double scale_ka = static_cast<double>(ka_round);
        if (config.include_bs) {
          // the BS contributes its own quantised update alongside the devices
          std::vector<vq::Fragment> frags = vq::fragment_update(bs_delta, d);
          for (std::size_t i = 0; i < slots; ++i) {
            projected[i].counts[vq::quantise(frags[i], cb)]++;
          }
          scale_ka += 1.0;
        }
        if (scale_ka <= 0.0 && hooks.verbose) {
          std::cerr << "[warn] round " << round << ": estimated zero active devices\n";
        }
        aggregate_update =
            aggregate::aggregate_round(projected, cb, config.uplink.rule, scale_ka, w_len);
      }

      for (std::size_t i = 0; i < w_len; ++i) {
        w[i] += config.global_lr * aggregate_update[i];
      }
      w.ensure_finite("global model");

      metrics.test_acc = mlp::dataset_accuracy(config.task, w, data, eval_idx);
      metrics.global_loss = mlp::dataset_loss(config.task, w, data, eval_idx);
      mae_sum += std::abs(static_cast<double>(metrics.ka_true) - metrics.ka_hat);
      metrics.mae_running = mae_sum / static_cast<double>(round + 1);
    } catch (const NumericError& err) {
      if (hooks.verbose) {
        std::cerr << "[warn] run diverged at round " << round << ": " << err.what() << '\n';
      }
      result.diverged = true;
      break;
    }

    result.metrics.push_back(metrics);
    if (hooks.metrics_csv) write_metrics_row(*hooks.metrics_csv, metrics, hooks);
  }
  result.final_model = std::move(w);
  return result;
}

}  // namespace airsum::feel
