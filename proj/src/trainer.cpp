#include "airsum/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "airsum/channel.hpp"
#include "airsum/error.hpp"
#include "airsum/io.hpp"

namespace airsum::trainer {

using num::RngStream;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {
constexpr double kL1Eps = 1e-8;
constexpr double kQuantEps = 1e-8;
}  // namespace

// ---------------------------------------------------------------------------
// dataset collection and splitting
// ---------------------------------------------------------------------------

std::vector<RoundRecord> collect_dataset(const feel::FeelConfig& config,
                                         RngStream& rng) {
  feel::FeelConfig pa = config;
  pa.uplink.kind = feel::UplinkConfig::Kind::perfect;
  RngStream seed_stream = rng.fork("collect");
  pa.seed = seed_stream.next_u64();
  std::vector<RoundRecord> records;
  records.reserve(config.rounds);
  feel::RunHooks hooks;
  hooks.on_record = [&records](const feel::RoundRecordView& view) {
    RoundRecord rec;
    rec.round_index = view.round;
    rec.bs_update = view.bs_update;
    rec.device_updates = view.device_updates;
    rec.ka = view.ka;
    records.push_back(std::move(rec));
  };
  feel::RunResult result = feel::run(pa, nullptr, hooks);
  if (result.diverged) {
    throw NumericError("collect_dataset: perfect-aggregation run diverged");
  }
  return records;
}

std::size_t slots_per_record(const RoundRecord& record, std::size_t fragment_dim) {
  return (record.bs_update.size() + fragment_dim - 1) / fragment_dim;
}

DatasetSplit split_records(std::span<const RoundRecord> records, const TrainConfig& config) {
  auto take = [&](std::size_t begin, std::size_t want_slots, std::size_t& end) {
    std::size_t slots = 0;
    end = begin;
    while (end < records.size() && slots < want_slots) {
      slots += slots_per_record(records[end], config.fragment_dim);
      ++end;
    }
    if (slots < want_slots) {
      throw InvalidArgument("split_records: not enough records for requested samples");
    }
  };
  DatasetSplit split;
  std::size_t train_end = 0, val_end = 0, test_end = records.size();
  take(0, config.train_samples, train_end);
  take(train_end, config.val_samples, val_end);
  if (config.test_samples > 0) {
    take(val_end, config.test_samples, test_end);
  } else {
    test_end = val_end;
  }
  split.train = records.subspan(0, train_end);
  split.val = records.subspan(train_end, val_end - train_end);
  split.test = records.subspan(val_end, test_end - val_end);
  return split;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

Var compose_loss(Var x_hat, const Tensor& x_true, Var ka_hat, double ka_true,
                 Var transform, const LossWeights& weights, double quant_residual) {
  Tape* tape = x_hat.tape;
  Var x_const = tape->constant(x_true);
  Var loss = num::sum(num::square(x_hat - x_const));
  if (weights.l1 != 0.0) {
    double denom = num::norm1(x_true) + kL1Eps;
    loss = loss + num::sum(num::abs(x_hat)) * (weights.l1 / denom);
  }
  if (weights.w != 0.0) {
    std::size_t l = transform.shape()[0];
    Var gram = num::matmul(num::transpose(transform), transform);
    Var delta = gram - tape->constant(Tensor::identity(l));
    loss = loss + weights.w * num::sum(num::square(delta));
  }
  if (weights.k != 0.0) {
    loss = loss + weights.k * num::square(ka_hat - ka_true);
  }
  if (weights.q != 0.0) {
    loss = loss + weights.q * quant_residual;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// record preparation (codebook, ground truth, quantisation residual)
// ---------------------------------------------------------------------------

namespace {

struct Prepared {
  const RoundRecord* record = nullptr;
  vq::QuantCodebook codebook;
  std::vector<Tensor> truth;  // per slot, length n
  double quant_residual = 0.0;
  std::size_t slots = 0;
};

Prepared prepare_record(const RoundRecord& record, const TrainConfig& config,
                        RngStream cb_rng) {
  Prepared prep;
  prep.record = &record;
  std::size_t d = config.fragment_dim;
  std::size_t n = config.codebook_size;
  prep.slots = slots_per_record(record, d);

  std::vector<vq::Fragment> bs_fragments = vq::fragment_update(record.bs_update, d);
  vq::BuildOptions build;
  build.order_by_popularity = config.popularity_ordering;
  if (config.curvature_aware) {
    build.curvature = vq::CurvatureProxy::from_fragments(bs_fragments);
  }
  prep.codebook = vq::build_codebook(bs_fragments, n, build, cb_rng, record.round_index);

  prep.truth.assign(prep.slots, Tensor::zeros({n}));
  for (const Tensor& s : record.device_updates) {
    std::vector<vq::Fragment> frags = vq::fragment_update(s, d);
    std::vector<std::size_t> indices(frags.size());
    double residual_sq = 0.0;
    for (std::size_t i = 0; i < frags.size(); ++i) {
      indices[i] = vq::quantise(frags[i], prep.codebook);
      prep.truth[i][indices[i]] += 1.0;
      vq::Fragment q = prep.codebook.centroid(indices[i]);
      for (std::size_t j = 0; j < q.size(); ++j) {
        double diff = frags[i][j] - q[j];
        residual_sq += diff * diff;
      }
    }
    double s_norm_sq = num::dot(s, s);
    prep.quant_residual += residual_sq / (s_norm_sq + kQuantEps);
  }
  return prep;
}

// ---------------------------------------------------------------------------
// trainable leaf bookkeeping
// ---------------------------------------------------------------------------

struct AttachedModel {
  decoder::ParamVars params;
  Var sensing;
  Var transform;
  std::vector<Var> leaves;  // trainable leaves, fixed order
};

AttachedModel attach_model(Tape& tape, const decoder::DecoderParams& params,
                           const ura::UraCodebook& codebook, bool trainable) {
  AttachedModel at;
  at.params = decoder::attach_params(tape, params, trainable);
  at.leaves.push_back(at.params.scalar_raw);
  for (const decoder::LayerVars& lv : at.params.layer) {
    if (lv.use_cnn) {
      at.leaves.push_back(lv.k1);
      at.leaves.push_back(lv.b1);
      at.leaves.push_back(lv.k2);
      at.leaves.push_back(lv.b2);
      at.leaves.push_back(lv.k3);
      at.leaves.push_back(lv.b3);
    }
  }
  bool train_codebook = trainable && codebook.trainable();
  Var d_var = tape.leaf(codebook.base, train_codebook);
  Var w_var = tape.leaf(codebook.transform, train_codebook);
  at.sensing = num::transpose(num::matmul(d_var, w_var));
  at.transform = w_var;
  if (train_codebook) {
    at.leaves.push_back(d_var);
    at.leaves.push_back(w_var);
  }
  return at;
}

// Master tensors in the same order as AttachedModel::leaves.
std::vector<Tensor*> master_tensors(decoder::DecoderParams& params,
                                    ura::UraCodebook& codebook) {
  std::vector<Tensor*> masters;
  masters.push_back(&params.scalar_raw);
  if (params.use_cnn) {
    for (decoder::CnnLayer& layer : params.cnn) {
      masters.push_back(&layer.k1);
      masters.push_back(&layer.b1);
      masters.push_back(&layer.k2);
      masters.push_back(&layer.b2);
      masters.push_back(&layer.k3);
      masters.push_back(&layer.b3);
    }
  }
  if (codebook.trainable()) {
    masters.push_back(&codebook.base);
    masters.push_back(&codebook.transform);
  }
  return masters;
}

struct Adam {
  std::vector<Tensor> m, v, accum;
  std::int64_t step_count = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(const std::vector<Tensor*>& masters) {
    m.clear();
    v.clear();
    accum.clear();
    for (const Tensor* t : masters) {
      m.push_back(Tensor::zeros(t->shape()));
      v.push_back(Tensor::zeros(t->shape()));
      accum.push_back(Tensor::zeros(t->shape()));
    }
  }

  void accumulate(std::size_t idx, const Tensor& grad, double scale) {
    auto acc = accum[idx].mutable_data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * grad[i];
  }

  void step(const std::vector<Tensor*>& masters, double lr, double clip_norm) {
    ++step_count;
    if (clip_norm > 0.0) {
      double norm_sq = 0.0;
      for (const Tensor& g : accum) {
        for (std::size_t i = 0; i < g.size(); ++i) norm_sq += g[i] * g[i];
      }
      double norm = std::sqrt(norm_sq);
      if (norm > clip_norm) {
        double scale = clip_norm / norm;
        for (Tensor& g : accum) {
          for (double& v : g.mutable_data()) v *= scale;
        }
      }
    }
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t t = 0; t < masters.size(); ++t) {
      auto wd = masters[t]->mutable_data();
      auto md = m[t].mutable_data();
      auto vd = v[t].mutable_data();
      auto gd = accum[t].mutable_data();
      for (std::size_t i = 0; i < wd.size(); ++i) {
        md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
        vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
        double m_hat = md[i] / bc1;
        double v_hat = vd[i] / bc2;
        wd[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        gd[i] = 0.0;
      }
    }
  }
};

double max_row_norm_error(const ura::UraCodebook& codebook) {
  Tensor syn = codebook.synthesis();
  double worst = 0.0;
  for (std::size_t i = 0; i < syn.extent(0); ++i) {
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < syn.extent(1); ++j) norm_sq += syn.at(i, j) * syn.at(i, j);
    worst = std::max(worst, std::abs(std::sqrt(norm_sq) - 1.0));
  }
  return worst;
}

Checkpoint make_checkpoint(const decoder::DecoderParams& params,
                           const ura::UraCodebook& codebook, const TrainConfig& config,
                           int epoch, double val_loss, double prior) {
  Checkpoint ck;
  ck.params = params;
  ck.codebook = codebook;
  ck.config = config;
  ck.epoch = epoch;
  ck.val_loss = val_loss;
  ck.prior_ka_mean = prior;
  return ck;
}

}  // namespace

LossGraph build_loss_graph(Tape& tape, const decoder::DecoderParams& params,
                           const ura::UraCodebook& codebook, const SlotBatch& batch,
                           const TrainConfig& config, double prior_ka_mean,
                           const std::string& stream_tag, bool trainable) {
  if (batch.truth.empty()) throw InvalidArgument("build_loss_graph: empty batch");
  AttachedModel model = attach_model(tape, params, codebook, trainable);
  RngStream root(config.seed, "trainer");
  std::size_t l = config.codeword_length;

  std::vector<Var> ys;
  ys.reserve(batch.truth.size());
  for (std::size_t s = 0; s < batch.truth.size(); ++s) {
    std::string slot_tag = stream_tag + "/s" + std::to_string(s);
    RngStream snr_rng = root.fork("snr/" + slot_tag);
    double snr_db = snr_rng.uniform_in(config.snr_min_db, config.snr_max_db);
    double sigma = std::sqrt(channel::noise_variance({snr_db, batch.ka}, l));
    RngStream noise_rng = root.fork("chan/" + slot_tag);
    Tensor noise = noise_rng.gauss_tensor({l});
    for (double& v : noise.mutable_data()) v *= sigma;
    Var x_const = tape.constant(batch.truth[s]);
    Var y = num::matvec(model.sensing, x_const) + tape.constant(std::move(noise));
    ys.push_back(y);
  }

  decoder::DecodeOptions options;
  options.mode = decoder::Mode::learned;
  options.prior_ka_mean = prior_ka_mean;
  decoder::BatchForward fw =
      decoder::decode_batch(tape, ys, model.sensing, model.params, config.layers, options);

  LossWeights weights{config.lambda_l1, config.lambda_w, config.lambda_k,
                      config.quant_loss_enabled ? config.lambda_q : 0.0};
  Var total;
  for (std::size_t b = 0; b < fw.x_hat.size(); ++b) {
    Var slot_loss = compose_loss(fw.x_hat[b], batch.truth[b], fw.ka_hat,
                                 static_cast<double>(batch.ka), model.transform,
                                 weights, batch.quant_residual);
    total = (b == 0) ? slot_loss : total + slot_loss;
  }
  LossGraph graph;
  graph.loss = total / static_cast<double>(fw.x_hat.size());
  graph.leaves = std::move(model.leaves);
  return graph;
}

feel::CommModel Checkpoint::comm_model() const {
  feel::CommModel comm;
  comm.params = params;
  comm.codebook = codebook;
  comm.mode = decoder::Mode::learned;
  comm.prior_ka_mean = prior_ka_mean;
  comm.layers = params.layers;
  return comm;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TrainResult train(std::span<const RoundRecord> records, const TrainConfig& config,
                  const EpochSink& sink, const Checkpoint* resume) {
  DatasetSplit split = split_records(records, config);
  if (split.train.empty()) throw InvalidArgument("train: empty training split");

  double prior = config.prior_ka_mean;
  if (prior <= 0.0) {
    double acc = 0.0;
    for (const RoundRecord& r : split.train) acc += static_cast<double>(r.ka);
    prior = acc / static_cast<double>(split.train.size());
  }

  RngStream root(config.seed, "trainer");
  decoder::DecoderParams params;
  ura::UraCodebook codebook;
  int start_epoch = 0;
  if (resume != nullptr) {
    params = resume->params;
    codebook = resume->codebook;
    start_epoch = resume->epoch + 1;
  } else {
    RngStream params_rng = root.fork("params");
    params = decoder::DecoderParams::learned_init(config.layers, params_rng);
    RngStream ura_rng = root.fork("ura");
    codebook = ura::init_codebook(config.codebook_size, config.codeword_length,
                                  config.codebook_mode, ura_rng);
  }

  // per-record codebooks and ground truths are fixed across epochs
  std::vector<Prepared> train_prep, val_prep;
  train_prep.reserve(split.train.size());
  for (std::size_t r = 0; r < split.train.size(); ++r) {
    train_prep.push_back(prepare_record(split.train[r], config,
                                        root.fork("cb/train" + std::to_string(r))));
  }
  val_prep.reserve(split.val.size());
  for (std::size_t r = 0; r < split.val.size(); ++r) {
    val_prep.push_back(prepare_record(split.val[r], config,
                                      root.fork("cb/val" + std::to_string(r))));
  }

  auto evaluate = [&](const decoder::DecoderParams& p,
                      const ura::UraCodebook& cb) -> double {
    if (val_prep.empty()) return std::numeric_limits<double>::infinity();
    double total = 0.0;
    std::size_t slots = 0;
    for (std::size_t r = 0; r < val_prep.size(); ++r) {
      const Prepared& prep = val_prep[r];
      for (std::size_t begin = 0; begin < prep.slots; begin += config.batch_size) {
        std::size_t end = std::min(begin + config.batch_size, prep.slots);
        Tape tape;
        SlotBatch batch{std::span<const Tensor>(prep.truth.data() + begin, end - begin),
                        prep.record->ka, prep.quant_residual};
        std::string tag = "val/r" + std::to_string(r) + "/b" + std::to_string(begin);
        LossGraph graph = build_loss_graph(tape, p, cb, batch, config, prior, tag, false);
        total += graph.loss.item() * static_cast<double>(end - begin);
        slots += end - begin;
      }
    }
    return total / static_cast<double>(slots);
  };

  TrainResult result;
  double initial_val = evaluate(params, codebook);
  double best_val = initial_val;
  result.initial_val_loss = initial_val;
  result.best = make_checkpoint(params, codebook, config, std::max(0, start_epoch - 1),
                                initial_val, prior);

  std::vector<Tensor*> masters = master_tensors(params, codebook);
  Adam adam;
  adam.init(masters);

  double lr = config.learning_rate;
  int since_best = 0, since_halving = 0;
  std::vector<std::size_t> record_order(train_prep.size());
  std::iota(record_order.begin(), record_order.end(), 0);

  for (int e = 0; e < config.max_epochs; ++e) {
    int epoch = start_epoch + e;
    double train_loss = 0.0;
    std::size_t train_slots = 0;
    bool aborted = false;
    try {
      RngStream order_rng = root.fork("order/e" + std::to_string(epoch));
      order_rng.shuffle(record_order);
      for (std::size_t ri : record_order) {
        const Prepared& prep = train_prep[ri];
        double inv_slots = 1.0 / static_cast<double>(prep.slots);
        for (std::size_t begin = 0; begin < prep.slots; begin += config.batch_size) {
          std::size_t end = std::min(begin + config.batch_size, prep.slots);
          Tape tape;
          SlotBatch batch{std::span<const Tensor>(prep.truth.data() + begin, end - begin),
                          prep.record->ka, prep.quant_residual};
          std::string tag = "e" + std::to_string(epoch) + "/r" + std::to_string(ri) +
                            "/b" + std::to_string(begin);
          LossGraph graph =
              build_loss_graph(tape, params, codebook, batch, config, prior, tag, true);
          num::Gradients grads = tape.backward(graph.loss);
          double batch_scale = static_cast<double>(end - begin) * inv_slots;
          for (std::size_t t = 0; t < graph.leaves.size(); ++t) {
            adam.accumulate(t, grads.at(graph.leaves[t]), batch_scale);
          }
          train_loss += graph.loss.item() * static_cast<double>(end - begin);
          train_slots += end - begin;
        }
        adam.step(masters, lr, config.grad_clip_norm);
        if (codebook.trainable()) ura::renormalise(codebook);
      }
    } catch (const NumericError& e) {
      result.nan_abort = true;
      result.abort_reason = e.what();
      aborted = true;
    }
    if (aborted) break;

    double val_loss;
    try {
      val_loss = evaluate(params, codebook);
      if (!std::isfinite(val_loss) && !val_prep.empty()) {
        throw NumericError("non-finite validation loss");
      }
    } catch (const NumericError& e) {
      result.nan_abort = true;
      result.abort_reason = e.what();
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_loss / static_cast<double>(std::max<std::size_t>(1, train_slots));
    stats.val_loss = val_loss;
    stats.learning_rate = lr;
    stats.max_row_norm_error = max_row_norm_error(codebook);
    result.history.push_back(stats);
    if (sink) sink(stats);

    if (val_loss < best_val - config.tolerance) {
      best_val = val_loss;
      result.best = make_checkpoint(params, codebook, config, epoch, val_loss, prior);
      since_best = 0;
      since_halving = 0;
    } else {
      ++since_best;
      ++since_halving;
      if (since_halving >= config.lr_halving_patience) {
        lr *= 0.5;
        since_halving = 0;
      }
      if (since_best >= config.patience) break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint and dataset containers
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointMagic = "AIRSUMCKPT";
constexpr std::string_view kDatasetMagic = "AIRSUMDATA";

void write_config(io::BinaryWriter& w, const TrainConfig& c) {
  w.u64(c.train_samples);
  w.u64(c.val_samples);
  w.u64(c.test_samples);
  w.u64(c.batch_size);
  w.i64(c.max_epochs);
  w.i64(c.patience);
  w.f64(c.tolerance);
  w.f64(c.learning_rate);
  w.i64(c.lr_halving_patience);
  w.f64(c.lambda_l1);
  w.f64(c.lambda_w);
  w.f64(c.lambda_k);
  w.f64(c.lambda_q);
  w.u8(c.quant_loss_enabled ? 1 : 0);
  w.f64(c.snr_min_db);
  w.f64(c.snr_max_db);
  w.f64(c.grad_clip_norm);
  w.i64(c.layers);
  w.u64(c.codebook_size);
  w.u64(c.codeword_length);
  w.u64(c.fragment_dim);
  w.u8(c.popularity_ordering ? 1 : 0);
  w.u8(c.curvature_aware ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(c.codebook_mode));
  w.f64(c.prior_ka_mean);
  w.u64(c.seed);
}

TrainConfig read_config(io::BinaryReader& r) {
  TrainConfig c;
  c.train_samples = r.u64();
  c.val_samples = r.u64();
  c.test_samples = r.u64();
  c.batch_size = r.u64();
  c.max_epochs = static_cast<int>(r.i64());
  c.patience = static_cast<int>(r.i64());
  c.tolerance = r.f64();
  c.learning_rate = r.f64();
  c.lr_halving_patience = static_cast<int>(r.i64());
  c.lambda_l1 = r.f64();
  c.lambda_w = r.f64();
  c.lambda_k = r.f64();
  c.lambda_q = r.f64();
  c.quant_loss_enabled = r.u8() != 0;
  c.snr_min_db = r.f64();
  c.snr_max_db = r.f64();
  c.grad_clip_norm = r.f64();
  c.layers = static_cast<int>(r.i64());
  c.codebook_size = r.u64();
  c.codeword_length = r.u64();
  c.fragment_dim = r.u64();
  c.popularity_ordering = r.u8() != 0;
  c.curvature_aware = r.u8() != 0;
  c.codebook_mode = static_cast<ura::CodebookMode>(r.u8());
  c.prior_ka_mean = r.f64();
  c.seed = r.u64();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  write_config(w, ck.config);
  w.i64(ck.epoch);
  w.f64(ck.val_loss);
  w.f64(ck.prior_ka_mean);
  w.i64(ck.params.layers);
  w.u8(ck.params.use_cnn ? 1 : 0);
  w.tensor(ck.params.scalar_raw);
  if (ck.params.use_cnn) {
    for (const decoder::CnnLayer& layer : ck.params.cnn) {
      w.tensor(layer.k1);
      w.tensor(layer.b1);
      w.tensor(layer.k2);
      w.tensor(layer.b2);
      w.tensor(layer.k3);
      w.tensor(layer.b3);
    }
  }
  w.u8(static_cast<std::uint8_t>(ck.codebook.mode));
  w.tensor(ck.codebook.base);
  w.tensor(ck.codebook.transform);
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kCheckpointMagic, "checkpoint");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionMismatch("checkpoint version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) +
                          "): " + path.string());
  }
  Checkpoint ck;
  ck.config = read_config(r);
  ck.epoch = static_cast<int>(r.i64());
  ck.val_loss = r.f64();
  ck.prior_ka_mean = r.f64();
  ck.params.layers = static_cast<int>(r.i64());
  ck.params.use_cnn = r.u8() != 0;
  ck.params.scalar_raw = r.tensor();
  if (ck.params.use_cnn) {
    ck.params.cnn.resize(ck.params.layers);
    for (decoder::CnnLayer& layer : ck.params.cnn) {
      layer.k1 = r.tensor();
      layer.b1 = r.tensor();
      layer.k2 = r.tensor();
      layer.b2 = r.tensor();
      layer.k3 = r.tensor();
      layer.b3 = r.tensor();
    }
  }
  ck.codebook.mode = static_cast<ura::CodebookMode>(r.u8());
  ck.codebook.base = r.tensor();
  ck.codebook.transform = r.tensor();
  r.expect_end("checkpoint");
  return ck;
}

void save_dataset(std::span<const RoundRecord> records,
                  const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(records.size());
  w.u64(records.empty() ? 0 : records[0].bs_update.size());
  for (const RoundRecord& rec : records) {
    w.i64(rec.round_index);
    w.i64(rec.ka);
    w.tensor(rec.bs_update);
    w.u32(static_cast<std::uint32_t>(rec.device_updates.size()));
    for (const Tensor& t : rec.device_updates) w.tensor(t);
  }
  w.finish();
}

std::vector<RoundRecord> load_dataset(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kDatasetMagic, "dataset");
  std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw VersionMismatch("dataset version " + std::to_string(version) +
                          " unsupported: " + path.string());
  }
  std::uint64_t count = r.u64();
  r.u64();  // model dimension, informational
  std::vector<RoundRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    RoundRecord rec;
    rec.round_index = static_cast<int>(r.i64());
    rec.ka = static_cast<int>(r.i64());
    rec.bs_update = r.tensor();
    std::uint32_t devices = r.u32();
    rec.device_updates.reserve(devices);
    for (std::uint32_t d = 0; d < devices; ++d) rec.device_updates.push_back(r.tensor());
    records.push_back(std::move(rec));
  }
  r.expect_end("dataset");
  return records;
}

}  // namespace airsum::trainer
