#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "airsum/error.hpp"
#include "airsum/io.hpp"
#include "airsum/trainer.hpp"
#include "test_util.hpp"

using namespace airsum;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

feel::FeelConfig collect_config() {
  feel::FeelConfig cfg;
  cfg.task = {8, 16, 4};  // W = 212
  cfg.total_devices = 8;
  cfg.ka_min = 2;
  cfg.ka_max = 4;
  cfg.rounds = 10;
  cfg.local_epochs = 1;
  cfg.local_batch = 16;
  cfg.local_lr = 0.05;
  cfg.device_dataset_size = 512;
  cfg.bs_dataset_size = 128;
  cfg.eval_dataset_size = 128;
  cfg.fragment_dim = 8;  // 27 slots per record
  cfg.quant_codebook_size = 16;
  cfg.class_scale = 2.0;
  cfg.seed = 21;
  return cfg;
}

trainer::TrainConfig tiny_train_config() {
  trainer::TrainConfig cfg;
  cfg.train_samples = 100;  // 4 records of 27 slots
  cfg.val_samples = 27;     // 1 record
  cfg.test_samples = 0;
  cfg.batch_size = 16;
  cfg.max_epochs = 3;
  cfg.patience = 20;
  cfg.learning_rate = 1e-3;
  cfg.layers = 2;
  cfg.codebook_size = 16;
  cfg.codeword_length = 12;
  cfg.fragment_dim = 8;
  cfg.seed = 5;
  return cfg;
}

std::vector<trainer::RoundRecord> shared_records() {
  static std::vector<trainer::RoundRecord> records = [] {
    num::RngStream rng(77, "collect");
    return trainer::collect_dataset(collect_config(), rng);
  }();
  return records;
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const char* name)
      : path(std::filesystem::temp_directory_path() / name) {}
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("collect_dataset produces one record per round with ka devices") {
  std::vector<trainer::RoundRecord> records = shared_records();
  REQUIRE(records.size() == 10);
  for (const trainer::RoundRecord& rec : records) {
    CHECK(rec.ka >= 2);
    CHECK(rec.ka <= 4);
    CHECK(rec.device_updates.size() == static_cast<std::size_t>(rec.ka));
    CHECK(rec.bs_update.size() == 212);
    CHECK(trainer::slots_per_record(rec, 8) == 27);  // ceil(212 / 8)
  }
}

TEST_CASE("collect_dataset is deterministic in the stream") {
  num::RngStream a(99, "ds");
  num::RngStream b(99, "ds");
  auto ra = trainer::collect_dataset(collect_config(), a);
  auto rb = trainer::collect_dataset(collect_config(), b);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].ka == rb[i].ka);
    for (std::size_t j = 0; j < ra[i].bs_update.size(); ++j) {
      CHECK(ra[i].bs_update[j] == rb[i].bs_update[j]);
    }
  }
}

TEST_CASE("split_records covers slot counts with whole rounds") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  trainer::DatasetSplit split = trainer::split_records(records, cfg);
  CHECK(split.train.size() == 4);
  CHECK(split.val.size() == 1);
  trainer::TrainConfig big = cfg;
  big.train_samples = 100000;
  CHECK_THROWS_AS(trainer::split_records(records, big), InvalidArgument);
}

TEST_CASE("compose_loss: perfect prediction with identity transform is zero") {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 0.0, 2.0});
  Var x_hat = tape.constant(x);
  Var ka_hat = tape.constant(3.0);
  Var w = tape.constant(Tensor::identity(4));
  trainer::LossWeights weights{0.0, 0.001, 0.01, 0.0};
  Var loss = trainer::compose_loss(x_hat, x, ka_hat, 3.0, w, weights);
  CHECK(loss.item() == doctest::Approx(0.0));
}

TEST_CASE("compose_loss: the activity term contributes lambda_k (ka_hat - ka)^2") {
  Tape tape;
  Tensor x = Tensor::vector({0.0, 0.0});
  Var x_hat = tape.constant(x);
  Var ka_hat = tape.constant(5.0);
  Var w = tape.constant(Tensor::identity(2));
  trainer::LossWeights weights{0.0, 0.0, 0.01, 0.0};
  Var loss = trainer::compose_loss(x_hat, x, ka_hat, 3.0, w, weights);
  CHECK(loss.item() == doctest::Approx(0.01 * 4.0));
}

TEST_CASE("compose_loss equals the sum of independently computed terms") {
  num::RngStream rng(31, "loss");
  Tape tape;
  const std::size_t n = 6, l = 4;
  Tensor x_true = Tensor::zeros({n});
  for (std::size_t j = 0; j < n; ++j) x_true[j] = static_cast<double>(rng.index(3));
  Tensor x_hat_val = test::random_tensor(rng, {n}, 0.7, 0.4);
  Tensor w_val = test::random_tensor(rng, {l, l}, 0.4);
  double ka_hat_val = 2.7, ka_true = 3.0, quant_residual = 0.37;
  trainer::LossWeights weights{0.01, 0.001, 0.01, 0.1};

  Var loss = trainer::compose_loss(tape.constant(x_hat_val), x_true,
                                   tape.constant(ka_hat_val), ka_true,
                                   tape.constant(w_val), weights, quant_residual);

  double mse = 0.0, l1 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double diff = x_hat_val[j] - x_true[j];
    mse += diff * diff;
    l1 += std::abs(x_hat_val[j]);
  }
  double orth = 0.0;
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < l; ++k) acc += w_val.at(k, i) * w_val.at(k, j);
      double diff = acc - (i == j ? 1.0 : 0.0);
      orth += diff * diff;
    }
  }
  double expect = mse + weights.l1 * l1 / (num::norm1(x_true) + 1e-8) +
                  weights.w * orth +
                  weights.k * (ka_hat_val - ka_true) * (ka_hat_val - ka_true) +
                  weights.q * quant_residual;
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("zero training epochs return the initialisation") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  cfg.max_epochs = 0;
  trainer::TrainResult result = trainer::train(records, cfg);
  CHECK_FALSE(result.nan_abort);

  num::RngStream root(cfg.seed, "trainer");
  num::RngStream params_rng = root.fork("params");
  decoder::DecoderParams expect = decoder::DecoderParams::learned_init(cfg.layers, params_rng);
  num::RngStream ura_rng = root.fork("ura");
  ura::UraCodebook expect_cb = ura::init_codebook(cfg.codebook_size, cfg.codeword_length,
                                                  cfg.codebook_mode, ura_rng);
  for (std::size_t i = 0; i < expect.scalar_raw.size(); ++i) {
    CHECK(result.best.params.scalar_raw[i] == expect.scalar_raw[i]);
  }
  for (std::size_t i = 0; i < expect_cb.base.size(); ++i) {
    CHECK(result.best.codebook.base[i] == expect_cb.base[i]);
  }
}

TEST_CASE("enabling the quantisation term with zero weight changes nothing") {
  auto records = shared_records();
  trainer::TrainConfig off = tiny_train_config();
  off.max_epochs = 2;
  off.quant_loss_enabled = false;
  trainer::TrainConfig on = off;
  on.quant_loss_enabled = true;
  on.lambda_q = 0.0;
  trainer::TrainResult a = trainer::train(records, off);
  trainer::TrainResult b = trainer::train(records, on);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_loss == b.history[e].val_loss);
  }
  for (std::size_t i = 0; i < a.best.params.scalar_raw.size(); ++i) {
    CHECK(a.best.params.scalar_raw[i] == b.best.params.scalar_raw[i]);
  }
}

TEST_CASE("end-to-end loss gradients match finite differences on a tiny setup") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  cfg.layers = 1;
  cfg.codebook_size = 8;
  cfg.codeword_length = 6;

  // two handmade slots with ka = 3
  std::vector<Tensor> truth;
  truth.push_back(Tensor::vector({2, 0, 1, 0, 0, 0, 0, 0}));
  truth.push_back(Tensor::vector({0, 1, 0, 0, 2, 0, 0, 0}));

  num::RngStream root(cfg.seed, "trainer");
  num::RngStream params_rng = root.fork("params");
  decoder::DecoderParams params = decoder::DecoderParams::learned_init(cfg.layers, params_rng);
  num::RngStream ura_rng = root.fork("ura");
  ura::UraCodebook codebook = ura::init_codebook(cfg.codebook_size, cfg.codeword_length,
                                                 ura::CodebookMode::learned, ura_rng);

  // analytic gradients
  Tape tape;
  trainer::SlotBatch batch{truth, 3, 0.0};
  trainer::LossGraph graph =
      trainer::build_loss_graph(tape, params, codebook, batch, cfg, 3.0, "fd");
  num::Gradients grads = tape.backward(graph.loss);

  // masters in leaf order: scalar_raw, cnn tensors, D, W
  std::vector<Tensor*> masters;
  masters.push_back(&params.scalar_raw);
  for (decoder::CnnLayer& layer : params.cnn) {
    masters.push_back(&layer.k1);
    masters.push_back(&layer.b1);
    masters.push_back(&layer.k2);
    masters.push_back(&layer.b2);
    masters.push_back(&layer.k3);
    masters.push_back(&layer.b3);
  }
  masters.push_back(&codebook.base);
  masters.push_back(&codebook.transform);
  REQUIRE(masters.size() == graph.leaves.size());

  auto eval = [&]() {
    Tape t2;
    trainer::LossGraph g2 =
        trainer::build_loss_graph(t2, params, codebook, batch, cfg, 3.0, "fd");
    return g2.loss.item();
  };

  const double step = 1e-5;
  double worst = 0.0;
  // spot-check a sample of coordinates from every leaf to keep runtime low
  for (std::size_t t = 0; t < masters.size(); ++t) {
    const Tensor& analytic = grads.at(graph.leaves[t]);
    std::size_t stride = std::max<std::size_t>(1, masters[t]->size() / 9);
    for (std::size_t i = 0; i < masters[t]->size(); i += stride) {
      double original = (*masters[t])[i];
      (*masters[t])[i] = original + step;
      double plus = eval();
      (*masters[t])[i] = original - step;
      double minus = eval();
      (*masters[t])[i] = original;
      double fd = (plus - minus) / (2.0 * step);
      double a = analytic[i];
      double tol = 1e-8 + 1e-4 * std::max(std::abs(a), std::abs(fd));
      worst = std::max(worst, std::abs(a - fd) / tol);
    }
  }
  CHECK_MESSAGE(worst <= 1.0, "worst tolerance ratio ", worst);
}

TEST_CASE("training improves the validation loss over the initialisation") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  cfg.max_epochs = 4;
  trainer::TrainResult result = trainer::train(records, cfg);
  CHECK_FALSE(result.nan_abort);
  CHECK(result.best.val_loss <= result.initial_val_loss);
  // the checkpoint is never worse than any observed epoch
  for (const trainer::EpochStats& stats : result.history) {
    CHECK(result.best.val_loss <= stats.val_loss + 1e-12);
  }
  // codeword rows stay unit-norm through training
  for (const trainer::EpochStats& stats : result.history) {
    CHECK(stats.max_row_norm_error < 1e-9);
  }
}

TEST_CASE("resumed training continues the epoch numbering") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  cfg.max_epochs = 2;
  trainer::TrainResult first = trainer::train(records, cfg);
  trainer::TrainResult second = trainer::train(records, cfg, {}, &first.best);
  REQUIRE_FALSE(second.history.empty());
  CHECK(second.history.front().epoch == first.best.epoch + 1);
}

TEST_CASE("checkpoints round-trip bit-exactly and decode identically") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  cfg.max_epochs = 1;
  trainer::TrainResult result = trainer::train(records, cfg);
  TempFile file("airsum_test_ck.bin");
  trainer::save_checkpoint(result.best, file.path);
  trainer::Checkpoint loaded = trainer::load_checkpoint(file.path);

  CHECK(loaded.epoch == result.best.epoch);
  CHECK(loaded.val_loss == result.best.val_loss);
  CHECK(loaded.prior_ka_mean == result.best.prior_ka_mean);
  for (std::size_t i = 0; i < result.best.params.scalar_raw.size(); ++i) {
    CHECK(loaded.params.scalar_raw[i] == result.best.params.scalar_raw[i]);
  }
  for (int l = 0; l < cfg.layers; ++l) {
    for (std::size_t i = 0; i < result.best.params.cnn[l].k1.size(); ++i) {
      CHECK(loaded.params.cnn[l].k1[i] == result.best.params.cnn[l].k1[i]);
    }
  }
  for (std::size_t i = 0; i < result.best.codebook.base.size(); ++i) {
    CHECK(loaded.codebook.base[i] == result.best.codebook.base[i]);
  }

  // identical decode output
  num::RngStream rng(50, "ck_decode");
  Tensor sensing = result.best.codebook.sensing();
  num::RngStream yrng = rng.fork("y");
  Tensor y = yrng.gauss_tensor({cfg.codeword_length});
  decoder::DecodeOptions options;
  options.prior_ka_mean = result.best.prior_ka_mean;
  decoder::DecodeResult a = decoder::decode(y, sensing, result.best.params, options);
  decoder::DecodeResult b = decoder::decode(y, loaded.codebook.sensing(), loaded.params,
                                            options);
  for (std::size_t j = 0; j < a.x_hat.size(); ++j) CHECK(a.x_hat[j] == b.x_hat[j]);
  CHECK(a.ka_hat == b.ka_hat);
}

TEST_CASE("truncated checkpoints raise a corrupt-file error") {
  auto records = shared_records();
  trainer::TrainConfig cfg = tiny_train_config();
  cfg.max_epochs = 0;
  trainer::TrainResult result = trainer::train(records, cfg);
  TempFile file("airsum_test_trunc.bin");
  trainer::save_checkpoint(result.best, file.path);
  auto size = std::filesystem::file_size(file.path);
  std::filesystem::resize_file(file.path, size / 2);
  CHECK_THROWS_AS(trainer::load_checkpoint(file.path), CorruptFile);
}

TEST_CASE("unknown checkpoint versions raise a version error") {
  TempFile file("airsum_test_ver.bin");
  {
    io::BinaryWriter writer(file.path);
    writer.magic("AIRSUMCKPT");
    writer.u32(999);
    writer.finish();
  }
  CHECK_THROWS_AS(trainer::load_checkpoint(file.path), VersionMismatch);
}

TEST_CASE("datasets round-trip byte-identically for a fixed seed") {
  auto records = shared_records();
  TempFile a("airsum_test_ds_a.bin");
  TempFile b("airsum_test_ds_b.bin");
  trainer::save_dataset(records, a.path);
  trainer::save_dataset(records, b.path);
  std::ifstream fa(a.path, std::ios::binary), fb(b.path, std::ios::binary);
  std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ca == cb);

  auto loaded = trainer::load_dataset(a.path);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].ka == records[i].ka);
    for (std::size_t j = 0; j < records[i].bs_update.size(); ++j) {
      CHECK(loaded[i].bs_update[j] == records[i].bs_update[j]);
    }
    REQUIRE(loaded[i].device_updates.size() == records[i].device_updates.size());
  }
}
