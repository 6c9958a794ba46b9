// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code 0 only if all pass.
//
// Usage: acceptance [N ...]   run only the listed criteria (default: all)

#include <quadmath.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "airsum/bench.hpp"
#include "airsum/error.hpp"
#include "airsum/channel.hpp"
#include "airsum/decoder.hpp"
#include "airsum/feel.hpp"
#include "airsum/trainer.hpp"

using namespace airsum;
using Clock = std::chrono::steady_clock;

namespace {

double secs_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct CriterionResult {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// shared desk-scale fixtures
// ---------------------------------------------------------------------------

// Communication geometry shared by the trend criteria: n=32 codewords of
// length l=24, fragments of dimension 20, 8 unrolled layers.
constexpr std::size_t kN = 32;
constexpr std::size_t kL = 24;
constexpr std::size_t kD = 20;
constexpr int kLayers = 8;

feel::FeelConfig desk_feel_config() {
  feel::FeelConfig cfg;
  cfg.task = {16, 128, 8};  // W = 3208, 161 fragment slots
  cfg.total_devices = 40;
  cfg.ka_min = 2;
  cfg.ka_max = 4;
  cfg.local_epochs = 1;
  cfg.local_batch = 32;
  cfg.local_lr = 0.08;
  cfg.global_lr = 1.0;
  cfg.iid_fraction = 0.2;
  cfg.device_dataset_size = 4000;
  cfg.bs_dataset_size = 512;
  cfg.eval_dataset_size = 1024;
  cfg.class_scale = 1.5;
  cfg.fragment_dim = kD;
  cfg.quant_codebook_size = kN;
  cfg.threads = 2;
  return cfg;
}

trainer::TrainConfig desk_train_config() {
  trainer::TrainConfig cfg;
  cfg.train_samples = 5000;  // >= 5k desk-scale slots
  cfg.val_samples = 1200;
  cfg.test_samples = 0;
  cfg.batch_size = 64;
  cfg.max_epochs = 12;
  cfg.patience = 5;
  cfg.lr_halving_patience = 3;
  cfg.learning_rate = 1e-3;
  cfg.snr_min_db = 0.0;
  cfg.snr_max_db = 20.0;
  cfg.layers = kLayers;
  cfg.codebook_size = kN;
  cfg.codeword_length = kL;
  cfg.fragment_dim = kD;
  cfg.seed = 7;
  return cfg;
}

struct Fixtures {
  std::vector<trainer::RoundRecord> dataset_a;  // ka in [2,4]
  std::vector<trainer::RoundRecord> dataset_b;  // ka in [5,10]
  trainer::Checkpoint ordered;    // learned + popularity-ordered codebooks
  trainer::Checkpoint unordered;  // learned, ordering disabled
  trainer::Checkpoint wide_ka;    // learned, trained on dataset_b
  bool have_a = false, have_b = false;
  bool have_ordered = false, have_unordered = false, have_wide = false;

  const std::vector<trainer::RoundRecord>& records_a() {
    if (!have_a) {
      std::fprintf(stderr, "[fixture] collecting dataset A (ka 2-4)...\n");
      feel::FeelConfig cfg = desk_feel_config();
      cfg.rounds = 240;  // 32 train + 8 val + 200 test
      cfg.seed = 42;
      num::RngStream rng(42, "acceptance/dataset_a");
      dataset_a = trainer::collect_dataset(cfg, rng);
      have_a = true;
    }
    return dataset_a;
  }

  const std::vector<trainer::RoundRecord>& records_b() {
    if (!have_b) {
      std::fprintf(stderr, "[fixture] collecting dataset B (ka 5-10)...\n");
      feel::FeelConfig cfg = desk_feel_config();
      cfg.ka_min = 5;
      cfg.ka_max = 10;
      cfg.rounds = 26;  // 20 train + 6 val
      cfg.seed = 43;
      num::RngStream rng(43, "acceptance/dataset_b");
      dataset_b = trainer::collect_dataset(cfg, rng);
      have_b = true;
    }
    return dataset_b;
  }

  static trainer::TrainResult run_training(const std::vector<trainer::RoundRecord>& records,
                                           const trainer::TrainConfig& cfg,
                                           const char* name) {
    std::fprintf(stderr, "[fixture] training %s...\n", name);
    auto start = Clock::now();
    trainer::TrainResult result = trainer::train(
        records, cfg, [name](const trainer::EpochStats& s) {
          std::fprintf(stderr, "[fixture] %s epoch %d train %.4f val %.4f\n", name,
                       s.epoch, s.train_loss, s.val_loss);
        });
    std::fprintf(stderr, "[fixture] %s done in %.0fs (best val %.4f)\n", name,
                 secs_since(start), result.best.val_loss);
    if (result.nan_abort) {
      throw NumericError(std::string(name) +
                         ": training aborted on non-finite loss (" +
                         result.abort_reason + ")");
    }
    return result;
  }

  const trainer::Checkpoint& ordered_checkpoint() {
    if (!have_ordered) {
      ordered = run_training(records_a(), desk_train_config(), "ordered").best;
      have_ordered = true;
    }
    return ordered;
  }

  const trainer::Checkpoint& unordered_checkpoint() {
    if (!have_unordered) {
      trainer::TrainConfig cfg = desk_train_config();
      cfg.popularity_ordering = false;
      unordered = run_training(records_a(), cfg, "unordered").best;
      have_unordered = true;
    }
    return unordered;
  }

  const trainer::Checkpoint& wide_ka_checkpoint() {
    if (!have_wide) {
      trainer::TrainConfig cfg = desk_train_config();
      cfg.train_samples = 3200;  // 20 records
      cfg.val_samples = 900;     // 6 records
      cfg.max_epochs = 10;
      cfg.seed = 9;
      wide_ka = run_training(records_b(), cfg, "wide-ka").best;
      have_wide = true;
    }
    return wide_ka;
  }
};

Fixtures fixtures;

// ---------------------------------------------------------------------------
// criterion 1: posterior moments vs a 128-bit enumeration oracle
// ---------------------------------------------------------------------------

struct QuadOracle {
  __float128 m, v, p_active;
  bool defined;
};

QuadOracle quad_posterior(double r_in, double v_in, double alpha_in, double lambda_in,
                          double tau_in, int x_max) {
  __float128 r = r_in, v = v_in, alpha = alpha_in, lambda = lambda_in, tau = tau_in;
  std::vector<__float128> joint(x_max + 1);
  __float128 p0 = (1.0Q - alpha) + alpha * expq(-lambda);
  joint[0] = (p0 > 0.0Q ? logq(p0) : -HUGE_VALQ) - r * r / (2.0Q * v);
  __float128 log_fact = 0.0Q;
  for (int k = 1; k <= x_max; ++k) {
    log_fact += logq(__float128(k));
    if (alpha > 0.0Q) {
      __float128 diff = r - __float128(k);
      joint[k] = logq(alpha) + __float128(k) * logq(lambda) - lambda - log_fact -
                 diff * diff / (2.0Q * v);
    } else {
      joint[k] = -HUGE_VALQ;
    }
  }
  __float128 best = -HUGE_VALQ;
  for (auto j : joint) best = j > best ? j : best;
  QuadOracle out{0, 0, 0, true};
  if (isinfq(best)) {
    out.defined = false;
    return out;
  }
  __float128 total = 0, mean = 0, second = 0, w0 = 0;
  for (int k = 0; k <= x_max; ++k) {
    if (isinfq(joint[k])) continue;
    __float128 w = expq((joint[k] - best) / tau);
    total += w;
    mean += w * __float128(k);
    second += w * __float128(k) * __float128(k);
    if (k == 0) w0 = w;
  }
  out.m = mean / total;
  __float128 var = second / total - out.m * out.m;
  out.v = var > 0.0Q ? var : 0.0Q;
  out.p_active = 1.0Q - w0 / total;
  return out;
}

CriterionResult criterion_1() {
  num::RngStream rng(101, "acceptance/posterior");
  const int cases = 10000;
  const int x_max = 40;
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) {
    double r = rng.uniform_in(-3.0, 8.0);
    double v = std::exp(rng.uniform_in(std::log(1e-3), std::log(5.0)));
    double alpha = rng.uniform_in(0.001, 0.999);
    double lambda = std::exp(rng.uniform_in(std::log(1e-4), std::log(4.0)));
    double tau = (i % 2 == 0) ? 1.0 : rng.uniform_in(0.25, 4.0);
    decoder::PosteriorMoments pm =
        decoder::posterior_moments(r, v, alpha, lambda, tau, x_max);
    QuadOracle oracle = quad_posterior(r, v, alpha, lambda, tau, x_max);
    if (!oracle.defined || pm.underflow) {
      return {false, "oracle or implementation reported an undefined posterior"};
    }
    worst = std::max(worst, std::abs(pm.m - static_cast<double>(oracle.m)));
    worst = std::max(worst, std::abs(pm.v - static_cast<double>(oracle.v)));
    worst = std::max(worst, std::abs(pm.p_active - static_cast<double>(oracle.p_active)));
  }
  std::ostringstream detail;
  detail << cases << " cases, max abs err " << worst;
  return {worst < 1e-10, detail.str()};
}

// ---------------------------------------------------------------------------
// criterion 2: greedy projection vs exhaustive integer projection
// ---------------------------------------------------------------------------

void enumerate_counts(std::size_t n, std::int64_t remaining,
                      std::vector<std::int64_t>& cur, const std::vector<double>& target,
                      double& best_cost, std::vector<std::int64_t>& best, int& optima) {
  if (cur.size() == n - 1) {
    cur.push_back(remaining);
    double cost = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double diff = static_cast<double>(cur[j]) - target[j];
      cost += diff * diff;
    }
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best = cur;
      optima = 1;
    } else if (std::abs(cost - best_cost) <= 1e-12) {
      ++optima;
    }
    cur.pop_back();
    return;
  }
  for (std::int64_t c = 0; c <= remaining; ++c) {
    cur.push_back(c);
    enumerate_counts(n, remaining - c, cur, target, best_cost, best, optima);
    cur.pop_back();
  }
}

CriterionResult criterion_2() {
  num::RngStream rng(102, "acceptance/projection");
  const int cases = 1000;
  int exact_matches = 0;
  for (int i = 0; i < cases; ++i) {
    std::size_t n = 2 + rng.index(7);                          // <= 8
    std::int64_t k = static_cast<std::int64_t>(rng.index(5));  // <= 4
    num::Tensor raw = num::Tensor::zeros({n});
    std::vector<double> clipped(n);
    for (std::size_t j = 0; j < n; ++j) {
      raw[j] = rng.uniform_in(-1.5, 3.5);
      clipped[j] = std::max(raw[j], 0.0);
    }
    ura::ActivityVector got = decoder::project_counts(raw, static_cast<double>(k));
    std::int64_t total = 0;
    for (std::int64_t c : got.counts) {
      if (c < 0) return {false, "negative count"};
      total += c;
    }
    if (total != k) return {false, "projection sum mismatch"};

    double best_cost = 1e300;
    std::vector<std::int64_t> best, cur;
    int optima = 0;
    enumerate_counts(n, k, cur, clipped, best_cost, best, optima);
    double got_cost = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double diff = static_cast<double>(got.counts[j]) - clipped[j];
      got_cost += diff * diff;
    }
    if (std::abs(got_cost - best_cost) > 1e-9) {
      std::ostringstream detail;
      detail << "case " << i << ": greedy cost " << got_cost << " vs optimal "
             << best_cost;
      return {false, detail.str()};
    }
    if (optima == 1 && got.counts != best) {
      return {false, "unique optimum not matched"};
    }
    if (optima == 1) ++exact_matches;
  }
  std::ostringstream detail;
  detail << cases << " cases optimal (" << exact_matches << " unique optima matched)";
  return {true, detail.str()};
}

// ---------------------------------------------------------------------------
// criterion 3: end-to-end gradients vs central finite differences
// ---------------------------------------------------------------------------

CriterionResult criterion_3() {
  trainer::TrainConfig cfg;
  cfg.layers = 2;
  cfg.codebook_size = 16;
  cfg.codeword_length = 8;
  cfg.fragment_dim = 8;
  cfg.batch_size = 8;
  cfg.snr_min_db = 5.0;
  cfg.snr_max_db = 15.0;
  cfg.seed = 11;
  cfg.quant_loss_enabled = true;
  cfg.lambda_q = 0.1;

  num::RngStream root(cfg.seed, "trainer");
  num::RngStream params_rng = root.fork("params");
  decoder::DecoderParams params =
      decoder::DecoderParams::learned_init(cfg.layers, params_rng);
  num::RngStream ura_rng = root.fork("ura");
  ura::UraCodebook codebook = ura::init_codebook(cfg.codebook_size, cfg.codeword_length,
                                                 ura::CodebookMode::learned, ura_rng);

  std::vector<num::Tensor> truth;
  {
    num::Tensor a = num::Tensor::zeros({cfg.codebook_size});
    a[0] = 2.0;
    a[5] = 1.0;
    truth.push_back(a);
    num::Tensor b = num::Tensor::zeros({cfg.codebook_size});
    b[1] = 1.0;
    b[2] = 1.0;
    b[9] = 1.0;
    truth.push_back(b);
  }
  trainer::SlotBatch batch{truth, 3, 0.23};

  num::Tape tape;
  trainer::LossGraph graph =
      trainer::build_loss_graph(tape, params, codebook, batch, cfg, 3.0, "acc3");
  num::Gradients grads = tape.backward(graph.loss);

  std::vector<num::Tensor*> masters;
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
  if (masters.size() != graph.leaves.size()) {
    return {false, "leaf bookkeeping mismatch"};
  }

  auto eval = [&]() {
    num::Tape t2;
    trainer::LossGraph g2 =
        trainer::build_loss_graph(t2, params, codebook, batch, cfg, 3.0, "acc3");
    return g2.loss.item();
  };

  const double step = 1e-5;
  double worst_ratio = 0.0;
  std::size_t checked = 0;
  for (std::size_t t = 0; t < masters.size(); ++t) {
    const num::Tensor& analytic = grads.at(graph.leaves[t]);
    for (std::size_t i = 0; i < masters[t]->size(); ++i) {
      double original = (*masters[t])[i];
      (*masters[t])[i] = original + step;
      double plus = eval();
      (*masters[t])[i] = original - step;
      double minus = eval();
      (*masters[t])[i] = original;
      double fd = (plus - minus) / (2.0 * step);
      double a = analytic[i];
      double tol = 1e-8 + 1e-4 * std::max(std::abs(a), std::abs(fd));
      worst_ratio = std::max(worst_ratio, std::abs(a - fd) / tol);
      ++checked;
    }
  }
  std::ostringstream detail;
  detail << checked << " coordinates (scalars, CNN, D, W), worst tolerance ratio "
         << worst_ratio;
  return {worst_ratio <= 1.0, detail.str()};
}

// ---------------------------------------------------------------------------
// criteria 4 and 5: learned-vs-fixed trends on held-out records
// ---------------------------------------------------------------------------

feel::CommModel fixed_baseline() {
  return feel::CommModel::fixed_baseline(kN, kL, kLayers, 3.0, 99);
}

std::span<const trainer::RoundRecord> test_records_a() {
  const auto& records = fixtures.records_a();
  return std::span<const trainer::RoundRecord>(records.data() + 40, records.size() - 40);
}

CriterionResult criterion_4() {
  const trainer::Checkpoint& ordered = fixtures.ordered_checkpoint();
  const trainer::Checkpoint& unordered = fixtures.unordered_checkpoint();
  feel::CommModel comm_ordered = ordered.comm_model();
  feel::CommModel comm_unordered = unordered.comm_model();
  feel::CommModel comm_fixed = fixed_baseline();

  auto test = test_records_a();
  std::span<const trainer::RoundRecord> eval_records = test.subspan(0, 12);  // 1932 slots

  bench::DecodeBenchConfig bc;
  bc.fragment_dim = kD;
  bc.quant_codebook_size = kN;
  bc.threads = 2;

  std::ostringstream detail;
  bool pass = true;
  const std::vector<double> snrs = {0.0, 5.0, 10.0, 20.0};
  std::map<double, double> acc_ordered, acc_unordered, acc_fixed;
  for (double snr : snrs) {
    bc.snr_db = snr;
    double sum_o = 0.0, sum_u = 0.0, sum_f = 0.0;
    for (int seed = 0; seed < 3; ++seed) {
      bc.noise_seed = 1000 + seed;
      bc.popularity_ordering = true;
      sum_o += bench::run_decode_bench(eval_records, comm_ordered, bc).accuracy;
      bc.popularity_ordering = false;
      sum_u += bench::run_decode_bench(eval_records, comm_unordered, bc).accuracy;
      bc.popularity_ordering = true;
      sum_f += bench::run_decode_bench(eval_records, comm_fixed, bc).accuracy;
    }
    acc_ordered[snr] = sum_o / 3.0;
    acc_unordered[snr] = sum_u / 3.0;
    acc_fixed[snr] = sum_f / 3.0;
    detail << "snr " << snr << ": ordered " << acc_ordered[snr] << " unordered "
           << acc_unordered[snr] << " fixed " << acc_fixed[snr] << "; ";
    if (!(acc_ordered[snr] > acc_fixed[snr])) pass = false;
  }
  // table ordering at 5 dB: learned+ordered > learned+unordered > fixed
  if (!(acc_ordered[5.0] > acc_unordered[5.0] && acc_unordered[5.0] > acc_fixed[5.0])) {
    pass = false;
  }
  return {pass, detail.str()};
}

CriterionResult criterion_5() {
  const trainer::Checkpoint& ordered = fixtures.ordered_checkpoint();
  feel::CommModel comm_learned = ordered.comm_model();
  feel::CommModel comm_fixed = fixed_baseline();

  auto test = test_records_a();
  if (test.size() < 200) return {false, "fewer than 200 held-out rounds"};
  std::span<const trainer::RoundRecord> eval_records = test.subspan(test.size() - 200);

  bench::DecodeBenchConfig bc;
  bc.fragment_dim = kD;
  bc.quant_codebook_size = kN;
  bc.threads = 2;
  bc.noise_seed = 2000;
  bc.popularity_ordering = true;

  std::ostringstream detail;
  bool pass = true;
  for (double snr : {0.0, 5.0, 10.0, 20.0}) {
    bc.snr_db = snr;
    double mae_learned = bench::run_decode_bench(eval_records, comm_learned, bc).ka_mae;
    double mae_fixed = bench::run_decode_bench(eval_records, comm_fixed, bc).ka_mae;
    detail << "snr " << snr << ": learned " << mae_learned << " fixed " << mae_fixed
           << "; ";
    if (!(mae_learned <= mae_fixed)) pass = false;
    if (snr >= 10.0 && !(mae_learned < 0.5)) pass = false;
  }
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// criterion 6: end-to-end FEEL sanity at 20 dB and 0 dB
// ---------------------------------------------------------------------------

CriterionResult criterion_6() {
  const trainer::Checkpoint& ordered = fixtures.ordered_checkpoint();
  feel::CommModel comm = ordered.comm_model();

  feel::FeelConfig base = desk_feel_config();
  base.rounds = 100;

  double pa_acc = 0.0, digital20 = 0.0, digital0 = 0.0;
  const int seeds = 5;
  bool diverged = false;
  for (int s = 0; s < seeds; ++s) {
    feel::FeelConfig pa = base;
    pa.seed = 500 + s;
    feel::RunResult pa_result = feel::run(pa);
    pa_acc += pa_result.final_test_accuracy();
    diverged = diverged || pa_result.diverged;

    feel::FeelConfig d20 = base;
    d20.seed = 500 + s;
    d20.uplink.kind = feel::UplinkConfig::Kind::digital_ota;
    d20.uplink.snr_db = 20.0;
    feel::RunResult r20 = feel::run(d20, &comm, {});
    digital20 += r20.final_test_accuracy();
    diverged = diverged || r20.diverged;

    feel::FeelConfig d0 = base;
    d0.seed = 500 + s;
    d0.uplink.kind = feel::UplinkConfig::Kind::digital_ota;
    d0.uplink.snr_db = 0.0;
    feel::RunResult r0 = feel::run(d0, &comm, {});
    digital0 += r0.final_test_accuracy();
    diverged = diverged || r0.diverged;
  }
  pa_acc /= seeds;
  digital20 /= seeds;
  digital0 /= seeds;

  std::ostringstream detail;
  detail << "PA " << pa_acc << ", digital@20dB " << digital20 << ", digital@0dB "
         << digital0 << (diverged ? " (a run diverged)" : "");
  bool pass = !diverged && digital20 >= pa_acc - 0.03 && digital0 >= pa_acc - 0.10;
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// criterion 7: corruption robustness of the symmetric rules
// ---------------------------------------------------------------------------

CriterionResult criterion_7() {
  const trainer::Checkpoint& wide = fixtures.wide_ka_checkpoint();
  feel::CommModel comm = wide.comm_model();

  feel::FeelConfig base = desk_feel_config();
  base.ka_min = 5;
  base.ka_max = 10;
  base.rounds = 100;
  base.corruption_fraction = 0.2;
  base.error_feedback = false;  // disabled for stability under corruption
  base.uplink.kind = feel::UplinkConfig::Kind::digital_ota;
  base.uplink.snr_db = 10.0;

  const int seeds = 5;
  std::vector<double> acc_mean(seeds), acc_trimmed(seeds), acc_majority(seeds);
  for (int s = 0; s < seeds; ++s) {
    for (auto [rule, out] :
         {std::pair{aggregate::AggregationRule::mean(), &acc_mean},
          std::pair{aggregate::AggregationRule::trimmed_mean(0.8), &acc_trimmed},
          std::pair{aggregate::AggregationRule::majority(), &acc_majority}}) {
      feel::FeelConfig cfg = base;
      cfg.seed = 700 + s;
      cfg.uplink.rule = rule;
      feel::RunResult result = feel::run(cfg, &comm, {});
      (*out)[s] = result.diverged ? 0.0 : result.final_test_accuracy();
    }
  }

  auto paired_t = [&](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> diff(seeds);
    for (int s = 0; s < seeds; ++s) diff[s] = a[s] - b[s];
    double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / seeds;
    double var = 0.0;
    for (double d : diff) var += (d - mean) * (d - mean);
    var /= (seeds - 1);
    double se = std::sqrt(var / seeds);
    return se > 0.0 ? mean / se : (mean > 0.0 ? 1e9 : 0.0);
  };

  double mean_mean = std::accumulate(acc_mean.begin(), acc_mean.end(), 0.0) / seeds;
  double mean_trimmed =
      std::accumulate(acc_trimmed.begin(), acc_trimmed.end(), 0.0) / seeds;
  double mean_majority =
      std::accumulate(acc_majority.begin(), acc_majority.end(), 0.0) / seeds;
  double t_trimmed = paired_t(acc_trimmed, acc_mean);
  double t_majority = paired_t(acc_majority, acc_mean);

  // one-sided 95% threshold for a paired t statistic with 4 dof
  const double t_crit = 2.132;
  std::ostringstream detail;
  detail << "mean " << mean_mean << ", trimmed " << mean_trimmed << " (t=" << t_trimmed
         << "), majority " << mean_majority << " (t=" << t_majority << ")";
  bool pass = mean_trimmed > mean_mean && t_trimmed > t_crit &&
              mean_majority > mean_mean && t_majority > t_crit;
  return {pass, detail.str()};
}

// ---------------------------------------------------------------------------
// criterion 8: exact identities
// ---------------------------------------------------------------------------

CriterionResult criterion_8() {
  std::ostringstream detail;

  // trimmed_mean(tau = 1) == mean on random count vectors
  num::RngStream rng(108, "acceptance/identities");
  vq::QuantCodebook cb;
  cb.centroids = rng.gauss_tensor({4, 10});
  cb.popularity.assign(10, 0.1);
  for (int trial = 0; trial < 500; ++trial) {
    ura::ActivityVector x;
    x.counts.assign(10, 0);
    for (std::size_t j = 0; j < 10; ++j) {
      x.counts[j] = static_cast<std::int64_t>(rng.index(4));
    }
    if (x.total() == 0) continue;
    double k_hat = static_cast<double>(x.total());
    vq::Fragment trimmed = aggregate::trimmed_fragment(x, cb, k_hat, 1.0);
    vq::Fragment mean = aggregate::mean_fragment(x, cb, k_hat);
    for (std::size_t i = 0; i < 4; ++i) {
      if (std::abs(trimmed[i] - mean[i]) > 1e-12) {
        return {false, "trimmed(1.0) differs from mean"};
      }
    }
  }
  detail << "trimmed(1)==mean; ";

  // majority tie averages the tied centroids
  {
    ura::ActivityVector tie;
    tie.counts = {4, 4, 2, 0, 0, 0, 0, 0, 0, 0};
    vq::Fragment maj = aggregate::majority_fragment(tie, cb);
    for (std::size_t i = 0; i < 4; ++i) {
      double expect = 0.5 * (cb.centroids.at(i, 0) + cb.centroids.at(i, 1));
      if (std::abs(maj[i] - expect) > 1e-12) return {false, "majority tie rule broken"};
    }
  }
  detail << "majority tie avg; ";

  // error feedback with a perfect quantiser is identical to disabled
  {
    vq::ErrorFeedbackState ef(16, true);
    num::RngStream noise = rng.fork("ef");
    for (int round = 0; round < 20; ++round) {
      num::Tensor update = noise.gauss_tensor({16});
      num::Tensor s = ef.apply(update);
      for (std::size_t i = 0; i < 16; ++i) {
        if (s[i] != update[i]) return {false, "EF with perfect quantiser altered s"};
      }
      ef.record_residual(s, s);
      if (ef.accumulator_norm() != 0.0) return {false, "EF accumulator left zero"};
    }
  }
  detail << "EF perfect == off; ";

  // unit row norms of D W after every epoch of a short training run
  {
    const auto& records = fixtures.records_a();
    trainer::TrainConfig cfg = desk_train_config();
    cfg.train_samples = 480;  // 3 records
    cfg.val_samples = 161;    // 1 record
    cfg.max_epochs = 2;
    cfg.layers = 2;
    double worst = 0.0;
    trainer::TrainResult result =
        trainer::train(records, cfg, [&worst](const trainer::EpochStats& s) {
          worst = std::max(worst, s.max_row_norm_error);
        });
    if (result.history.size() != 2) return {false, "short training run failed"};
    if (worst > 1e-9) return {false, "row norm deviated beyond 1e-9"};
    detail << "row norms 1 +- " << worst << "; ";
  }

  // permutation invariance of every aggregation rule
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> devices(6);
    for (auto& idx : devices) idx = rng.index(10);
    std::vector<std::size_t> shuffled = devices;
    rng.shuffle(shuffled);
    ura::ActivityVector a = ura::encode_slot(devices, 10);
    ura::ActivityVector b = ura::encode_slot(shuffled, 10);
    double k_hat = static_cast<double>(a.total());
    vq::Fragment m1 = aggregate::mean_fragment(a, cb, k_hat);
    vq::Fragment m2 = aggregate::mean_fragment(b, cb, k_hat);
    vq::Fragment t1 = aggregate::trimmed_fragment(a, cb, k_hat, 0.8);
    vq::Fragment t2 = aggregate::trimmed_fragment(b, cb, k_hat, 0.8);
    vq::Fragment j1 = aggregate::majority_fragment(a, cb);
    vq::Fragment j2 = aggregate::majority_fragment(b, cb);
    for (std::size_t i = 0; i < 4; ++i) {
      if (m1[i] != m2[i] || t1[i] != t2[i] || j1[i] != j2[i]) {
        return {false, "aggregation not permutation invariant"};
      }
    }
  }
  detail << "permutation invariance";
  return {true, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  auto wanted = [&](int n) {
    return selected.empty() ||
           std::find(selected.begin(), selected.end(), n) != selected.end();
  };

  struct Entry {
    int number;
    const char* name;
    std::function<CriterionResult()> run;
  };
  const std::vector<Entry> entries = {
      {1, "posterior moments match the 128-bit enumeration oracle (1e-10)", criterion_1},
      {2, "greedy count projection equals the exhaustive l2 optimum", criterion_2},
      {3, "end-to-end gradients match finite differences (rel 1e-4)", criterion_3},
      {4,
       "learned decoder beats the fixed baseline at every SNR; ordered > unordered > "
       "fixed at 5 dB",
       criterion_4},
      {5, "active-device MAE: learned <= fixed everywhere, < 0.5 at >= 10 dB",
       criterion_5},
      {6, "digital FEEL tracks perfect aggregation at 20 dB and converges at 0 dB",
       criterion_6},
      {7, "trimmed mean and majority beat the mean rule under 20% corruption",
       criterion_7},
      {8, "exact identity suite", criterion_8},
  };

  int failures = 0;
  for (const Entry& entry : entries) {
    if (!wanted(entry.number)) continue;
    auto start = Clock::now();
    CriterionResult result;
    try {
      result = entry.run();
    } catch (const std::exception& e) {
      result = {false, std::string("exception: ") + e.what()};
    }
    double elapsed = secs_since(start);
    std::printf("[%s] criterion %d: %s (%s, %.1fs)\n", result.pass ? "PASS" : "FAIL",
                entry.number, entry.name, result.detail.c_str(), elapsed);
    std::fflush(stdout);
    if (!result.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
