#include "airsum/decoder.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "airsum/error.hpp"

namespace airsum::decoder {

using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;

const char* mode_name(Mode mode) {
  return mode == Mode::learned ? "learned" : "fixed";
}

Mode mode_from_name(std::string_view name) {
  if (name == "learned") return Mode::learned;
  if (name == "fixed") return Mode::fixed;
  throw InvalidArgument("unknown decoder mode: " + std::string(name));
}

// ---------------------------------------------------------------------------
// scalar range mappings
// ---------------------------------------------------------------------------

namespace scalar_map {

namespace {
double sigmoid_stable(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}
// lo + (hi-lo)(tanh+1)/2: saturates exactly at the bounds
double centred_tanh(double raw, double lo, double hi) {
  return lo + (hi - lo) * (std::tanh(raw) + 1.0) * 0.5;
}
}  // namespace

double gamma(double raw) { return centred_tanh(raw, 0.3, 2.0); }
double eta(double raw) { return sigmoid_stable(raw); }
double beta(double raw) { return centred_tanh(raw, 0.5, 2.0); }
double tau(double raw) {
  return std::log1p(std::exp(-std::abs(raw))) + std::max(raw, 0.0);
}
double zeta(double raw) { return sigmoid_stable(raw); }
double gate(double raw) { return sigmoid_stable(raw); }

double gamma_raw(double value) { return std::atanh(2.0 * (value - 0.3) / 1.7 - 1.0); }
double beta_raw(double value) { return std::atanh(2.0 * (value - 0.5) / 1.5 - 1.0); }
double sigmoid_raw(double value) { return std::log(value / (1.0 - value)); }
double tau_raw(double value) { return std::log(std::expm1(value)); }

}  // namespace scalar_map

// ---------------------------------------------------------------------------
// decoder parameters
// ---------------------------------------------------------------------------

namespace {

enum ScalarColumn { kGamma = 0, kEta, kBeta, kTau, kZeta, kGAlpha, kSSigma };

// Raw value that maps to exactly zero through a sigmoid (exp underflows).
constexpr double kClosedGateRaw = -1e4;

void fill_default_scalars(Tensor& raw, int layers, double zeta_raw) {
  for (int l = 0; l < layers; ++l) {
    raw.at(l, kGamma) = scalar_map::gamma_raw(1.0);
    raw.at(l, kEta) = 0.0;  // eta = 0.5
    raw.at(l, kBeta) = scalar_map::beta_raw(1.0);
    raw.at(l, kTau) = scalar_map::tau_raw(1.0);
    raw.at(l, kZeta) = zeta_raw;
    raw.at(l, kGAlpha) = 0.0;  // 0.5
    raw.at(l, kSSigma) = 0.0;  // 0.5
  }
}

}  // namespace

DecoderParams DecoderParams::learned_init(int layers, num::RngStream& rng) {
  if (layers < 1) throw InvalidArgument("learned_init: layers must be >= 1");
  DecoderParams p;
  p.layers = layers;
  p.use_cnn = true;
  p.scalar_raw = Tensor::zeros({static_cast<std::size_t>(layers), 7});
  fill_default_scalars(p.scalar_raw, layers, scalar_map::sigmoid_raw(0.85));
  p.cnn.reserve(layers);
  const std::size_t f = kCnnFilters, c = kCnnChannels, k = kCnnKernel;
  double std1 = std::sqrt(2.0 / static_cast<double>(c * k));
  double std2 = std::sqrt(2.0 / static_cast<double>(f * k));
  for (int l = 0; l < layers; ++l) {
    num::RngStream lr = rng.fork("cnn" + std::to_string(l));
    CnnLayer layer;
    layer.k1 = lr.gauss_tensor({f, c, k});
    layer.k2 = lr.gauss_tensor({f, f, k});
    layer.k3 = Tensor::zeros({1, f, k});
    for (double& w : layer.k1.mutable_data()) w *= std1;
    for (double& w : layer.k2.mutable_data()) w *= std2;
    layer.b1 = Tensor::zeros({f});
    layer.b2 = Tensor::zeros({f});
    layer.b3 = Tensor::zeros({1});
    // Filter 0 carries the Bayesian mean (channel 2 of the feature map)
    // straight through, so at initialisation the denoiser output equals the
    // posterior mean and the unrolled network starts from the classical
    // behaviour regardless of the mixing gate.
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < k; ++j) layer.k1.at(0, ci, j) = 0.0;
    layer.k1.at(0, 2, 1) = 1.0;
    for (std::size_t fi = 0; fi < f; ++fi)
      for (std::size_t j = 0; j < k; ++j) layer.k2.at(0, fi, j) = 0.0;
    layer.k2.at(0, 0, 1) = 1.0;
    layer.k3.at(0, 0, 1) = 1.0;
    p.cnn.push_back(std::move(layer));
  }
  return p;
}

DecoderParams DecoderParams::fixed_defaults(int layers) {
  if (layers < 1) throw InvalidArgument("fixed_defaults: layers must be >= 1");
  DecoderParams p;
  p.layers = layers;
  p.use_cnn = false;
  p.scalar_raw = Tensor::zeros({static_cast<std::size_t>(layers), 7});
  fill_default_scalars(p.scalar_raw, layers, kClosedGateRaw);
  return p;
}

double DecoderParams::gamma(int l) const { return scalar_map::gamma(scalar_raw.at(l, kGamma)); }
double DecoderParams::eta(int l) const { return scalar_map::eta(scalar_raw.at(l, kEta)); }
double DecoderParams::beta(int l) const { return scalar_map::beta(scalar_raw.at(l, kBeta)); }
double DecoderParams::tau(int l) const { return scalar_map::tau(scalar_raw.at(l, kTau)); }
double DecoderParams::zeta(int l) const { return scalar_map::zeta(scalar_raw.at(l, kZeta)); }
double DecoderParams::g_alpha(int l) const { return scalar_map::gate(scalar_raw.at(l, kGAlpha)); }
double DecoderParams::s_sigma(int l) const { return scalar_map::gate(scalar_raw.at(l, kSSigma)); }

// ---------------------------------------------------------------------------
// tempered Poisson spike-and-slab posterior
// ---------------------------------------------------------------------------

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct PostTable {
  std::vector<double> w;  // normalised weights over 0..x_max
  std::vector<double> s;  // untempered joint log-densities (may be -inf)
  double m = 0.0, ex2 = 0.0, v = 0.0, p_active = 0.0;
  double p0 = 0.0, exp_neg_lambda = 0.0;
  bool underflow = false;
};

void build_table(double pseudo_r, double pseudo_v, double alpha, double lambda,
                 double tau, int x_max, PostTable& t) {
  if (!(pseudo_v > 0.0)) throw InvalidArgument("posterior_moments: V must be positive");
  if (!(tau > 0.0)) throw InvalidArgument("posterior_moments: tau must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("posterior_moments: alpha outside [0,1]");
  }
  if (!(lambda > 0.0)) throw InvalidArgument("posterior_moments: lambda must be positive");
  if (x_max < 0) throw InvalidArgument("posterior_moments: x_max must be >= 0");

  std::size_t support = static_cast<std::size_t>(x_max) + 1;
  t.w.assign(support, 0.0);
  t.s.assign(support, kNegInf);
  t.exp_neg_lambda = std::exp(-lambda);
  t.p0 = (1.0 - alpha) + alpha * t.exp_neg_lambda;
  double log_lambda = std::log(lambda);
  double log_alpha = alpha > 0.0 ? std::log(alpha) : kNegInf;
  double inv_2v = 0.5 / pseudo_v;

  t.s[0] = (t.p0 > 0.0 ? std::log(t.p0) : kNegInf) - pseudo_r * pseudo_r * inv_2v;
  double log_fact = 0.0;
  for (int k = 1; k <= x_max; ++k) {
    log_fact += std::log(static_cast<double>(k));
    if (alpha > 0.0) {
      double diff = pseudo_r - static_cast<double>(k);
      t.s[k] = log_alpha + k * log_lambda - lambda - log_fact - diff * diff * inv_2v;
    }
  }

  double s_max = kNegInf;
  for (double s : t.s) s_max = std::max(s_max, s);
  if (!std::isfinite(s_max)) {
    t.underflow = true;
    return;
  }

  double total = 0.0;
  for (std::size_t k = 0; k < support; ++k) {
    if (std::isfinite(t.s[k])) {
      t.w[k] = std::exp((t.s[k] - s_max) / tau);
      total += t.w[k];
    }
  }
  double inv_total = 1.0 / total;
  double m = 0.0, ex2 = 0.0;
  for (std::size_t k = 0; k < support; ++k) {
    t.w[k] *= inv_total;
    double kd = static_cast<double>(k);
    m += t.w[k] * kd;
    ex2 += t.w[k] * kd * kd;
  }
  t.m = m;
  t.ex2 = ex2;
  t.v = std::max(ex2 - m * m, 0.0);
  t.p_active = 1.0 - t.w[0];
}

}  // namespace

PosteriorMoments posterior_moments(double pseudo_r, double pseudo_v, double alpha,
                                   double lambda, double tau, int x_max) {
  PostTable t;
  build_table(pseudo_r, pseudo_v, alpha, lambda, tau, x_max, t);
  if (t.underflow) return {0.0, Floors{}.nu, 0.0, true};
  return {t.m, t.v, t.p_active, false};
}

PosteriorVars posterior_moments(Var pseudo_r, Var pseudo_v, Var alpha, Var lambda,
                                Var tau, int x_max, double nu_floor) {
  Tape* tape = pseudo_r.tape;
  std::size_t n = pseudo_r.size();
  if (pseudo_v.size() != n || alpha.size() != n || lambda.size() != n) {
    throw ShapeError("posterior_moments: coordinate length mismatch");
  }
  if (tau.size() != 1) throw ShapeError("posterior_moments: tau must be scalar");

  const Tensor& rv = pseudo_r.value();
  const Tensor& vv = pseudo_v.value();
  const Tensor& av = alpha.value();
  const Tensor& lv = lambda.value();
  double tau_val = tau.value()[0];

  Tensor pack = Tensor::zeros({3, n});
  int underflow_count = 0;
  {
    PostTable t;
    for (std::size_t j = 0; j < n; ++j) {
      build_table(rv[j], vv[j], av[j], lv[j], tau_val, x_max, t);
      if (t.underflow) {
        pack.at(0, j) = 0.0;
        pack.at(1, j) = nu_floor;
        pack.at(2, j) = 0.0;
        ++underflow_count;
      } else {
        pack.at(0, j) = t.m;
        pack.at(1, j) = t.v;
        pack.at(2, j) = t.p_active;
      }
    }
  }

  // Backward rebuilds the per-coordinate weight tables and applies the
  // softmax covariance identities: for any logit parameter theta,
  //   d m / d theta   = sum_k w_k (k - m) u_k
  //   d E[x^2]/d theta = sum_k w_k (k^2 - E[x^2]) u_k
  //   d p0 / d theta  = w0 (u_0 - sum_k w_k u_k)
  // with u_k the derivative of the (tempered) joint log-density. Gradients
  // vanish at the alpha = 0 boundary and for underflowed coordinates.
  auto backward = [pseudo_r, pseudo_v, alpha, lambda, tau, x_max,
                   n](const Tensor& g, num::GradSink& sink) {
    const Tensor& rv = pseudo_r.value();
    const Tensor& vv = pseudo_v.value();
    const Tensor& av = alpha.value();
    const Tensor& lv = lambda.value();
    double tau_val = tau.value()[0];

    Tensor gr = Tensor::zeros({n});
    Tensor gv_out = Tensor::zeros({n});
    Tensor ga = Tensor::zeros({n});
    Tensor gl = Tensor::zeros({n});
    double gtau = 0.0;

    PostTable t;
    for (std::size_t j = 0; j < n; ++j) {
      double gm = g.at(0, j), gvar = g.at(1, j), gp = g.at(2, j);
      if (gm == 0.0 && gvar == 0.0 && gp == 0.0) continue;
      build_table(rv[j], vv[j], av[j], lv[j], tau_val, x_max, t);
      if (t.underflow) continue;

      const double R = rv[j], V = vv[j], a = av[j], lam = lv[j];
      const double inv_tau = 1.0 / tau_val;
      // accumulators per parent: dm, dex2, ubar, u0
      double dm[5] = {0, 0, 0, 0, 0};
      double dex2[5] = {0, 0, 0, 0, 0};
      double ubar[5] = {0, 0, 0, 0, 0};
      double u0[5] = {0, 0, 0, 0, 0};
      for (int k = 0; k <= x_max; ++k) {
        double w = t.w[k];
        if (w == 0.0) continue;
        double kd = static_cast<double>(k);
        double u[5];
        u[0] = (kd - R) / V * inv_tau;                    // d/dR
        u[1] = (R - kd) * (R - kd) / (2.0 * V * V) * inv_tau;  // d/dV
        if (k == 0) {
          u[2] = (t.exp_neg_lambda - 1.0) / t.p0 * inv_tau;       // d/dalpha
          u[3] = -a * t.exp_neg_lambda / t.p0 * inv_tau;          // d/dlambda
        } else {
          u[2] = (a > 0.0 ? 1.0 / a : 0.0) * inv_tau;
          u[3] = (kd / lam - 1.0) * inv_tau;
        }
        u[4] = -t.s[k] * inv_tau * inv_tau;  // d/dtau
        for (int p = 0; p < 5; ++p) {
          dm[p] += w * (kd - t.m) * u[p];
          dex2[p] += w * (kd * kd - t.ex2) * u[p];
          ubar[p] += w * u[p];
          if (k == 0) u0[p] = u[p];
        }
      }
      double w0 = t.w[0];
      for (int p = 0; p < 5; ++p) {
        double dvar = dex2[p] - 2.0 * t.m * dm[p];
        // p_active = 1 - w0 and dw0 = w0 (u0 - ubar)
        double dp_active = (w0 > 0.0) ? -w0 * (u0[p] - ubar[p]) : 0.0;
        double contrib = gm * dm[p] + gvar * dvar + gp * dp_active;
        switch (p) {
          case 0: gr[j] += contrib; break;
          case 1: gv_out[j] += contrib; break;
          case 2: ga[j] += contrib; break;
          case 3: gl[j] += contrib; break;
          case 4: gtau += contrib; break;
        }
      }
    }
    sink.add(pseudo_r.id, std::move(gr));
    sink.add(pseudo_v.id, std::move(gv_out));
    sink.add(alpha.id, std::move(ga));
    sink.add(lambda.id, std::move(gl));
    sink.add(tau.id, Tensor::from_data(tau.shape(), {gtau}));
  };

  Var packed = tape->make("posterior_moments", std::move(pack), backward);
  PosteriorVars out{num::row(packed, 0), num::row(packed, 1), num::row(packed, 2),
                    underflow_count};
  return out;
}

// ---------------------------------------------------------------------------
// parameter attachment
// ---------------------------------------------------------------------------

ParamVars attach_params(Tape& tape, const DecoderParams& params, bool trainable) {
  ParamVars out;
  std::size_t layers = static_cast<std::size_t>(params.layers);
  Tensor flat = Tensor::from_data(
      {layers * 7},
      std::vector<double>(params.scalar_raw.data().begin(), params.scalar_raw.data().end()));
  out.scalar_raw = tape.leaf(std::move(flat), trainable);
  out.layer.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    LayerVars lv;
    auto raw = [&](std::size_t col) {
      return num::gather(out.scalar_raw, {l * 7 + col});
    };
    lv.gamma = num::affine(num::affine(num::tanh(raw(kGamma)), 0.5, 0.5), 1.7, 0.3);
    lv.eta = num::sigmoid(raw(kEta));
    lv.beta = num::affine(num::affine(num::tanh(raw(kBeta)), 0.5, 0.5), 1.5, 0.5);
    lv.tau = num::softplus(raw(kTau));
    lv.zeta = num::sigmoid(raw(kZeta));
    lv.g_alpha = num::sigmoid(raw(kGAlpha));
    lv.s_sigma = num::sigmoid(raw(kSSigma));
    lv.use_cnn = params.use_cnn;
    if (params.use_cnn) {
      const CnnLayer& c = params.cnn[l];
      lv.k1 = tape.leaf(c.k1, trainable);
      lv.b1 = tape.leaf(c.b1, trainable);
      lv.k2 = tape.leaf(c.k2, trainable);
      lv.b2 = tape.leaf(c.b2, trainable);
      lv.k3 = tape.leaf(c.k3, trainable);
      lv.b3 = tape.leaf(c.b3, trainable);
    }
    out.layer.push_back(lv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// state initialisation
// ---------------------------------------------------------------------------

SlotState init_slot_state(Tape& tape, Var y, double prior_ka_mean, const Floors& floors) {
  std::size_t l = y.size();
  SlotState s;
  s.y = y;
  s.x_hat = Var{};  // set by caller once n is known
  s.nu = Var{};
  s.z = y;
  s.v = tape.constant(Tensor::ones({l}));
  // initial noise level: residual energy after removing the expected
  // per-sample signal power prior/l
  Var mean_energy = num::mean(num::square(y));
  s.sigma2 = num::clamp_min(
      num::affine(mean_energy, 1.0, -prior_ka_mean / static_cast<double>(l)),
      floors.sigma2_min);
  return s;
}

SharedPrior init_shared_prior(Tape& tape, std::size_t n, double prior_ka_mean) {
  double lam0 = prior_ka_mean / static_cast<double>(n);
  SharedPrior p;
  p.lambda = tape.constant(Tensor::full({n}, lam0));
  p.alpha = tape.constant(Tensor::full({n}, 1.0 - std::exp(-lam0)));
  return p;
}

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

OutputBlockResult output_block(const SlotState& state, Var sensing, Var sensing_sq,
                               Var gamma, Var eta) {
  Var z_tmp = num::matvec(sensing, state.x_hat);
  Var v_new = num::matvec(sensing_sq, state.nu);
  Var d_old = state.v + state.sigma2;
  Var r_old = state.y - state.z;
  Var z_tilde = z_tmp - gamma * (r_old * (v_new / d_old));
  Var one_minus_eta = num::affine(eta, -1.0, 1.0);
  OutputBlockResult out;
  out.z = eta * state.z + one_minus_eta * z_tilde;
  out.v = eta * state.v + one_minus_eta * v_new;
  out.r = state.y - out.z;
  out.d = out.v + state.sigma2;
  return out;
}

namespace {
constexpr double kLogRateVarFloor = 1e-8;
constexpr double kLogRateStdEps = 1e-2;
}  // namespace

Var standardised_log_rates(Var lambda) {
  Var log_lambda = num::log(lambda);
  Var centred = log_lambda - num::mean(log_lambda);
  Var variance = num::mean(num::square(centred));
  Var sd = num::sqrt(variance + kLogRateVarFloor);
  return centred / (sd + kLogRateStdEps);
}

namespace {

Var apply_cnn(const LayerVars& layer, Var features) {
  Var h1 = num::relu(num::channel_bias(num::conv1d(features, layer.k1, true), layer.b1));
  Var h2 = num::relu(num::channel_bias(num::conv1d(h1, layer.k2, true), layer.b2));
  Var out = num::channel_bias(num::conv1d(h2, layer.k3, true), layer.b3);
  return num::reshape(out, {features.shape()[1]});
}

}  // namespace

InputBlockResult input_block(Var x_hat, Var d, Var r, Var sensing, Var sensing_sq,
                             const LayerVars& layer, const SharedPrior& prior,
                             int x_max, const Floors& floors) {
  Var kappa = layer.beta / d;
  Var psi = num::matvec_t(sensing_sq, kappa);
  for (double p : psi.value().data()) {
    if (!(p > 0.0)) throw NumericError("input_block: non-positive pseudo precision");
  }
  Var pseudo_v = num::reciprocal(psi);
  Var rho = num::matvec_t(sensing, kappa * r);
  Var pseudo_r = x_hat + rho / psi;

  PosteriorVars post = posterior_moments(pseudo_r, pseudo_v, prior.alpha, prior.lambda,
                                         layer.tau, x_max, floors.nu);

  InputBlockResult out;
  out.m = post.m;
  out.v = post.v;
  out.p_active = post.p_active;
  out.pseudo_r = pseudo_r;
  out.pseudo_v = pseudo_v;
  out.underflow_count = post.underflow_count;
  out.nu = num::clamp_min(post.v, floors.nu);

  if (layer.use_cnn) {
    // the posterior variance is exactly zero at point-mass coordinates, so
    // its sqrt feature channel is floored to keep the backward pass finite
    Var v_feature = num::sqrt(num::clamp_min(post.v, 1e-12));
    std::vector<Var> channels = {pseudo_r,  num::sqrt(pseudo_v), post.m,
                                 v_feature, prior.alpha,         standardised_log_rates(prior.lambda)};
    Var features = num::stack_rows(channels);
    Var refined = apply_cnn(layer, features);
    Var one_minus_zeta = num::affine(layer.zeta, -1.0, 1.0);
    out.x_hat = one_minus_zeta * post.m + layer.zeta * refined;
  } else {
    out.x_hat = post.m;
  }
  return out;
}

Var em_log_step(Var lam, Var lam_hat, Var rho) {
  Var log_lam = num::log(lam);
  return num::exp(log_lam + rho * (num::log(lam_hat) - log_lam));
}

EmResult em_update(const EmInputs& in, const Floors& floors) {
  std::size_t batch = in.stats.size();
  if (batch == 0) throw InvalidArgument("em_update: empty batch");
  double inv_b = 1.0 / static_cast<double>(batch);

  Var m_bar = in.stats[0].m;
  Var v_bar = in.stats[0].v;
  Var p_bar = in.stats[0].p_active;
  for (std::size_t b = 1; b < batch; ++b) {
    m_bar = m_bar + in.stats[b].m;
    v_bar = v_bar + in.stats[b].v;
    p_bar = p_bar + in.stats[b].p_active;
  }
  m_bar = m_bar * inv_b;
  v_bar = v_bar * inv_b;
  p_bar = p_bar * inv_b;

  // Confidence-controlled step: c is the batch-averaged ratio of squared
  // posterior means to posterior variances.
  Var lam_hat = num::clamp_min(m_bar, floors.lambda_min);
  Var confidence = num::mean(num::square(m_bar) / num::clamp_min(v_bar, floors.nu));
  Var rho = num::clamp(confidence / (confidence + 1.0), 0.05, 0.95);

  EmResult out;
  out.lambda = em_log_step(in.lambda, lam_hat, rho);
  out.ka_hat = num::sum(out.lambda);
  out.pi = out.lambda / out.ka_hat;
  Var activity_from_rates = num::affine(num::exp(num::neg(out.lambda)), -1.0, 1.0);
  Var one_minus_g = num::affine(in.g_alpha, -1.0, 1.0);
  out.alpha = in.g_alpha * p_bar + one_minus_g * activity_from_rates;

  out.sigma2.reserve(batch);
  Var one_minus_s = num::affine(in.s_sigma, -1.0, 1.0);
  for (std::size_t b = 0; b < batch; ++b) {
    Var proposal = num::mean(num::clamp_min(
        num::square(in.outputs[b].r) - in.outputs[b].v, floors.sigma2_min));
    Var merged = num::exp(one_minus_s * num::log(in.sigma2[b]) +
                          in.s_sigma * num::log(proposal));
    out.sigma2.push_back(merged);
  }
  return out;
}

// ---------------------------------------------------------------------------
// full decoder
// ---------------------------------------------------------------------------

int default_x_max(double prior_ka_mean) {
  return std::max(32, static_cast<int>(std::ceil(3.0 * prior_ka_mean)));
}

BatchForward decode_batch(Tape& tape, std::span<const Var> ys, Var sensing,
                          const ParamVars& params, int layers,
                          const DecodeOptions& options) {
  if (ys.empty()) throw InvalidArgument("decode_batch: empty batch");
  std::size_t n = sensing.shape()[1];
  int x_max = options.x_max > 0 ? options.x_max : default_x_max(options.prior_ka_mean);

  Var sensing_sq = num::square(sensing);
  SharedPrior prior = init_shared_prior(tape, n, options.prior_ka_mean);

  std::size_t batch = ys.size();
  std::vector<SlotState> states;
  states.reserve(batch);
  Var zero_x = tape.constant(Tensor::zeros({n}));
  Var ones_nu = tape.constant(Tensor::ones({n}));
  for (const Var& y : ys) {
    SlotState s = init_slot_state(tape, y, options.prior_ka_mean, options.floors);
    s.x_hat = zero_x;
    s.nu = ones_nu;
    states.push_back(s);
  }

  BatchForward fw;
  fw.ka_hat = num::sum(prior.lambda);
  if (options.collect_diagnostics) fw.diag.layers.reserve(layers);

  std::vector<OutputBlockResult> outs(batch);
  std::vector<InputBlockResult> ins(batch);
  std::vector<Var> sigma2(batch);
  for (std::size_t b = 0; b < batch; ++b) sigma2[b] = states[b].sigma2;

  for (int l = 0; l < layers; ++l) {
    const LayerVars& lv = params.layer[l];
    for (std::size_t b = 0; b < batch; ++b) {
      outs[b] = output_block(states[b], sensing, sensing_sq, lv.gamma, lv.eta);
      states[b].z = outs[b].z;
      states[b].v = outs[b].v;
    }
    int underflow = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      ins[b] = input_block(states[b].x_hat, outs[b].d, outs[b].r, sensing, sensing_sq,
                           lv, prior, x_max, options.floors);
      states[b].x_hat = ins[b].x_hat;
      states[b].nu = ins[b].nu;
      underflow += ins[b].underflow_count;
    }
    EmResult em = em_update({ins, outs, sigma2, prior.lambda, lv.g_alpha, lv.s_sigma},
                            options.floors);
    prior.lambda = em.lambda;
    prior.alpha = em.alpha;
    sigma2 = std::move(em.sigma2);
    for (std::size_t b = 0; b < batch; ++b) states[b].sigma2 = sigma2[b];
#ifndef NDEBUG
    for (double v : prior.lambda.value().data()) assert(v > 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      assert(sigma2[b].item() > 0.0);
      for (double v : states[b].nu.value().data()) assert(v > 0.0);
      for (double v : states[b].v.value().data()) assert(v >= 0.0);
    }
#endif
    fw.ka_hat = em.ka_hat;
    fw.underflow_count += underflow;
    if (options.collect_diagnostics) {
      LayerDiag diag;
      diag.residual_norm = num::norm2(outs[0].r.value());
      diag.ka_hat = em.ka_hat.item();
      diag.sigma2 = sigma2[0].item();
      diag.underflow_count = underflow;
      fw.diag.layers.push_back(diag);
    }
  }

  fw.x_hat.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) fw.x_hat.push_back(states[b].x_hat);
  return fw;
}

DecodeResult decode(const num::Tensor& y, const num::Tensor& sensing,
                    const DecoderParams& params, const DecodeOptions& options) {
  const DecoderParams* effective = &params;
  DecoderParams fixed;
  if (options.mode == Mode::fixed && params.use_cnn) {
    fixed = DecoderParams::fixed_defaults(params.layers);
    effective = &fixed;
  }
  Tape tape;
  Var c = tape.constant(sensing);
  Var yv = tape.constant(y);
  ParamVars pv = attach_params(tape, *effective, false);
  std::vector<Var> ys{yv};
  BatchForward fw = decode_batch(tape, ys, c, pv, effective->layers, options);
  DecodeResult out;
  out.x_hat = fw.x_hat[0].value();
  out.ka_hat = fw.ka_hat.item();
  out.diag = std::move(fw.diag);
  return out;
}

// ---------------------------------------------------------------------------
// integer projection
// ---------------------------------------------------------------------------

ura::ActivityVector project_counts(const num::Tensor& x_hat_real, double ka_hat) {
  std::size_t n = x_hat_real.size();
  std::int64_t target = std::max<std::int64_t>(0, std::llround(ka_hat));

  std::vector<double> clipped(n);
  ura::ActivityVector out;
  out.counts.assign(n, 0);
  std::int64_t total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    clipped[j] = std::max(x_hat_real[j], 0.0);
    out.counts[j] = static_cast<std::int64_t>(std::floor(clipped[j]));
    total += out.counts[j];
  }

  while (total < target) {
    // adding one unit to j changes the squared error by 1 + 2(x_j - c_j);
    // the largest fractional residual wins, ties to the lowest index
    std::size_t best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double cost = 1.0 + 2.0 * (static_cast<double>(out.counts[j]) - clipped[j]);
      if (cost < best_cost) {
        best_cost = cost;
        best = j;
      }
    }
    out.counts[best]++;
    total++;
  }
  while (total > target) {
    std::size_t best = n;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (out.counts[j] == 0) continue;
      double cost = 1.0 - 2.0 * (static_cast<double>(out.counts[j]) - clipped[j]);
      if (cost < best_cost) {
        best_cost = cost;
        best = j;
      }
    }
    out.counts[best]--;
    total--;
  }
  return out;
}

}  // namespace airsum::decoder
