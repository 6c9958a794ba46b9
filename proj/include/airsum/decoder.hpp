#pragma once

#include <span>
#include <vector>

#include "airsum/rng.hpp"
#include "airsum/tape.hpp"
#include "airsum/tensor.hpp"
#include "airsum/ura.hpp"

namespace airsum::decoder {

enum class Mode { learned, fixed };

const char* mode_name(Mode mode);
Mode mode_from_name(std::string_view name);

// Range mappings for the per-layer scalars. Raw parameters are
// unconstrained; the mapped values stay inside their stated ranges.
namespace scalar_map {
double gamma(double raw);  // centred tanh into [0.3, 2]
double eta(double raw);    // sigmoid into (0, 1)
double beta(double raw);   // centred tanh into [0.5, 2]
double tau(double raw);    // softplus, positive
double zeta(double raw);   // sigmoid into [0, 1]
double gate(double raw);   // sigmoid (activity and noise gates)

double gamma_raw(double value);
double beta_raw(double value);
double sigmoid_raw(double value);  // inverse for eta/zeta/gates
double tau_raw(double value);
}  // namespace scalar_map

// One denoiser stage: conv(6->32, k3) - ReLU - conv(32->32, k3) - ReLU -
// conv(32->1, k3), same padding.
struct CnnLayer {
  num::Tensor k1, b1, k2, b2, k3, b3;
};

inline constexpr int kCnnChannels = 6;
inline constexpr int kCnnFilters = 32;
inline constexpr int kCnnKernel = 3;

// Raw per-layer scalars are stored as a (layers, 7) tensor with columns
// gamma, eta, beta, tau, zeta, g_alpha, s_sigma.
struct DecoderParams {
  int layers = 0;
  bool use_cnn = true;
  num::Tensor scalar_raw;
  std::vector<CnnLayer> cnn;

  static DecoderParams learned_init(int layers, num::RngStream& rng);
  // Frozen classical defaults: gamma=1, eta=0.5, beta=1, tau=1, zeta=0
  // (denoiser gate closed, no CNN), g_alpha=0.5, s_sigma=0.5.
  static DecoderParams fixed_defaults(int layers);

  double gamma(int layer) const;
  double eta(int layer) const;
  double beta(int layer) const;
  double tau(int layer) const;
  double zeta(int layer) const;
  double g_alpha(int layer) const;
  double s_sigma(int layer) const;
};

struct Floors {
  double nu = 1e-8;
  double lambda_min = 1e-6;
  double sigma2_min = 1e-8;
};

// ---------------------------------------------------------------------------
// Tempered Poisson spike-and-slab posterior over the support {0..x_max}:
//   P(0) = (1-alpha) + alpha e^-lambda,  P(k>=1) = alpha lambda^k e^-lambda/k!
//   w(x) proportional to exp([log P(x) - (R-x)^2/(2V)] / tau)
// m and v are the mean/variance of the normalised weights and
// p_active = 1 - w(0). tau = 1 recovers the exact posterior.
// ---------------------------------------------------------------------------

struct PosteriorMoments {
  double m = 0.0;
  double v = 0.0;
  double p_active = 0.0;
  bool underflow = false;
};

PosteriorMoments posterior_moments(double pseudo_r, double pseudo_v, double alpha,
                                   double lambda, double tau, int x_max);

struct PosteriorVars {
  num::Var m, v, p_active;
  int underflow_count = 0;
};

// Vectorised tape version: R, V, alpha, lambda are length-n coordinates,
// tau is a scalar. Underflowing coordinates yield (0, nu_floor, 0).
PosteriorVars posterior_moments(num::Var pseudo_r, num::Var pseudo_v, num::Var alpha,
                                num::Var lambda, num::Var tau, int x_max,
                                double nu_floor);

// ---------------------------------------------------------------------------
// Unrolled decoder
// ---------------------------------------------------------------------------

struct LayerVars {
  num::Var gamma, eta, beta, tau, zeta, g_alpha, s_sigma;
  num::Var k1, b1, k2, b2, k3, b3;
  bool use_cnn = false;
};

struct ParamVars {
  num::Var scalar_raw;
  std::vector<LayerVars> layer;
};

ParamVars attach_params(num::Tape& tape, const DecoderParams& params, bool trainable);

struct SlotState {
  num::Var y, x_hat, nu, z, v, sigma2;
};

struct SharedPrior {
  num::Var lambda, alpha;
};

// x_hat = 0, nu = 1, z = y, v = 1; sigma2 = max(mean(y^2) - prior/l, floor).
SlotState init_slot_state(num::Tape& tape, num::Var y, double prior_ka_mean,
                          const Floors& floors);
// lambda_j = prior/n uniformly, alpha = 1 - exp(-lambda).
SharedPrior init_shared_prior(num::Tape& tape, std::size_t n, double prior_ka_mean);

// Measurement-domain update. Returns the damped z, v together with the
// residual r = y - z and effective variance d = sigma2 + v that the input
// block consumes (post-update values).
struct OutputBlockResult {
  num::Var z, v, r, d;
};
OutputBlockResult output_block(const SlotState& state, num::Var sensing,
                               num::Var sensing_sq, num::Var gamma, num::Var eta);

// Codeword-domain denoising. Produces the blended estimate and posterior
// statistics for the EM update.
struct InputBlockResult {
  num::Var x_hat, nu;
  num::Var m, v, p_active;
  num::Var pseudo_r, pseudo_v;
  int underflow_count = 0;
};
InputBlockResult input_block(num::Var x_hat, num::Var d, num::Var r, num::Var sensing,
                             num::Var sensing_sq, const LayerVars& layer,
                             const SharedPrior& prior, int x_max, const Floors& floors);

// Damped log-domain rate step: exp(log lam + rho (log lam_hat - log lam)).
num::Var em_log_step(num::Var lam, num::Var lam_hat, num::Var rho);

// (log lambda - mean) / (std + eps); zero for a constant rate vector.
num::Var standardised_log_rates(num::Var lambda);

struct EmInputs {
  std::span<const InputBlockResult> stats;     // per slot
  std::span<const OutputBlockResult> outputs;  // per slot
  std::span<const num::Var> sigma2;            // per slot, current values
  num::Var lambda;                             // shared, current
  num::Var g_alpha, s_sigma;
};

struct EmResult {
  num::Var lambda, alpha, ka_hat, pi;
  std::vector<num::Var> sigma2;
};

// Damped EM refresh of the latent prior parameters from batch-averaged
// posterior statistics; sigma2 is refreshed per slot from its residual.
EmResult em_update(const EmInputs& in, const Floors& floors);

struct LayerDiag {
  double residual_norm = 0.0;
  double ka_hat = 0.0;
  double sigma2 = 0.0;
  int underflow_count = 0;
};

struct DecodeDiagnostics {
  std::vector<LayerDiag> layers;
};

struct DecodeOptions {
  Mode mode = Mode::learned;
  double prior_ka_mean = 1.0;
  int x_max = 0;  // 0 -> max(32, ceil(3 * prior_ka_mean))
  Floors floors;
  bool collect_diagnostics = false;
};

int default_x_max(double prior_ka_mean);

// Full unrolled forward over a batch of slots sharing the EM state
// (lambda, alpha); sigma2 stays per slot. Exposed for the trainer, which
// differentiates through the whole graph.
struct BatchForward {
  std::vector<num::Var> x_hat;
  num::Var ka_hat;
  DecodeDiagnostics diag;
  int underflow_count = 0;
};
BatchForward decode_batch(num::Tape& tape, std::span<const num::Var> ys,
                          num::Var sensing, const ParamVars& params, int layers,
                          const DecodeOptions& options);

struct DecodeResult {
  num::Tensor x_hat;
  double ka_hat = 0.0;
  DecodeDiagnostics diag;
};

// Single-slot inference; deterministic given (y, params, options).
DecodeResult decode(const num::Tensor& y, const num::Tensor& sensing,
                    const DecoderParams& params, const DecodeOptions& options);

// Greedy l2 projection of a real-valued estimate onto non-negative integer
// vectors summing to round(ka_hat); exactly optimal for this separable
// objective, ties resolved to the lowest index.
ura::ActivityVector project_counts(const num::Tensor& x_hat_real, double ka_hat);

}  // namespace airsum::decoder
