#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "specstg/data.hpp"
#include "specstg/spectral_nn.hpp"

namespace specstg {

enum class SigmaRule {
  kSqrtBeta,   // sigma_k = sqrt(beta_k)
  kPosterior,  // sigma_k = sqrt(beta_k * (1 - abar_{k-1}) / (1 - abar_k))
};

// Steps are 1-based in the API; vectors are indexed k - 1.
struct NoiseSchedule {
  std::size_t num_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  double beta_at(int k) const { return beta[static_cast<std::size_t>(k - 1)]; }
  double alpha_bar_at(int k) const { return alpha_bar[static_cast<std::size_t>(k - 1)]; }
  double sigma_at(int k) const { return sigma[static_cast<std::size_t>(k - 1)]; }
  void check_step(int k) const;
};

// beta_k = (sqrt(beta_1) + (k - 1) / (K - 1) * (sqrt(beta_K) - sqrt(beta_1)))^2
NoiseSchedule quadratic_schedule(std::size_t num_steps, double beta_1, double beta_k,
                                 SigmaRule rule = SigmaRule::kSqrtBeta);

// sqrt(abar_k) * x0 + sqrt(1 - abar_k) * eps
Matrix forward_corrupt(const NoiseSchedule& sched, const Matrix& x0, int k, const Matrix& eps);

// The reverse update given a noise prediction; `noise` must be zero at k = 1.
Matrix sample_update(const NoiseSchedule& sched, const Matrix& xk, int k, const Matrix& eps_hat,
                     const Matrix& noise);

struct TrainerConfig {
  // diffusion
  std::size_t num_steps = 50;
  double beta_1 = 1e-4;
  double beta_k = 0.3;
  SigmaRule sigma_rule = SigmaRule::kSqrtBeta;
  // optimization
  double lr_start = 5e-4;
  double lr_end = 1e-2;
  double warmup_fraction = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  // network
  std::size_t hidden = 64;
  std::size_t residual_blocks = 8;
  std::size_t residual_channels = 8;
  std::size_t gru_order = 3;
  std::size_t cond_order = 2;
  // windows
  std::size_t context = 12;
  std::size_t horizon = 12;
  std::size_t samples = 100;
  bool loss_from_context = false;
  std::size_t train_stride = 1;
  std::size_t val_stride = 1;
  std::size_t eval_stride = 1;
  TimeFeatureConfig time_features;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
  ModelDims model_dims() const;
};

// Learning rate at optimizer step `step` (0-based) of `total_steps`: linear
// warm-up from lr_start to lr_end over warmup_fraction of the run, then flat.
double learning_rate(const TrainerConfig& cfg, std::size_t step, std::size_t total_steps);

// Per-node profile of a node-constant feature column in the model's input
// domain: U^T 1 when features are transformed, otherwise all ones.
Vector feature_profile(const FourierBasis& basis, const TimeFeatureConfig& cfg);

// Spectral signal of a window at window-relative step `tau` (context first).
Vector spectral_at(const SpectralWindow& window, std::size_t tau);

// Encoder input for one window at one step: [signal | profile * features].
Matrix model_input(const Vector& signal, const Eigen::RowVectorXd& features,
                   const Vector& profile);

// Overrides the denoiser inside training_loss (tests use it for stubs).
// Receives the corrupted batch, the per-window steps and the encoder state.
using NoisePredictor =
    std::function<Tensor(const Tensor& noisy, const std::vector<int>& steps, const Tensor& h_prev)>;

// Mean over loss time points of the per-window squared noise error, averaged
// over windows. Encoder runs with teacher forcing. One (k, eps) draw per
// time point per window.
Tensor training_loss(const SpecStgModel& model, const NoiseSchedule& sched,
                     const FourierBasis& basis, const std::vector<const SpectralWindow*>& batch,
                     const TrainerConfig& cfg, std::mt19937_64& rng,
                     const NoisePredictor& predictor = {});

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::vector<EpochRecord> log;
};

// Fixed-seed validation loss (the same draws every call).
double validation_loss(const SpecStgModel& model, const NoiseSchedule& sched,
                       const FourierBasis& basis, const SpectralCache& val,
                       const TrainerConfig& cfg);

// Trains in place and leaves the best-validation parameters in `model`.
// `on_epoch` is called after each epoch (for progress output).
TrainResult train(SpecStgModel& model, const NoiseSchedule& sched, const FourierBasis& basis,
                  const SpectralCache& train_set, const SpectralCache& val_set,
                  const TrainerConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_training_log(const std::string& path, const std::vector<EpochRecord>& log);

struct ForecastResult {
  std::size_t window_start = 0;
  std::vector<Matrix> samples;  // S entries, each N x f, original units
  Matrix spectral_means;        // N x f, normalized spectral domain
  Matrix predictions;           // N x f, original units
};

// Per-chain RNG stream: chain `chain` of window `window` under `seed`.
std::mt19937_64 chain_rng(std::uint64_t seed, std::size_t window, std::size_t chain);

// One reverse step for S chains stacked as S * N rows.
Matrix sample_step(const SpecStgModel& model, const NoiseSchedule& sched, const Matrix& xk, int k,
                   const Tensor& step_emb, const DenoiserCondition& cond, const Matrix& noise);

// Autoregressive sampling for one window: encode the context, then for each
// future step run S reverse chains, average them in the spectral domain and
// feed the mean back into the encoder.
ForecastResult forecast(const SpecStgModel& model, const NoiseSchedule& sched,
                        const FourierBasis& basis, const SpectralWindow& window,
                        const ZScore& stats, std::size_t num_samples, std::uint64_t seed,
                        std::size_t window_index, const TimeFeatureConfig& features);

// forecast() over many windows; runs on up to `threads` workers with output
// identical to serial execution.
std::vector<ForecastResult> forecast_all(const SpecStgModel& model, const NoiseSchedule& sched,
                                         const FourierBasis& basis, const SpectralCache& windows,
                                         const ZScore& stats, std::size_t num_samples,
                                         std::uint64_t seed, const TimeFeatureConfig& features,
                                         std::size_t threads = 1);

}  // namespace specstg
