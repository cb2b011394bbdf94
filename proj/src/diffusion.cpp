#include "specstg/diffusion.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace specstg {

void NoiseSchedule::check_step(int k) const {
  if (k < 1 || static_cast<std::size_t>(k) > num_steps) {
    throw UsageError("diffusion step " + std::to_string(k) + " outside [1, " +
                     std::to_string(num_steps) + "]");
  }
}

NoiseSchedule quadratic_schedule(std::size_t num_steps, double beta_1, double beta_k,
                                 SigmaRule rule) {
  if (num_steps < 2) throw ConfigError("noise schedule needs K >= 2");
  if (!(beta_1 > 0.0) || !(beta_1 < beta_k) || !(beta_k < 1.0)) {
    throw ConfigError("noise schedule needs 0 < beta_1 < beta_K < 1");
  }
  NoiseSchedule s;
  s.num_steps = num_steps;
  const double a = std::sqrt(beta_1), b = std::sqrt(beta_k);
  double prod = 1.0;
  for (std::size_t i = 0; i < num_steps; ++i) {
    double beta;
    if (i == 0) {
      beta = beta_1;
    } else if (i + 1 == num_steps) {
      beta = beta_k;
    } else {
      const double r = static_cast<double>(i) / static_cast<double>(num_steps - 1);
      const double root = a + r * (b - a);
      beta = root * root;
    }
    s.beta.push_back(beta);
    prod *= 1.0 - beta;
    s.alpha_bar.push_back(prod);
  }
  for (std::size_t i = 0; i < num_steps; ++i) {
    if (rule == SigmaRule::kSqrtBeta) {
      s.sigma.push_back(std::sqrt(s.beta[i]));
    } else {
      const double prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
      s.sigma.push_back(std::sqrt(s.beta[i] * (1.0 - prev) / (1.0 - s.alpha_bar[i])));
    }
  }
  return s;
}

Matrix forward_corrupt(const NoiseSchedule& sched, const Matrix& x0, int k, const Matrix& eps) {
  sched.check_step(k);
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw ShapeError("forward_corrupt: signal and noise shapes differ");
  }
  const double ab = sched.alpha_bar_at(k);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Matrix sample_update(const NoiseSchedule& sched, const Matrix& xk, int k, const Matrix& eps_hat,
                     const Matrix& noise) {
  sched.check_step(k);
  if (xk.rows() != eps_hat.rows() || xk.cols() != eps_hat.cols() || xk.rows() != noise.rows() ||
      xk.cols() != noise.cols()) {
    throw ShapeError("sample_update: shape mismatch");
  }
  const double beta = sched.beta_at(k);
  const double ab = sched.alpha_bar_at(k);
  Matrix out = (xk - (beta / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(1.0 - beta);
  if (k > 1) out += sched.sigma_at(k) * noise;
  return out;
}

void TrainerConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(num_steps, "num_steps");
  positive(batch_size, "batch_size");
  positive(hidden, "hidden");
  positive(residual_blocks, "residual_blocks");
  positive(residual_channels, "residual_channels");
  positive(gru_order, "gru_order");
  positive(cond_order, "cond_order");
  positive(context, "context");
  positive(horizon, "horizon");
  positive(samples, "samples");
  positive(train_stride, "train_stride");
  positive(val_stride, "val_stride");
  positive(eval_stride, "eval_stride");
  positive(threads, "threads");
  if (gru_order > 3 || cond_order > 3) {
    throw ConfigError("SpecConv polynomial order is capped at 2 (order parameter <= 3)");
  }
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw ConfigError("learning rates must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) {
    throw ConfigError("warmup_fraction must lie in [0, 1]");
  }
  // Schedule bounds are checked by quadratic_schedule.
  quadratic_schedule(num_steps, beta_1, beta_k, sigma_rule);
}

ModelDims TrainerConfig::model_dims() const {
  ModelDims d;
  d.input_channels = 1 + time_features.count();
  d.hidden = hidden;
  d.gru_order = gru_order;
  d.residual_blocks = residual_blocks;
  d.residual_channels = residual_channels;
  d.cond_order = cond_order;
  d.num_steps = num_steps;
  return d;
}

double learning_rate(const TrainerConfig& cfg, std::size_t step, std::size_t total_steps) {
  const double warmup = std::floor(cfg.warmup_fraction * static_cast<double>(total_steps));
  if (warmup < 1.0 || static_cast<double>(step) >= warmup) return cfg.lr_end;
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * static_cast<double>(step) / warmup;
}

Vector feature_profile(const FourierBasis& basis, const TimeFeatureConfig& cfg) {
  const Vector ones = Vector::Ones(basis.eigvals.size());
  if (!cfg.transform) return ones;
  return basis.eigvecs.transpose() * ones;
}

Vector spectral_at(const SpectralWindow& window, std::size_t tau) {
  const auto c = static_cast<std::size_t>(window.context.cols());
  if (tau < c) return window.context.col(static_cast<Eigen::Index>(tau));
  return window.future.col(static_cast<Eigen::Index>(tau - c));
}

Matrix model_input(const Vector& signal, const Eigen::RowVectorXd& features,
                   const Vector& profile) {
  Matrix out(signal.size(), 1 + features.size());
  out.col(0) = signal;
  if (features.size() > 0) out.rightCols(features.size()) = profile * features;
  return out;
}

namespace {

std::size_t max_order(const SpecStgModel& model) {
  return std::max(model.dims().gru_order, model.dims().cond_order);
}

Matrix stacked_input(const std::vector<const SpectralWindow*>& batch, std::size_t tau,
                     const Vector& profile) {
  const auto n = profile.size();
  const auto cols = 1 + batch.front()->features.cols();
  Matrix out(n * static_cast<Eigen::Index>(batch.size()), cols);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.middleRows(static_cast<Eigen::Index>(b) * n, n) =
        model_input(spectral_at(*batch[b], tau),
                    batch[b]->features.row(static_cast<Eigen::Index>(tau)), profile);
  }
  return out;
}

}  // namespace

Tensor training_loss(const SpecStgModel& model, const NoiseSchedule& sched,
                     const FourierBasis& basis, const std::vector<const SpectralWindow*>& batch,
                     const TrainerConfig& cfg, std::mt19937_64& rng,
                     const NoisePredictor& predictor) {
  if (batch.empty()) throw UsageError("training_loss: empty batch");
  const auto n = static_cast<Eigen::Index>(basis.num_nodes());
  const auto c = static_cast<std::size_t>(batch.front()->context.cols());
  const auto f = static_cast<std::size_t>(batch.front()->future.cols());
  for (const auto* w : batch) {
    if (w->context.rows() != n || static_cast<std::size_t>(w->context.cols()) != c ||
        static_cast<std::size_t>(w->future.cols()) != f) {
      throw ShapeError("training_loss: windows in a batch differ in shape");
    }
  }
  const auto bsz = batch.size();
  const auto rows = n * static_cast<Eigen::Index>(bsz);
  const Vector profile = feature_profile(basis, cfg.time_features);
  const Matrix cheb = tile_columns(chebyshev_diag(basis.scaled_eigvals, max_order(model)), bsz);

  std::uniform_int_distribution<int> step_dist(1, static_cast<int>(sched.num_steps));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Tensor h = Tensor::zeros(static_cast<std::size_t>(rows), model.dims().hidden);
  const std::size_t first = cfg.loss_from_context ? 0 : c;
  const std::size_t len = c + f;
  Tensor total;
  std::size_t terms = 0;
  for (std::size_t tau = 0; tau < len; ++tau) {
    if (tau >= first) {
      std::vector<int> steps(bsz);
      for (auto& k : steps) k = step_dist(rng);
      Matrix eps(rows, 1);
      for (Eigen::Index i = 0; i < rows; ++i) eps(i, 0) = gauss(rng);
      Matrix noisy(rows, 1);
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto off = static_cast<Eigen::Index>(b) * n;
        noisy.middleRows(off, n) = forward_corrupt(sched, Matrix(spectral_at(*batch[b], tau)),
                                                   steps[b], eps.middleRows(off, n));
      }
      const Tensor noisy_t(std::move(noisy));
      const Tensor pred =
          predictor ? predictor(noisy_t, steps, h)
                    : model.denoise(noisy_t, model.embed_steps(steps), static_cast<std::size_t>(n),
                                    model.condition(h, cheb));
      // mse over all rows times N == mean over windows of the squared norm.
      const Tensor term = scale(mse_loss(pred, Tensor(std::move(eps))), static_cast<double>(n));
      total = terms == 0 ? term : add(total, term);
      ++terms;
    }
    if (tau + 1 < len) h = model.gru_step(Tensor(stacked_input(batch, tau, profile)), h, cheb);
  }
  return scale(total, 1.0 / static_cast<double>(terms));
}

double validation_loss(const SpecStgModel& model, const NoiseSchedule& sched,
                       const FourierBasis& basis, const SpectralCache& val,
                       const TrainerConfig& cfg) {
  if (val.size() == 0) throw UsageError("validation set is empty");
  NoGradGuard no_grad;
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eedULL);
  double weighted = 0.0;
  for (std::size_t i = 0; i < val.size(); i += cfg.batch_size) {
    std::vector<const SpectralWindow*> batch;
    for (std::size_t j = i; j < std::min(val.size(), i + cfg.batch_size); ++j) {
      batch.push_back(&val[j]);
    }
    weighted += training_loss(model, sched, basis, batch, cfg, rng).item() *
                static_cast<double>(batch.size());
  }
  return weighted / static_cast<double>(val.size());
}

TrainResult train(SpecStgModel& model, const NoiseSchedule& sched, const FourierBasis& basis,
                  const SpectralCache& train_set, const SpectralCache& val_set,
                  const TrainerConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw UsageError("training set is empty");
  TrainResult result;
  result.initial_val_loss = validation_loss(model, sched, basis, val_set, cfg);
  result.best_val_loss = result.initial_val_loss;
  if (cfg.epochs == 0) return result;

  ParamStore best = model.params().deep_copy();
  Adam adam(model.params());
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  const std::size_t batches = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * cfg.epochs;
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<const SpectralWindow*> batch;
      for (std::size_t j = b * cfg.batch_size;
           j < std::min(train_set.size(), (b + 1) * cfg.batch_size); ++j) {
        batch.push_back(&train_set[order[j]]);
      }
      const double lr = learning_rate(cfg, step, total_steps);
      try {
        Tensor loss = training_loss(model, sched, basis, batch, cfg, rng);
        if (!std::isfinite(loss.item())) throw NumericError("loss is not finite");
        backward(loss);
        model.params().fill_missing_grads();
        adam.step(model.params(), AdamConfig{lr, 0.9, 0.999, 1e-8});
        loss_sum += loss.item() * static_cast<double>(batch.size());
      } catch (const NumericError& e) {
        Tape::current().clear();
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << ", step " << step << " (lr " << lr
           << ", beta_1 " << cfg.beta_1 << ", beta_K " << cfg.beta_k << ", K " << cfg.num_steps
           << "): " << e.what();
        throw NumericError(os.str());
      }
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_loss = validation_loss(model, sched, basis, val_set, cfg);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best.copy_values_from(model.params());
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.params().copy_values_from(best);
  return result;
}

void write_training_log(const std::string& path, const std::vector<EpochRecord>& log) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out.precision(17);
  out << "epoch,train_loss,val_loss,seconds\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',';
    out.precision(3);
    out << std::fixed << r.seconds << '\n';
    out.unsetf(std::ios::floatfield);
    out.precision(17);
  }
}

std::mt19937_64 chain_rng(std::uint64_t seed, std::size_t window, std::size_t chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(window), static_cast<std::uint32_t>(chain),
                    0x5eedU};
  return std::mt19937_64(seq);
}

Matrix sample_step(const SpecStgModel& model, const NoiseSchedule& sched, const Matrix& xk, int k,
                   const Tensor& step_emb, const DenoiserCondition& cond, const Matrix& noise) {
  sched.check_step(k);
  NoGradGuard no_grad;
  const Tensor eps_hat =
      model.denoise(Tensor(xk), step_emb, static_cast<std::size_t>(xk.rows()) / step_emb.rows(),
                    cond);
  return sample_update(sched, xk, k, eps_hat.value(), noise);
}

ForecastResult forecast(const SpecStgModel& model, const NoiseSchedule& sched,
                        const FourierBasis& basis, const SpectralWindow& window,
                        const ZScore& stats, std::size_t num_samples, std::uint64_t seed,
                        std::size_t window_index, const TimeFeatureConfig& features) {
  if (num_samples < 1) throw ConfigError("forecast needs at least one sample");
  if (sched.num_steps != model.dims().num_steps) {
    throw ConfigError("noise schedule and model disagree on the number of steps");
  }
  NoGradGuard no_grad;
  const auto n = static_cast<Eigen::Index>(basis.num_nodes());
  const auto s_count = static_cast<Eigen::Index>(num_samples);
  const auto c = static_cast<std::size_t>(window.context.cols());
  const auto f = static_cast<std::size_t>(window.future.cols());
  const Vector profile = feature_profile(basis, features);
  const Matrix cheb = chebyshev_diag(basis.scaled_eigvals, max_order(model));
  const int k_max = static_cast<int>(sched.num_steps);

  std::vector<Tensor> step_emb;
  step_emb.reserve(sched.num_steps);
  for (int k = 1; k <= k_max; ++k) step_emb.push_back(model.embed_steps({k}));

  std::vector<std::mt19937_64> rngs;
  std::vector<std::normal_distribution<double>> gauss(num_samples);
  for (std::size_t s = 0; s < num_samples; ++s) rngs.push_back(chain_rng(seed, window_index, s));
  auto draw = [&](Matrix& m) {
    for (Eigen::Index s = 0; s < s_count; ++s) {
      auto& g = gauss[static_cast<std::size_t>(s)];
      auto& r = rngs[static_cast<std::size_t>(s)];
      for (Eigen::Index i = 0; i < n; ++i) m(s * n + i, 0) = g(r);
    }
  };

  Tensor h = Tensor::zeros(static_cast<std::size_t>(n), model.dims().hidden);
  for (std::size_t tau = 0; tau < c; ++tau) {
    h = model.gru_step(Tensor(model_input(spectral_at(window, tau),
                                          window.features.row(static_cast<Eigen::Index>(tau)),
                                          profile)),
                       h, cheb);
  }

  ForecastResult out;
  out.window_start = window.start;
  out.spectral_means.resize(n, static_cast<Eigen::Index>(f));
  out.samples.assign(num_samples, Matrix(n, static_cast<Eigen::Index>(f)));
  Matrix x(n * s_count, 1);
  Matrix noise(n * s_count, 1);
  const Matrix zeros = Matrix::Zero(n * s_count, 1);
  for (std::size_t j = 0; j < f; ++j) {
    DenoiserCondition cond = model.condition(h, cheb);
    if (s_count > 1) {
      for (auto& t : cond.per_block) t = Tensor(t.value().replicate(s_count, 1));
    }
    draw(x);
    for (int k = k_max; k >= 1; --k) {
      if (k > 1) draw(noise);
      x = sample_step(model, sched, x, k, step_emb[static_cast<std::size_t>(k - 1)], cond,
                      k > 1 ? noise : zeros);
    }
    Vector mean = Vector::Zero(n);
    for (Eigen::Index s = 0; s < s_count; ++s) mean += x.middleRows(s * n, n).col(0);
    mean /= static_cast<double>(s_count);
    const auto col = static_cast<Eigen::Index>(j);
    out.spectral_means.col(col) = mean;
    for (Eigen::Index s = 0; s < s_count; ++s) {
      out.samples[static_cast<std::size_t>(s)].col(col) =
          stats.denormalize(Matrix(basis.eigvecs * x.middleRows(s * n, n))).col(0);
    }
    if (j + 1 < f) {
      h = model.gru_step(
          Tensor(model_input(mean, window.features.row(static_cast<Eigen::Index>(c + j)), profile)),
          h, cheb);
    }
  }
  out.predictions = stats.denormalize(fourier_reconstruct(basis, out.spectral_means));
  return out;
}

std::vector<ForecastResult> forecast_all(const SpecStgModel& model, const NoiseSchedule& sched,
                                         const FourierBasis& basis, const SpectralCache& windows,
                                         const ZScore& stats, std::size_t num_samples,
                                         std::uint64_t seed, const TimeFeatureConfig& features,
                                         std::size_t threads) {
  std::vector<ForecastResult> results(windows.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, windows.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < windows.size(); ++i) {
      results[i] = forecast(model, sched, basis, windows[i], stats, num_samples, seed, i, features);
    }
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < windows.size(); i = next++) {
          results[i] =
              forecast(model, sched, basis, windows[i], stats, num_samples, seed, i, features);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace specstg
