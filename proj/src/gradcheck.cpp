#include "specstg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "specstg/diffusion.hpp"
#include "specstg/spectral_nn.hpp"

namespace specstg {

GradCheckResult check_gradients(const std::string& layer, const std::function<Tensor()>& loss,
                                const NamedTensors& params, const GradCheckOptions& opts) {
  GradCheckResult res;
  res.layer = layer;
  for (const auto& [name, t] : params) {
    if (!t.requires_grad()) throw UsageError("gradcheck: " + name + " does not require grad");
    Tensor(t).zero_grad();
  }
  Tape::current().clear();
  backward(loss());
  std::vector<Matrix> analytic;
  for (const auto& [name, t] : params) {
    analytic.push_back(t.has_grad() ? t.grad() : Matrix::Zero(t.value().rows(), t.value().cols()));
    Tensor(t).zero_grad();
  }

  std::mt19937_64 rng(opts.seed);
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    const auto size = t.size();
    const auto wanted = std::max<std::size_t>(
        static_cast<std::size_t>(std::ceil(opts.fraction * static_cast<double>(size))),
        std::min(size, opts.min_per_param));
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(wanted, size));
    for (std::size_t i : idx) {
      double& slot = t.mutable_value().data()[i];
      const double saved = slot;
      slot = saved + opts.step;
      const double up = loss().item();
      slot = saved - opts.step;
      const double down = loss().item();
      slot = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[p].data()[i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opts.floor});
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = params[p].first;
      }
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      ++res.checked;
    }
  }
  res.passed = res.max_rel_error <= opts.tolerance;
  return res;
}

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

FourierBasis random_basis(std::size_t n, std::mt19937_64& rng) {
  std::vector<Edge> edges;
  std::uniform_real_distribution<double> w(0.2, 1.0);
  for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, w(rng)});
  edges.push_back({0, n - 1, w(rng)});
  return fourier_basis(build_graph(edges, n));
}

// Weighted sum with a fixed random projection, so every output entry
// contributes with a distinct coefficient.
Tensor project(const Tensor& out, const Matrix& weights) { return sum(mul(out, Tensor(weights))); }

NamedTensors with_prefix(const ParamStore& store, const std::string& prefix) {
  NamedTensors out;
  for (const auto& [name, t] : store.items()) {
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t);
  }
  return out;
}

// Zero-initialized biases put ReLU inputs exactly on the kink, where the
// central difference sees a one-sided slope. Give them small random values.
void jitter_zero_params(SpecStgModel& model, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.1);
  for (auto& [name, t] : model.params().items()) {
    if (!t.value().isZero(0.0)) continue;
    for (Eigen::Index i = 0; i < t.value().size(); ++i) t.mutable_value().data()[i] = g(rng);
  }
}

ModelDims small_dims(std::size_t blocks) {
  ModelDims d;
  d.input_channels = 2;
  d.hidden = 5;
  d.gru_order = 3;
  d.residual_blocks = blocks;
  d.residual_channels = 3;
  d.cond_order = 2;
  d.step_embedding = 8;
  d.num_steps = 10;
  return d;
}

}  // namespace

std::vector<GradCheckResult> check_all_layers(const GradCheckOptions& opts) {
  std::vector<GradCheckResult> results;
  std::mt19937_64 rng(opts.seed);
  const std::size_t n = 4;
  const FourierBasis basis = random_basis(n, rng);

  {  // SpecConv
    SpecConvFilter filter;
    for (int j = 0; j < 3; ++j) filter.coeffs.emplace_back(random_matrix(3, 2, rng), true);
    const Tensor xt(random_matrix(n, 3, rng), true);
    const Matrix cheb = chebyshev_diag(basis.scaled_eigvals, 3);
    const Matrix w = random_matrix(n, 2, rng);
    NamedTensors ps{{"x", xt}};
    for (std::size_t j = 0; j < 3; ++j) ps.emplace_back("phi" + std::to_string(j), filter.coeffs[j]);
    results.push_back(check_gradients(
        "spec_conv", [&] { return project(spec_conv(filter, cheb, xt), w); }, ps, opts));
  }

  {  // SG-GRU step over a batch of two stacked windows
    SpecStgModel model(small_dims(1), opts.seed + 1);
    jitter_zero_params(model, rng);
    const Matrix cheb = tile_columns(chebyshev_diag(basis.scaled_eigvals, 3), 2);
    const Tensor x(random_matrix(2 * n, 2, rng), true);
    const Tensor h(0.5 * random_matrix(2 * n, 5, rng), true);
    const Matrix w = random_matrix(2 * n, 5, rng);
    NamedTensors ps = with_prefix(model.params(), "gru.");
    ps.emplace_back("x", x);
    ps.emplace_back("h", h);
    results.push_back(check_gradients(
        "sg_gru_step", [&] { return project(model.gru_step(x, h, cheb), w); }, ps, opts));
  }

  {  // one SG-Wave residual block with its embedding, input and head layers
    SpecStgModel model(small_dims(1), opts.seed + 2);
    jitter_zero_params(model, rng);
    const Matrix cheb = tile_columns(chebyshev_diag(basis.scaled_eigvals, 3), 2);
    const Tensor noisy(random_matrix(2 * n, 1, rng), true);
    const Tensor h(0.5 * random_matrix(2 * n, 5, rng), true);
    const Matrix w = random_matrix(2 * n, 1, rng);
    NamedTensors ps = with_prefix(model.params(), "wave.");
    ps.emplace_back("noisy", noisy);
    ps.emplace_back("h", h);
    results.push_back(check_gradients(
        "sg_wave_block",
        [&] {
          return project(
              model.denoise(noisy, model.embed_steps({3, 7}), n, model.condition(h, cheb)), w);
        },
        ps, opts));
  }

  {  // full denoising objective: encoder, denoiser and loss at N = 4
    SpecStgModel model(small_dims(2), opts.seed + 3);
    jitter_zero_params(model, rng);
    const NoiseSchedule sched = quadratic_schedule(10, 1e-4, 0.3);
    TrainerConfig cfg;
    cfg.time_features = {false, false, true, true};
    cfg.num_steps = 10;
    cfg.context = 3;
    cfg.horizon = 2;
    std::vector<SpectralWindow> windows(2);
    for (auto& win : windows) {
      win.context = random_matrix(n, 3, rng);
      win.future = random_matrix(n, 2, rng);
      win.features = random_matrix(5, 1, rng).cwiseAbs();
    }
    const std::vector<const SpectralWindow*> batch{&windows[0], &windows[1]};
    results.push_back(check_gradients(
        "full_denoiser",
        [&] {
          std::mt19937_64 draw(opts.seed + 4);
          return training_loss(model, sched, basis, batch, cfg, draw);
        },
        model.params().items(), opts));
  }
  return results;
}

std::string format_gradcheck(const std::vector<GradCheckResult>& results) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "layer" << std::right << std::setw(9) << "checked"
     << std::setw(16) << "max_rel_error" << "  status  worst_param\n";
  for (const auto& r : results) {
    os << std::left << std::setw(16) << r.layer << std::right << std::setw(9) << r.checked
       << std::setw(16) << std::scientific << std::setprecision(3) << r.max_rel_error
       << std::defaultfloat << "  " << (r.passed ? "PASS  " : "FAIL  ") << "  " << r.worst_param
       << "\n";
  }
  return os.str();
}

}  // namespace specstg
