#include "specstg/spectral_nn.hpp"

#include <cmath>

namespace specstg {

Matrix chebyshev_diag(const Vector& scaled_eigvals, std::size_t order) {
  if (order == 0) throw UsageError("Chebyshev order must be at least 1");
  const auto n = scaled_eigvals.size();
  const auto j_max = static_cast<Eigen::Index>(order);
  Matrix t(j_max, n);
  t.row(0).setOnes();
  if (j_max > 1) t.row(1) = scaled_eigvals.transpose();
  for (Eigen::Index j = 2; j < j_max; ++j) {
    t.row(j) = (2.0 * scaled_eigvals.transpose().array() * t.row(j - 1).array() -
                t.row(j - 2).array())
                   .matrix();
  }
  return t;
}

Matrix tile_columns(const Matrix& table, std::size_t batch) {
  if (batch == 1) return table;
  return table.replicate(1, static_cast<Eigen::Index>(batch));
}

Tensor spec_conv(const SpecConvFilter& filter, const Matrix& cheb, const Tensor& xt) {
  if (filter.coeffs.empty()) throw ShapeError("spec_conv: filter has no coefficients");
  if (static_cast<std::size_t>(cheb.rows()) < filter.order()) {
    throw ShapeError("spec_conv: Chebyshev table has " + std::to_string(cheb.rows()) +
                     " orders, filter needs " + std::to_string(filter.order()));
  }
  if (static_cast<std::size_t>(cheb.cols()) != xt.rows()) {
    throw ShapeError("spec_conv: input has " + std::to_string(xt.rows()) +
                     " rows, Chebyshev table covers " + std::to_string(cheb.cols()));
  }
  if (xt.cols() != filter.in_channels()) {
    throw ShapeError("spec_conv: input has " + std::to_string(xt.cols()) +
                     " channels, filter expects " + std::to_string(filter.in_channels()));
  }
  // T_0 is identically one, so the first term needs no row scaling.
  Tensor out = matmul(xt, filter.coeffs[0]);
  for (std::size_t j = 1; j < filter.order(); ++j) {
    const Vector weights = cheb.row(static_cast<Eigen::Index>(j)).transpose();
    out = add(out, scale_rows(matmul(xt, filter.coeffs[j]), weights));
  }
  return out;
}

Matrix cheb_conv_dense(const std::vector<Matrix>& coeffs, const FourierBasis& basis,
                       const Matrix& x) {
  const Matrix cheb = chebyshev_diag(basis.scaled_eigvals, coeffs.size());
  const Matrix xt = basis.eigvecs.transpose() * x;
  Matrix filtered = Matrix::Zero(xt.rows(), coeffs.front().cols());
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    const Vector w = cheb.row(static_cast<Eigen::Index>(j)).transpose();
    filtered += w.asDiagonal() * (xt * coeffs[j]);
  }
  return basis.eigvecs * filtered;
}

Matrix step_embedding_table(const std::vector<int>& steps, std::size_t dim) {
  if (dim < 2 || dim % 2 != 0) throw UsageError("step embedding dimension must be even");
  const auto half = static_cast<Eigen::Index>(dim / 2);
  Matrix table(static_cast<Eigen::Index>(steps.size()), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    const double k = static_cast<double>(steps[static_cast<std::size_t>(r)]);
    for (Eigen::Index i = 0; i < half; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      table(r, i) = std::sin(k * freq);
      table(r, half + i) = std::cos(k * freq);
    }
  }
  return table;
}

SpecStgModel::SpecStgModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  if (dims.input_channels == 0 || dims.hidden == 0 || dims.gru_order == 0 ||
      dims.residual_blocks == 0 || dims.residual_channels == 0 || dims.cond_order == 0 ||
      dims.num_steps == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  const auto c_in = dims.input_channels;
  const auto dh = dims.hidden;
  const auto dr = dims.residual_channels;
  const auto emb = dims.step_embedding;

  gru_.input_conv = make_filter("gru.input_conv", dims.gru_order, c_in, c_in, rng);
  gru_.hidden_conv = make_filter("gru.hidden_conv", dims.gru_order, dh, dh, rng);
  gru_.w_z1 = make_weight("gru.w_z1", c_in, dh, rng);
  gru_.w_r1 = make_weight("gru.w_r1", c_in, dh, rng);
  gru_.w_c1 = make_weight("gru.w_c1", c_in, dh, rng);
  gru_.w_z2 = make_weight("gru.w_z2", dh, dh, rng);
  gru_.w_r2 = make_weight("gru.w_r2", dh, dh, rng);
  gru_.w_c2 = make_weight("gru.w_c2", dh, dh, rng);

  wave_.in_w = make_weight("wave.in_w", 1, dr, rng);
  wave_.in_b = make_bias("wave.in_b", dr);
  wave_.emb_w1 = make_weight("wave.emb_w1", emb, emb, rng);
  wave_.emb_b1 = make_bias("wave.emb_b1", emb);
  wave_.emb_w2 = make_weight("wave.emb_w2", emb, emb, rng);
  wave_.emb_b2 = make_bias("wave.emb_b2", emb);
  for (std::size_t m = 0; m < dims.residual_blocks; ++m) {
    const std::string p = "wave.block" + std::to_string(m) + ".";
    WaveBlockParams b;
    b.dilated_w = make_weight(p + "dilated_w", dr, 2 * dr, rng);
    b.dilated_b = make_bias(p + "dilated_b", 2 * dr);
    b.cond_conv = make_filter(p + "cond_conv", dims.cond_order, dh, 2 * dr, rng);
    b.step_w = make_weight(p + "step_w", emb, 2 * dr, rng);
    b.step_b = make_bias(p + "step_b", 2 * dr);
    b.res_w = make_weight(p + "res_w", dr, dr, rng);
    b.res_b = make_bias(p + "res_b", dr);
    b.skip_w = make_weight(p + "skip_w", dr, dr, rng);
    b.skip_b = make_bias(p + "skip_b", dr);
    wave_.blocks.push_back(std::move(b));
  }
  wave_.head_w1 = make_weight("wave.head_w1", dr, dr, rng);
  wave_.head_b1 = make_bias("wave.head_b1", dr);
  wave_.head_w2 = make_weight("wave.head_w2", dr, 1, rng);
  wave_.head_b2 = make_bias("wave.head_b2", 1);
}

SpecConvFilter SpecStgModel::make_filter(const std::string& prefix, std::size_t order,
                                         std::size_t in, std::size_t out,
                                         std::mt19937_64& rng) {
  SpecConvFilter f;
  for (std::size_t j = 0; j < order; ++j) {
    f.coeffs.push_back(make_weight(prefix + ".phi" + std::to_string(j), in, out, rng));
  }
  return f;
}

Tensor SpecStgModel::make_weight(const std::string& name, std::size_t in, std::size_t out,
                                 std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return params_.add(name, std::move(w));
}

Tensor SpecStgModel::make_bias(const std::string& name, std::size_t out) {
  return params_.add(name, Matrix::Zero(1, static_cast<Eigen::Index>(out)));
}

void SpecStgModel::zero_params() {
  for (auto& [name, t] : params_.items()) t.mutable_value().setZero();
}

Tensor SpecStgModel::gru_step(const Tensor& x, const Tensor& h_prev, const Matrix& cheb) const {
  if (x.cols() != dims_.input_channels) {
    throw ShapeError("gru_step: input has " + std::to_string(x.cols()) + " channels, expected " +
                     std::to_string(dims_.input_channels));
  }
  if (h_prev.cols() != dims_.hidden || h_prev.rows() != x.rows()) {
    throw ShapeError("gru_step: hidden state shape does not match input");
  }
  const Tensor cx = spec_conv(gru_.input_conv, cheb, x);
  const Tensor ch = spec_conv(gru_.hidden_conv, cheb, h_prev);
  const Tensor z = sigmoid(add(matmul(cx, gru_.w_z1), matmul(ch, gru_.w_z2)));
  const Tensor r = sigmoid(add(matmul(cx, gru_.w_r1), matmul(ch, gru_.w_r2)));
  const Tensor crh = spec_conv(gru_.hidden_conv, cheb, mul(r, h_prev));
  const Tensor cand = tanh(add(matmul(cx, gru_.w_c1), matmul(crh, gru_.w_c2)));
  // z * h + (1 - z) * cand == cand + z * (h - cand)
  return add(cand, mul(z, sub(h_prev, cand)));
}

std::vector<Tensor> SpecStgModel::encode(const std::vector<Tensor>& inputs,
                                         const Matrix& cheb) const {
  if (inputs.empty()) throw UsageError("encode: empty context");
  std::vector<Tensor> states;
  Tensor h = Tensor::zeros(inputs.front().rows(), dims_.hidden);
  for (const auto& x : inputs) {
    h = gru_step(x, h, cheb);
    states.push_back(h);
  }
  return states;
}

Tensor SpecStgModel::embed_steps(const std::vector<int>& steps) const {
  for (int k : steps) {
    if (k < 1 || static_cast<std::size_t>(k) > dims_.num_steps) {
      throw UsageError("diffusion step " + std::to_string(k) + " outside [1, " +
                       std::to_string(dims_.num_steps) + "]");
    }
  }
  Tensor e(step_embedding_table(steps, dims_.step_embedding));
  e = relu(add_broadcast(matmul(e, wave_.emb_w1), wave_.emb_b1));
  return relu(add_broadcast(matmul(e, wave_.emb_w2), wave_.emb_b2));
}

DenoiserCondition SpecStgModel::condition(const Tensor& h_prev, const Matrix& cheb) const {
  DenoiserCondition c;
  c.per_block.reserve(wave_.blocks.size());
  for (const auto& b : wave_.blocks) c.per_block.push_back(spec_conv(b.cond_conv, cheb, h_prev));
  return c;
}

Tensor SpecStgModel::denoise(const Tensor& noisy, const Tensor& step_emb,
                             std::size_t rows_per_step, const DenoiserCondition& cond) const {
  if (noisy.cols() != 1) throw ShapeError("denoise: noisy input must have one channel");
  if (step_emb.rows() * rows_per_step != noisy.rows()) {
    throw ShapeError("denoise: step embeddings do not cover the input rows");
  }
  if (cond.per_block.size() != wave_.blocks.size()) {
    throw ShapeError("denoise: condition has wrong block count");
  }
  const auto dr = dims_.residual_channels;
  const double res_scale = 1.0 / std::sqrt(2.0);

  Tensor x = relu(add_broadcast(matmul(noisy, wave_.in_w), wave_.in_b));
  Tensor skip;
  for (std::size_t m = 0; m < wave_.blocks.size(); ++m) {
    const auto& b = wave_.blocks[m];
    const Tensor step = add_broadcast(matmul(step_emb, b.step_w), b.step_b);
    Tensor y = add(add_broadcast(matmul(x, b.dilated_w), b.dilated_b), cond.per_block[m]);
    if (step.rows() == 1) {
      y = add_broadcast(y, step);
    } else {
      y = add(y, rows_per_step > 1 ? repeat_rows(step, rows_per_step) : step);
    }
    const Tensor gated = mul(tanh(slice(y, 0, dr)), sigmoid(slice(y, dr, dr)));
    x = scale(add(x, add_broadcast(matmul(gated, b.res_w), b.res_b)), res_scale);
    Tensor s = add_broadcast(matmul(gated, b.skip_w), b.skip_b);
    skip = m == 0 ? s : add(skip, s);
  }
  Tensor out = relu(scale(skip, 1.0 / std::sqrt(static_cast<double>(wave_.blocks.size()))));
  out = relu(add_broadcast(matmul(out, wave_.head_w1), wave_.head_b1));
  return add_broadcast(matmul(out, wave_.head_w2), wave_.head_b2);
}

Tensor SpecStgModel::denoise(const Tensor& noisy, int k, const Tensor& h_prev,
                             const Matrix& cheb) const {
  return denoise(noisy, embed_steps({k}), noisy.rows(), condition(h_prev, cheb));
}

}  // namespace specstg
