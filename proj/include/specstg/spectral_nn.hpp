#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "specstg/graph.hpp"
#include "specstg/tensor.hpp"

namespace specstg {

// T_j(scaled eigenvalue) for j < order, as an order x N matrix:
// T_0 = 1, T_1 = x, T_j = 2x T_{j-1} - T_{j-2}.
Matrix chebyshev_diag(const Vector& scaled_eigvals, std::size_t order);

// Repeats each column block so a table built for N nodes covers a batch of
// `batch` stacked windows (row b * N + n maps to node n).
Matrix tile_columns(const Matrix& table, std::size_t batch);

// Learnable Chebyshev filter on spectral input: one channel-mixing matrix
// per polynomial order.
struct SpecConvFilter {
  std::vector<Tensor> coeffs;  // each in_channels x out_channels

  std::size_t order() const { return coeffs.size(); }
  std::size_t in_channels() const { return coeffs.front().rows(); }
  std::size_t out_channels() const { return coeffs.front().cols(); }
};

// sum_j diag(T_j) * (xt * phi_j). `cheb` must have at least filter.order()
// rows and one column per row of xt. Cost is linear in the row count.
Tensor spec_conv(const SpecConvFilter& filter, const Matrix& cheb, const Tensor& xt);

// Dense Chebyshev convolution in the vertex domain:
// U * sum_j diag(T_j) * U^T * x * phi_j. Used for benchmarking against spec_conv.
Matrix cheb_conv_dense(const std::vector<Matrix>& coeffs, const FourierBasis& basis,
                       const Matrix& x);

struct ModelDims {
  std::size_t input_channels = 1;  // spectral signal + time-feature columns
  std::size_t hidden = 64;         // D_h
  std::size_t gru_order = 3;       // J for the encoder's SpecConv
  std::size_t residual_blocks = 8;
  std::size_t residual_channels = 8;
  std::size_t cond_order = 2;  // J for the denoiser's condition SpecConv
  std::size_t step_embedding = 64;
  std::size_t num_steps = 50;  // K
};

// Sinusoidal embedding of diffusion steps, one row per step in `steps`.
Matrix step_embedding_table(const std::vector<int>& steps, std::size_t dim);

struct SgGruParams {
  SpecConvFilter input_conv;   // C_in -> C_in
  SpecConvFilter hidden_conv;  // D_h -> D_h
  Tensor w_z1, w_r1, w_c1;     // C_in x D_h
  Tensor w_z2, w_r2, w_c2;     // D_h x D_h
};

struct WaveBlockParams {
  Tensor dilated_w, dilated_b;  // D_r x 2D_r, 1 x 2D_r
  SpecConvFilter cond_conv;     // D_h -> 2D_r
  Tensor step_w, step_b;        // E x 2D_r, 1 x 2D_r
  Tensor res_w, res_b;          // D_r x D_r
  Tensor skip_w, skip_b;        // D_r x D_r
};

struct SgWaveParams {
  Tensor in_w, in_b;  // 1 x D_r
  Tensor emb_w1, emb_b1, emb_w2, emb_b2;
  std::vector<WaveBlockParams> blocks;
  Tensor head_w1, head_b1;  // D_r x D_r
  Tensor head_w2, head_b2;  // D_r x 1
};

// Per-block condition projections of the encoder state; depends only on the
// hidden state, so sampling computes it once per forecast time point.
struct DenoiserCondition {
  std::vector<Tensor> per_block;  // each R x 2D_r
};

// SG-GRU encoder plus SG-Wave denoiser sharing one parameter store.
class SpecStgModel {
 public:
  // Weights drawn uniformly with Glorot-style bounds from `seed`.
  SpecStgModel(const ModelDims& dims, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Sets every parameter to zero.
  void zero_params();

  // One SG-GRU update over `batch` stacked windows. x: R x C_in spectral
  // input, h_prev: R x D_h. cheb is the table tiled for the batch.
  Tensor gru_step(const Tensor& x, const Tensor& h_prev, const Matrix& cheb) const;

  // Runs gru_step over `inputs` starting from a zero state and returns the
  // state after each step. Throws UsageError on an empty sequence.
  std::vector<Tensor> encode(const std::vector<Tensor>& inputs, const Matrix& cheb) const;

  // Step embeddings after the shared MLP, one row per entry of `steps`.
  Tensor embed_steps(const std::vector<int>& steps) const;

  DenoiserCondition condition(const Tensor& h_prev, const Matrix& cheb) const;

  // Predicts the injected noise. noisy: R x 1; step_emb: B x E rows from
  // embed_steps, where R = B * rows_per_step (each embedding row is shared
  // by `rows_per_step` consecutive rows); cond from condition().
  Tensor denoise(const Tensor& noisy, const Tensor& step_emb, std::size_t rows_per_step,
                 const DenoiserCondition& cond) const;

  // Convenience single-call form: eps_theta(x^k, k, h, A) for one step k.
  Tensor denoise(const Tensor& noisy, int k, const Tensor& h_prev, const Matrix& cheb) const;

  const SgGruParams& gru() const { return gru_; }
  const SgWaveParams& wave() const { return wave_; }

 private:
  SpecConvFilter make_filter(const std::string& prefix, std::size_t order, std::size_t in,
                             std::size_t out, std::mt19937_64& rng);
  Tensor make_weight(const std::string& name, std::size_t in, std::size_t out,
                     std::mt19937_64& rng);
  Tensor make_bias(const std::string& name, std::size_t out);

  ModelDims dims_;
  ParamStore params_;
  SgGruParams gru_;
  SgWaveParams wave_;
};

}  // namespace specstg
