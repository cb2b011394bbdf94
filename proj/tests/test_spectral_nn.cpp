#include <doctest.h>

#include <cmath>

#include "specstg/gradcheck.hpp"
#include "specstg/spectral_nn.hpp"
#include "test_helpers.hpp"

using namespace specstg;
using testing_util::random_graph;
using testing_util::random_matrix;

namespace {

ModelDims small_dims(std::size_t in = 1) {
  ModelDims d;
  d.input_channels = in;
  d.hidden = 3;
  d.gru_order = 3;
  d.residual_blocks = 2;
  d.residual_channels = 4;
  d.cond_order = 2;
  d.step_embedding = 8;
  d.num_steps = 10;
  return d;
}

SpecConvFilter make_filter(std::vector<Matrix> coeffs) {
  SpecConvFilter f;
  for (auto& c : coeffs) f.coeffs.emplace_back(std::move(c));
  return f;
}

}  // namespace

TEST_SUITE("spectral_nn") {

TEST_CASE("chebyshev table") {
  Vector lam(3);
  lam << 0.0, 1.0, 0.5;
  const Matrix t = chebyshev_diag(lam, 4);
  CHECK(t(0, 0) == 1.0);
  CHECK(t(1, 0) == 0.0);
  CHECK(t(2, 0) == -1.0);
  for (int j = 0; j < 4; ++j) CHECK(t(j, 1) == 1.0);
  CHECK(t(0, 2) == 1.0);
  CHECK(t(1, 2) == 0.5);
  CHECK(t(2, 2) == doctest::Approx(-0.5));
  CHECK(t(3, 2) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(chebyshev_diag(lam, 0), UsageError);
}

TEST_CASE("tile columns repeats per batch") {
  Matrix t(2, 2);
  t << 1, 2, 3, 4;
  const Matrix tiled = tile_columns(t, 3);
  CHECK(tiled.cols() == 6);
  CHECK(tiled(0, 4) == 1.0);
  CHECK(tiled(1, 5) == 4.0);
}

TEST_CASE("spec_conv zeroth order is identity") {
  Vector lam(3);
  lam << -1, 0.2, 1;
  Matrix x(3, 1);
  x << 1.5, -2, 7;
  const auto f = make_filter({Matrix::Ones(1, 1)});
  CHECK(spec_conv(f, chebyshev_diag(lam, 1), Tensor(x)).value() == x);
}

TEST_CASE("spec_conv first order on two nodes") {
  const auto b = fourier_basis(build_graph({{0, 1, 1.0}}, 2));
  CHECK(b.scaled_eigvals(0) == doctest::Approx(-1.0));
  CHECK(b.scaled_eigvals(1) == doctest::Approx(1.0));
  Matrix x(2, 1);
  x << 2.5, -4.0;
  const auto f = make_filter({Matrix::Zero(1, 1), Matrix::Ones(1, 1)});
  const Matrix y = spec_conv(f, chebyshev_diag(b.scaled_eigvals, 2), Tensor(x)).value();
  CHECK(y(0, 0) == doctest::Approx(-2.5));
  CHECK(y(1, 0) == doctest::Approx(-4.0));
}

TEST_CASE("spec_conv matches the dense oracle") {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + rep;
    const auto b = fourier_basis(random_graph(n, rng));
    std::vector<Matrix> coeffs{random_matrix(2, 3, rng), random_matrix(2, 3, rng),
                               random_matrix(2, 3, rng)};
    const Matrix x = random_matrix(n, 2, rng);
    const Matrix dense = b.eigvecs.transpose() * cheb_conv_dense(coeffs, b, x);
    const Matrix spec = spec_conv(make_filter(coeffs), chebyshev_diag(b.scaled_eigvals, 3),
                                  Tensor(fourier_transform(b, x)))
                            .value();
    CHECK((spec - dense).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("spec_conv shape errors") {
  Vector lam = Vector::Zero(3);
  const auto f = make_filter({Matrix::Ones(2, 1), Matrix::Ones(2, 1)});
  CHECK_THROWS_AS(spec_conv(f, chebyshev_diag(lam, 1), Tensor(Matrix::Ones(3, 2))), ShapeError);
  CHECK_THROWS_AS(spec_conv(f, chebyshev_diag(lam, 2), Tensor(Matrix::Ones(4, 2))), ShapeError);
  CHECK_THROWS_AS(spec_conv(f, chebyshev_diag(lam, 2), Tensor(Matrix::Ones(3, 3))), ShapeError);
}

TEST_CASE("gru with zero weights halves the state") {
  std::mt19937_64 rng(73);
  const auto b = fourier_basis(random_graph(4, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 1);
  m.zero_params();
  const Matrix h = random_matrix(4, 3, rng);
  const Tensor next = m.gru_step(Tensor(random_matrix(4, 1, rng)), Tensor(h), cheb);
  CHECK((next.value() - 0.5 * h).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("gru zero state is a fixed point for zero input") {
  std::mt19937_64 rng(79);
  const auto b = fourier_basis(random_graph(4, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 2);
  const Tensor next = m.gru_step(Tensor(Matrix::Zero(4, 1)), Tensor(Matrix::Zero(4, 3)), cheb);
  CHECK(next.value().isZero(0.0));
}

TEST_CASE("gru output stays in (-1, 1) for bounded states") {
  std::mt19937_64 rng(83);
  const auto b = fourier_basis(random_graph(6, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 3);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix x = random_matrix(6, 1, rng, 3.0);
    const Matrix h = random_matrix(6, 3, rng).array().tanh().matrix() * 0.999;
    const Tensor next = m.gru_step(Tensor(x), Tensor(h), cheb);
    CHECK(next.value().cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("gru shape errors") {
  const Matrix cheb = chebyshev_diag(Vector::Zero(4), 3);
  SpecStgModel m(small_dims(), 4);
  CHECK_THROWS_AS(m.gru_step(Tensor(Matrix::Zero(4, 2)), Tensor(Matrix::Zero(4, 3)), cheb),
                  ShapeError);
  CHECK_THROWS_AS(m.gru_step(Tensor(Matrix::Zero(4, 1)), Tensor(Matrix::Zero(4, 2)), cheb),
                  ShapeError);
}

TEST_CASE("encode") {
  std::mt19937_64 rng(89);
  const auto b = fourier_basis(random_graph(5, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel zero(small_dims(), 5);
  zero.zero_params();
  const auto hs = zero.encode({Tensor(Matrix::Zero(5, 1))}, cheb);
  REQUIRE(hs.size() == 1);
  CHECK(hs[0].value().isZero(0.0));
  CHECK_THROWS_AS(zero.encode({}, cheb), UsageError);

  SpecStgModel m(small_dims(), 6);
  std::vector<Tensor> w1, w2;
  for (int t = 0; t < 4; ++t) {
    w1.emplace_back(random_matrix(5, 1, rng));
    w2.emplace_back(random_matrix(5, 1, rng));
  }
  const auto h1 = m.encode(w1, cheb);
  const auto h2 = m.encode(w2, cheb);
  CHECK(h1.size() == 4);
  CHECK((h1.back().value() - h2.back().value()).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("encode ignores features whose weights are zero") {
  std::mt19937_64 rng(97);
  const auto b = fourier_basis(random_graph(5, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(2), 7);
  auto run = [&](double feature) {
    std::mt19937_64 local(5);
    std::vector<Tensor> seq;
    for (int t = 0; t < 3; ++t) {
      Matrix x(5, 2);
      x.col(0) = random_matrix(5, 1, local);
      x.col(1).setConstant(feature);
      seq.emplace_back(x);
    }
    return m.encode(seq, cheb).back().value();
  };
  CHECK((run(0.0) - run(0.7)).cwiseAbs().maxCoeff() > 1e-6);
  for (auto c : m.gru().input_conv.coeffs) c.mutable_value().row(1).setZero();
  CHECK((run(0.0) - run(0.7)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero denoiser outputs zeros") {
  std::mt19937_64 rng(101);
  const auto b = fourier_basis(random_graph(4, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 8);
  m.zero_params();
  const Tensor eps =
      m.denoise(Tensor(random_matrix(4, 1, rng)), 3, Tensor(random_matrix(4, 3, rng)), cheb);
  CHECK(eps.value().isZero(0.0));
}

TEST_CASE("denoiser depends on the step") {
  std::mt19937_64 rng(103);
  const auto b = fourier_basis(random_graph(4, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 9);
  const Tensor x(random_matrix(4, 1, rng));
  const Tensor h(random_matrix(4, 3, rng));
  const Matrix e1 = m.denoise(x, 1, h, cheb).value();
  const Matrix ek = m.denoise(x, 10, h, cheb).value();
  CHECK(e1.rows() == 4);
  CHECK(e1.cols() == 1);
  CHECK((e1 - ek).cwiseAbs().maxCoeff() > 1e-8);
  CHECK(m.denoise(x, 1, h, cheb).value() == e1);
  CHECK_THROWS_AS(m.denoise(x, 0, h, cheb), UsageError);
  CHECK_THROWS_AS(m.denoise(x, 11, h, cheb), UsageError);
}

TEST_CASE("network outputs stay finite for large inputs") {
  std::mt19937_64 rng(107);
  const auto b = fourier_basis(random_graph(4, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 10);
  const Tensor x(Matrix::Constant(4, 1, 1e6));
  const Tensor h = m.gru_step(x, Tensor(Matrix::Zero(4, 3)), cheb);
  CHECK(h.value().allFinite());
  CHECK(m.denoise(x, 5, h, cheb).value().allFinite());
}

TEST_CASE("step embedding table") {
  const Matrix t = step_embedding_table({0, 3}, 8);
  CHECK(t(0, 0) == 0.0);
  CHECK(t(0, 4) == 1.0);
  CHECK(t(1, 0) == doctest::Approx(std::sin(3.0)));
  CHECK_THROWS_AS(step_embedding_table({1}, 7), UsageError);
}

}  // TEST_SUITE

TEST_SUITE("gradcheck") {

TEST_CASE("fresh initialization passes every layer") {
  const auto results = check_all_layers();
  REQUIRE(results.size() == 4);
  for (const auto& r : results) {
    CAPTURE(r.layer);
    CHECK(r.passed);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error <= 1e-4);
  }
  const std::string text = format_gradcheck(results);
  for (const auto& r : results) CHECK(text.find(r.layer) != std::string::npos);
  CHECK(text.find("PASS") != std::string::npos);
}

TEST_CASE("gru gradient of squared state norm") {
  std::mt19937_64 rng(109);
  const auto b = fourier_basis(random_graph(4, rng));
  const Matrix cheb = chebyshev_diag(b.scaled_eigvals, 3);
  SpecStgModel m(small_dims(), 11);
  const Tensor x(random_matrix(4, 1, rng));
  const Tensor h(random_matrix(4, 3, rng) * 0.5);
  const auto& g = m.gru();
  const NamedTensors params{{"w_z1", g.w_z1}, {"w_r1", g.w_r1}, {"w_c1", g.w_c1},
                            {"w_z2", g.w_z2}, {"w_r2", g.w_r2}, {"w_c2", g.w_c2}};
  GradCheckOptions opts;
  opts.fraction = 1.0;
  const auto r = check_gradients(
      "gru", [&] { const Tensor n = m.gru_step(x, h, cheb); return sum(mul(n, n)); }, params,
      opts);
  CHECK(r.passed);
}

TEST_CASE("corrupted backward rule is caught") {
  std::mt19937_64 rng(113);
  Tensor w(random_matrix(3, 2, rng), true);
  const Matrix x = random_matrix(4, 3, rng);
  // Doubles x*w but reports the gradient of x*w.
  auto bad_op = [&](const Tensor& in) {
    const Matrix xin = x;
    Tensor leaf = in;
    return make_op(2.0 * (xin * in.value()), {in}, [leaf, xin](const Matrix& g) mutable {
      leaf.accumulate_grad(xin.transpose() * g);
    });
  };
  const auto r = check_gradients("corrupted", [&] { return sum(tanh(bad_op(w))); },
                                 {{"w", w}});
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.1);
  CHECK(r.worst_param == "w");
  CHECK(format_gradcheck({r}).find("FAIL") != std::string::npos);
}

}  // TEST_SUITE
