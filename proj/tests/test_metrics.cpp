#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "specstg/metrics.hpp"
#include "test_helpers.hpp"

using namespace specstg;
using testing_util::random_matrix;

namespace {

// Reference CRPS: linear-interpolated quantiles recomputed from scratch.
double crps_reference(std::vector<double> s, double x) {
  std::sort(s.begin(), s.end());
  double total = 0.0;
  for (int i = 1; i <= 19; ++i) {
    const double q = 0.05 * i;
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const double qv = s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
    total += (q - (x < qv ? 1.0 : 0.0)) * (x - qv);
  }
  return 2.0 * total / 19.0;
}

std::vector<double> column(const std::vector<Matrix>& samples, Eigen::Index n, Eigen::Index t) {
  std::vector<double> out;
  for (const auto& s : samples) out.push_back(s(n, t));
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("point metrics trio") {
  std::mt19937_64 rng(223);
  const Matrix truth = random_matrix(3, 4, rng);
  CHECK(rmse(truth, truth).value == 0.0);
  CHECK(mae(truth, truth).value == 0.0);
  const Matrix shifted = (truth.array() + 1.0).matrix();
  CHECK(rmse(shifted, truth).value == doctest::Approx(1.0));
  CHECK(mae(shifted, truth).value == doctest::Approx(1.0));

  const Matrix pred = random_matrix(3, 4, rng);
  double r = 0.0, m = 0.0;
  for (int t = 0; t < 4; ++t) {
    double sq = 0.0, ab = 0.0;
    for (int n = 0; n < 3; ++n) {
      sq += (pred(n, t) - truth(n, t)) * (pred(n, t) - truth(n, t));
      ab += std::abs(pred(n, t) - truth(n, t));
    }
    r += std::sqrt(sq / 3.0);
    m += ab / 3.0;
  }
  CHECK(std::abs(rmse(pred, truth).value - r / 4.0) <= 1e-12);
  CHECK(std::abs(mae(pred, truth).value - m / 4.0) <= 1e-12);
  CHECK(rmse(pred, truth).per_step.size() == 4);
  CHECK_THROWS_AS(rmse(pred, Matrix::Zero(3, 3)), ShapeError);
  CHECK_THROWS_AS(mae(pred, Matrix::Zero(2, 4)), ShapeError);
}

TEST_CASE("rmse is at least mae") {
  std::mt19937_64 rng(227);
  for (int w = 0; w < 1000; ++w) {
    const Matrix p = random_matrix(5, 6, rng, 3.0);
    const Matrix t = random_matrix(5, 6, rng, 3.0);
    const auto r = rmse(p, t), m = mae(p, t);
    CHECK(r.value >= m.value - 1e-12);
    for (std::size_t i = 0; i < r.per_step.size(); ++i) {
      CHECK(r.per_step[i] >= m.per_step[i] - 1e-12);
    }
  }
}

TEST_CASE("quantile levels and interpolation") {
  const auto& q = crps_levels();
  REQUIRE(q.size() == 19);
  CHECK(q.front() == doctest::Approx(0.05));
  CHECK(q.back() == doctest::Approx(0.95));
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(empirical_quantile(s, 0.5) == doctest::Approx(2.5));
  CHECK(empirical_quantile(s, 0.0) == 1.0);
  CHECK(empirical_quantile(s, 1.0) == 4.0);
  CHECK_THROWS_AS(empirical_quantile({}, 0.5), UsageError);
}

TEST_CASE("crps reference values") {
  std::vector<double> s;
  for (int i = 0; i < 10; ++i) s.push_back(i);
  CHECK(std::abs(crps_empirical(s, 3.3) - 0.9552631578947368) <= 1e-12);
  CHECK(std::abs(crps_empirical({2.5, -1.0, 0.7, 4.2, 1.1}, 1.0) - 0.3536842105263158) <= 1e-12);
  CHECK(crps_empirical({2.0, 2.0, 2.0}, 2.0) == 0.0);
  for (double c : {-3.0, -0.5, 0.25, 4.0}) {
    CHECK(crps_empirical({1.0 + c, 1.0 + c}, 1.0) == doctest::Approx(std::abs(c)));
  }
  CHECK_THROWS_AS(crps_empirical({1.0}, 1.0), UsageError);
}

TEST_CASE("crps against the Gaussian closed form") {
  const double closed = 2.0 / std::sqrt(2.0 * M_PI) - 1.0 / std::sqrt(M_PI);
  CHECK(std::abs(closed - 0.23369497725510913) < 1e-15);
  // Stratified sample: the 10,000 midpoint quantiles of N(0, 1).
  std::vector<double> grid(10000);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double p = (static_cast<double>(i) + 0.5) / 10000.0;
    // Inverse normal CDF by bisection on erfc.
    double lo = -10, hi = 10;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
    }
    grid[i] = 0.5 * (lo + hi);
  }
  // The 19-level estimator's population value for this target is 0.24271122.
  CHECK(std::abs(crps_empirical(grid, 0.0) - 0.24271121999660408) < 2e-4);
  CHECK(std::abs(crps_empirical(grid, 0.0) - closed) <= 0.01);

  std::mt19937_64 rng(229);
  std::normal_distribution<double> g(0.0, 1.0);
  double total = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> s(10000);
    for (auto& v : s) v = g(rng);
    total += crps_empirical(s, 0.0);
  }
  // Random draws scatter around the estimator's own population value.
  CHECK(std::abs(total / 20 - 0.24271121999660408) <= 0.003);
}

TEST_CASE("crps is non-negative and matches the reference") {
  std::mt19937_64 rng(233);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> s(2 + rep % 30);
    for (auto& v : s) v = g(rng);
    const double x = g(rng);
    const double c = crps_empirical(s, x);
    CHECK(c >= 0.0);
    CHECK(std::abs(c - crps_reference(s, x)) <= 1e-12);
  }
}

TEST_CASE("normalized crps") {
  std::mt19937_64 rng(239);
  const Matrix samples = random_matrix(20, 4, rng, 2.0);
  Vector truth = random_matrix(4, 1, rng, 2.0).col(0);
  const double v = crps_normalized(samples, truth);
  CHECK(crps_normalized(2.0 * samples, 2.0 * truth) == doctest::Approx(v).epsilon(1e-9));
  Matrix degenerate(3, 4);
  for (int s = 0; s < 3; ++s) degenerate.row(s) = truth.transpose();
  CHECK(crps_normalized(degenerate, truth) == 0.0);
  const Matrix one = samples.col(0);
  std::vector<double> col(one.data(), one.data() + one.size());
  CHECK(crps_normalized(one, truth.head(1)) ==
        doctest::Approx(crps_empirical(col, truth(0)) / std::abs(truth(0))));
  CHECK_THROWS_AS(crps_normalized(samples, Vector::Zero(4)), UsageError);
  CHECK_THROWS_AS(crps_normalized(samples, Vector::Zero(3)), ShapeError);
}

TEST_CASE("crps avg") {
  std::mt19937_64 rng(241);
  std::vector<Matrix> samples;
  for (int s = 0; s < 15; ++s) samples.push_back(random_matrix(3, 2, rng));
  const Matrix truth = random_matrix(3, 2, rng);
  double num = 0.0, den = 0.0;
  for (Eigen::Index n = 0; n < 3; ++n) {
    for (Eigen::Index t = 0; t < 2; ++t) {
      num += crps_reference(column(samples, n, t), truth(n, t));
      den += std::abs(truth(n, t));
    }
  }
  CHECK(std::abs(crps_avg(samples, truth) - num / den) <= 1e-12);
  CHECK(crps_avg({truth, truth}, truth) == 0.0);

  std::vector<Matrix> single;
  Matrix stacked(15, 3);
  for (int s = 0; s < 15; ++s) {
    single.push_back(samples[static_cast<std::size_t>(s)].leftCols(1));
    stacked.row(s) = samples[static_cast<std::size_t>(s)].col(0).transpose();
  }
  CHECK(crps_avg(single, truth.leftCols(1)) ==
        doctest::Approx(crps_normalized(stacked, truth.col(0))).epsilon(1e-12));
}

TEST_CASE("evaluate") {
  std::mt19937_64 rng(251);
  std::vector<std::vector<Matrix>> samples;
  std::vector<Matrix> preds, truths;
  for (int w = 0; w < 5; ++w) {
    std::vector<Matrix> s;
    for (int k = 0; k < 8; ++k) s.push_back(random_matrix(4, 12, rng));
    samples.push_back(s);
    preds.push_back(random_matrix(4, 12, rng));
    truths.push_back(random_matrix(4, 12, rng));
  }
  const auto single = evaluate({samples[0]}, {preds[0]}, {truths[0]});
  const auto own = window_metrics(0, samples[0], preds[0], truths[0]);
  CHECK(single.rmse_avg == own.rmse.value);
  CHECK(single.crps_avg == own.crps);

  const auto twice = evaluate({samples[1], samples[1]}, {preds[1], preds[1]},
                              {truths[1], truths[1]});
  const auto once = evaluate({samples[1]}, {preds[1]}, {truths[1]});
  CHECK(twice.rmse_avg == doctest::Approx(once.rmse_avg).epsilon(1e-15));
  CHECK(twice.mae_avg == doctest::Approx(once.mae_avg).epsilon(1e-15));
  CHECK(twice.crps_avg == doctest::Approx(once.crps_avg).epsilon(1e-15));

  const auto rep = evaluate(samples, preds, truths);
  double r = 0, m = 0, c = 0;
  double r3 = 0, m6 = 0, c12 = 0;
  for (int w = 0; w < 5; ++w) {
    r += rmse(preds[w], truths[w]).value;
    m += mae(preds[w], truths[w]).value;
    c += crps_avg(samples[w], truths[w]);
    r3 += rmse(preds[w], truths[w]).per_step[2];
    m6 += mae(preds[w], truths[w]).per_step[5];
    Matrix at(8, 4);
    for (int k = 0; k < 8; ++k) at.row(k) = samples[w][k].col(11).transpose();
    c12 += crps_normalized(at, truths[w].col(11));
  }
  CHECK(std::abs(rep.rmse_avg - r / 5) <= 1e-12);
  CHECK(std::abs(rep.mae_avg - m / 5) <= 1e-12);
  CHECK(std::abs(rep.crps_avg - c / 5) <= 1e-12);
  REQUIRE(rep.points.size() == 3);
  CHECK(rep.points[0].step == 3);
  CHECK(std::abs(rep.points[0].rmse - r3 / 5) <= 1e-12);
  CHECK(std::abs(rep.points[1].mae - m6 / 5) <= 1e-12);
  CHECK(std::abs(rep.points[2].crps - c12 / 5) <= 1e-12);
  CHECK(rep.rmse_avg >= 0.0);

  CHECK_THROWS_AS(evaluate(samples, preds, {truths[0]}), UsageError);
  auto bad = truths;
  bad[2] = Matrix::Zero(4, 11);
  CHECK_THROWS_AS(evaluate(samples, preds, bad), UsageError);
}

TEST_CASE("zero truth steps are counted as undefined") {
  std::mt19937_64 rng(257);
  Matrix truth = random_matrix(2, 3, rng);
  truth.col(1).setZero();
  std::vector<Matrix> s{random_matrix(2, 3, rng), random_matrix(2, 3, rng)};
  const auto w = window_metrics(0, s, s[0], truth);
  CHECK(w.crps_undefined_steps == 1);
  CHECK(std::isnan(w.crps_per_step[1]));
  CHECK_FALSE(std::isnan(w.crps_per_step[0]));
}

TEST_CASE("baselines") {
  Matrix ctx(2, 3);
  ctx << 1, 2, 3, 4, 5, 6;
  const Matrix p = persistence_forecast(ctx, 4);
  CHECK(p.cols() == 4);
  CHECK(p.col(3) == ctx.col(2));
  CHECK(p.row(1).minCoeff() == 6.0);

  Matrix series(1, 4);
  series << 0, 1, 3, 6;
  // h=1 diffs 1,2,3; h=2 diffs 3,5 -> mean square (1+4+9+9+25)/5.
  CHECK(persistence_error_scale(series, 2) == doctest::Approx(std::sqrt(48.0 / 5.0)));

  const auto g1 = gaussian_samples(ctx, 0.5, 4, 9);
  const auto g2 = gaussian_samples(ctx, 0.5, 4, 9);
  REQUIRE(g1.size() == 4);
  CHECK(g1[3] == g2[3]);
  CHECK(g1[0] != g1[1]);
  const auto wide = gaussian_samples(Matrix::Zero(50, 50), 2.0, 2, 3);
  const double sd = std::sqrt(wide[0].array().square().mean());
  CHECK(sd == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("report files") {
  std::mt19937_64 rng(263);
  std::vector<Matrix> s{random_matrix(2, 12, rng), random_matrix(2, 12, rng)};
  const Matrix truth = random_matrix(2, 12, rng);
  const auto rep = evaluate({s}, {s[0]}, {truth});
  const auto dir = testing_util::scratch_dir("report");
  write_report_csv((dir / "r.csv").string(), {{"model", rep}, {"other", rep}}, 5);
  std::ifstream in(dir / "r.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,metric,horizon,value");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2 * (3 + 3 * 3 + 1));
  write_window_csv((dir / "w.csv").string(), rep);
  CHECK(std::filesystem::exists(dir / "w.csv"));
  const std::string text = format_report(rep, 5, "model");
  CHECK(text.find("RMSE") != std::string::npos);
  CHECK(text.find("CRPS") != std::string::npos);
  CHECK(text.find("60min") != std::string::npos);
}

}  // TEST_SUITE
