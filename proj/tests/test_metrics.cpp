#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "ltgan/losses.hpp"
#include "ltgan/metrics.hpp"

using namespace ltgan;

namespace {

GaussianSummary summary(std::vector<double> mean, const Eigen::MatrixXd& cov) {
  return {Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())), cov};
}

Eigen::MatrixXd random_spd(Rng& rng, Eigen::Index d) {
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

/// Independent route: eigenvalues of the non-symmetric product S_a S_b.
double frechet_oracle(const GaussianSummary& a, const GaussianSummary& b) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(a.cov * b.cov);
  double tr = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr += std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  return (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2 * tr;
}

}  // namespace

TEST(Frechet, IdenticalSamplesGiveZero) {
  Rng rng(1);
  const Tensor x = rng.normal_matrix(500, 3);
  EXPECT_NEAR(frechet_distance(x, x), 0.0, 1e-9);
}

TEST(Frechet, ShiftGivesSquaredNorm) {
  Rng rng(2);
  const Tensor x = rng.normal_matrix(400, 2);
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    y(i, 0) += 3.0;
    y(i, 1) -= 1.0;
  }
  EXPECT_NEAR(frechet_distance(x, y), 10.0, 1e-9);
}

TEST(Frechet, OneDimensionalValues) {
  Eigen::MatrixXd one(1, 1), four(1, 1);
  one << 1.0;
  four << 4.0;
  EXPECT_NEAR(frechet_gaussian(summary({0}, one), summary({1}, one)), 1.0, 1e-12);
  EXPECT_NEAR(frechet_gaussian(summary({0}, four), summary({0}, one)), 1.0, 1e-12);
}

TEST(Frechet, DiagonalCovariancesHaveClosedForm) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(6));
    Eigen::VectorXd va(d), vb(d), ma(d), mb(d);
    double expected = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      va(i) = 0.1 + 3 * rng.uniform();
      vb(i) = 0.1 + 3 * rng.uniform();
      ma(i) = rng.normal();
      mb(i) = rng.normal();
      expected += (ma(i) - mb(i)) * (ma(i) - mb(i)) + (std::sqrt(va(i)) - std::sqrt(vb(i))) * (std::sqrt(va(i)) - std::sqrt(vb(i)));
    }
    const GaussianSummary a{ma, va.asDiagonal()}, b{mb, vb.asDiagonal()};
    EXPECT_NEAR(frechet_gaussian(a, b), expected, 1e-10 * std::max(1.0, expected));
  }
}

TEST(Frechet, GeneralCovariancesMatchOracleAndAreSymmetric) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(8));
    GaussianSummary a{Eigen::VectorXd::Zero(d), random_spd(rng, d)}, b{Eigen::VectorXd::Zero(d), random_spd(rng, d)};
    for (Eigen::Index i = 0; i < d; ++i) {
      a.mean(i) = rng.normal();
      b.mean(i) = rng.normal();
    }
    const double ab = frechet_gaussian(a, b), ba = frechet_gaussian(b, a);
    EXPECT_NEAR(ab, ba, 1e-9 * std::max(1.0, ab));
    EXPECT_NEAR(ab, frechet_oracle(a, b), 1e-8 * std::max(1.0, ab));
    EXPECT_GE(ab, 0.0);
  }
}

TEST(Frechet, Errors) {
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  const GaussianSummary good{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
  EXPECT_THROW(frechet_gaussian(good, {Eigen::VectorXd::Zero(2), bad}), std::invalid_argument);
  EXPECT_THROW(frechet_gaussian(good, {Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)}), ShapeError);
  Eigen::MatrixXd skew(2, 2);
  skew << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(frechet_gaussian(good, {Eigen::VectorXd::Zero(2), skew}), std::invalid_argument);
  EXPECT_THROW(fit_gaussian(Tensor::matrix(1, 2)), std::invalid_argument);
}

TEST(Frechet, ToEachMatchesSerialAcrossThreadCounts) {
  Rng rng(5);
  const Tensor s = rng.normal_matrix(300, 2);
  std::vector<Tensor> refs;
  for (int k = 0; k < 5; ++k) refs.push_back(rng.normal_matrix(200 + 10 * k, 2));
  std::vector<const Tensor*> ptrs;
  for (const auto& r : refs) ptrs.push_back(&r);
  for (const char* threads : {"1", "4"}) {
    ::setenv("LTGAN_THREADS", threads, 1);
    EXPECT_EQ(worker_threads(), static_cast<std::size_t>(std::atoi(threads)));
    const auto d = frechet_to_each(s, ptrs);
    for (std::size_t k = 0; k < refs.size(); ++k) EXPECT_EQ(d[k], frechet_distance(s, refs[k]));
  }
  ::setenv("LTGAN_THREADS", "zero", 1);
  EXPECT_GE(worker_threads(), 1u);
  ::unsetenv("LTGAN_THREADS");
}

namespace {

struct Student {
  Encoder enc;
  Decoder dec;
};

Student random_student(std::uint64_t seed) {
  Rng rng(seed);
  return {Encoder("encoder", {{3, 8, 4}, Activation::leaky_relu, Activation::identity}, rng),
          Decoder("decoder", {{2, 8, 3}, Activation::leaky_relu, Activation::identity}, rng)};
}

}  // namespace

TEST(Nlog, ZeroStudentValue) {
  Student s = random_student(1);
  for (auto* p : {&s.enc.net().params(), &s.dec.net().params()})
    for (auto& t : *p) t.value = Tensor(t.value.shape(), 0.0);
  const Tensor x = Tensor::from_rows({{1.0, 2.0, 2.0}, {0.0, 0.0, 3.0}});
  const NlogTerms t = nlog(s.enc, s.dec, x, Tensor::matrix(2, 2, 0.3));
  // 1/2 |x|^2 averaged over rows: (9/2 + 9/2) / 2
  EXPECT_DOUBLE_EQ(t.nlog, 4.5);
  EXPECT_DOUBLE_EQ(t.reconstruction, 4.5);
  EXPECT_DOUBLE_EQ(t.kl, 0.0);
  EXPECT_DOUBLE_EQ(t.mse, 3.0);
  EXPECT_THROW(nlog(s.enc, s.dec, Tensor::matrix(0, 3), Tensor::matrix(0, 2)), std::invalid_argument);
}

TEST(Nlog, EqualsUnitBetaElbo) {
  Rng rng(2);
  const Student s = random_student(3);
  const Tensor x = rng.normal_matrix(25, 3), gamma = rng.normal_matrix(25, 2);
  Tape tape;
  const double elbo =
      elbo_loss(s.enc.net().bind(tape, false), s.dec.net().bind(tape, false), tape.constant(x), gamma, 1.0).total.value().item();
  EXPECT_EQ(nlog(s.enc, s.dec, x, gamma).nlog, elbo);
}

TEST(ForgettingCurve, SingleTaskIsOneByOne) {
  Rng rng(4);
  const std::vector<SampleFn> gens{[](const Tensor& z) { return z; }};
  const std::vector<Tensor> evals{rng.normal_matrix(500, 2)};
  const auto c = forgetting_curve(gens, evals, 2, 500, 1);
  ASSERT_EQ(c.size(), 1u);
  ASSERT_EQ(c[0].size(), 1u);
  EXPECT_GE(c[0][0], 0.0);
}

TEST(ForgettingCurve, PerfectMemoryStaysAtTheNoiseFloor) {
  // Tasks are unit Gaussians at x = -3, 0, 3; the learner keeps task 1 exactly.
  Rng rng(5);
  const double shifts[3] = {-3.0, 0.0, 3.0};
  std::vector<Tensor> evals;
  for (double m : shifts) {
    Tensor e = rng.normal_matrix(2000, 2);
    for (std::size_t i = 0; i < e.rows(); ++i) e(i, 0) += m;
    evals.push_back(e);
  }
  const SampleFn remember_first = [](const Tensor& z) {
    Tensor x = z;
    for (std::size_t i = 0; i < x.rows(); ++i) x(i, 0) -= 3.0;
    return x;
  };
  const std::vector<SampleFn> gens(3, remember_first);
  const auto c = forgetting_curve(gens, evals, 2, 2000, 7);
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_EQ(c[i].size(), i + 1);
    EXPECT_LT(c[i][0], 0.02) << "row " << i;
    for (std::size_t j = 1; j <= i; ++j) EXPECT_NEAR(c[i][j], 9.0 * static_cast<double>(j * j), 0.5);
  }
  EXPECT_THROW(forgetting_curve(std::span<const SampleFn>{}, evals, 2, 10, 1), std::invalid_argument);
}

TEST(ForgettingCurve, FromMetricTableTakesLastEpochs) {
  MetricTable t{2, {}};
  t.rows.push_back({1, 1, 0, 0, 0, 0, 0, 0, 0, {5.0}});
  t.rows.push_back({1, 2, 0, 0, 0, 0, 0, 0, 0, {4.0}});
  t.rows.push_back({2, 1, 0, 0, 0, 0, 0, 0, 0, {6.0, 3.0}});
  const auto c = forgetting_curve(t);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0], (std::vector<double>{4.0}));
  EXPECT_EQ(c[1], (std::vector<double>{6.0, 3.0}));
}

TEST(Interpolation, EndpointsAndLipschitzBound) {
  Rng rng(6);
  const Generator g("g", {{4, 16, 16, 2}, Activation::leaky_relu, Activation::identity}, rng);
  const SampleFn map = [&g](const Tensor& z) { return generate(g, z); };
  double lipschitz = 1.0;
  for (std::size_t k = 0; k < g.net().params().size(); k += 2) {
    const Tensor& w = g.net().params()[k].value;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w(i, j);
    lipschitz *= Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
  }
  const Tensor z0 = rng.normal_matrix(1, 4), z1 = rng.normal_matrix(1, 4);
  double dz = 0;
  for (std::size_t i = 0; i < 4; ++i) dz += (z1[i] - z0[i]) * (z1[i] - z0[i]);
  dz = std::sqrt(dz);
  const std::size_t steps = 11;
  const auto path = interpolate_latents(map, z0, z1, steps);
  ASSERT_EQ(path.size(), steps);
  EXPECT_EQ(path.front(), map(z0));
  EXPECT_EQ(path.back(), map(z1));
  for (std::size_t s = 1; s < steps; ++s) {
    const double dx = std::hypot(path[s][0] - path[s - 1][0], path[s][1] - path[s - 1][1]);
    EXPECT_LE(dx, lipschitz * dz / static_cast<double>(steps - 1) * (1 + 1e-12));
  }
  EXPECT_THROW(interpolate_latents(map, z0, z1, 1), std::invalid_argument);
  EXPECT_THROW(interpolate_latents(map, z0, Tensor::matrix(1, 3), 3), ShapeError);
}

TEST(Traversal, OnlyTheSweptCoordinateMoves) {
  Rng rng(7);
  const Tensor z = rng.normal_matrix(1, 5);
  const SampleFn id = [](const Tensor& t) { return t; };
  const Traversal t = traverse_latent(id, z, 2, -3.0, 3.0, 7);
  ASSERT_EQ(t.latents.size(), 7u);
  for (std::size_t s = 0; s < 7; ++s) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (j != 2) {
        EXPECT_EQ(t.latents[s][j], z[j]);
      }
    }
    EXPECT_EQ(t.outputs[s], t.latents[s]);
  }
  EXPECT_EQ(t.latents.front()[2], -3.0);
  EXPECT_EQ(t.latents.back()[2], 3.0);
  EXPECT_THROW(traverse_latent(id, z, 5, -1, 1, 3), std::out_of_range);
  EXPECT_THROW(traverse_latent(id, rng.normal_matrix(2, 5), 0, -1, 1, 3), ShapeError);
}

TEST(MetricsCsv, RoundTrip) {
  std::vector<MetricRecord> recs{{1, 1, 2.5, 0.125, 0.75, -1.0 / 3.0, 0.1, 1e-300, 7.0, {0.5}},
                                 {2, 1, 1e10, 3.0, 0.0, 2.0, -0.0, 4.0, 5.0, {0.25, 1.0 / 7.0}},
                                 {2, 2, HUGE_VAL, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, {1.0, 2.0}}};
  std::stringstream ss;
  ss << metrics_csv_header(2) << "\n";
  for (const auto& r : recs) ss << metrics_csv_row(r, 2);
  EXPECT_EQ(metrics_csv_header(2), "task,epoch,nlog,mse,kl,critic_loss,gen_loss,penalty,student_loss,frechet_t1,frechet_t2");
  const MetricTable t = parse_metrics_csv(ss);
  EXPECT_EQ(t.task_count, 2u);
  EXPECT_EQ(t.rows, recs);

  MetricRecord with_nan{3, 1, std::nan(""), 0, 0, 0, 0, 0, 0, {}};
  std::stringstream s2;
  s2 << metrics_csv_header(3) << "\n" << metrics_csv_row(with_nan, 3);
  const MetricTable t2 = parse_metrics_csv(s2);
  EXPECT_TRUE(std::isnan(t2.rows[0].nlog));
  EXPECT_TRUE(t2.rows[0].frechet.empty());

  std::stringstream bad("task,epoch\n1,1\n");
  EXPECT_THROW(parse_metrics_csv(bad), std::runtime_error);
  std::stringstream short_row(metrics_csv_header(1) + "\n1,1,2\n");
  EXPECT_THROW(parse_metrics_csv(short_row), std::runtime_error);
}
