#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "aldrm/aldist.hpp"
#include "support/oracles.hpp"

using namespace aldrm;

TEST(QuantileLoss, Examples) {
  EXPECT_DOUBLE_EQ(quantile_loss(0.0, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(quantile_loss(4.0, 0.5), 2.0);
  EXPECT_NEAR(quantile_loss(-2.0, 0.3), 1.4, 1e-15);
}

TEST(QuantileLoss, RejectsTauOutsideUnitInterval) {
  EXPECT_THROW(quantile_loss(1.0, 0.0), std::domain_error);
  EXPECT_THROW(quantile_loss(1.0, 1.0), std::domain_error);
  EXPECT_THROW(quantile_loss(1.0, -0.2), std::domain_error);
}

TEST(QuantileLoss, ConvexAndPositivelyHomogeneous) {
  Rng rng(3);
  for (int k = 0; k < 2000; ++k) {
    const double tau = 0.01 + 0.98 * rng.uniform();
    const double a = rng.normal(0, 5), b = rng.normal(0, 5), s = 10.0 * rng.uniform();
    EXPECT_LE(quantile_loss(0.5 * (a + b), tau), 0.5 * (quantile_loss(a, tau) + quantile_loss(b, tau)) + 1e-12);
    EXPECT_NEAR(quantile_loss(s * a, tau), s * quantile_loss(a, tau), 1e-12 * (1 + std::abs(s * a)));
    EXPECT_GE(quantile_loss(a, tau), 0.0);
  }
}

TEST(MixtureCoefficients, Values) {
  const auto m = mixture_coefficients(0.5);
  EXPECT_EQ(m.c1, 0.0);
  EXPECT_DOUBLE_EQ(m.c2, 8.0);
  const auto q = mixture_coefficients(0.25);
  EXPECT_NEAR(q.c1, 0.5 / 0.1875, 1e-14);
  EXPECT_NEAR(q.c2, 2.0 / 0.1875, 1e-14);
  EXPECT_GT(mixture_coefficients(1e-9).c2, 0.0);
}

TEST(Density, Examples) {
  EXPECT_NEAR(pdf(1.0, {0.0, 1.0, 0.5}), 0.25 * std::exp(-0.5), 1e-15);
  EXPECT_DOUBLE_EQ(pdf(0.0, {0.0, 1.0, 0.5}), 0.25);
  for (double s : {0.3, 2.0})
    for (double t : {0.1, 0.7}) EXPECT_NEAR(pdf(4.0, {4.0, s, t}), t * (1 - t) / s, 1e-14);
  EXPECT_NEAR(pdf(1.0, {0.0, 1.0, 0.5}), 0.1516, 1e-4);
}

TEST(Density, LogPdfNoUnderflowFarOut) {
  const ALParams p{0.0, 1.0, 0.5};
  const double lp = log_pdf(1400.0, p);  // |y - mu| / sigma = 1400, rho = 700
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_NEAR(lp, std::log(0.25) - 700.0, 1e-9);
}

TEST(Density, IntegratesToOne) {
  for (ALParams p : {ALParams{0, 1, 0.5}, ALParams{2, 0.3, 0.1}, ALParams{-1, 4, 0.9}}) {
    const double inf = std::numeric_limits<double>::infinity();
    const double total = oracle::integrate([&](double y) { return pdf(y, p); }, -inf, p.mu) +
                         oracle::integrate([&](double y) { return pdf(y, p); }, p.mu, inf);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Density, InvalidParametersThrow) {
  EXPECT_THROW(pdf(0.0, {0.0, 0.0, 0.5}), std::domain_error);
  EXPECT_THROW(pdf(0.0, {0.0, -1.0, 0.5}), std::domain_error);
  EXPECT_THROW(cdf(0.0, {0.0, 1.0, 1.0}), std::domain_error);
  EXPECT_THROW(log_pdf(0.0, {std::nan(""), 1.0, 0.5}), std::domain_error);
  EXPECT_THROW(mean({0.0, 1.0, 0.0}), std::domain_error);
}

TEST(Cdf, Examples) {
  EXPECT_DOUBLE_EQ(cdf(3.0, {3.0, 2.0, 0.3}), 0.3);
  EXPECT_NEAR(cdf(-1.0, {0.0, 1.0, 0.25}), 0.25 * std::exp(-0.75), 1e-15);
  EXPECT_NEAR(cdf(-1.0, {0.0, 1.0, 0.25}), 0.118092, 1e-6);
}

TEST(Cdf, UpperBranchTendsToOne) {
  const ALParams p{0.0, 1.0, 0.3};
  EXPECT_NEAR(cdf(1.0, p), 1.0 - 0.7 * std::exp(-0.3), 1e-15);
  EXPECT_NEAR(cdf(200.0, p), 1.0, 1e-15);
  EXPECT_NEAR(cdf(-300.0, p), 0.0, 1e-15);
}

TEST(Cdf, MatchesIntegralOfDensity) {
  Rng rng(5);
  for (int k = 0; k < 40; ++k) {
    const ALParams p{rng.normal(0, 3), 0.1 + 3 * rng.uniform(), 0.05 + 0.9 * rng.uniform()};
    for (double z : {-6.0, -1.0, -0.1, 0.0, 0.2, 1.5, 8.0}) {
      const double y = p.mu + z * p.sigma;
      EXPECT_NEAR(cdf(y, p), oracle::al_cdf_by_quadrature(y, p.mu, p.sigma, p.tau), 1e-8);
    }
  }
}

TEST(Quantile, Examples) {
  EXPECT_DOUBLE_EQ(quantile(0.3, {1.5, 2.0, 0.3}), 1.5);
  EXPECT_NEAR(quantile(0.9, {0.0, 1.0, 0.5}), -2.0 * std::log(0.2), 1e-14);
  EXPECT_NEAR(quantile(0.9, {0.0, 1.0, 0.5}), 3.21888, 1e-5);
  EXPECT_NEAR(quantile(0.1, {0.0, 1.0, 0.5}), -3.21888, 1e-5);
}

TEST(Quantile, DomainErrors) {
  EXPECT_THROW(quantile(0.0, {0, 1, 0.5}), std::domain_error);
  EXPECT_THROW(quantile(1.0, {0, 1, 0.5}), std::domain_error);
  EXPECT_THROW(quantile(1.2, {0, 1, 0.5}), std::domain_error);
}

TEST(Quantile, InverseOfCdfBothWays) {
  Rng rng(9);
  for (int k = 0; k < 300; ++k) {
    const ALParams p{rng.normal(0, 5), 0.05 + 4 * rng.uniform(), 0.02 + 0.96 * rng.uniform()};
    double prev = -std::numeric_limits<double>::infinity();
    for (int j = 1; j <= 99; ++j) {
      const double prob = j / 100.0;
      const double q = quantile(prob, p);
      EXPECT_NEAR(cdf(q, p), prob, 1e-10);
      EXPECT_GT(q, prev);
      prev = q;
    }
    for (double z : {-5.0, -0.5, 0.0, 0.7, 4.0}) {
      const double y = p.mu + z * p.sigma;
      EXPECT_NEAR(quantile(cdf(y, p), p), y, 1e-10 * (1.0 + std::abs(y)) * 10.0);
    }
  }
}

TEST(Moments, Examples) {
  EXPECT_DOUBLE_EQ(mean({2.0, 1.3, 0.5}), 2.0);
  EXPECT_DOUBLE_EQ(variance({0.0, 1.0, 0.5}), 8.0);
  EXPECT_NEAR(mean({0.0, 1.0, 0.25}), 8.0 / 3.0, 1e-14);
}

TEST(Moments, MatchQuadrature) {
  const ALParams p{0.7, 1.3, 0.2};
  auto f1 = [&](double y) { return y * pdf(y, p); };
  auto f2 = [&](double y) { return (y - mean(p)) * (y - mean(p)) * pdf(y, p); };
  const double lo = p.mu - 60 * p.sigma, hi = p.mu + 200 * p.sigma;
  EXPECT_NEAR(oracle::integrate(f1, lo, p.mu) + oracle::integrate(f1, p.mu, hi), mean(p), 1e-8);
  EXPECT_NEAR(oracle::integrate(f2, lo, p.mu) + oracle::integrate(f2, p.mu, hi), variance(p), 1e-6);
}

namespace {
std::vector<double> draws(bool mixture, const ALParams& p, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = mixture ? sample_mixture(p, rng) : sample_inverse(p, rng);
  return out;
}
}  // namespace

TEST(Samplers, MixtureKolmogorovSmirnov) {
  for (ALParams p : {ALParams{0, 1, 0.5}, ALParams{0, 1, 0.25}}) {
    auto x = draws(true, p, 1000000, 17);
    std::sort(x.begin(), x.end());
    EXPECT_LT(oracle::ks_distance(x, [&](double y) { return cdf(y, p); }), 0.005);
  }
}

TEST(Samplers, MixtureMeanAtQuarter) {
  const ALParams p{0, 1, 0.25};
  const auto x = draws(true, p, 1000000, 21);
  const double se = std::sqrt(variance(p) / x.size());
  EXPECT_NEAR(oracle::sample_mean(x), 8.0 / 3.0, 3 * se);
}

TEST(Samplers, BothSamplersMatchMoments) {
  const ALParams p{1.0, 0.5, 0.8};
  for (bool mix : {false, true}) {
    const auto x = draws(mix, p, 1000000, mix ? 4 : 5);
    const double n = static_cast<double>(x.size());
    const double m = oracle::sample_mean(x), v = oracle::sample_variance(x);
    double m4 = 0;
    for (double y : x) m4 += std::pow(y - m, 4);
    m4 /= n;
    EXPECT_NEAR(m, mean(p), 4 * std::sqrt(variance(p) / n));
    EXPECT_NEAR(v, variance(p), 4 * std::sqrt((m4 - v * v) / n));
  }
}

TEST(Samplers, InverseAndMixtureIndistinguishable) {
  const ALParams p{-2.0, 1.5, 0.15};
  auto a = draws(false, p, 1000000, 31);
  auto b = draws(true, p, 1000000, 32);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_LT(oracle::ks_two_sample(a, b), 0.005);
}

TEST(Samplers, Deterministic) {
  const ALParams p{0, 2, 0.3};
  EXPECT_EQ(draws(true, p, 1000, 8), draws(true, p, 1000, 8));
  EXPECT_EQ(draws(false, p, 1000, 8), draws(false, p, 1000, 8));
  EXPECT_NE(draws(true, p, 1000, 8), draws(true, p, 1000, 9));
}

TEST(Samplers, VarianceReadingOfMixtureIsTheConsistentOne) {
  // Reading c2 sigma w as a standard deviation would give the wrong variance.
  const ALParams p{0, 2, 0.3};
  const auto mc = mixture_coefficients(p.tau);
  Rng rng(12);
  std::vector<double> x(400000);
  for (auto& y : x) {
    const double w = rng.exponential(p.sigma);
    y = p.mu + mc.c1 * w + mc.c2 * p.sigma * w * rng.normal();
  }
  const double v = oracle::sample_variance(x);
  EXPECT_GT(std::abs(v - variance(p)) / variance(p), 0.5);
}
