#pragma once

// Asymmetric Laplace distribution AL(mu, sigma, tau): density, CDF,
// quantile function, moments and two exact samplers.

#include <cmath>
#include <stdexcept>
#include <string>

#include "aldrm/random.hpp"

namespace aldrm {

struct ALParams {
  double mu = 0.0;
  double sigma = 1.0;
  double tau = 0.5;
};

inline void validate(const ALParams& p) {
  if (!std::isfinite(p.mu)) throw std::domain_error("AL: mu must be finite");
  if (!(p.sigma > 0.0) || !std::isfinite(p.sigma))
    throw std::domain_error("AL: sigma must be positive and finite");
  if (!(p.tau > 0.0 && p.tau < 1.0)) throw std::domain_error("AL: tau must lie in (0, 1)");
}

inline void validate_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("tau must lie in (0, 1)");
}

/// Coefficients of the normal-exponential mixture:
/// Y | W=w ~ N(mu + c1 w, c2 sigma w), W ~ Exp(mean sigma).
struct MixtureCoefficients {
  double c1;
  double c2;
};

inline MixtureCoefficients mixture_coefficients(double tau) {
  validate_tau(tau);
  const double t1 = tau * (1.0 - tau);
  return {(1.0 - 2.0 * tau) / t1, 2.0 / t1};
}

/// Check function rho_tau(v) = v (tau - 1{v < 0}).
inline double quantile_loss(double v, double tau) {
  validate_tau(tau);
  return v < 0.0 ? (tau - 1.0) * v : tau * v;
}

namespace detail {
// Unchecked kernels; callers guarantee valid parameters.
inline double al_log_pdf(double y, double mu, double sigma, double tau) {
  const double v = (y - mu) / sigma;
  const double rho = v < 0.0 ? (tau - 1.0) * v : tau * v;
  return std::log(tau) + std::log1p(-tau) - std::log(sigma) - rho;
}

inline double al_quantile(double prob, double mu, double sigma, double tau) {
  if (prob <= tau) return mu + sigma / (1.0 - tau) * std::log(prob / tau);
  return mu - sigma / tau * std::log((1.0 - prob) / (1.0 - tau));
}

inline double al_cdf(double y, double mu, double sigma, double tau) {
  if (y <= mu) return tau * std::exp((1.0 - tau) / sigma * (y - mu));
  return 1.0 - (1.0 - tau) * std::exp(-tau / sigma * (y - mu));
}
}  // namespace detail

inline double log_pdf(double y, const ALParams& p) {
  validate(p);
  return detail::al_log_pdf(y, p.mu, p.sigma, p.tau);
}

inline double pdf(double y, const ALParams& p) { return std::exp(log_pdf(y, p)); }

/// Lower branch tau exp((1-tau)(y-mu)/sigma); upper branch
/// 1 - (1-tau) exp(-tau (y-mu)/sigma).
inline double cdf(double y, const ALParams& p) {
  validate(p);
  return detail::al_cdf(y, p.mu, p.sigma, p.tau);
}

inline double quantile(double prob, const ALParams& p) {
  validate(p);
  if (!(prob > 0.0 && prob < 1.0)) throw std::domain_error("quantile: prob must lie in (0, 1)");
  return detail::al_quantile(prob, p.mu, p.sigma, p.tau);
}

inline double mean(const ALParams& p) {
  validate(p);
  return p.mu + p.sigma * (1.0 - 2.0 * p.tau) / (p.tau * (1.0 - p.tau));
}

inline double variance(const ALParams& p) {
  validate(p);
  const double t = p.tau, u = 1.0 - p.tau;
  return p.sigma * p.sigma * (t * t + u * u) / (t * t * u * u);
}

inline double sample_inverse(const ALParams& p, Rng& rng) {
  validate(p);
  return detail::al_quantile(rng.uniform(), p.mu, p.sigma, p.tau);
}

inline double sample_mixture(const ALParams& p, Rng& rng) {
  const auto [c1, c2] = mixture_coefficients(p.tau);
  validate(p);
  const double w = rng.exponential(p.sigma);
  return p.mu + c1 * w + std::sqrt(c2 * p.sigma * w) * rng.normal();
}

}  // namespace aldrm
