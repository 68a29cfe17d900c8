#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace aldrm {

/// Seed mixer (splitmix64). Used to derive independent streams from a
/// (seed, index) pair so results never depend on scheduling order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Random source owned by exactly one chain / replication.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed = 1) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential(double mean) { return -mean * std::log(uniform()); }

  /// Gamma with the given shape and unit rate.
  double gamma(double shape) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(engine_);
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  bool bernoulli(double p) { return uniform() < p; }

  engine_type& engine() { return engine_; }

 private:
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Inverse Gaussian draw with mean `mean` and shape `shape`
/// (Michael, Schucany and Haas transformation; the small root is formed
/// without cancellation so huge means stay accurate).
inline double sample_inverse_gaussian(double mean, double shape, Rng& rng) {
  const double nu = rng.normal();
  const double y = nu * nu;
  const double r = mean * y / (2.0 * shape);
  const double x = mean / (1.0 + r + std::sqrt(r * (r + 2.0)));
  if (rng.uniform() * (mean + x) <= mean) return x;
  return mean * mean / x;
}

/// Generalized inverse Gaussian with order 1/2, density proportional to
/// w^{-1/2} exp(-(chi / w + psi * w) / 2). Uses the fact that 1/W is
/// inverse Gaussian with mean sqrt(psi / chi) and shape psi; chi == 0
/// degenerates to Gamma(1/2, rate psi / 2).
inline double sample_gig_half(double chi, double psi, Rng& rng) {
  if (!(psi > 0.0)) throw std::domain_error("sample_gig_half: psi must be > 0");
  if (chi < 1e-300) return rng.gamma(0.5) * 2.0 / psi;
  const double mean = std::sqrt(psi / chi);
  return 1.0 / sample_inverse_gaussian(mean, psi, rng);
}

/// Unnormalized log density of GIG(1/2, chi, psi).
inline double gig_half_log_kernel(double w, double chi, double psi) {
  return -0.5 * std::log(w) - 0.5 * (chi / w + psi * w);
}

/// Draw from N(0, S) given the lower Cholesky factor of S.
inline Eigen::VectorXd sample_mvn_chol(const Eigen::MatrixXd& lower, Rng& rng) {
  Eigen::VectorXd z(lower.rows());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
  return lower.triangularView<Eigen::Lower>() * z;
}

/// Draw from N(P^{-1} h, P^{-1}) given the precision P and the linear term h.
/// Returns false when P is not positive definite.
inline bool sample_mvn_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& h,
                                 Rng& rng, Eigen::VectorXd& out) {
  const Eigen::Index d = precision.rows();
  if (d == 0) {
    out.resize(0);
    return true;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) return false;
  Eigen::VectorXd mean = llt.solve(h);
  Eigen::VectorXd z(d);
  for (Eigen::Index k = 0; k < d; ++k) z[k] = rng.normal();
  out = mean + llt.matrixU().solve(z);
  return true;
}

/// Wishart(dof, scale) via the Bartlett decomposition.
inline Eigen::MatrixXd sample_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng) {
  const Eigen::Index p = scale.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw std::runtime_error("sample_wishart: scale not SPD");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  Eigen::MatrixXd la = llt.matrixL() * a;
  return la * la.transpose();
}

/// Inverse-Wishart(dof, scale): mean scale / (dof - p - 1).
inline Eigen::MatrixXd sample_inverse_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng) {
  const Eigen::Index p = scale.rows();
  if (p == 0) return Eigen::MatrixXd(0, 0);
  if (dof <= static_cast<double>(p) - 1.0)
    throw std::domain_error("sample_inverse_wishart: dof must exceed dimension - 1");
  Eigen::MatrixXd scale_inv = scale.llt().solve(Eigen::MatrixXd::Identity(p, p));
  scale_inv = 0.5 * (scale_inv + scale_inv.transpose());
  Eigen::MatrixXd w = sample_wishart(dof, scale_inv, rng);
  Eigen::MatrixXd s = w.llt().solve(Eigen::MatrixXd::Identity(p, p));
  return 0.5 * (s + s.transpose());
}

/// Multivariate log-gamma function.
inline double log_multigamma(double a, int p) {
  double out = 0.25 * p * (p - 1) * std::log(M_PI);
  for (int j = 0; j < p; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

/// Log density of the inverse-Wishart distribution at `sigma`.
inline double inverse_wishart_log_pdf(const Eigen::MatrixXd& sigma, double dof,
                                      const Eigen::MatrixXd& scale) {
  const int p = static_cast<int>(sigma.rows());
  if (p == 0) return 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double logdet_sigma = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  Eigen::LLT<Eigen::MatrixXd> llt_s(scale);
  const double logdet_scale = 2.0 * llt_s.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double trace = (scale * llt.solve(Eigen::MatrixXd::Identity(p, p))).trace();
  return 0.5 * dof * logdet_scale - 0.5 * dof * p * std::log(2.0) - log_multigamma(0.5 * dof, p) -
         0.5 * (dof + p + 1.0) * logdet_sigma - 0.5 * trace;
}

/// Log density of N(0, sigma) at x.
inline double mvn_log_pdf_zero_mean(const Eigen::VectorXd& x, const Eigen::MatrixXd& sigma) {
  const Eigen::Index p = x.size();
  if (p == 0) return 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  Eigen::VectorXd z = llt.matrixL().solve(x);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(p) * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

}  // namespace aldrm
