#pragma once

// Metropolis-within-Gibbs sampler for the AL mixed models (normal-exponential
// augmentation) and the Gaussian location-scale mixed model.
//
// Sweep order (AL, augmented target):
//   w -> (beta, {b_i}) -> (xi, {u_i}) -> shift -> (alpha, {a_i}) -> shift -> covariances
// Sweep order (AL, marginal target, partially collapsed):
//   (xi, {u_i}) -> shift -> (alpha, {a_i}) -> shift -> w -> (beta, {b_i}) -> covariances
// Sweep order (Gaussian):
//   (beta, {b_i}) -> (xi, {u_i}) -> shift -> covariances
//
// (beta, {b_i}) is a joint draw: beta with the location effects integrated
// out, then each b_i given beta. "shift" is an exact Gibbs move along the
// directions of (coefficients, random effects) space that leave the linear
// predictor unchanged.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "aldrm/aldist.hpp"
#include "aldrm/modelspec.hpp"
#include "aldrm/random.hpp"

namespace aldrm {

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vague priors: N(mean, variance * I) for each coefficient vector and
/// IW(q + dof_offset, scale * I) for each covariance matrix.
struct Priors {
  std::array<double, 3> coef_mean{0.0, 0.0, 0.0};
  std::array<double, 3> coef_variance{100.0, 100.0, 100.0};
  std::array<double, 3> iw_dof_offset{1.0, 1.0, 1.0};
  std::array<double, 3> iw_scale{1.0, 1.0, 1.0};

  double iw_dof(Component c, Eigen::Index q) const {
    return static_cast<double>(q) + iw_dof_offset[index_of(c)];
  }
  Eigen::MatrixXd iw_scale_matrix(Component c, Eigen::Index q) const {
    return iw_scale[index_of(c)] * Eigen::MatrixXd::Identity(q, q);
  }
};

/// Likelihood used by the scale/skewness Metropolis blocks of the AL family.
enum class MHTarget {
  Augmented,  // conditional normal x exponential, w held fixed
  Marginal,   // AL density with w integrated out; w redrawn afterwards
};

struct SamplerConfig {
  int n_chains = 3;
  long n_iter = 40000;
  long burn_in = 10000;
  long thin = 10;
  std::uint64_t seed = 1;
  Priors priors;
  MHTarget mh_target = MHTarget::Augmented;
  bool adapt = true;  // Robbins-Monro step tuning, burn-in only
  bool retain_effects = false;
  bool parallel = true;

  void validate() const {
    if (n_chains < 1) throw std::invalid_argument("n_chains must be >= 1");
    if (thin < 1) throw std::invalid_argument("thin must be >= 1");
    if (burn_in < 0 || burn_in >= n_iter) throw std::invalid_argument("need 0 <= burn_in < n_iter");
  }

  long n_keep() const { return (n_iter - burn_in) / thin; }
};

/// Post-burn-in acceptance rates of the Metropolis blocks.
struct AcceptanceRates {
  std::array<double, 3> coef{0, 0, 0};
  std::array<double, 3> effects{0, 0, 0};
};

struct PosteriorSample {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;  // one (n_keep x n_params) per chain
  std::vector<RandomEffects> effect_means;  // per chain, over retained draws
  std::vector<std::vector<RandomEffects>> effect_draws;  // optional
  std::vector<AcceptanceRates> acceptance;
  std::vector<double> seconds;

  std::size_t n_chains() const { return chains.size(); }
  Eigen::Index n_keep() const { return chains.empty() ? 0 : chains.front().rows(); }

  /// Random-effect posterior means pooled over chains.
  RandomEffects pooled_effect_means() const {
    RandomEffects out = effect_means.front();
    for (std::size_t c = 1; c < effect_means.size(); ++c)
      for (int k = 0; k < 3; ++k) out.values[k] += effect_means[c].values[k];
    for (int k = 0; k < 3; ++k) out.values[k] /= static_cast<double>(effect_means.size());
    return out;
  }

  /// Column of parameter `name` across all chains, chain-major.
  std::vector<double> pooled(std::size_t col) const {
    std::vector<double> out;
    for (const auto& m : chains)
      for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m(r, static_cast<Eigen::Index>(col)));
    return out;
  }
};

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Augmented AL log-likelihood of one observation: N(y; mu + c1 w, c2 sigma w)
/// times Exp(w; mean sigma). `eta_scale` is the clamped log scale.
inline double augmented_loglik(double y, double mu, double eta_scale, double tau, double w) {
  const double t1 = tau * (1.0 - tau);
  const double c1 = (1.0 - 2.0 * tau) / t1;
  const double c2 = 2.0 / t1;
  const double inv_sigma = std::exp(-eta_scale);
  const double r = y - mu - c1 * w;
  return -0.5 * (kLog2Pi + std::log(c2 * w) + eta_scale) - 0.5 * r * r * inv_sigma / (c2 * w) -
         eta_scale - w * inv_sigma;
}

/// AL log density with log scale `eta_scale`.
inline double marginal_loglik(double y, double mu, double eta_scale, double tau) {
  const double v = (y - mu) * std::exp(-eta_scale);
  const double rho = v < 0.0 ? (tau - 1.0) * v : tau * v;
  return std::log(tau) + std::log1p(-tau) - eta_scale - rho;
}

/// Gaussian log density with log variance `eta_scale`.
inline double gaussian_loglik(double y, double mu, double eta_scale) {
  const double r = y - mu;
  return -0.5 * (kLog2Pi + eta_scale) - 0.5 * r * r * std::exp(-eta_scale);
}

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m) {
  const Eigen::Index q = m.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw SamplerError("matrix not positive definite");
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(q, q));
  return 0.5 * (inv + inv.transpose());
}

inline Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw SamplerError("Cholesky failure");
  return llt.matrixL();
}

}  // namespace detail

/// Full MCMC state of one chain.
struct ChainState {
  ParameterVector theta;
  RandomEffects effects;
  Eigen::VectorXd w;  // latent weights, AL family only
  std::array<double, 3> coef_log_step{0, 0, 0};
  std::array<Eigen::VectorXd, 3> effect_log_step;
  long iteration = 0;
};

/// One Markov chain over an immutable design. The design is held by
/// pointer; callers that mutate the response between sweeps (simulation
/// based calibration) own that contract and must call refresh().
class Chain {
 public:
  Chain(const DesignBundle& design, const ModelSpec& spec, const SamplerConfig& cfg,
        std::uint64_t seed)
      : d_(&design), spec_(spec), cfg_(cfg), rng_(seed) {
    spec_.validate();
    const auto n = d_->n_subjects();
    for (Component c : kComponents) {
      const int k = index_of(c);
      const auto& part = d_->parts[k];
      ztz_[k].resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto z = part.random.middleRows(d_->start[i], d_->count[i]);
        ztz_[k][i] = z.transpose() * z;
      }
      prior_prec_[k] = Eigen::MatrixXd::Identity(d_->p(c), d_->p(c)) / cfg_.priors.coef_variance[k];
      build_shift_map(c);
    }
    initialize();
  }

  const ChainState& state() const { return s_; }
  ChainState& mutable_state() { return s_; }
  Rng& rng() { return rng_; }
  const ModelSpec& spec() const { return spec_; }
  const DesignBundle& design() const { return *d_; }
  const SamplerConfig& config() const { return cfg_; }

  /// Recomputes every cached per-observation quantity after external edits
  /// to the state or the response.
  void refresh() {
    for (Component c : kComponents) refresh_component(c);
  }

  /// One full sweep. Adaptation is active while iteration < burn_in.
  void sweep() {
    adapting_ = cfg_.adapt && s_.iteration < cfg_.burn_in;
    try {
      if (spec_.family == Family::Gaussian) {
        update_location();
        update_mh_component(Component::Scale);
        update_shift(Component::Scale);
        update_covariances();
      } else if (cfg_.mh_target == MHTarget::Marginal) {
        update_mh_component(Component::Scale);
        update_shift(Component::Scale);
        if (spec_.skewness_modeled()) {
          update_mh_component(Component::Skewness);
          update_shift(Component::Skewness);
        }
        update_w();
        update_location();
        update_covariances();
      } else {
        update_w();
        update_location();
        update_mh_component(Component::Scale);
        update_shift(Component::Scale);
        if (spec_.skewness_modeled()) {
          update_mh_component(Component::Skewness);
          update_shift(Component::Skewness);
        }
        update_covariances();
      }
    } catch (const SamplerError& e) {
      throw SamplerError("iteration " + std::to_string(s_.iteration) + ": " + e.what());
    }
    ++s_.iteration;
  }

  // ---- individual blocks (public for conditional-distribution tests) ----

  /// Exact Gibbs draw of every latent weight from GIG(1/2, chi, psi) with
  /// chi = (y - mu)^2 / (c2 sigma), psi = c1^2 / (c2 sigma) + 2 / sigma.
  void update_w() {
    const auto& y = d_->y;
    for (Eigen::Index o = 0; o < y.size(); ++o) {
      const double r = y[o] - mu_[o];
      const double chi = r * r * inv_sigma_[o] / c2_[o];
      const double psi = (c1_[o] * c1_[o] / c2_[o] + 2.0) * inv_sigma_[o];
      s_.w[o] = sample_gig_half(chi, psi, rng_);
    }
  }

  /// Exact Gibbs draw of beta given the random effects.
  void update_beta() {
    constexpr int k = 0;
    const auto& X = d_->parts[k].fixed;
    const Eigen::Index p = X.cols();
    if (p == 0) return;
    working_response();
    Eigen::VectorXd resp = resp_ - eta_rand_[k];
    Eigen::MatrixXd prec = prior_prec_[k] + X.transpose() * weight_.asDiagonal() * X;
    Eigen::VectorXd h = X.transpose() * (weight_.array() * resp.array()).matrix() + prior_linear(k);
    Eigen::VectorXd draw;
    if (!sample_mvn_precision(prec, h, rng_, draw)) throw SamplerError("Cholesky failure in beta update");
    s_.theta.coef[k] = draw;
    eta_fixed_[k] = X * draw;
    mu_ = eta_fixed_[k] + eta_rand_[k];
  }

  /// Exact Gibbs draw of b_i given beta.
  void update_b(std::size_t i) {
    constexpr int k = 0;
    const auto& Z = d_->parts[k].random;
    if (Z.cols() == 0) return;
    working_response();
    const Eigen::MatrixXd sigma_inv = detail::spd_inverse(s_.theta.cov[k]);
    draw_b(i, sigma_inv);
  }

  /// Joint draw of (beta, b_1..b_n): beta from its conditional with the
  /// location random effects integrated out, then each b_i given beta.
  void update_location() {
    constexpr int k = 0;
    const auto& X = d_->parts[k].fixed;
    const auto& Z = d_->parts[k].random;
    const Eigen::Index p = X.cols(), q = Z.cols();
    if (q == 0) {
      update_beta();
      return;
    }
    if (p == 0) {
      working_response();
      const Eigen::MatrixXd sigma_inv = detail::spd_inverse(s_.theta.cov[k]);
      for (std::size_t i = 0; i < d_->n_subjects(); ++i) draw_b(i, sigma_inv);
      return;
    }
    working_response();
    const Eigen::MatrixXd sigma_inv = detail::spd_inverse(s_.theta.cov[k]);
    Eigen::MatrixXd prec = prior_prec_[k];
    Eigen::VectorXd h = prior_linear(k);
    subject_llt_.resize(d_->n_subjects());
    for (std::size_t i = 0; i < d_->n_subjects(); ++i) {
      const Eigen::Index a = d_->start[i], m = d_->count[i];
      const auto Xi = X.middleRows(a, m);
      const auto Zi = Z.middleRows(a, m);
      const auto wi = weight_.segment(a, m);
      const Eigen::VectorXd wr = (wi.array() * resp_.segment(a, m).array()).matrix();
      const Eigen::MatrixXd wz = wi.asDiagonal() * Zi;
      auto& llt = subject_llt_[i];
      llt.compute(sigma_inv + Zi.transpose() * wz);
      if (llt.info() != Eigen::Success)
        throw SamplerError("Cholesky failure in location update of subject " + d_->subject_ids[i]);
      const Eigen::MatrixXd xwz = Xi.transpose() * wz;
      prec.noalias() += Xi.transpose() * wi.asDiagonal() * Xi - xwz * llt.solve(xwz.transpose());
      h.noalias() += Xi.transpose() * wr - xwz * llt.solve(Zi.transpose() * wr);
    }
    prec = 0.5 * (prec + prec.transpose());
    Eigen::VectorXd beta;
    if (!sample_mvn_precision(prec, h, rng_, beta)) throw SamplerError("Cholesky failure in beta update");
    s_.theta.coef[k] = beta;
    eta_fixed_[k] = X * beta;
    Eigen::VectorXd z(q), draw;
    for (std::size_t i = 0; i < d_->n_subjects(); ++i) {
      const Eigen::Index a = d_->start[i], m = d_->count[i];
      const auto Zi = Z.middleRows(a, m);
      const Eigen::VectorXd r = resp_.segment(a, m) - eta_fixed_[k].segment(a, m);
      const Eigen::VectorXd hb = Zi.transpose() * (weight_.segment(a, m).array() * r.array()).matrix();
      const auto& llt = subject_llt_[i];
      for (Eigen::Index j = 0; j < q; ++j) z[j] = rng_.normal();
      draw = llt.solve(hb) + llt.matrixU().solve(z);
      s_.effects.values[k].row(static_cast<Eigen::Index>(i)) = draw.transpose();
      eta_rand_[k].segment(a, m) = Zi * draw;
    }
    mu_ = eta_fixed_[k] + eta_rand_[k];
  }

  /// Random-walk Metropolis on the coefficient block, then on each
  /// subject's effect block, of the scale or skewness component.
  void update_mh_component(Component c) {
    const int k = index_of(c);
    const auto& X = d_->parts[k].fixed;
    const auto& Z = d_->parts[k].random;
    const Eigen::Index p = X.cols(), q = Z.cols();
    const Eigen::Index n_obs = d_->n_obs();
    prepare_mh(c);

    if (p > 0) {
      if (coef_chol_[k].rows() != p) {
        Eigen::MatrixXd info = info_factor(c) * (X.transpose() * X) + prior_prec_[k];
        coef_chol_[k] = detail::chol_lower(detail::spd_inverse(info));
      }
      const double step = std::exp(s_.coef_log_step[k]);
      const Eigen::VectorXd prop = s_.theta.coef[k] + step * sample_mvn_chol(coef_chol_[k], rng_);
      prop_fixed_ = X * prop;
      prop_ll_.resize(n_obs);
      double delta = 0.0;
      for (Eigen::Index o = 0; o < n_obs; ++o) {
        prop_ll_[o] = mh_loglik(c, o, prop_fixed_[o] + eta_rand_[k][o]);
        delta += prop_ll_[o] - cur_ll_[o];
      }
      const Eigen::VectorXd m0 = Eigen::VectorXd::Constant(p, cfg_.priors.coef_mean[k]);
      const double v0 = cfg_.priors.coef_variance[k];
      delta += -0.5 * ((prop - m0).squaredNorm() - (s_.theta.coef[k] - m0).squaredNorm()) / v0;
      const double acc = std::isfinite(delta) ? std::min(1.0, std::exp(delta)) : 0.0;
      if (rng_.uniform() < acc) {
        s_.theta.coef[k] = prop;
        eta_fixed_[k].swap(prop_fixed_);
        cur_ll_.swap(prop_ll_);
      }
      record(coef_stats_[k], acc);
      if (adapting_) s_.coef_log_step[k] += gain() * (acc - target_rate(p));
    }

    if (q > 0) {
      const Eigen::MatrixXd sigma_inv = detail::spd_inverse(s_.theta.cov[k]);
      const double fac = info_factor(c);
      Eigen::VectorXd new_rand, new_ll;
      for (std::size_t i = 0; i < d_->n_subjects(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const Eigen::Index a = d_->start[i], m = d_->count[i];
        const auto Zi = Z.middleRows(a, m);
        const Eigen::MatrixXd L =
            detail::chol_lower(detail::spd_inverse(fac * ztz_[k][i] + sigma_inv));
        const Eigen::VectorXd cur = s_.effects.values[k].row(ii).transpose();
        const double step = std::exp(s_.effect_log_step[k][ii]);
        const Eigen::VectorXd prop = cur + step * sample_mvn_chol(L, rng_);
        new_rand = Zi * prop;
        new_ll.resize(m);
        double delta = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
          const Eigen::Index o = a + j;
          new_ll[j] = mh_loglik(c, o, eta_fixed_[k][o] + new_rand[j]);
          delta += new_ll[j] - cur_ll_[o];
        }
        delta += -0.5 * (prop.dot(sigma_inv * prop) - cur.dot(sigma_inv * cur));
        const double acc = std::isfinite(delta) ? std::min(1.0, std::exp(delta)) : 0.0;
        if (rng_.uniform() < acc) {
          s_.effects.values[k].row(ii) = prop.transpose();
          eta_rand_[k].segment(a, m) = new_rand;
          cur_ll_.segment(a, m) = new_ll;
        }
        record(effect_stats_[k], acc);
        if (adapting_) s_.effect_log_step[k][ii] += gain() * (acc - target_rate(q));
      }
    }
    refresh_derived(c);
  }

  /// Exact Gibbs move along the directions that leave every linear
  /// predictor unchanged: fixed coefficients shifted by delta and the
  /// matching random effects by -F_i delta. Only the coefficient prior and
  /// the random-effect densities depend on delta, so its conditional is
  /// Gaussian.
  void update_shift(Component c) {
    const int k = index_of(c);
    const auto& sh = shift_[k];
    const auto ns = static_cast<Eigen::Index>(sh.coef_index.size());
    if (ns == 0) return;
    const Eigen::MatrixXd sigma_inv = detail::spd_inverse(s_.theta.cov[k]);
    const double v0 = cfg_.priors.coef_variance[k];
    const double m0 = cfg_.priors.coef_mean[k];
    Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(ns, ns) / v0;
    Eigen::VectorXd h(ns);
    for (Eigen::Index s = 0; s < ns; ++s) h[s] = -(s_.theta.coef[k][sh.coef_index[s]] - m0) / v0;
    for (std::size_t i = 0; i < d_->n_subjects(); ++i) {
      const Eigen::MatrixXd sf = sigma_inv * sh.map[i];
      prec.noalias() += sh.map[i].transpose() * sf;
      h.noalias() += sf.transpose() * s_.effects.values[k].row(static_cast<Eigen::Index>(i)).transpose();
    }
    Eigen::VectorXd delta;
    if (!sample_mvn_precision(prec, h, rng_, delta)) throw SamplerError("Cholesky failure in shift update");
    for (Eigen::Index s = 0; s < ns; ++s) s_.theta.coef[k][sh.coef_index[s]] += delta[s];
    for (std::size_t i = 0; i < d_->n_subjects(); ++i)
      s_.effects.values[k].row(static_cast<Eigen::Index>(i)) -= (sh.map[i] * delta).transpose();
    refresh_component(c);
  }

  /// Exact inverse-Wishart draw of each covariance matrix.
  void update_covariances() {
    for (Component c : kComponents) {
      if (!spec_.active(c)) continue;
      const int k = index_of(c);
      const Eigen::Index q = d_->q(c);
      if (q == 0) continue;
      const auto& e = s_.effects.values[k];
      Eigen::MatrixXd scale = cfg_.priors.iw_scale_matrix(c, q) + e.transpose() * e;
      const double dof = cfg_.priors.iw_dof(c, q) + static_cast<double>(e.rows());
      try {
        s_.theta.cov[k] = sample_inverse_wishart(dof, scale, rng_);
      } catch (const std::exception& ex) {
        throw SamplerError(std::string("covariance update: ") + ex.what());
      }
    }
  }

  /// Augmented log posterior (AL) or the Gaussian posterior of the current
  /// state, up to the normalizing constant; -inf outside the support.
  double log_posterior() const {
    double lp = 0.0;
    const auto& y = d_->y;
    for (Eigen::Index o = 0; o < y.size(); ++o) {
      if (spec_.family == Family::Gaussian) {
        lp += detail::gaussian_loglik(y[o], mu_[o], es_[o]);
      } else {
        if (!(s_.w[o] > 0.0)) return -std::numeric_limits<double>::infinity();
        lp += detail::augmented_loglik(y[o], mu_[o], es_[o], tau_[o], s_.w[o]);
      }
    }
    for (Component c : kComponents) {
      if (!spec_.active(c)) continue;
      const int k = index_of(c);
      const Eigen::Index p = d_->p(c), q = d_->q(c);
      const double v0 = cfg_.priors.coef_variance[k];
      const Eigen::VectorXd dev =
          s_.theta.coef[k] - Eigen::VectorXd::Constant(p, cfg_.priors.coef_mean[k]);
      lp += -0.5 * (static_cast<double>(p) * (detail::kLog2Pi + std::log(v0)) + dev.squaredNorm() / v0);
      if (q > 0) {
        const auto& sig = s_.theta.cov[k];
        for (std::size_t i = 0; i < d_->n_subjects(); ++i)
          lp += mvn_log_pdf_zero_mean(
              s_.effects.values[k].row(static_cast<Eigen::Index>(i)).transpose(), sig);
        lp += inverse_wishart_log_pdf(sig, cfg_.priors.iw_dof(c, q),
                                      cfg_.priors.iw_scale_matrix(c, q));
      }
    }
    return std::isnan(lp) ? -std::numeric_limits<double>::infinity() : lp;
  }

  double mu_at(Eigen::Index o) const { return mu_[o]; }
  /// Clamped scale linear predictor at observation o.
  double eta_scale(Eigen::Index o) const { return es_[o]; }
  double tau_at(Eigen::Index o) const { return tau_[o]; }

  /// Mean acceptance probabilities accumulated after burn-in.
  AcceptanceRates acceptance() const {
    AcceptanceRates r;
    for (int k = 0; k < 3; ++k) {
      r.coef[k] = coef_stats_[k].n ? coef_stats_[k].sum / coef_stats_[k].n : 0.0;
      r.effects[k] = effect_stats_[k].n ? effect_stats_[k].sum / effect_stats_[k].n : 0.0;
    }
    return r;
  }
  void reset_acceptance() {
    coef_stats_ = {};
    effect_stats_ = {};
  }

 private:
  struct Stat {
    double sum = 0.0;
    double n = 0.0;
  };

  /// coef_index[s]: fixed coefficient moved by delta_s; map[i]: q x ns
  /// matrix F_i so that effect_i moves by -F_i delta.
  struct ShiftMap {
    std::vector<Eigen::Index> coef_index;
    std::vector<Eigen::MatrixXd> map;
  };

  // A fixed term is shiftable when the same term is a random term, or when
  // it is a subject-constant covariate and a random intercept exists.
  void build_shift_map(Component c) {
    const int k = index_of(c);
    auto& sh = shift_[k];
    if (!spec_.active(c)) return;
    const auto& pred = spec_.predictor(c);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> same;  // (fixed, random)
    std::vector<Eigen::Index> covs;
    Eigen::Index intercept = -1;
    for (std::size_t j = 0; j < pred.random_terms.size(); ++j)
      if (pred.random_terms[j].kind == Term::Kind::Intercept) intercept = static_cast<Eigen::Index>(j);
    for (std::size_t f = 0; f < pred.fixed_terms.size(); ++f) {
      const auto& t = pred.fixed_terms[f];
      auto it = std::find(pred.random_terms.begin(), pred.random_terms.end(), t);
      if (it != pred.random_terms.end())
        same.emplace_back(static_cast<Eigen::Index>(f),
                          static_cast<Eigen::Index>(it - pred.random_terms.begin()));
      else if (t.kind == Term::Kind::Covariate && intercept >= 0)
        covs.push_back(static_cast<Eigen::Index>(f));
    }
    const Eigen::Index q = d_->q(c);
    const auto ns = static_cast<Eigen::Index>(same.size() + covs.size());
    for (auto [f, r] : same) sh.coef_index.push_back(f);
    for (auto f : covs) sh.coef_index.push_back(f);
    if (ns == 0) return;
    for (std::size_t i = 0; i < d_->n_subjects(); ++i) {
      Eigen::MatrixXd F = Eigen::MatrixXd::Zero(q, ns);
      Eigen::Index s = 0;
      for (auto [f, r] : same) F(r, s++) = 1.0;
      for (auto f : covs) F(intercept, s++) = d_->parts[k].fixed(d_->start[i], f);
      sh.map.push_back(std::move(F));
    }
  }

  void initialize() {
    const auto& y = d_->y;
    const Eigen::Index n_obs = y.size();
    s_.theta = ParameterVector::zeros(*d_);
    s_.effects = RandomEffects::zeros(*d_);
    for (Component c : kComponents) {
      const int k = index_of(c);
      s_.theta.cov[k] = 0.1 * Eigen::MatrixXd::Identity(d_->q(c), d_->q(c));
      s_.coef_log_step[k] = std::log(2.38 / std::sqrt(std::max<double>(1.0, double(d_->p(c)))));
      s_.effect_log_step[k] = Eigen::VectorXd::Constant(
          static_cast<Eigen::Index>(d_->n_subjects()),
          std::log(2.38 / std::sqrt(std::max<double>(1.0, double(d_->q(c))))));
    }

    // Ordinary least squares of y on the location fixed design.
    const auto& X = d_->parts[0].fixed;
    Eigen::VectorXd resid = y;
    if (X.cols() > 0) {
      Eigen::MatrixXd xtx = X.transpose() * X;
      xtx.diagonal().array() += 1e-8 * (1.0 + xtx.diagonal().array().abs());
      s_.theta.coef[0] = xtx.ldlt().solve(X.transpose() * y);
      resid -= X * s_.theta.coef[0];
    }
    double scale_hat;
    if (spec_.family == Family::Gaussian) {
      scale_hat = std::max(resid.squaredNorm() / static_cast<double>(n_obs), 1e-8);
    } else {
      // AL scale MLE given the location: mean check loss of the residuals.
      const double tau0 = spec_.tau_fixed.value_or(0.5);
      double sum = 0.0;
      for (Eigen::Index o = 0; o < n_obs; ++o) sum += quantile_loss(resid[o], tau0);
      scale_hat = std::max(sum / static_cast<double>(n_obs), 1e-8);
    }
    const auto& sf = spec_.scale.fixed_terms;
    for (std::size_t j = 0; j < sf.size(); ++j)
      if (sf[j].kind == Term::Kind::Intercept)
        s_.theta.coef[1][static_cast<Eigen::Index>(j)] = std::log(scale_hat);
    if (spec_.family == Family::AL) s_.w = Eigen::VectorXd::Constant(n_obs, scale_hat);
    refresh();
    if (!std::isfinite(log_posterior())) throw SamplerError("non-finite log posterior at initialization");
  }

  void refresh_component(Component c) {
    const int k = index_of(c);
    const auto& part = d_->parts[k];
    const Eigen::Index n_obs = d_->n_obs();
    eta_fixed_[k] = part.fixed.cols() > 0 ? Eigen::VectorXd(part.fixed * s_.theta.coef[k])
                                          : Eigen::VectorXd::Zero(n_obs);
    eta_rand_[k] = Eigen::VectorXd::Zero(n_obs);
    if (part.random.cols() > 0)
      for (std::size_t i = 0; i < d_->n_subjects(); ++i)
        eta_rand_[k].segment(d_->start[i], d_->count[i]) =
            part.random.middleRows(d_->start[i], d_->count[i]) *
            s_.effects.values[k].row(static_cast<Eigen::Index>(i)).transpose();
    refresh_derived(c);
  }

  /// Link-scale caches of one component from its linear predictor.
  void refresh_derived(Component c) {
    const int k = index_of(c);
    const Eigen::Index n_obs = d_->n_obs();
    switch (c) {
      case Component::Location:
        mu_ = eta_fixed_[k] + eta_rand_[k];
        break;
      case Component::Scale:
        es_.resize(n_obs);
        inv_sigma_.resize(n_obs);
        for (Eigen::Index o = 0; o < n_obs; ++o) {
          es_[o] = clamp_eta(eta_fixed_[k][o] + eta_rand_[k][o]);
          inv_sigma_[o] = std::exp(-es_[o]);
        }
        break;
      case Component::Skewness:
        tau_.resize(n_obs);
        c1_.resize(n_obs);
        c2_.resize(n_obs);
        for (Eigen::Index o = 0; o < n_obs; ++o) {
          tau_[o] = spec_.skewness_modeled() ? logistic(clamp_eta(eta_fixed_[k][o] + eta_rand_[k][o]))
                                             : spec_.tau_fixed.value_or(0.5);
          const double t1 = tau_[o] * (1.0 - tau_[o]);
          c1_[o] = (1.0 - 2.0 * tau_[o]) / t1;
          c2_[o] = 2.0 / t1;
        }
        break;
    }
  }

  /// Observation precisions and response minus the latent shift c1 w.
  void working_response() {
    const auto& y = d_->y;
    const Eigen::Index n_obs = y.size();
    weight_.resize(n_obs);
    resp_.resize(n_obs);
    if (spec_.family == Family::Gaussian) {
      weight_ = inv_sigma_;
      resp_ = y;
      return;
    }
    for (Eigen::Index o = 0; o < n_obs; ++o) {
      weight_[o] = inv_sigma_[o] / (c2_[o] * s_.w[o]);
      resp_[o] = y[o] - c1_[o] * s_.w[o];
    }
  }

  Eigen::VectorXd prior_linear(int k) const {
    return prior_prec_[k] * Eigen::VectorXd::Constant(prior_prec_[k].rows(), cfg_.priors.coef_mean[k]);
  }

  void draw_b(std::size_t i, const Eigen::MatrixXd& sigma_inv) {
    constexpr int k = 0;
    const auto& Z = d_->parts[k].random;
    const Eigen::Index a = d_->start[i], m = d_->count[i];
    const auto Zi = Z.middleRows(a, m);
    const auto wi = weight_.segment(a, m);
    const Eigen::VectorXd r = resp_.segment(a, m) - eta_fixed_[k].segment(a, m);
    Eigen::MatrixXd prec = sigma_inv + Zi.transpose() * wi.asDiagonal() * Zi;
    Eigen::VectorXd h = Zi.transpose() * (wi.array() * r.array()).matrix();
    Eigen::VectorXd draw;
    if (!sample_mvn_precision(prec, h, rng_, draw))
      throw SamplerError("Cholesky failure in random-effect update of subject " + d_->subject_ids[i]);
    s_.effects.values[k].row(static_cast<Eigen::Index>(i)) = draw.transpose();
    eta_rand_[k].segment(a, m) = Zi * draw;
    mu_.segment(a, m) = eta_fixed_[k].segment(a, m) + eta_rand_[k].segment(a, m);
  }

  // MH log-likelihood terms. For the scale component every family has the
  // form  base - slope * eta - exp(-eta) * quad  (eta clamped), so a
  // proposal costs one exp per observation. For skewness the tau-free
  // terms are dropped.
  void prepare_mh(Component c) {
    const auto& y = d_->y;
    const Eigen::Index n_obs = y.size();
    cur_ll_.resize(n_obs);
    if (c == Component::Scale) {
      base_.resize(n_obs);
      quad_.resize(n_obs);
      for (Eigen::Index o = 0; o < n_obs; ++o) {
        const double r = y[o] - mu_[o];
        if (spec_.family == Family::Gaussian) {
          base_[o] = -0.5 * detail::kLog2Pi;
          quad_[o] = 0.5 * r * r;
        } else if (cfg_.mh_target == MHTarget::Marginal) {
          base_[o] = std::log(tau_[o]) + std::log1p(-tau_[o]);
          quad_[o] = r < 0.0 ? (tau_[o] - 1.0) * r : tau_[o] * r;
        } else {
          const double w = s_.w[o];
          const double e = r - c1_[o] * w;
          base_[o] = -0.5 * (detail::kLog2Pi + std::log(c2_[o] * w));
          quad_[o] = 0.5 * e * e / (c2_[o] * w) + w;
        }
        cur_ll_[o] = base_[o] - scale_slope() * es_[o] - inv_sigma_[o] * quad_[o];
      }
    } else {
      for (Eigen::Index o = 0; o < n_obs; ++o) cur_ll_[o] = skew_loglik(o, tau_[o]);
    }
  }

  double scale_slope() const {
    if (spec_.family == Family::Gaussian) return 0.5;
    return cfg_.mh_target == MHTarget::Marginal ? 1.0 : 1.5;
  }

  double skew_loglik(Eigen::Index o, double tau) const {
    const double t1 = tau * (1.0 - tau);
    const double r = d_->y[o] - mu_[o];
    if (cfg_.mh_target == MHTarget::Marginal) {
      const double rho = r < 0.0 ? (tau - 1.0) * r : tau * r;
      return std::log(t1) - rho * inv_sigma_[o];
    }
    const double w = s_.w[o];
    const double e = r - (1.0 - 2.0 * tau) / t1 * w;
    return 0.5 * std::log(t1) - 0.25 * e * e * t1 * inv_sigma_[o] / w;
  }

  double mh_loglik(Component c, Eigen::Index o, double eta) const {
    const double e = clamp_eta(eta);
    if (c == Component::Scale) return base_[o] - scale_slope() * e - std::exp(-e) * quad_[o];
    return skew_loglik(o, logistic(e));
  }

  /// Approximate per-observation Fisher information of the linear
  /// predictor, used only to shape proposals.
  double info_factor(Component c) const {
    if (spec_.family == Family::Gaussian) return 0.5;
    const bool aug = cfg_.mh_target == MHTarget::Augmented;
    if (c == Component::Scale) return aug ? 1.5 : 1.0;
    return aug ? 1.0 : 0.5;
  }

  static double target_rate(Eigen::Index dim) { return dim == 1 ? 0.44 : 0.25; }
  double gain() const { return std::pow(static_cast<double>(s_.iteration) + 1.0, -0.6); }
  void record(Stat& s, double acc) const {
    if (!adapting_) {
      s.sum += acc;
      s.n += 1.0;
    }
  }

  const DesignBundle* d_;
  ModelSpec spec_;
  SamplerConfig cfg_;
  Rng rng_;
  ChainState s_;
  std::array<Eigen::VectorXd, 3> eta_fixed_, eta_rand_;
  Eigen::VectorXd mu_, es_, inv_sigma_, tau_, c1_, c2_;
  Eigen::VectorXd weight_, resp_;
  Eigen::VectorXd base_, quad_, cur_ll_, prop_ll_, prop_fixed_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> subject_llt_;
  std::array<std::vector<Eigen::MatrixXd>, 3> ztz_;
  std::array<Eigen::MatrixXd, 3> prior_prec_;
  std::array<Eigen::MatrixXd, 3> coef_chol_;
  std::array<ShiftMap, 3> shift_;
  std::array<Stat, 3> coef_stats_{};
  std::array<Stat, 3> effect_stats_{};
  bool adapting_ = false;
};

/// Runs one chain to completion and collects its retained draws.
inline void run_chain(const DesignBundle& design, const ModelSpec& spec, const SamplerConfig& cfg,
                      int chain_index, Eigen::MatrixXd& draws, RandomEffects& effect_mean,
                      std::vector<RandomEffects>* effect_draws, AcceptanceRates& acc,
                      double& seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  Chain chain(design, spec, cfg, mix_seed(cfg.seed, static_cast<std::uint64_t>(chain_index)));
  const long keep = cfg.n_keep();
  const auto names = parameter_names(spec, design);
  draws.resize(keep, static_cast<Eigen::Index>(names.size()));
  effect_mean = RandomEffects::zeros(design);
  long row = 0;
  for (long t = 1; t <= cfg.n_iter; ++t) {
    chain.sweep();
    if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 && row < keep) {
      const auto flat = flatten(chain.state().theta, spec);
      for (std::size_t j = 0; j < flat.size(); ++j) draws(row, static_cast<Eigen::Index>(j)) = flat[j];
      for (int k = 0; k < 3; ++k) effect_mean.values[k] += chain.state().effects.values[k];
      if (effect_draws) effect_draws->push_back(chain.state().effects);
      ++row;
    }
  }
  for (int k = 0; k < 3; ++k) effect_mean.values[k] /= static_cast<double>(std::max<long>(keep, 1));
  acc = chain.acceptance();
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs cfg.n_chains independent chains. Chain c uses the stream
/// mix_seed(cfg.seed, c), so output is independent of scheduling.
inline PosteriorSample run(const DesignBundle& design, const ModelSpec& spec,
                           const SamplerConfig& cfg) {
  cfg.validate();
  spec.validate();
  PosteriorSample out;
  out.names = parameter_names(spec, design);
  const auto nc = static_cast<std::size_t>(cfg.n_chains);
  out.chains.resize(nc);
  out.effect_means.resize(nc);
  out.effect_draws.resize(cfg.retain_effects ? nc : 0);
  out.acceptance.resize(nc);
  out.seconds.resize(nc);
  std::vector<std::exception_ptr> errors(nc);
  auto work = [&](std::size_t c) {
    try {
      run_chain(design, spec, cfg, static_cast<int>(c), out.chains[c], out.effect_means[c],
                cfg.retain_effects ? &out.effect_draws[c] : nullptr, out.acceptance[c],
                out.seconds[c]);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (cfg.parallel && nc > 1 && std::thread::hardware_concurrency() > 1) {
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < nc; ++c) pool.emplace_back(work, c);
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t c = 0; c < nc; ++c) work(c);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline PosteriorSample run(const LongitudinalDataset& data, const ModelSpec& spec,
                           const SamplerConfig& cfg) {
  return run(build_design(data, spec), spec, cfg);
}

/// Gaussian location-scale mixed model path.
inline PosteriorSample run_gaussian(const LongitudinalDataset& data, const ModelSpec& spec,
                                    const SamplerConfig& cfg) {
  if (spec.family != Family::Gaussian) throw std::invalid_argument("run_gaussian: family must be Gaussian");
  return run(data, spec, cfg);
}

}  // namespace aldrm
