#pragma once

// Quantile-coverage model selection (C_Gamma with absolute or quadratic
// loss) and point-prediction errors (MSE / MAE) for fitted models.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "aldrm/aldist.hpp"
#include "aldrm/dataset.hpp"
#include "aldrm/diagnostics.hpp"
#include "aldrm/modelspec.hpp"
#include "aldrm/sampler.hpp"

namespace aldrm {

struct QuantileSet {
  std::string name;
  std::vector<double> orders;

  void validate() const {
    if (orders.empty()) throw std::invalid_argument("quantile set is empty");
    for (std::size_t k = 0; k < orders.size(); ++k) {
      if (!(orders[k] > 0.0 && orders[k] < 1.0))
        throw std::invalid_argument("quantile orders must lie in (0, 1)");
      if (k > 0 && !(orders[k] > orders[k - 1]))
        throw std::invalid_argument("quantile orders must be strictly increasing");
    }
  }

  /// All deciles.
  static QuantileSet deciles() {
    return {"G1", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}};
  }
  static QuantileSet quartiles() { return {"G2", {0.25, 0.5, 0.75}}; }
  static QuantileSet tails_and_median() { return {"G3", {0.1, 0.5, 0.9}}; }

  /// Accepts G1/G2/G3 or a comma-separated list of orders.
  static QuantileSet parse(const std::string& text) {
    if (text == "G1" || text == "1") return deciles();
    if (text == "G2" || text == "2") return quartiles();
    if (text == "G3" || text == "3") return tails_and_median();
    QuantileSet s;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        std::size_t pos = 0;
        s.orders.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw std::invalid_argument("bad quantile order '" + tok + "'");
      }
    }
    s.validate();
    for (const auto& builtin : {deciles(), quartiles(), tails_and_median()})
      if (builtin.orders == s.orders) return builtin;
    s.name = text;
    return s;
  }
};

enum class Loss { Absolute, Quadratic };

inline double apply_loss(Loss loss, double x) { return loss == Loss::Absolute ? std::abs(x) : x * x; }
inline std::string loss_name(Loss loss) { return loss == Loss::Absolute ? "MMAE" : "MMSE"; }

/// Point estimates of a fitted model: posterior means of theta and of
/// every subject's random effects.
struct FittedModel {
  ModelSpec spec;
  ParameterVector theta;
  RandomEffects effects;
  std::string label;

  static FittedModel from_sample(const PosteriorSample& sample, const ModelSpec& spec,
                                 const DesignBundle& d, std::string label = {}) {
    FittedModel f;
    f.spec = spec;
    f.theta = unflatten(posterior_means(summarize(sample)), spec, d);
    f.effects = sample.pooled_effect_means();
    f.label = label.empty() ? spec.family_name() : std::move(label);
    return f;
  }

  /// Predicted (mu, sigma, tau) at observation obs; sigma is the variance
  /// for the Gaussian family.
  ALParams params_at(const DesignBundle& d, Eigen::Index obs) const {
    for (int k = 0; k < 3; ++k)
      if (effects.values[k].rows() != static_cast<Eigen::Index>(d.n_subjects()) ||
          effects.values[k].cols() != d.parts[k].random.cols())
        throw std::invalid_argument("fitted model: missing random-effect estimates");
    return eval_params(theta, effects, d, spec, obs);
  }
};

inline double standard_normal_quantile(double p) {
  static const boost::math::normal_distribution<double> n01(0.0, 1.0);
  return boost::math::quantile(n01, p);
}

/// Predicted gamma-quantile of the individual distribution at observation obs.
inline double predicted_quantile(const FittedModel& fit, const DesignBundle& d, Eigen::Index obs,
                                 double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::domain_error("gamma must lie in (0, 1)");
  const ALParams p = fit.params_at(d, obs);
  if (fit.spec.family == Family::Gaussian) return p.mu + std::sqrt(p.sigma) * standard_normal_quantile(gamma);
  return quantile(gamma, p);
}

/// Fraction of subject i's observations strictly below the predicted
/// gamma-quantile trajectory.
inline double gamma_hat(const FittedModel& fit, const DesignBundle& d, std::size_t subject,
                        double gamma) {
  const Eigen::Index a = d.start.at(subject), m = d.count.at(subject);
  long below = 0;
  for (Eigen::Index o = a; o < a + m; ++o)
    if (d.y[o] < predicted_quantile(fit, d, o, gamma)) ++below;
  return static_cast<double>(below) / static_cast<double>(m);
}

struct CriterionReport {
  std::string model;
  std::string set_name;
  std::vector<double> orders;
  Loss loss = Loss::Absolute;
  std::vector<std::string> subject_ids;
  std::vector<double> per_subject;  // C_{i, Gamma}
  double global = 0.0;              // C_Gamma
};

/// Per-subject C_{i,Gamma} from the matrix of gamma-hat values
/// (subjects x orders).
inline double subject_criterion(const std::vector<double>& gamma_hats,
                                const std::vector<double>& orders, Loss loss) {
  double c = 0.0;
  for (std::size_t k = 0; k < orders.size(); ++k) c += apply_loss(loss, gamma_hats[k] - orders[k]);
  return c / static_cast<double>(orders.size());
}

inline CriterionReport criterion(const FittedModel& fit, const DesignBundle& d,
                                 const QuantileSet& set, Loss loss) {
  set.validate();
  CriterionReport r;
  r.model = fit.label;
  r.set_name = set.name;
  r.orders = set.orders;
  r.loss = loss;
  r.subject_ids = d.subject_ids;
  double total = 0.0;
  for (std::size_t i = 0; i < d.n_subjects(); ++i) {
    std::vector<double> gh;
    for (double g : set.orders) gh.push_back(gamma_hat(fit, d, i, g));
    const double c = subject_criterion(gh, set.orders, loss);
    r.per_subject.push_back(c);
    total += c;
  }
  r.global = total / static_cast<double>(d.n_subjects());
  return r;
}

enum class PredictionKind { Mode, Mean, Median };

inline PredictionKind parse_prediction_kind(const std::string& s) {
  if (s == "mode") return PredictionKind::Mode;
  if (s == "mean") return PredictionKind::Mean;
  if (s == "median") return PredictionKind::Median;
  throw std::invalid_argument("unknown prediction kind '" + s + "'");
}

inline std::string prediction_kind_name(PredictionKind k) {
  switch (k) {
    case PredictionKind::Mode: return "mode";
    case PredictionKind::Mean: return "mean";
    case PredictionKind::Median: return "median";
  }
  return {};
}

inline double predict_value(const FittedModel& fit, const DesignBundle& d, Eigen::Index obs,
                            PredictionKind kind) {
  const ALParams p = fit.params_at(d, obs);
  if (fit.spec.family == Family::Gaussian) return p.mu;
  switch (kind) {
    case PredictionKind::Mode: return p.mu;
    case PredictionKind::Mean: return mean(p);
    case PredictionKind::Median: return quantile(0.5, p);
  }
  return p.mu;
}

struct PredictiveErrors {
  double mse = 0.0;
  double mae = 0.0;
};

inline PredictiveErrors predictive_errors(const FittedModel& fit, const DesignBundle& d,
                                          PredictionKind kind) {
  PredictiveErrors e;
  for (Eigen::Index o = 0; o < d.n_obs(); ++o) {
    const double r = d.y[o] - predict_value(fit, d, o, kind);
    e.mse += r * r;
    e.mae += std::abs(r);
  }
  e.mse /= static_cast<double>(d.n_obs());
  e.mae /= static_cast<double>(d.n_obs());
  return e;
}

/// Index of the smallest criterion; ties reported through `tied`.
inline std::size_t select_best(const std::vector<double>& values, bool* tied = nullptr) {
  if (values.empty()) throw std::invalid_argument("select_best: no models");
  const auto it = std::min_element(values.begin(), values.end());
  if (tied) *tied = std::count(values.begin(), values.end(), *it) > 1;
  return static_cast<std::size_t>(it - values.begin());
}

inline nlohmann::json criterion_to_json(const CriterionReport& r) {
  nlohmann::json subjects = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_subject.size(); ++i)
    subjects.push_back({{"id", r.subject_ids[i]}, {"C", r.per_subject[i]}});
  return {{"model", r.model},   {"set", r.set_name},    {"orders", r.orders},
          {"loss", loss_name(r.loss)}, {"C_Gamma", r.global}, {"subjects", subjects}};
}

inline void write_criterion_csv(std::ostream& os, const CriterionReport& r) {
  os << "model,set,loss,id,C\n";
  for (std::size_t i = 0; i < r.per_subject.size(); ++i)
    os << csv_field(r.model) << ',' << csv_field(r.set_name) << ',' << loss_name(r.loss) << ','
       << csv_field(r.subject_ids[i]) << ','
       << format_real(r.per_subject[i]) << '\n';
}

/// Rows (id, time, gamma, value) of predicted quantile trajectories.
inline void write_quantile_trajectories(std::ostream& os, const FittedModel& fit,
                                        const DesignBundle& d, const QuantileSet& set) {
  os << "id,time,gamma,value\n";
  for (std::size_t i = 0; i < d.n_subjects(); ++i)
    for (Eigen::Index o = d.start[i]; o < d.start[i] + d.count[i]; ++o)
      for (double g : set.orders)
        os << csv_field(d.subject_ids[i]) << ',' << format_real(d.time[o]) << ',' << format_real(g) << ','
           << format_real(predicted_quantile(fit, d, o, g)) << '\n';
}

/// Rows (id, time, y, pdf, cdf) of the fitted individual density and CDF
/// evaluated on `grid` at every observation time of each subject.
inline void write_density_grid(std::ostream& os, const FittedModel& fit, const DesignBundle& d,
                               const std::vector<double>& grid) {
  static const boost::math::normal_distribution<double> n01(0.0, 1.0);
  os << "id,time,y,pdf,cdf\n";
  for (std::size_t i = 0; i < d.n_subjects(); ++i)
    for (Eigen::Index o = d.start[i]; o < d.start[i] + d.count[i]; ++o) {
      const ALParams p = fit.params_at(d, o);
      for (double y : grid) {
        double f, F;
        if (fit.spec.family == Family::Gaussian) {
          const double sd = std::sqrt(p.sigma);
          f = boost::math::pdf(n01, (y - p.mu) / sd) / sd;
          F = boost::math::cdf(n01, (y - p.mu) / sd);
        } else {
          f = pdf(y, p);
          F = cdf(y, p);
        }
        os << csv_field(d.subject_ids[i]) << ',' << format_real(d.time[o]) << ',' << format_real(y) << ','
           << format_real(f) << ',' << format_real(F) << '\n';
      }
    }
}

}  // namespace aldrm
