#pragma once

// Monte Carlo generator for longitudinal AL (or Gaussian) data and the
// replicated fit / summarize / select study built on it.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "aldrm/aldist.hpp"
#include "aldrm/dataset.hpp"
#include "aldrm/diagnostics.hpp"
#include "aldrm/modelspec.hpp"
#include "aldrm/random.hpp"
#include "aldrm/sampler.hpp"
#include "aldrm/selection.hpp"

namespace aldrm {

/// The generating model of the default scenario:
///   mu        = b0 + b1 t + b2 t^2 + b3 x1 + b4 x2 + (1, t, t^2) . b_i
///   log sigma = xi0 + xi1 t + xi2 x1 + (1, t) . u_i
///   logit tau = alpha1 x1 + alpha2 x2 + (1, t) . a_i
inline ModelSpec simulation_spec() {
  using K = Term::Kind;
  const Term one{K::Intercept, {}}, t{K::Time, {}}, t2{K::Time2, {}};
  const Term x1{K::Covariate, "x1"}, x2{K::Covariate, "x2"};
  ModelSpec s;
  s.family = Family::AL;
  s.location = {{one, t, t2, x1, x2}, {one, t, t2}, Link::Identity};
  s.scale = {{one, t, x1}, {one, t}, Link::Log};
  s.tau_fixed.reset();
  s.skewness = {{x1, x2}, {one, t}, Link::Logit};
  return s;
}

/// Same location and scale structure with a fixed skewness.
inline ModelSpec location_scale_spec(double tau) {
  ModelSpec s = simulation_spec();
  s.tau_fixed = tau;
  s.skewness = {{}, {}, Link::Logit};
  return s;
}

/// Gaussian location-scale mixed model with the same location and scale
/// structure (scale = log variance).
inline ModelSpec gaussian_spec() {
  ModelSpec s = location_scale_spec(0.5);
  s.family = Family::Gaussian;
  s.tau_fixed.reset();
  return s;
}

inline Eigen::MatrixXd symmetric(std::initializer_list<std::initializer_list<double>> rows) {
  const auto q = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(q, q);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

/// True parameter values of the default scenario.
inline ParameterVector default_truth() {
  ParameterVector t;
  t.beta() = Eigen::VectorXd{{13.0, 0.3, -0.03, 0.6, 0.8}};
  t.Sigma_b() = symmetric({{3.0, -0.32, 0.014}, {-0.32, 0.3, -0.025}, {0.014, -0.025, 0.01}});
  t.xi() = Eigen::VectorXd{{-0.6, -0.07, 0.084}};
  t.Sigma_u() = symmetric({{0.06, -0.003}, {-0.003, 0.01}});
  t.alpha() = Eigen::VectorXd{{0.13, 0.15}};
  t.Sigma_a() = symmetric({{0.25, -0.02}, {-0.02, 0.05}});
  return t;
}

struct Scenario {
  std::size_t n = 200;
  std::size_t m = 50;
  double t_max = 10.0;
  ParameterVector truth = default_truth();
  ModelSpec spec = simulation_spec();
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 1) throw std::invalid_argument("scenario: n must be >= 1");
    if (m < 2) throw std::invalid_argument("scenario: m must be >= 2");
    if (!(t_max > 0.0)) throw std::invalid_argument("scenario: t_max must be positive");
    for (Component c : kComponents) {
      if (!spec.active(c)) continue;
      const int k = index_of(c);
      const auto& pred = spec.predictor(c);
      if (truth.coef[k].size() != static_cast<Eigen::Index>(pred.fixed_terms.size()) ||
          truth.cov[k].rows() != static_cast<Eigen::Index>(pred.random_terms.size()) ||
          truth.cov[k].cols() != truth.cov[k].rows())
        throw std::invalid_argument("scenario: truth dimensions do not match the model spec");
    }
  }
};

/// Symmetric square root factor F with F F^T = S for PSD S (zero allowed).
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& s) {
  if (s.rows() == 0) return s;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

/// Equally spaced grid of m times on [0, t_max], both ends included.
inline std::vector<double> time_grid(std::size_t m, double t_max) {
  std::vector<double> t(m);
  for (std::size_t j = 0; j < m; ++j) t[j] = t_max * static_cast<double>(j) / static_cast<double>(m - 1);
  return t;
}

/// Draws a dataset: random effects, covariates x1 ~ N(0,1) and
/// x2 ~ Bernoulli(0.5), an equally spaced time grid, then responses by
/// inverse-CDF sampling (AL) or a normal draw (Gaussian, variance scale).
inline LongitudinalDataset generate(const Scenario& sc) {
  sc.validate();
  Rng rng(mix_seed(sc.seed, 0x5eed));
  std::array<Eigen::MatrixXd, 3> factor;
  for (Component c : kComponents)
    factor[index_of(c)] = sc.spec.active(c) ? psd_factor(sc.truth.cov[index_of(c)]) : Eigen::MatrixXd();
  LongitudinalDataset data;
  data.covariate_names = {"x1", "x2"};
  const auto times = time_grid(sc.m, sc.t_max);
  const int width = static_cast<int>(std::to_string(sc.n).size());
  for (std::size_t i = 0; i < sc.n; ++i) {
    SubjectRecord s;
    std::string id = std::to_string(i + 1);
    s.id = std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    std::array<Eigen::VectorXd, 3> effect;
    for (int k = 0; k < 3; ++k) {
      Eigen::VectorXd z(factor[k].cols());
      for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
      effect[k] = factor[k] * z;
    }
    s.covariates["x1"] = rng.normal();
    s.covariates["x2"] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    s.times = times;
    for (double t : times) {
      std::array<double, 3> eta{0, 0, 0};
      for (Component c : kComponents) {
        if (!sc.spec.active(c)) continue;
        const int k = index_of(c);
        const auto& pred = sc.spec.predictor(c);
        for (std::size_t j = 0; j < pred.fixed_terms.size(); ++j)
          eta[k] += pred.fixed_terms[j].value(s, t) * sc.truth.coef[k][static_cast<Eigen::Index>(j)];
        for (std::size_t j = 0; j < pred.random_terms.size(); ++j)
          eta[k] += pred.random_terms[j].value(s, t) * effect[k][static_cast<Eigen::Index>(j)];
      }
      if (sc.spec.family == Family::Gaussian) {
        s.y.push_back(eta[0] + std::sqrt(std::exp(clamp_eta(eta[1]))) * rng.normal());
      } else {
        ALParams p{eta[0], std::exp(clamp_eta(eta[1])),
                   sc.spec.skewness_modeled() ? logistic(clamp_eta(eta[2]))
                                              : sc.spec.tau_fixed.value_or(0.5)};
        s.y.push_back(sample_inverse(p, rng));
      }
    }
    data.subjects.push_back(std::move(s));
  }
  data.validate();
  return data;
}

/// Parameter name -> true value for the scenario's generating spec.
inline std::map<std::string, double> truth_map(const Scenario& sc) {
  const auto d = build_design(generate([&] {
                                Scenario small = sc;
                                small.n = 1;
                                return small;
                              }()),
                              sc.spec);
  const auto names = parameter_names(sc.spec, d);
  const auto values = flatten(sc.truth, sc.spec);
  std::map<std::string, double> out;
  for (std::size_t k = 0; k < names.size(); ++k) out[names[k]] = values[k];
  return out;
}

struct ModelToFit {
  std::string label;
  ModelSpec spec;
};

/// ALDRM, LSLQMM(tau = 0.5) and LSMM on the scenario's predictor structure.
inline std::vector<ModelToFit> default_competitors() {
  return {{"ALDRM", simulation_spec()}, {"LSLQMM", location_scale_spec(0.5)}, {"LSMM", gaussian_spec()}};
}

struct ModelFitResult {
  std::string label;
  PosteriorSummary summary;
  bool converged = true;
  std::map<std::string, double> criteria;  // "<set>/<loss>" -> C_Gamma
  std::map<std::string, PredictiveErrors> errors;  // prediction kind -> errors
  std::vector<AcceptanceRates> acceptance;
};

struct ReplicationResult {
  std::size_t index = 0;
  std::uint64_t data_seed = 0;
  std::vector<ModelFitResult> fits;
};

struct StudyReport {
  std::vector<std::string> model_labels;
  std::vector<ReplicationResult> replications;
  // Coverage of the first model against the truth, all replications and
  // converged replications only. Empty with fewer than 2 replications.
  std::vector<CoverageRow> coverage_all;
  std::vector<CoverageRow> coverage_converged;
  std::size_t flagged = 0;  // replications of the first model with R-hat >= 1.1
  // "<set>/<loss>" -> per-model selection frequency
  std::map<std::string, std::vector<double>> selection_frequency;
};

inline std::vector<QuantileSet> builtin_sets() {
  return {QuantileSet::deciles(), QuantileSet::quartiles(), QuantileSet::tails_and_median()};
}

inline std::string criterion_key(const QuantileSet& s, Loss loss) { return s.name + "/" + loss_name(loss); }

/// Fits one model to a dataset and evaluates every criterion.
inline ModelFitResult fit_and_evaluate(const LongitudinalDataset& data, const ModelToFit& model,
                                       const SamplerConfig& cfg) {
  ModelFitResult r;
  r.label = model.label;
  const auto d = build_design(data, model.spec);
  const auto sample = run(d, model.spec, cfg);
  r.summary = summarize(sample);
  r.converged = converged(r.summary);
  r.acceptance = sample.acceptance;
  FittedModel fit;
  fit.spec = model.spec;
  fit.label = model.label;
  fit.theta = unflatten(posterior_means(r.summary), model.spec, d);
  fit.effects = sample.pooled_effect_means();
  for (const auto& set : builtin_sets())
    for (Loss loss : {Loss::Absolute, Loss::Quadratic})
      r.criteria[criterion_key(set, loss)] = criterion(fit, d, set, loss).global;
  for (auto kind : {PredictionKind::Mode, PredictionKind::Mean, PredictionKind::Median})
    r.errors[prediction_kind_name(kind)] = predictive_errors(fit, d, kind);
  return r;
}

/// Replicated generate -> fit -> summarize -> criterion study. Replication
/// r uses data seed mix_seed(sc.seed, r) and sampler seed
/// mix_seed(cfg.seed, r), independent of execution order.
inline StudyReport run_study(const Scenario& sc, std::size_t n_replications,
                             const std::vector<ModelToFit>& models, const SamplerConfig& cfg,
                             const std::function<void(const ReplicationResult&)>& progress = {}) {
  if (models.empty()) throw std::invalid_argument("run_study: no models");
  StudyReport report;
  for (const auto& m : models) report.model_labels.push_back(m.label);
  for (std::size_t r = 0; r < n_replications; ++r) {
    Scenario rep = sc;
    rep.seed = mix_seed(sc.seed, r);
    const auto data = generate(rep);
    ReplicationResult res;
    res.index = r;
    res.data_seed = rep.seed;
    SamplerConfig c = cfg;
    c.seed = mix_seed(cfg.seed, r);
    for (const auto& m : models) res.fits.push_back(fit_and_evaluate(data, m, c));
    if (progress) progress(res);
    report.replications.push_back(std::move(res));
  }

  std::vector<PosteriorSummary> all, ok;
  for (const auto& rep : report.replications) {
    all.push_back(rep.fits.front().summary);
    if (rep.fits.front().converged) ok.push_back(rep.fits.front().summary);
    else ++report.flagged;
  }
  if (all.size() >= 2) {
    const auto truth = truth_map(Scenario{sc.n, sc.m, sc.t_max, sc.truth, models.front().spec, sc.seed});
    report.coverage_all = coverage_report(all, truth);
    if (ok.size() >= 2) report.coverage_converged = coverage_report(ok, truth);
  }
  for (const auto& set : builtin_sets())
    for (Loss loss : {Loss::Absolute, Loss::Quadratic}) {
      const auto key = criterion_key(set, loss);
      std::vector<double> freq(models.size(), 0.0);
      for (const auto& rep : report.replications) {
        std::vector<double> vals;
        for (const auto& f : rep.fits) vals.push_back(f.criteria.at(key));
        freq[select_best(vals)] += 1.0;
      }
      for (auto& f : freq) f /= static_cast<double>(report.replications.size());
      report.selection_frequency[key] = freq;
    }
  return report;
}

inline nlohmann::json study_to_json(const StudyReport& s) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : s.replications) {
    nlohmann::json fits = nlohmann::json::array();
    for (const auto& f : r.fits) {
      nlohmann::json errs;
      for (const auto& [k, e] : f.errors) errs[k] = {{"MSE", e.mse}, {"MAE", e.mae}};
      fits.push_back({{"model", f.label},
                      {"converged", f.converged},
                      {"criteria", f.criteria},
                      {"errors", errs},
                      {"summary", summary_to_json(f.summary)}});
    }
    reps.push_back({{"replication", r.index}, {"data_seed", r.data_seed}, {"fits", fits}});
  }
  nlohmann::json out{{"models", s.model_labels},
                     {"replications", reps},
                     {"flagged", s.flagged},
                     {"selection_frequency", s.selection_frequency}};
  if (!s.coverage_all.empty()) {
    out["coverage_all"] = coverage_to_json(s.coverage_all);
    out["coverage_converged"] = coverage_to_json(s.coverage_converged);
  }
  return out;
}

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  auto mat = [](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"n", sc.n},
          {"m", sc.m},
          {"t_max", sc.t_max},
          {"seed", sc.seed},
          {"spec", format_model_spec(sc.spec)},
          {"truth",
           {{"beta", vec(sc.truth.beta())},
            {"Sigma_b", mat(sc.truth.Sigma_b())},
            {"xi", vec(sc.truth.xi())},
            {"Sigma_u", mat(sc.truth.Sigma_u())},
            {"alpha", vec(sc.truth.alpha())},
            {"Sigma_a", mat(sc.truth.Sigma_a())}}}};
}

/// Reads a scenario JSON. Missing keys keep the default scenario's values.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario sc;
  if (j.contains("n")) sc.n = j.at("n").get<std::size_t>();
  if (j.contains("m")) sc.m = j.at("m").get<std::size_t>();
  if (j.contains("t_max")) sc.t_max = j.at("t_max").get<double>();
  if (j.contains("seed")) sc.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("spec")) {
    std::istringstream is(j.at("spec").get<std::string>());
    sc.spec = parse_model_spec(is);
  }
  if (j.contains("truth")) {
    const auto& t = j.at("truth");
    auto vec = [](const nlohmann::json& a) {
      auto v = a.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    auto mat = [](const nlohmann::json& a) {
      const auto rows = a.get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw std::invalid_argument("covariance matrix must be square");
        for (std::size_t c = 0; c < rows.size(); ++c)
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
      return m;
    };
    static const std::array<const char*, 3> cn{"beta", "xi", "alpha"};
    static const std::array<const char*, 3> vn{"Sigma_b", "Sigma_u", "Sigma_a"};
    for (int k = 0; k < 3; ++k) {
      if (t.contains(cn[k])) sc.truth.coef[k] = vec(t.at(cn[k]));
      if (t.contains(vn[k])) sc.truth.cov[k] = mat(t.at(vn[k]));
    }
  }
  sc.validate();
  return sc;
}

}  // namespace aldrm
