#pragma once

// Model specification for the four families (LQMM, LSLQMM, ALDRM and the
// Gaussian LSMM), design construction and linear predictor evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aldrm/aldist.hpp"
#include "aldrm/dataset.hpp"

namespace aldrm {

class SpecError : public std::runtime_error {
 public:
  explicit SpecError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what) {}
};

enum class Family { AL, Gaussian };
enum class Link { Identity, Log, Logit };

/// Distribution parameters that carry a predictor.
enum class Component : int { Location = 0, Scale = 1, Skewness = 2 };
inline constexpr std::array<Component, 3> kComponents{Component::Location, Component::Scale,
                                                      Component::Skewness};
inline constexpr int index_of(Component c) { return static_cast<int>(c); }

/// Linear predictors of scale and skewness are clamped to this bound
/// before the link is applied.
inline constexpr double kEtaClamp = 15.0;

inline double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Term {
  enum class Kind { Intercept, Time, Time2, Covariate };
  Kind kind = Kind::Intercept;
  std::string covariate;

  static Term parse(const std::string& token) {
    if (token == "1" || token == "intercept") return {Kind::Intercept, {}};
    if (token == "time" || token == "t") return {Kind::Time, {}};
    if (token == "time2" || token == "time^2" || token == "t2") return {Kind::Time2, {}};
    return {Kind::Covariate, token};
  }

  std::string label() const {
    switch (kind) {
      case Kind::Intercept: return "1";
      case Kind::Time: return "time";
      case Kind::Time2: return "time2";
      case Kind::Covariate: return covariate;
    }
    return {};
  }

  double value(const SubjectRecord& s, double t) const {
    switch (kind) {
      case Kind::Intercept: return 1.0;
      case Kind::Time: return t;
      case Kind::Time2: return t * t;
      case Kind::Covariate: return s.covariates.at(covariate);
    }
    return 0.0;
  }

  bool operator==(const Term& o) const { return kind == o.kind && covariate == o.covariate; }
};

struct PredictorSpec {
  std::vector<Term> fixed_terms;
  std::vector<Term> random_terms;
  Link link = Link::Identity;

  bool empty() const { return fixed_terms.empty() && random_terms.empty(); }
};

struct ModelSpec {
  Family family = Family::AL;
  PredictorSpec location{{}, {}, Link::Identity};
  PredictorSpec scale{{}, {}, Link::Log};
  std::optional<double> tau_fixed = 0.5;
  PredictorSpec skewness{{}, {}, Link::Logit};

  bool skewness_modeled() const { return family == Family::AL && !tau_fixed.has_value(); }

  /// AL with fixed tau and a single scalar scale.
  bool is_lqmm() const {
    return family == Family::AL && tau_fixed.has_value() && scale.random_terms.empty() &&
           scale.fixed_terms.size() == 1 && scale.fixed_terms[0].kind == Term::Kind::Intercept;
  }

  std::string family_name() const {
    if (family == Family::Gaussian) return "LSMM";
    if (skewness_modeled()) return "ALDRM";
    if (is_lqmm()) return "LQMM";
    return "LSLQMM";
  }

  const PredictorSpec& predictor(Component c) const {
    switch (c) {
      case Component::Location: return location;
      case Component::Scale: return scale;
      case Component::Skewness: return skewness;
    }
    return location;
  }

  /// Whether the component carries sampled parameters.
  bool active(Component c) const {
    if (c == Component::Skewness) return skewness_modeled();
    return true;
  }

  void validate() const {
    if (location.fixed_terms.empty() && location.random_terms.empty())
      throw SpecError("location predictor is empty");
    if (scale.fixed_terms.empty() && scale.random_terms.empty())
      throw SpecError("scale predictor is empty");
    if (family == Family::AL && tau_fixed && !(*tau_fixed > 0.0 && *tau_fixed < 1.0))
      throw SpecError("fixed skewness must lie in (0, 1)");
    if (skewness_modeled() && skewness.empty()) throw SpecError("skewness predictor is empty");
  }
};

inline std::string join_terms(const std::vector<Term>& terms) {
  std::string out;
  for (std::size_t k = 0; k < terms.size(); ++k) out += (k ? ", " : "") + terms[k].label();
  return out;
}

inline std::vector<Term> parse_terms(const std::string& list, long line) {
  std::vector<Term> out;
  std::istringstream is(list);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const auto b = tok.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = tok.find_last_not_of(" \t\r");
    tok = tok.substr(b, e - b + 1);
    for (char ch : tok)
      if (std::isspace(static_cast<unsigned char>(ch)))
        throw SpecError("malformed term '" + tok + "'", line);
    Term t = Term::parse(tok);
    if (std::find(out.begin(), out.end(), t) != out.end())
      throw SpecError("duplicate term '" + tok + "'", line);
    out.push_back(t);
  }
  return out;
}

/// Parses the key/value model spec format:
///
///   family = al | gaussian
///   location.fixed = 1, time, time2, x1, x2
///   location.random = 1, time, time2
///   scale.fixed = 1, time, x1
///   scale.random = 1, time
///   skewness = fixed:0.5          (fixed skewness), or
///   skewness.fixed = x1, x2       (modeled skewness)
///   skewness.random = 1, time
///
/// '#' starts a comment; an empty right-hand side is an empty term list.
inline ModelSpec parse_model_spec(std::istream& is) {
  ModelSpec spec;
  bool skew_terms = false, skew_fixed_value = false;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SpecError("expected 'key = value'", lineno);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "family") {
      if (value == "al") spec.family = Family::AL;
      else if (value == "gaussian") spec.family = Family::Gaussian;
      else throw SpecError("unknown family '" + value + "'", lineno);
    } else if (key == "location.fixed") spec.location.fixed_terms = parse_terms(value, lineno);
    else if (key == "location.random") spec.location.random_terms = parse_terms(value, lineno);
    else if (key == "scale.fixed") spec.scale.fixed_terms = parse_terms(value, lineno);
    else if (key == "scale.random") spec.scale.random_terms = parse_terms(value, lineno);
    else if (key == "skewness.fixed") {
      spec.skewness.fixed_terms = parse_terms(value, lineno);
      skew_terms = true;
    } else if (key == "skewness.random") {
      spec.skewness.random_terms = parse_terms(value, lineno);
      skew_terms = true;
    } else if (key == "skewness") {
      if (value.rfind("fixed:", 0) != 0) throw SpecError("expected 'skewness = fixed:<tau>'", lineno);
      try {
        std::size_t pos = 0;
        const std::string num = trim(value.substr(6));
        spec.tau_fixed = std::stod(num, &pos);
        if (pos != num.size()) throw std::invalid_argument(num);
      } catch (const std::exception&) {
        throw SpecError("cannot parse fixed skewness '" + value + "'", lineno);
      }
      skew_fixed_value = true;
    } else {
      throw SpecError("unknown key '" + key + "'", lineno);
    }
  }
  if (skew_terms && skew_fixed_value)
    throw SpecError("skewness is both fixed and modeled");
  if (skew_terms) spec.tau_fixed.reset();
  if (spec.family == Family::Gaussian) spec.tau_fixed.reset();
  spec.validate();
  return spec;
}

inline ModelSpec parse_model_spec_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw SpecError("cannot open model spec '" + path + "'");
  return parse_model_spec(is);
}

inline std::string format_model_spec(const ModelSpec& spec) {
  std::ostringstream os;
  os << "family = " << (spec.family == Family::AL ? "al" : "gaussian") << '\n';
  os << "location.fixed = " << join_terms(spec.location.fixed_terms) << '\n';
  os << "location.random = " << join_terms(spec.location.random_terms) << '\n';
  os << "scale.fixed = " << join_terms(spec.scale.fixed_terms) << '\n';
  os << "scale.random = " << join_terms(spec.scale.random_terms) << '\n';
  if (spec.family == Family::AL) {
    if (spec.tau_fixed) {
      os << "skewness = fixed:" << format_real(*spec.tau_fixed) << '\n';
    } else {
      os << "skewness.fixed = " << join_terms(spec.skewness.fixed_terms) << '\n';
      os << "skewness.random = " << join_terms(spec.skewness.random_terms) << '\n';
    }
  }
  return os.str();
}

/// Design rows for one component, all observations stacked subject by subject.
struct ComponentDesign {
  Eigen::MatrixXd fixed;   // N x p
  Eigen::MatrixXd random;  // N x q
};

/// Immutable after construction; shared read-only across chains.
struct DesignBundle {
  std::vector<std::string> subject_ids;
  std::vector<Eigen::Index> start;  // first observation of subject i
  std::vector<Eigen::Index> count;  // n_i
  Eigen::VectorXd y;
  Eigen::VectorXd time;
  std::array<ComponentDesign, 3> parts;

  Eigen::Index n_obs() const { return y.size(); }
  std::size_t n_subjects() const { return start.size(); }
  const ComponentDesign& part(Component c) const { return parts[index_of(c)]; }
  Eigen::Index p(Component c) const { return part(c).fixed.cols(); }
  Eigen::Index q(Component c) const { return part(c).random.cols(); }

  /// Subject index owning observation `obs`.
  std::size_t subject_of(Eigen::Index obs) const {
    auto it = std::upper_bound(start.begin(), start.end(), obs);
    return static_cast<std::size_t>(it - start.begin()) - 1;
  }
};

inline DesignBundle build_design(const LongitudinalDataset& data, const ModelSpec& spec) {
  if (data.subjects.empty()) throw DataError("dataset has no subjects");
  spec.validate();
  for (Component c : kComponents) {
    if (!spec.active(c)) continue;
    const auto& pred = spec.predictor(c);
    for (const auto* terms : {&pred.fixed_terms, &pred.random_terms})
      for (const auto& t : *terms)
        if (t.kind == Term::Kind::Covariate &&
            std::find(data.covariate_names.begin(), data.covariate_names.end(), t.covariate) ==
                data.covariate_names.end())
          throw DataError("unknown covariate '" + t.covariate + "' in model spec");
  }
  DesignBundle d;
  const auto n = static_cast<Eigen::Index>(data.n_observations());
  d.y.resize(n);
  d.time.resize(n);
  for (Component c : kComponents) {
    const auto& pred = spec.predictor(c);
    const bool on = spec.active(c);
    d.parts[index_of(c)].fixed.resize(n, on ? static_cast<Eigen::Index>(pred.fixed_terms.size()) : 0);
    d.parts[index_of(c)].random.resize(n, on ? static_cast<Eigen::Index>(pred.random_terms.size()) : 0);
  }
  Eigen::Index row = 0;
  for (const auto& s : data.subjects) {
    d.subject_ids.push_back(s.id);
    d.start.push_back(row);
    d.count.push_back(static_cast<Eigen::Index>(s.y.size()));
    for (std::size_t j = 0; j < s.y.size(); ++j, ++row) {
      d.y[row] = s.y[j];
      d.time[row] = s.times[j];
      for (Component c : kComponents) {
        if (!spec.active(c)) continue;
        const auto& pred = spec.predictor(c);
        auto& part = d.parts[index_of(c)];
        for (std::size_t k = 0; k < pred.fixed_terms.size(); ++k)
          part.fixed(row, static_cast<Eigen::Index>(k)) = pred.fixed_terms[k].value(s, s.times[j]);
        for (std::size_t k = 0; k < pred.random_terms.size(); ++k)
          part.random(row, static_cast<Eigen::Index>(k)) = pred.random_terms[k].value(s, s.times[j]);
      }
    }
  }
  return d;
}

/// theta = (beta, Sigma_b, xi, Sigma_u, alpha, Sigma_a), indexed by component.
struct ParameterVector {
  std::array<Eigen::VectorXd, 3> coef;
  std::array<Eigen::MatrixXd, 3> cov;

  Eigen::VectorXd& beta() { return coef[0]; }
  Eigen::VectorXd& xi() { return coef[1]; }
  Eigen::VectorXd& alpha() { return coef[2]; }
  Eigen::MatrixXd& Sigma_b() { return cov[0]; }
  Eigen::MatrixXd& Sigma_u() { return cov[1]; }
  Eigen::MatrixXd& Sigma_a() { return cov[2]; }
  const Eigen::VectorXd& beta() const { return coef[0]; }
  const Eigen::VectorXd& xi() const { return coef[1]; }
  const Eigen::VectorXd& alpha() const { return coef[2]; }
  const Eigen::MatrixXd& Sigma_b() const { return cov[0]; }
  const Eigen::MatrixXd& Sigma_u() const { return cov[1]; }
  const Eigen::MatrixXd& Sigma_a() const { return cov[2]; }

  static ParameterVector zeros(const DesignBundle& d) {
    ParameterVector t;
    for (Component c : kComponents) {
      t.coef[index_of(c)] = Eigen::VectorXd::Zero(d.p(c));
      t.cov[index_of(c)] = Eigen::MatrixXd::Identity(d.q(c), d.q(c));
    }
    return t;
  }
};

/// Per-subject random effects: one n x q matrix per component.
struct RandomEffects {
  std::array<Eigen::MatrixXd, 3> values;

  static RandomEffects zeros(const DesignBundle& d) {
    RandomEffects e;
    for (Component c : kComponents)
      e.values[index_of(c)] =
          Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.n_subjects()), d.q(c));
    return e;
  }
};

/// Linear predictor of component c at observation obs (unclamped).
inline double linear_predictor(const ParameterVector& theta, const RandomEffects& effects,
                               const DesignBundle& d, Component c, Eigen::Index obs,
                               std::size_t subject) {
  const int k = index_of(c);
  double eta = 0.0;
  if (d.parts[k].fixed.cols() > 0) eta += d.parts[k].fixed.row(obs).dot(theta.coef[k]);
  if (d.parts[k].random.cols() > 0)
    eta += d.parts[k].random.row(obs).dot(effects.values[k].row(static_cast<Eigen::Index>(subject)));
  return eta;
}

/// (mu, sigma, tau) at one observation. For the Gaussian family, sigma is
/// the variance and tau is reported as 0.5.
inline ALParams eval_params(const ParameterVector& theta, const RandomEffects& effects,
                            const DesignBundle& d, const ModelSpec& spec, Eigen::Index obs) {
  const std::size_t i = d.subject_of(obs);
  ALParams out;
  out.mu = linear_predictor(theta, effects, d, Component::Location, obs, i);
  out.sigma = std::exp(clamp_eta(linear_predictor(theta, effects, d, Component::Scale, obs, i)));
  if (spec.skewness_modeled())
    out.tau = logistic(clamp_eta(linear_predictor(theta, effects, d, Component::Skewness, obs, i)));
  else
    out.tau = spec.tau_fixed.value_or(0.5);
  return out;
}

/// Canonical scalar-parameter names: beta[k], Sigma_b[r,c] (r <= c), xi[k]
/// (or sigma for LQMM), Sigma_u[r,c], alpha[k], Sigma_a[r,c]. 1-based.
inline std::vector<std::string> parameter_names(const ModelSpec& spec, const DesignBundle& d) {
  static const std::array<const char*, 3> coef_names{"beta", "xi", "alpha"};
  static const std::array<const char*, 3> cov_names{"Sigma_b", "Sigma_u", "Sigma_a"};
  std::vector<std::string> out;
  for (Component c : kComponents) {
    if (!spec.active(c)) continue;
    const int k = index_of(c);
    if (c == Component::Scale && spec.is_lqmm()) {
      out.emplace_back("sigma");
    } else {
      for (Eigen::Index j = 0; j < d.p(c); ++j)
        out.push_back(std::string(coef_names[k]) + "[" + std::to_string(j + 1) + "]");
    }
    for (Eigen::Index r = 0; r < d.q(c); ++r)
      for (Eigen::Index s = r; s < d.q(c); ++s)
        out.push_back(std::string(cov_names[k]) + "[" + std::to_string(r + 1) + "," +
                      std::to_string(s + 1) + "]");
  }
  return out;
}

/// Flattens theta in parameter_names order.
inline std::vector<double> flatten(const ParameterVector& theta, const ModelSpec& spec) {
  std::vector<double> out;
  for (Component c : kComponents) {
    if (!spec.active(c)) continue;
    const int k = index_of(c);
    if (c == Component::Scale && spec.is_lqmm()) {
      out.push_back(std::exp(clamp_eta(theta.coef[k][0])));
    } else {
      for (Eigen::Index j = 0; j < theta.coef[k].size(); ++j) out.push_back(theta.coef[k][j]);
    }
    const auto& m = theta.cov[k];
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index s = r; s < m.cols(); ++s) out.push_back(m(r, s));
  }
  return out;
}

/// Inverse of flatten for the given design dimensions.
inline ParameterVector unflatten(const std::vector<double>& values, const ModelSpec& spec,
                                 const DesignBundle& d) {
  ParameterVector theta = ParameterVector::zeros(d);
  std::size_t pos = 0;
  auto next = [&]() {
    if (pos >= values.size()) throw std::invalid_argument("unflatten: too few values");
    return values[pos++];
  };
  for (Component c : kComponents) {
    if (!spec.active(c)) continue;
    const int k = index_of(c);
    if (c == Component::Scale && spec.is_lqmm()) {
      theta.coef[k][0] = std::log(next());
    } else {
      for (Eigen::Index j = 0; j < d.p(c); ++j) theta.coef[k][j] = next();
    }
    for (Eigen::Index r = 0; r < d.q(c); ++r)
      for (Eigen::Index s = r; s < d.q(c); ++s) theta.cov[k](r, s) = theta.cov[k](s, r) = next();
  }
  if (pos != values.size()) throw std::invalid_argument("unflatten: too many values");
  return theta;
}

}  // namespace aldrm
