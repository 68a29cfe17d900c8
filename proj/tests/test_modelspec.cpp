#include <sstream>

#include <gtest/gtest.h>

#include "aldrm/modelspec.hpp"
#include "aldrm/simgen.hpp"

using namespace aldrm;

namespace {
ModelSpec spec_of(const std::string& text) {
  std::istringstream is(text);
  return parse_model_spec(is);
}

LongitudinalDataset two_subjects() {
  LongitudinalDataset d;
  d.covariate_names = {"x1", "x2"};
  d.subjects.push_back({"a", {{"x1", 0.5}, {"x2", 1.0}}, {0.0, 2.0}, {1.0, 2.0}});
  d.subjects.push_back({"b", {{"x1", -1.0}, {"x2", 0.0}}, {1.0, 3.0, 4.0}, {0.0, 1.0, 3.0}});
  return d;
}
}  // namespace

TEST(SpecParse, FamiliesAndNames) {
  const auto aldrm = spec_of(
      "family = al\nlocation.fixed = 1, time\nscale.fixed = 1\nskewness.fixed = x1\nskewness.random = 1\n");
  EXPECT_TRUE(aldrm.skewness_modeled());
  EXPECT_EQ(aldrm.family_name(), "ALDRM");

  const auto lqmm = spec_of("family = al\nlocation.fixed = 1\nscale.fixed = 1\nskewness = fixed:0.25\n");
  EXPECT_TRUE(lqmm.is_lqmm());
  EXPECT_EQ(*lqmm.tau_fixed, 0.25);
  EXPECT_EQ(lqmm.family_name(), "LQMM");

  const auto ls = spec_of("family = al\nlocation.fixed = 1\nscale.fixed = 1, time\nscale.random = 1\n");
  EXPECT_EQ(ls.family_name(), "LSLQMM");
  EXPECT_EQ(*ls.tau_fixed, 0.5);

  const auto g = spec_of("family = gaussian\nlocation.fixed = 1\nscale.fixed = 1\n");
  EXPECT_EQ(g.family_name(), "LSMM");
  EXPECT_FALSE(g.active(Component::Skewness));
}

TEST(SpecParse, TermSpellingsAndComments) {
  const auto s = spec_of("# comment\nlocation.fixed = intercept, t, time^2 # trailing\nscale.fixed = 1\n");
  ASSERT_EQ(s.location.fixed_terms.size(), 3u);
  EXPECT_EQ(s.location.fixed_terms[0].kind, Term::Kind::Intercept);
  EXPECT_EQ(s.location.fixed_terms[1].kind, Term::Kind::Time);
  EXPECT_EQ(s.location.fixed_terms[2].kind, Term::Kind::Time2);
}

TEST(SpecParse, Errors) {
  EXPECT_THROW(spec_of("family = weibull\nlocation.fixed = 1\nscale.fixed = 1\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1\nscale.fixed = 1\nbogus = 2\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1\nscale.fixed = 1\nno equals sign\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1, 1\nscale.fixed = 1\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1\nscale.fixed = 1\nskewness = fixed:1.5\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1\nscale.fixed = 1\nskewness = fixed:abc\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1\nscale.fixed = 1\nskewness = fixed:0.3\nskewness.fixed = x1\n"),
               SpecError);
  EXPECT_THROW(spec_of("scale.fixed = 1\n"), SpecError);
  EXPECT_THROW(spec_of("location.fixed = 1\n"), SpecError);
  try {
    spec_of("location.fixed = 1\n\nscale.fixed = a b\n");
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(SpecParse, FormatRoundTrip) {
  for (const auto& s : {simulation_spec(), location_scale_spec(0.3), gaussian_spec()}) {
    const auto back = spec_of(format_model_spec(s));
    EXPECT_EQ(format_model_spec(back), format_model_spec(s));
    EXPECT_EQ(back.family_name(), s.family_name());
  }
}

TEST(Design, RowsAndColumns) {
  const auto spec = spec_of("location.fixed = 1, time\nlocation.random = 1\nscale.fixed = 1, time2, x1\n");
  const auto d = build_design(two_subjects(), spec);
  EXPECT_EQ(d.n_obs(), 5);
  EXPECT_EQ(d.n_subjects(), 2u);
  Eigen::MatrixXd first(2, 2);
  first << 1, 0, 1, 2;
  EXPECT_EQ(Eigen::MatrixXd(d.parts[0].fixed.topRows(2)), first);
  EXPECT_EQ(d.parts[1].fixed(3, 1), 9.0);  // time2 at t = 3
  EXPECT_EQ(d.parts[1].fixed(3, 2), -1.0);
  EXPECT_EQ(d.q(Component::Location), 1);
  EXPECT_EQ(d.p(Component::Skewness), 0);  // inactive under fixed tau
  EXPECT_EQ(d.subject_of(0), 0u);
  EXPECT_EQ(d.subject_of(2), 1u);
  EXPECT_EQ(d.subject_of(4), 1u);
}

TEST(Design, ApplicationLayoutWidths) {
  auto data = two_subjects();
  for (auto& s : data.subjects) {
    s.covariates["age"] = s.covariates["x1"];
    s.covariates["sex"] = s.covariates["x2"];
  }
  data.covariate_names = {"x1", "x2", "age", "sex"};
  const auto spec = spec_of(
      "location.fixed = 1, time, time2, age, sex\nlocation.random = 1, time, time2\n"
      "scale.fixed = 1, time, age\nscale.random = 1, time\n"
      "skewness.fixed = age, sex\nskewness.random = 1, time\n");
  const auto d = build_design(data, spec);
  EXPECT_EQ(d.p(Component::Location), 5);
  EXPECT_EQ(d.q(Component::Location), 3);
  EXPECT_EQ(d.p(Component::Scale), 3);
  EXPECT_EQ(d.q(Component::Scale), 2);
  EXPECT_EQ(d.p(Component::Skewness), 2);
  EXPECT_EQ(d.q(Component::Skewness), 2);
}

TEST(Design, Errors) {
  EXPECT_THROW(build_design(two_subjects(), spec_of("location.fixed = 1, height\nscale.fixed = 1\n")), DataError);
  EXPECT_THROW(build_design(LongitudinalDataset{}, spec_of("location.fixed = 1\nscale.fixed = 1\n")), DataError);
}

TEST(Design, SubjectPermutationPermutesRowBlocks) {
  const auto spec = simulation_spec();
  auto data = two_subjects();
  const auto d1 = build_design(data, spec);
  std::swap(data.subjects[0], data.subjects[1]);
  const auto d2 = build_design(data, spec);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(Eigen::MatrixXd(d1.parts[k].fixed.topRows(2)), Eigen::MatrixXd(d2.parts[k].fixed.bottomRows(2)));
    EXPECT_EQ(Eigen::MatrixXd(d1.parts[k].random.bottomRows(3)), Eigen::MatrixXd(d2.parts[k].random.topRows(3)));
  }
}

TEST(EvalParams, Examples) {
  const auto spec = simulation_spec();
  const auto d = build_design(two_subjects(), spec);
  auto theta = ParameterVector::zeros(d);
  auto effects = RandomEffects::zeros(d);
  auto p = eval_params(theta, effects, d, spec, 0);
  EXPECT_EQ(p.mu, 0.0);
  EXPECT_EQ(p.sigma, 1.0);
  EXPECT_EQ(p.tau, 0.5);

  // eta_sigma = -0.6 via the intercept, eta_tau = 0.13 via x2 = 1 at subject a.
  theta.xi()[0] = -0.6;
  theta.alpha()[1] = 0.13;
  p = eval_params(theta, effects, d, spec, 0);
  EXPECT_NEAR(p.sigma, 0.5488, 1e-4);
  EXPECT_NEAR(p.tau, 0.5325, 1e-4);

  theta.beta() << 1, 2, 3, 4, 5;
  effects.values[0].row(1) << 1, 1, 1;
  // subject b, t = 3: 1 + 2*3 + 3*9 + 4*(-1) + 5*0 + (1 + 3 + 9)
  EXPECT_NEAR(eval_params(theta, effects, d, spec, 3).mu, 1 + 6 + 27 - 4 + 13, 1e-12);
}

TEST(EvalParams, ClampingKeepsParametersValid) {
  const auto spec = simulation_spec();
  const auto d = build_design(two_subjects(), spec);
  auto theta = ParameterVector::zeros(d);
  auto effects = RandomEffects::zeros(d);
  for (double big : {1e6, -1e6}) {
    theta.xi()[0] = big;
    effects.values[2].row(0) << big, big;
    const auto p = eval_params(theta, effects, d, spec, 1);
    EXPECT_GT(p.sigma, 0.0);
    EXPECT_TRUE(std::isfinite(p.sigma));
    EXPECT_GT(p.tau, 0.0);
    EXPECT_LT(p.tau, 1.0);
    EXPECT_NEAR(std::abs(std::log(p.sigma)), kEtaClamp, 1e-12);
  }
}

TEST(EvalParams, FixedTauAndLqmm) {
  const auto spec = spec_of("location.fixed = 1\nscale.fixed = 1\nskewness = fixed:0.9\n");
  const auto d = build_design(two_subjects(), spec);
  auto theta = ParameterVector::zeros(d);
  theta.xi()[0] = std::log(2.5);
  const auto p = eval_params(theta, RandomEffects::zeros(d), d, spec, 2);
  EXPECT_EQ(p.tau, 0.9);
  EXPECT_NEAR(p.sigma, 2.5, 1e-12);
}

TEST(Parameters, NamesAndFlattenRoundTrip) {
  const auto spec = simulation_spec();
  const auto d = build_design(two_subjects(), spec);
  const auto names = parameter_names(spec, d);
  EXPECT_EQ(names.size(), 5u + 6 + 3 + 3 + 2 + 3);
  EXPECT_EQ(names.front(), "beta[1]");
  EXPECT_EQ(names[5], "Sigma_b[1,1]");
  EXPECT_EQ(names[6], "Sigma_b[1,2]");
  EXPECT_EQ(names.back(), "Sigma_a[2,2]");
  const auto truth = default_truth();
  const auto flat = flatten(truth, spec);
  ASSERT_EQ(flat.size(), names.size());
  const auto back = unflatten(flat, spec, d);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(back.coef[k], truth.coef[k]);
    EXPECT_EQ(back.cov[k], truth.cov[k]);
  }
  EXPECT_THROW(unflatten(std::vector<double>(flat.begin(), flat.end() - 1), spec, d), std::invalid_argument);
  auto longer = flat;
  longer.push_back(0);
  EXPECT_THROW(unflatten(longer, spec, d), std::invalid_argument);
}

TEST(Parameters, LqmmReportsSigma) {
  const auto spec = spec_of("location.fixed = 1, time\nlocation.random = 1\nscale.fixed = 1\nskewness = fixed:0.5\n");
  const auto d = build_design(two_subjects(), spec);
  const auto names = parameter_names(spec, d);
  // p_beta + 1 + covariance entries
  EXPECT_EQ(names, (std::vector<std::string>{"beta[1]", "beta[2]", "Sigma_b[1,1]", "sigma"}));
  auto theta = ParameterVector::zeros(d);
  theta.xi()[0] = std::log(0.7);
  EXPECT_NEAR(flatten(theta, spec).back(), 0.7, 1e-15);
  EXPECT_NEAR(unflatten(flatten(theta, spec), spec, d).xi()[0], std::log(0.7), 1e-15);
}
