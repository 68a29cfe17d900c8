// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: aldrm_acceptance [criterion numbers...]   (default: all, 1-9)
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aldrm/aldrm.hpp"
#include "support/conditionals.hpp"
#include "support/geweke.hpp"
#include "support/oracles.hpp"

using namespace aldrm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

SamplerConfig study_config(std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.n_chains = 3;
  cfg.n_iter = 5000;
  cfg.burn_in = 2000;
  cfg.thin = 5;
  cfg.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome distribution_identities() {
  Rng rng(101);
  auto unif = [&](double a, double b) { return a + (b - a) * rng.uniform(); };
  double worst_inverse = 0.0, worst_integral = 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 1000; ++k) {
    const ALParams p{unif(-10.0, 10.0), std::exp(unif(std::log(0.05), std::log(20.0))), unif(0.02, 0.98)};
    for (int j = 1; j <= 99; ++j) {
      const double prob = j / 100.0;
      worst_inverse = std::max(worst_inverse, std::abs(cdf(quantile(prob, p), p) - prob));
    }
    for (int j = 0; j < 3; ++j) {
      const double y = quantile(unif(0.001, 0.999), p);
      auto f = [&](double x) { return pdf(x, p); };
      const double integral = y <= p.mu ? oracle::integrate(f, -inf, y)
                                        : oracle::integrate(f, -inf, p.mu) + oracle::integrate(f, p.mu, y);
      worst_integral = std::max(worst_integral, std::abs(integral - cdf(y, p)));
    }
  }
  return {worst_inverse < 1e-10 && worst_integral < 1e-8,
          "max |cdf(quantile(p)) - p| = " + fmt("%.2e", worst_inverse) + " (< 1e-10), max |int pdf - cdf| = " +
              fmt("%.2e", worst_integral) + " (< 1e-8) over 1000 triples"};
}

Outcome mixture_equivalence() {
  bool pass = true;
  double worst_ks = 0.0, worst_z = 0.0;
  std::uint64_t stream = 0;
  for (double tau : {0.1, 0.25, 0.5, 0.75, 0.9})
    for (double sigma : {0.5, 1.0, 2.0}) {
      const ALParams p{0.5, sigma, tau};
      Rng rng(mix_seed(202, stream++));
      std::vector<double> x(1000000);
      for (auto& v : x) v = sample_mixture(p, rng);
      const double n = static_cast<double>(x.size());
      const double m = oracle::sample_mean(x), var = oracle::sample_variance(x);
      double m4 = 0.0;
      for (double v : x) m4 += std::pow(v - m, 4);
      m4 /= n;
      // Closed forms written out independently of the library.
      const double mean_exact = p.mu + sigma * (1 - 2 * tau) / (tau * (1 - tau));
      const double var_exact = sigma * sigma * (1 - 2 * tau + 2 * tau * tau) / (tau * tau * (1 - tau) * (1 - tau));
      const double z_mean = (m - mean_exact) / std::sqrt(var / n);
      const double z_var = (var - var_exact) / std::sqrt((m4 - var * var) / n);
      std::sort(x.begin(), x.end());
      const double ks = oracle::ks_distance(x, [&](double y) { return cdf(y, p); });
      worst_ks = std::max(worst_ks, ks);
      worst_z = std::max({worst_z, std::abs(z_mean), std::abs(z_var)});
      const bool ok = ks < 0.005 && std::abs(z_mean) <= 4 && std::abs(z_var) <= 4;
      if (!ok)
        std::printf("    tau=%.2f sigma=%.1f: KS %.4f, z(mean) %.2f, z(var) %.2f\n", tau, sigma, ks, z_mean, z_var);
      pass = pass && ok;
    }
  return {pass, "15 (tau, sigma) cases, 1e6 draws each: max KS = " + fmt("%.4f", worst_ks) +
                    " (< 0.005), max |z| of mean/variance = " + fmt("%.2f", worst_z) + " (<= 4)"};
}

Outcome conditional_oracles() {
  bool pass = true;
  double worst = 0.0;
  auto report = [&](const std::string& name, double tv) {
    std::printf("    %-45s TV %.4f\n", name.c_str(), tv);
    worst = std::max(worst, tv);
    pass = pass && tv <= 0.02;
  };
  const std::vector<std::pair<double, double>> gig{{1e-6, 5.0}, {0.01, 1.0}, {1.0, 1.0}, {10.0, 0.1}, {100.0, 100.0}};
  for (std::size_t k = 0; k < gig.size(); ++k)
    report("GIG(1/2, chi=" + fmt("%g", gig[k].first) + ", psi=" + fmt("%g", gig[k].second) + ")",
           oracle::gig_tv(gig[k].first, gig[k].second, 100000, mix_seed(303, k)));
  for (double tau : {0.1, 0.5, 0.9}) {
    const auto r = oracle::run_latent_weight_experiment(0.7, 0.2, 1.3, tau, 100000, mix_seed(304, static_cast<std::uint64_t>(tau * 10)));
    report("w update, tau=" + fmt("%.1f", tau), r.tv);
  }
  for (auto target : {MHTarget::Augmented, MHTarget::Marginal})
    for (auto block : {oracle::Block::ScaleCoef, oracle::Block::ScaleEffect, oracle::Block::SkewCoef,
                       oracle::Block::SkewEffect}) {
      const auto r = oracle::run_block_experiment(block, target, 100000, 10, 305);
      report(r.name, r.tv);
      pass = pass && r.edge_mass < 1e-8;
    }
  const auto iw = oracle::inverse_wishart_1x1(30, 100000, 306);
  std::printf("    inverse-Wishart 1x1: mean %.5f vs %.5f (se %.1e), var %.3e vs %.3e (se %.1e)\n", iw.mean,
              iw.mean_expected, iw.mean_se, iw.var, iw.var_expected, iw.var_se);
  pass = pass && iw.ok(4.0);
  return {pass, "GIG, w-update and 8 MH blocks at 1e5 draws: max TV = " + fmt("%.4f", worst) +
                    " (<= 0.02); inverse-Wishart 1x1 moments " + (iw.ok(4.0) ? "within" : "outside") + " 4 se"};
}

Outcome geweke() {
  bool pass = true;
  std::string detail;
  for (auto target : {MHTarget::Augmented, MHTarget::Marginal}) {
    const auto r = oracle::run_geweke(5000, 404, target);
    for (const auto& row : r.rows)
      if (std::abs(row.z()) > 3.0) std::printf("    %s: z = %.2f\n", row.name.c_str(), row.z());
    pass = pass && r.max_abs_z() <= 4.0;
    detail += std::string(detail.empty() ? "" : ", ") +
              (target == MHTarget::Augmented ? "augmented" : "marginal") + " target max |z| = " +
              fmt("%.2f", r.max_abs_z());
  }
  return {pass, "5000 cycles, " + detail + " (<= 4)"};
}

bool is_fixed_effect(const std::string& name) {
  return name.rfind("beta[", 0) == 0 || name.rfind("xi[", 0) == 0 || name.rfind("alpha[", 0) == 0;
}

Outcome recovery() {
  // Single dataset at the full design size.
  Scenario sc;
  sc.n = 200;
  sc.m = 50;
  sc.seed = 7;
  const auto data = generate(sc);
  const auto sample = run(data, simulation_spec(), study_config(1));
  const auto summary = summarize(sample);
  const auto truth = truth_map(sc);
  int covered = 0, total = 0;
  std::printf("    %-14s %9s %9s %9s %9s %6s\n", "parameter", "truth", "mean", "2.5%", "97.5%", "rhat");
  for (const auto& p : summary) {
    const double t = truth.at(p.name);
    const bool ok = p.covers(t);
    covered += ok;
    ++total;
    std::printf("    %-14s %9.4f %9.4f %9.4f %9.4f %6.3f %s\n", p.name.c_str(), t, p.mean, p.lower, p.upper,
                p.rhat.value_or(NAN), ok ? "" : "MISS");
  }
  const bool single_ok = total == 22 && total - covered <= 3;

  // Replicated study at a smaller design.
  Scenario small;
  small.n = 100;
  small.m = 20;
  small.seed = 505;
  const auto report = run_study(small, 20, {{"ALDRM", simulation_spec()}}, study_config(506));
  double hits = 0.0, intervals = 0.0;
  for (const auto& row : report.coverage_all) {
    if (!is_fixed_effect(row.name)) continue;
    hits += row.coverage * static_cast<double>(row.replications);
    intervals += static_cast<double>(row.replications);
    std::printf("    study %-8s coverage %.2f  bias %+.4f (se %.4f)\n", row.name.c_str(), row.coverage, row.bias,
                row.bias_se);
  }
  const double pooled = intervals > 0 ? hits / intervals : 0.0;
  const bool study_ok = pooled >= 0.80 && pooled <= 1.00;
  return {single_ok && study_ok,
          "n=200/m=50: " + std::to_string(covered) + "/" + std::to_string(total) +
              " true values inside 95% intervals (>= 19/22); 20-replication n=100/m=20 study: pooled fixed-effect "
              "coverage " + fmt("%.3f", pooled) + " in [0.80, 1.00], " + std::to_string(report.flagged) +
              " replications with R-hat >= 1.1"};
}

// Shared by the selection and predictive-error criteria.
const StudyReport& selection_study(std::size_t m) {
  static std::map<std::size_t, StudyReport> cache;
  auto it = cache.find(m);
  if (it != cache.end()) return it->second;
  Scenario sc;
  sc.n = 100;
  sc.m = m;
  sc.seed = 606;
  const auto t0 = std::chrono::steady_clock::now();
  auto report = run_study(sc, 20, default_competitors(), study_config(607), [&](const ReplicationResult& r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("    [m=%zu] replication %zu done (%.0f s)\n", m, r.index + 1, s);
    std::fflush(stdout);
  });
  return cache.emplace(m, std::move(report)).first->second;
}

Outcome model_selection() {
  const auto& m50 = selection_study(50);
  const auto& m10 = selection_study(10);
  bool pass = true;
  double worst_aldrm = 1.0, worst_lsmm = 0.0;
  std::printf("    %-10s %8s %8s %8s   %s\n", "set/loss", "ALDRM", "LSLQMM", "LSMM", "ALDRM at m=10");
  for (const auto& [key, freq] : m50.selection_frequency) {
    const double low = m10.selection_frequency.at(key)[0];
    std::printf("    %-10s %8.2f %8.2f %8.2f   %.2f\n", key.c_str(), freq[0], freq[1], freq[2], low);
    worst_aldrm = std::min(worst_aldrm, freq[0]);
    worst_lsmm = std::max(worst_lsmm, freq[2]);
    pass = pass && freq[0] >= 0.80 && freq[2] == 0.0 && low <= freq[0];
  }
  return {pass, "20 replications n=100/m=50, 3 sets x 2 losses: min ALDRM rate " + fmt("%.2f", worst_aldrm) +
                    " (>= 0.80), max LSMM rate " + fmt("%.2f", worst_lsmm) +
                    " (= 0); m=10 rate <= m=50 rate for every set/loss: " + (pass ? "yes" : "see table")};
}

Outcome predictive_errors_asymmetry() {
  const auto& study = selection_study(50);
  int mse_wins = 0, mae_wins = 0;
  for (const auto& rep : study.replications) {
    const auto& al = rep.fits[0].errors;
    const auto& ls = rep.fits[1].errors;
    const auto& g = rep.fits[2].errors;
    mse_wins += al.at("mean").mse <= g.at("mean").mse;
    mae_wins += al.at("median").mae <= ls.at("median").mae;
    std::printf("    rep %2zu: MSE ALDRM-mean %.4f LSMM %.4f | MAE ALDRM-median %.4f LSLQMM %.4f\n", rep.index + 1,
                al.at("mean").mse, g.at("mean").mse, al.at("median").mae, ls.at("median").mae);
  }
  const double n = static_cast<double>(study.replications.size());
  const bool pass = mse_wins / n >= 0.6 && mae_wins / n >= 0.6;
  return {pass, "ALDRM-mean MSE <= LSMM MSE in " + std::to_string(mse_wins) +
                    "/20, ALDRM-median MAE <= LSLQMM MAE in " + std::to_string(mae_wins) + "/20 (each >= 12)"};
}

Outcome gaussian_path() {
  Scenario sc;
  sc.n = 100;
  sc.m = 20;
  sc.seed = 808;
  sc.spec = gaussian_spec();
  const auto data = generate(sc);
  const auto summary = summarize(run_gaussian(data, gaussian_spec(), study_config(809)));
  const double truth = sc.truth.xi()[1];
  const auto it = std::find_if(summary.begin(), summary.end(), [](const auto& s) { return s.name == "xi[2]"; });
  const bool sign = (it->mean < 0) == (truth < 0);
  const double z = (it->mean - truth) / it->sd;
  return {sign && std::abs(z) <= 3.0, "xi_time posterior mean " + fmt("%.4f", it->mean) + " (sd " +
                                          fmt("%.4f", it->sd) + ") vs truth " + fmt("%.3f", truth) +
                                          ": sign " + (sign ? "correct" : "wrong") + ", |z| = " +
                                          fmt("%.2f", std::abs(z)) + " (<= 3)"};
}

Outcome rhat_diagnostics() {
  double lo = 10, hi = 0, displaced = 1e9;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(mix_seed(909, s));
    std::vector<std::vector<double>> chains(4, std::vector<double>(5000));
    for (auto& c : chains)
      for (auto& v : c) v = rng.normal();
    const double r = gelman_rubin(chains);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    for (auto& v : chains[3]) v += 3.0;
    displaced = std::min(displaced, gelman_rubin(chains));
  }
  return {lo >= 0.99 && hi <= 1.05 && displaced > 1.5,
          "iid chains (10 sets of 4 x 5000): R-hat in [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) +
              "] within [0.99, 1.05]; one chain displaced by 3 sd: min R-hat " + fmt("%.2f", displaced) + " (> 1.5)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"distribution identities", distribution_identities},
      {"mixture equivalence", mixture_equivalence},
      {"conditional-update oracles", conditional_oracles},
      {"successive-conditional (Geweke) validation", geweke},
      {"parameter recovery", recovery},
      {"model selection", model_selection},
      {"predictive-error asymmetry", predictive_errors_asymmetry},
      {"Gaussian path", gaussian_path},
      {"R-hat diagnostics", rhat_diagnostics},
  };
  std::set<int> selected;
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "usage: %s [criterion 1-%zu ...]\n", argv[0], criteria.size());
      return 2;
    }
    selected.insert(k);
  }
  if (selected.empty())
    for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) selected.insert(k);

  std::vector<std::string> lines;
  bool all = true;
  for (int k : selected) {
    const auto& [name, fn] = criteria[static_cast<std::size_t>(k - 1)];
    std::printf("criterion %d: %s\n", k, name.c_str());
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, " [%.1f s]", s);
    lines.push_back(std::string(o.pass ? "PASS" : "FAIL") + "  criterion " + std::to_string(k) + " (" + name +
                    "): " + o.detail + buf);
    std::printf("%s\n\n", lines.back().c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  std::printf("==== acceptance summary ====\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return all ? 0 : 1;
}
