#pragma once

// Posterior summaries, split-chain potential scale reduction and coverage
// aggregation across simulation replications.
//
// Split R-hat: each of the M chains (length n) is cut into two halves of
// length h = floor(n / 2) (the middle draw is dropped for odd n), giving
// 2M sequences. With sequence means m_j, overall mean m and sequence
// variances s_j^2 (denominator h - 1):
//   B = h / (2M - 1) * sum_j (m_j - m)^2,   W = mean_j s_j^2,
//   V = (h - 1) / h * W + B / h,             R = sqrt(V / W).
// W == 0 and B == 0 gives R = 1; W == 0 with B > 0 gives +inf.
// Without splitting, duplicated chains give B = 0 and R = sqrt((n-1)/n) <= 1;
// with splitting, duplicated chains are no longer identical sequences, so
// that bound applies only to the unsplit statistic.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aldrm/dataset.hpp"
#include "aldrm/sampler.hpp"

namespace aldrm {

inline constexpr double kRhatThreshold = 1.1;

inline double gelman_rubin(const std::vector<std::vector<double>>& chains, bool split = true) {
  if (chains.size() < 2) throw std::invalid_argument("gelman_rubin: need at least 2 chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("gelman_rubin: chains differ in length");
  if (n < 10) throw std::invalid_argument("gelman_rubin: chains shorter than 10");

  std::vector<std::pair<const double*, std::size_t>> seqs;
  if (split) {
    const std::size_t h = n / 2;
    for (const auto& c : chains) {
      seqs.emplace_back(c.data(), h);
      seqs.emplace_back(c.data() + (n - h), h);
    }
  } else {
    for (const auto& c : chains) seqs.emplace_back(c.data(), n);
  }
  const double len = static_cast<double>(seqs.front().second);
  const double m = static_cast<double>(seqs.size());
  std::vector<double> means, vars;
  for (auto [ptr, cnt] : seqs) {
    const double mu = std::accumulate(ptr, ptr + cnt, 0.0) / len;
    double ss = 0.0;
    for (std::size_t k = 0; k < cnt; ++k) ss += (ptr[k] - mu) * (ptr[k] - mu);
    means.push_back(mu);
    vars.push_back(ss / (len - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= len / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  const double scale = std::max(1.0, std::abs(grand));
  if (w <= 1e-300 * scale * scale) {
    return b <= 1e-300 * scale * scale ? 1.0 : std::numeric_limits<double>::infinity();
  }
  const double v = (len - 1.0) / len * w + b / len;
  return std::sqrt(v / w);
}

/// Linear-interpolation empirical quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("sorted_quantile: empty input");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // 2.5% equal-tailed
  double upper = 0.0;  // 97.5%
  std::optional<double> rhat;  // absent with a single chain

  bool covers(double value) const { return lower <= value && value <= upper; }
};

using PosteriorSummary = std::vector<ParameterSummary>;

inline ParameterSummary summarize_draws(const std::string& name,
                                        const std::vector<std::vector<double>>& chains) {
  ParameterSummary s;
  s.name = name;
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  if (all.empty()) throw std::invalid_argument("summarize: no draws");
  const double n = static_cast<double>(all.size());
  s.mean = std::accumulate(all.begin(), all.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : all) ss += (v - s.mean) * (v - s.mean);
  s.sd = all.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(all.begin(), all.end());
  s.lower = sorted_quantile(all, 0.025);
  s.upper = sorted_quantile(all, 0.975);
  if (chains.size() >= 2 && chains.front().size() >= 10) s.rhat = gelman_rubin(chains);
  return s;
}

/// Mean, sd, equal-tailed 95% interval and split R-hat for every scalar
/// parameter, in canonical column order.
inline PosteriorSummary summarize(const PosteriorSample& sample) {
  if (sample.chains.empty() || sample.n_keep() == 0)
    throw std::invalid_argument("summarize: empty sample");
  PosteriorSummary out;
  for (std::size_t j = 0; j < sample.names.size(); ++j) {
    std::vector<std::vector<double>> per_chain;
    for (const auto& m : sample.chains) {
      auto col = m.col(static_cast<Eigen::Index>(j));
      per_chain.emplace_back(col.data(), col.data() + col.size());
    }
    out.push_back(summarize_draws(sample.names[j], per_chain));
  }
  return out;
}

/// True when every reported R-hat is below the threshold.
inline bool converged(const PosteriorSummary& s, double threshold = kRhatThreshold) {
  return std::all_of(s.begin(), s.end(),
                     [&](const ParameterSummary& p) { return !p.rhat || *p.rhat < threshold; });
}

inline std::vector<double> posterior_means(const PosteriorSummary& s) {
  std::vector<double> out;
  for (const auto& p : s) out.push_back(p.mean);
  return out;
}

inline void write_summary_csv(std::ostream& os, const PosteriorSummary& s) {
  os << "parameter,mean,sd,lower95,upper95,rhat\n";
  for (const auto& p : s) {
    os << csv_field(p.name) << ',' << format_real(p.mean) << ',' << format_real(p.sd) << ','
       << format_real(p.lower) << ',' << format_real(p.upper) << ','
       << (p.rhat ? format_real(*p.rhat) : std::string("NA")) << '\n';
  }
}

inline nlohmann::json summary_to_json(const PosteriorSummary& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : s) {
    nlohmann::json j{{"parameter", p.name}, {"mean", p.mean}, {"sd", p.sd},
                     {"lower95", p.lower},  {"upper95", p.upper}};
    // JSON has no infinity; an unbounded R-hat is written as the string "inf".
    if (!p.rhat) j["rhat"] = nullptr;
    else if (std::isinf(*p.rhat)) j["rhat"] = "inf";
    else j["rhat"] = *p.rhat;
    arr.push_back(j);
  }
  return arr;
}

inline PosteriorSummary summary_from_json(const nlohmann::json& arr) {
  PosteriorSummary out;
  for (const auto& j : arr) {
    ParameterSummary p;
    p.name = j.at("parameter").get<std::string>();
    p.mean = j.at("mean").get<double>();
    p.sd = j.at("sd").get<double>();
    p.lower = j.at("lower95").get<double>();
    p.upper = j.at("upper95").get<double>();
    const auto& r = j.at("rhat");
    if (r.is_string()) {
      if (r.get<std::string>() != "inf") throw std::invalid_argument("summary: bad rhat '" + r.get<std::string>() + "'");
      p.rhat = std::numeric_limits<double>::infinity();
    } else if (!r.is_null()) {
      p.rhat = r.get<double>();
    }
    out.push_back(p);
  }
  return out;
}

struct CoverageRow {
  std::string name;
  double truth = 0.0;
  double mean_estimate = 0.0;  // average posterior mean
  double mean_sd = 0.0;        // average posterior sd
  double coverage = 0.0;       // fraction of 95% intervals containing truth
  double bias = 0.0;
  double bias_se = 0.0;        // Monte Carlo standard error of the bias
  std::size_t replications = 0;
};

/// Aggregates replication summaries against the true values, matched by
/// parameter name. Parameters absent from `truth` are skipped.
inline std::vector<CoverageRow> coverage_report(const std::vector<PosteriorSummary>& reps,
                                                const std::map<std::string, double>& truth) {
  if (reps.size() < 2) throw std::invalid_argument("coverage_report: need at least 2 replications");
  std::vector<CoverageRow> out;
  for (const auto& p : reps.front()) {
    auto it = truth.find(p.name);
    if (it == truth.end()) continue;
    CoverageRow row;
    row.name = p.name;
    row.truth = it->second;
    std::vector<double> est;
    double covered = 0.0, sd_sum = 0.0;
    for (const auto& rep : reps) {
      auto q = std::find_if(rep.begin(), rep.end(),
                            [&](const ParameterSummary& s) { return s.name == p.name; });
      if (q == rep.end()) throw std::invalid_argument("coverage_report: '" + p.name + "' missing");
      est.push_back(q->mean);
      sd_sum += q->sd;
      covered += q->covers(row.truth) ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(reps.size());
    row.replications = reps.size();
    row.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / n;
    row.mean_sd = sd_sum / n;
    row.coverage = covered / n;
    row.bias = row.mean_estimate - row.truth;
    double ss = 0.0;
    for (double e : est) ss += (e - row.mean_estimate) * (e - row.mean_estimate);
    row.bias_se = std::sqrt(ss / (n - 1.0) / n);
    out.push_back(row);
  }
  return out;
}

inline nlohmann::json coverage_to_json(const std::vector<CoverageRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"parameter", r.name},
                   {"truth", r.truth},
                   {"mean_estimate", r.mean_estimate},
                   {"mean_sd", r.mean_sd},
                   {"coverage", r.coverage},
                   {"bias", r.bias},
                   {"bias_se", r.bias_se},
                   {"replications", r.replications}});
  return arr;
}

inline void write_chain_csv(std::ostream& os, const std::vector<std::string>& names,
                            const Eigen::MatrixXd& draws) {
  for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "," : "") << csv_field(names[j]);
  os << '\n';
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    for (Eigen::Index c = 0; c < draws.cols(); ++c) os << (c ? "," : "") << format_real(draws(r, c));
    os << '\n';
  }
}

inline Eigen::MatrixXd read_chain_csv(std::istream& is, std::vector<std::string>& names) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty chain file");
  names = split_csv_line(line);
  std::vector<std::vector<double>> rows;
  long lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != names.size()) throw DataError("ragged chain row", lineno);
    std::vector<double> r;
    for (const auto& c : cells) r.push_back(parse_real(c, lineno, "draw"));
    rows.push_back(std::move(r));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < names.size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

}  // namespace aldrm
