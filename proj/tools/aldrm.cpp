// aldrm: simulate, fit, select, summarize and study commands.
//
// Exit codes: 0 ok, 2 usage, 3 data or model-spec error, 4 convergence
// (some R-hat >= 1.1 without --no-strict), 1 anything else.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "aldrm/aldrm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aldrm;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kOutputRootVar = "ALDRM_OUTPUT_ROOT";

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kConvergence = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// Relative paths are resolved against $ALDRM_OUTPUT_ROOT when it is set;
// an empty --out becomes <root>/<command>.
fs::path resolve_out(const std::string& out, const std::string& command) {
  const char* root = std::getenv(kOutputRootVar);
  if (out.empty()) {
    if (!root) throw UsageError("--out is required (or set " + std::string(kOutputRootVar) + ")");
    return fs::path(root) / command;
  }
  fs::path p(out);
  if (p.is_relative() && root) return fs::path(root) / p;
  return p;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError("output path '" + dir.string() + "' is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force)
        throw UsageError("output directory '" + dir.string() + "' is not empty (use --force)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  return os;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

json versions() {
  return {{"aldrm", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__},
          {"cxx", __cplusplus}};
}

void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                    std::uint64_t seed, const json& inputs, const json& timings, json extra = {}) {
  json m{{"command", command},
         {"config", config},
         {"config_hash", digest_bytes(config.dump())},
         {"seed", seed},
         {"versions", versions()},
         {"inputs", inputs},
         {"timings", timings}};
  for (auto it = extra.begin(); extra.is_object() && it != extra.end(); ++it) m[it.key()] = it.value();
  open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// ---- sampler configuration ----

struct SamplerOptions {
  std::string config_file;
  std::optional<int> chains;
  std::optional<long> iter, burnin, thin;
  std::optional<std::uint64_t> seed;
  std::string mh_target;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "Sampler configuration JSON");
    app->add_option("--chains", chains, "Number of chains");
    app->add_option("--iter", iter, "Iterations per chain, burn-in included");
    app->add_option("--burnin", burnin, "Burn-in iterations");
    app->add_option("--thin", thin, "Thinning interval");
    app->add_option("--seed", seed, "Sampler seed");
    app->add_option("--mh-target", mh_target, "Metropolis target for scale/skewness")
        ->check(CLI::IsMember({"augmented", "marginal"}));
  }

  SamplerConfig build() const {
    SamplerConfig cfg;
    if (!config_file.empty()) {
      const json j = read_json(config_file);
      auto arr3 = [&](const json& o, const char* key, std::array<double, 3>& dst) {
        if (!o.contains(key)) return;
        const auto& v = o.at(key);
        if (v.is_number()) dst.fill(v.get<double>());
        else dst = v.get<std::array<double, 3>>();
      };
      try {
        if (j.contains("chains")) cfg.n_chains = j.at("chains").get<int>();
        if (j.contains("iter")) cfg.n_iter = j.at("iter").get<long>();
        if (j.contains("burnin")) cfg.burn_in = j.at("burnin").get<long>();
        if (j.contains("thin")) cfg.thin = j.at("thin").get<long>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("adapt")) cfg.adapt = j.at("adapt").get<bool>();
        if (j.contains("mh_target"))
          cfg.mh_target = j.at("mh_target").get<std::string>() == "marginal" ? MHTarget::Marginal
                                                                             : MHTarget::Augmented;
        if (j.contains("priors")) {
          const auto& p = j.at("priors");
          arr3(p, "coef_mean", cfg.priors.coef_mean);
          arr3(p, "coef_variance", cfg.priors.coef_variance);
          arr3(p, "iw_dof_offset", cfg.priors.iw_dof_offset);
          arr3(p, "iw_scale", cfg.priors.iw_scale);
        }
      } catch (const json::exception& e) {
        throw DataError(config_file + ": " + e.what());
      }
    }
    if (chains) cfg.n_chains = *chains;
    if (iter) cfg.n_iter = *iter;
    if (burnin) cfg.burn_in = *burnin;
    if (thin) cfg.thin = *thin;
    if (seed) cfg.seed = *seed;
    if (!mh_target.empty()) cfg.mh_target = mh_target == "marginal" ? MHTarget::Marginal : MHTarget::Augmented;
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

json config_to_json(const SamplerConfig& c) {
  return {{"chains", c.n_chains},
          {"iter", c.n_iter},
          {"burnin", c.burn_in},
          {"thin", c.thin},
          {"seed", c.seed},
          {"adapt", c.adapt},
          {"mh_target", c.mh_target == MHTarget::Marginal ? "marginal" : "augmented"},
          {"priors",
           {{"coef_mean", c.priors.coef_mean},
            {"coef_variance", c.priors.coef_variance},
            {"iw_dof_offset", c.priors.iw_dof_offset},
            {"iw_scale", c.priors.iw_scale}}}};
}

// ---- model spec overrides ----

ModelSpec load_spec(const std::string& path, const std::string& family,
                    const std::optional<double>& tau_fixed) {
  ModelSpec spec = parse_model_spec_file(path);
  if (family == "gaussian") {
    spec.family = Family::Gaussian;
    spec.tau_fixed.reset();
  } else if (family == "al" && spec.family != Family::AL) {
    spec.family = Family::AL;
    if (spec.skewness.empty()) spec.tau_fixed = 0.5;
  }
  if (tau_fixed) {
    if (spec.family == Family::Gaussian) throw UsageError("--tau-fixed needs the AL family");
    spec.tau_fixed = *tau_fixed;
  }
  spec.validate();
  return spec;
}

// ---- effects file ----

void write_effects_csv(std::ostream& os, const RandomEffects& e, const ModelSpec& spec,
                       const DesignBundle& d) {
  static const std::array<const char*, 3> names{"location", "scale", "skewness"};
  os << "id,component,term,mean\n";
  for (Component c : kComponents) {
    const int k = index_of(c);
    const auto& terms = spec.predictor(c).random_terms;
    for (std::size_t i = 0; i < d.n_subjects(); ++i)
      for (Eigen::Index j = 0; j < e.values[k].cols(); ++j)
        os << csv_field(d.subject_ids[i]) << ',' << names[k] << ',' << terms[j].label() << ','
           << format_real(e.values[k](static_cast<Eigen::Index>(i), j)) << '\n';
  }
}

RandomEffects read_effects_csv(const fs::path& path, const ModelSpec& spec, const DesignBundle& d) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  RandomEffects e = RandomEffects::zeros(d);
  std::map<std::string, std::size_t> subject;
  for (std::size_t i = 0; i < d.n_subjects(); ++i) subject[d.subject_ids[i]] = i;
  std::string line;
  std::getline(is, line);
  long lineno = 1;
  std::set<std::tuple<std::size_t, int, Eigen::Index>> filled;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw DataError(path.string() + ": expected 4 fields", lineno);
    auto si = subject.find(cells[0]);
    if (si == subject.end()) throw DataError(path.string() + ": unknown subject '" + cells[0] + "'", lineno);
    int k = cells[1] == "location" ? 0 : cells[1] == "scale" ? 1 : cells[1] == "skewness" ? 2 : -1;
    if (k < 0) throw DataError(path.string() + ": unknown component '" + cells[1] + "'", lineno);
    const auto& terms = spec.predictor(static_cast<Component>(k)).random_terms;
    Eigen::Index j = -1;
    for (std::size_t t = 0; t < terms.size(); ++t)
      if (terms[t].label() == cells[2]) j = static_cast<Eigen::Index>(t);
    if (j < 0 || j >= e.values[k].cols())
      throw DataError(path.string() + ": unknown random term '" + cells[2] + "'", lineno);
    e.values[k](static_cast<Eigen::Index>(si->second), j) = parse_real(cells[3], lineno, "mean");
    filled.insert({si->second, k, j});
  }
  std::size_t expected = 0;
  for (int k = 0; k < 3; ++k) expected += static_cast<std::size_t>(e.values[k].size());
  if (filled.size() != expected) throw DataError(path.string() + ": incomplete random-effect table");
  return e;
}

void print_summary(std::ostream& os, const PosteriorSummary& s) {
  os << std::left;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %12s %10s %12s %12s %8s\n", "parameter", "mean", "sd", "2.5%",
                "97.5%", "rhat");
  os << buf;
  for (const auto& p : s) {
    std::snprintf(buf, sizeof buf, "%-16s %12.5g %10.4g %12.5g %12.5g %8s\n", p.name.c_str(), p.mean, p.sd,
                  p.lower, p.upper, p.rhat ? std::to_string(*p.rhat).substr(0, 6).c_str() : "NA");
    os << buf;
  }
}

LongitudinalDataset load_data(const std::string& path, const std::vector<std::string>& standardize) {
  auto data = read_dataset_csv(path);
  if (!standardize.empty()) standardize_covariates(data, standardize);
  return data;
}

// ---- simulate ----

struct SimulateOptions {
  std::string scenario_file;
  std::string builtin = "table1-default";
  std::optional<std::size_t> n, m;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

Scenario build_scenario(const std::string& file, const std::string& builtin,
                        const std::optional<std::size_t>& n, const std::optional<std::size_t>& m,
                        const std::optional<std::uint64_t>& seed) {
  Scenario sc;
  if (!file.empty()) {
    try {
      sc = scenario_from_json(read_json(file));
    } catch (const json::exception& e) {
      throw DataError(file + ": " + e.what());
    } catch (const SpecError& e) {
      throw DataError(file + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw DataError(file + ": " + e.what());
    }
  } else if (builtin != "table1-default") {
    throw UsageError("unknown built-in scenario '" + builtin + "'");
  }
  if (n) sc.n = *n;
  if (m) sc.m = *m;
  if (seed) sc.seed = *seed;
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return sc;
}

int cmd_simulate(const SimulateOptions& o) {
  Clock clock;
  const Scenario sc = build_scenario(o.scenario_file, o.builtin, o.n, o.m, o.seed);
  const fs::path dir = resolve_out(o.out, "simulate");
  prepare_out_dir(dir, o.force);
  const auto data = generate(sc);
  {
    auto os = open_out(dir / "data.csv");
    write_dataset_csv(os, data);
  }
  const json scj = scenario_to_json(sc);
  open_out(dir / "scenario.json") << scj.dump(2) << '\n';
  json inputs = json::object();
  if (!o.scenario_file.empty()) inputs["scenario"] = digest_bytes(read_text(o.scenario_file));
  write_manifest(dir, "simulate", scj, sc.seed, inputs, {{"total_seconds", clock.seconds()}},
                 {{"dataset_digest", dataset_digest(data)},
                  {"rows", data.n_observations()},
                  {"subjects", data.n_subjects()}});
  std::cout << "wrote " << data.n_observations() << " rows to " << (dir / "data.csv").string() << '\n';
  return kOk;
}

// ---- fit ----

struct FitOptions {
  std::string data, spec, out, family, standardize;
  std::optional<double> tau_fixed;
  SamplerOptions sampler;
  bool no_strict = false;
  bool force = false;
};

int cmd_fit(const FitOptions& o) {
  Clock clock;
  const auto std_cols = split_list(o.standardize);
  const auto data = load_data(o.data, std_cols);
  const ModelSpec spec = load_spec(o.spec, o.family, o.tau_fixed);
  const auto cfg = o.sampler.build();
  DesignBundle d;
  try {
    d = build_design(data, spec);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  const fs::path dir = resolve_out(o.out, "fit");
  prepare_out_dir(dir, o.force);

  const auto sample = run(d, spec, cfg);
  const auto summary = summarize(sample);
  for (std::size_t c = 0; c < sample.n_chains(); ++c) {
    auto os = open_out(dir / ("chain_" + std::to_string(c + 1) + ".csv"));
    write_chain_csv(os, sample.names, sample.chains[c]);
  }
  {
    auto os = open_out(dir / "summary.csv");
    write_summary_csv(os, summary);
  }
  open_out(dir / "summary.json") << summary_to_json(summary).dump(2) << '\n';
  {
    auto os = open_out(dir / "effects.csv");
    write_effects_csv(os, sample.pooled_effect_means(), spec, d);
  }
  open_out(dir / "model.spec") << format_model_spec(spec);

  json acc = json::array();
  for (const auto& a : sample.acceptance) acc.push_back({{"coef", a.coef}, {"effects", a.effects}});
  const bool ok = converged(summary);
  write_manifest(dir, "fit", config_to_json(cfg), cfg.seed,
                 {{"data", o.data}, {"spec", o.spec}, {"spec_digest", digest_bytes(read_text(o.spec))}},
                 {{"chain_seconds", sample.seconds}, {"total_seconds", clock.seconds()}},
                 {{"dataset_digest", dataset_digest(read_dataset_csv(o.data))},
                  {"standardize", std_cols},
                  {"label", spec.family_name()},
                  {"model", spec.family_name()},
                  {"acceptance", acc},
                  {"converged", ok}});
  print_summary(std::cout, summary);
  if (!ok) {
    std::cerr << "warning: some R-hat >= " << kRhatThreshold << '\n';
    if (!o.no_strict) return kConvergence;
  }
  return kOk;
}

// ---- select ----

struct SelectOptions {
  std::string data, out, set = "G1", loss = "abs";
  std::vector<std::string> fits;
  bool force = false;
};

int cmd_select(const SelectOptions& o) {
  Clock clock;
  if (o.fits.size() < 2) throw UsageError("select needs at least two --fit directories");
  QuantileSet set;
  try {
    set = QuantileSet::parse(o.set);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Loss loss = o.loss == "sq" ? Loss::Quadratic : Loss::Absolute;
  const auto raw = read_dataset_csv(o.data);
  const std::string digest = dataset_digest(raw);

  std::vector<FittedModel> models;
  std::vector<DesignBundle> designs;
  std::set<std::string> used;
  json inputs{{"data", o.data}, {"fits", o.fits}};
  for (const auto& f : o.fits) {
    const fs::path fd(f);
    const json man = read_json(fd / "manifest.json");
    if (man.value("dataset_digest", "") != digest)
      throw DataError("fit '" + f + "' was made on a different dataset (digest " +
                      man.value("dataset_digest", "?") + ", data " + digest + ")");
    auto data = raw;
    const auto cols = man.value("standardize", std::vector<std::string>{});
    if (!cols.empty()) standardize_covariates(data, cols);
    FittedModel fit;
    fit.spec = parse_model_spec_file((fd / "model.spec").string());
    auto d = build_design(data, fit.spec);
    fit.theta = unflatten(posterior_means(summary_from_json(read_json(fd / "summary.json"))), fit.spec, d);
    fit.effects = read_effects_csv(fd / "effects.csv", fit.spec, d);
    std::string label = man.value("label", fit.spec.family_name());
    for (int k = 2; used.count(label); ++k) label = man.value("label", fit.spec.family_name()) + "#" + std::to_string(k);
    used.insert(label);
    fit.label = label;
    models.push_back(std::move(fit));
    designs.push_back(std::move(d));
  }

  const fs::path dir = resolve_out(o.out, "select");
  prepare_out_dir(dir, o.force);
  std::vector<double> values;
  json reports = json::array();
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto r = criterion(models[k], designs[k], set, loss);
    values.push_back(r.global);
    reports.push_back(criterion_to_json(r));
    auto os = open_out(dir / ("criterion_" + std::to_string(k + 1) + ".csv"));
    write_criterion_csv(os, r);
    auto qs = open_out(dir / ("quantiles_" + std::to_string(k + 1) + ".csv"));
    write_quantile_trajectories(qs, models[k], designs[k], set);
  }
  bool tied = false;
  const std::size_t best = select_best(values, &tied);
  std::vector<std::string> tied_models;
  for (std::size_t k = 0; k < models.size(); ++k)
    if (values[k] == values[best]) tied_models.push_back(models[k].label);

  json errors = json::array();
  {
    auto os = open_out(dir / "errors.csv");
    os << "model,prediction,MSE,MAE\n";
    for (std::size_t k = 0; k < models.size(); ++k)
      for (auto kind : {PredictionKind::Mode, PredictionKind::Mean, PredictionKind::Median}) {
        const auto e = predictive_errors(models[k], designs[k], kind);
        os << csv_field(models[k].label) << ',' << prediction_kind_name(kind) << ',' << format_real(e.mse) << ','
           << format_real(e.mae) << '\n';
        errors.push_back({{"model", models[k].label},
                          {"prediction", prediction_kind_name(kind)},
                          {"MSE", e.mse},
                          {"MAE", e.mae}});
      }
  }
  json result{{"set", set.name},  {"orders", set.orders}, {"loss", loss_name(loss)},
              {"models", reports}, {"winner", models[best].label}, {"tie", tied},
              {"tied_models", tied ? json(tied_models) : json::array()}, {"errors", errors}};
  open_out(dir / "criterion.json") << result.dump(2) << '\n';
  write_manifest(dir, "select", {{"set", set.name}, {"orders", set.orders}, {"loss", loss_name(loss)}}, 0,
                 inputs, {{"total_seconds", clock.seconds()}}, {{"dataset_digest", digest}});

  for (std::size_t k = 0; k < models.size(); ++k)
    std::cout << models[k].label << "\t" << loss_name(loss) << "(" << set.name << ") = " << std::setprecision(6) << values[k]
              << '\n';
  if (tied) {
    std::cout << "tie between";
    for (const auto& t : tied_models) std::cout << ' ' << t;
    std::cout << '\n';
  } else {
    std::cout << "selected " << models[best].label << '\n';
  }
  return kOk;
}

// ---- summarize ----

struct SummarizeOptions {
  std::string fit, out;
  bool force = false;
};

int cmd_summarize(const SummarizeOptions& o) {
  const fs::path fd(o.fit);
  std::vector<fs::path> files;
  for (int c = 1; fs::exists(fd / ("chain_" + std::to_string(c) + ".csv")); ++c)
    files.push_back(fd / ("chain_" + std::to_string(c) + ".csv"));
  if (files.empty()) throw DataError("no chain files in '" + o.fit + "'");
  PosteriorSample sample;
  for (const auto& f : files) {
    std::ifstream is(f);
    std::vector<std::string> names;
    sample.chains.push_back(read_chain_csv(is, names));
    if (sample.names.empty()) sample.names = names;
    else if (names != sample.names) throw DataError("chain files disagree on parameter names");
  }
  const auto summary = summarize(sample);
  print_summary(std::cout, summary);
  if (!o.out.empty()) {
    const fs::path dir = resolve_out(o.out, "summarize");
    prepare_out_dir(dir, o.force);
    auto os = open_out(dir / "summary.csv");
    write_summary_csv(os, summary);
    open_out(dir / "summary.json") << summary_to_json(summary).dump(2) << '\n';
    json inputs = json::array();
    for (const auto& f : files) inputs.push_back({{"file", f.string()}, {"digest", digest_bytes(read_text(f))}});
    write_manifest(dir, "summarize", {{"fit", o.fit}}, 0, inputs, json::object());
  }
  return kOk;
}

// ---- study ----

struct StudyOptions {
  SimulateOptions sim;
  std::size_t replications = 20;
  std::string models = "ALDRM,LSLQMM,LSMM";
  SamplerOptions sampler;
};

int cmd_study(const StudyOptions& o) {
  Clock clock;
  const Scenario sc = build_scenario(o.sim.scenario_file, o.sim.builtin, o.sim.n, o.sim.m, o.sim.seed);
  const auto cfg = o.sampler.build();
  std::vector<ModelToFit> models;
  for (const auto& name : split_list(o.models)) {
    bool found = false;
    for (const auto& m : default_competitors())
      if (m.label == name) {
        models.push_back(m);
        found = true;
      }
    if (!found) throw UsageError("unknown model '" + name + "' (ALDRM, LSLQMM, LSMM)");
  }
  const fs::path dir = resolve_out(o.sim.out, "study");
  prepare_out_dir(dir, o.sim.force);
  const auto report = run_study(sc, o.replications, models, cfg, [&](const ReplicationResult& r) {
    std::cerr << "replication " << r.index + 1 << "/" << o.replications << " done\n";
  });
  open_out(dir / "study.json") << study_to_json(report).dump(2) << '\n';
  json config{{"scenario", scenario_to_json(sc)},
              {"sampler", config_to_json(cfg)},
              {"replications", o.replications},
              {"models", o.models}};
  write_manifest(dir, "study", config, cfg.seed, json::object(), {{"total_seconds", clock.seconds()}});
  for (const auto& [key, freq] : report.selection_frequency) {
    std::cout << key;
    for (std::size_t k = 0; k < freq.size(); ++k) std::cout << '\t' << report.model_labels[k] << '=' << freq[k];
    std::cout << '\n';
  }
  if (report.flagged) std::cout << report.flagged << " replication(s) flagged for R-hat >= 1.1\n";
  return kOk;
}

void add_scenario_options(CLI::App* app, SimulateOptions& o) {
  app->add_option("--scenario", o.scenario_file, "Scenario JSON file");
  app->add_option("--builtin", o.builtin, "Built-in scenario name")->capture_default_str();
  app->add_option("--n", o.n, "Number of subjects");
  app->add_option("--m", o.m, "Measurements per subject");
  app->add_option("--seed", o.seed, "Data seed");
  app->add_option("--out", o.out, "Output directory");
  app->add_flag("--force", o.force, "Overwrite a non-empty output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian asymmetric Laplace distributional regression for longitudinal data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a dataset from a scenario");
  add_scenario_options(simulate, sim);

  FitOptions fit;
  auto* fitc = app.add_subcommand("fit", "Fit a model by MCMC");
  fitc->add_option("--data", fit.data, "Long-format CSV (id,time,y,covariates)")->required();
  fitc->add_option("--spec", fit.spec, "Model spec file")->required();
  fitc->add_option("--out", fit.out, "Output directory");
  fitc->add_option("--family", fit.family, "Override the spec family")->check(CLI::IsMember({"al", "gaussian"}));
  fitc->add_option("--tau-fixed", fit.tau_fixed, "Fix the skewness at this value")->check(CLI::Range(0.0, 1.0));
  fitc->add_option("--standardize", fit.standardize, "Comma-separated covariates to z-score");
  fitc->add_flag("--no-strict", fit.no_strict, "Exit 0 even if R-hat >= 1.1");
  fitc->add_flag("--force", fit.force, "Overwrite a non-empty output directory");
  fit.sampler.add(fitc);

  SelectOptions sel;
  auto* select = app.add_subcommand("select", "Compare fitted models with the quantile-coverage criterion");
  select->add_option("--data", sel.data, "Dataset the fits were made on")->required();
  select->add_option("--fit", sel.fits, "Fit directory (repeat)")->required();
  select->add_option("--set", sel.set, "G1, G2, G3 or a comma-separated list of orders")->capture_default_str();
  select->add_option("--loss", sel.loss, "abs (MMAE) or sq (MMSE)")
      ->check(CLI::IsMember({"abs", "sq"}))
      ->capture_default_str();
  select->add_option("--out", sel.out, "Output directory");
  select->add_flag("--force", sel.force, "Overwrite a non-empty output directory");

  SummarizeOptions summ;
  auto* summarize_cmd = app.add_subcommand("summarize", "Recompute a posterior summary from chain files");
  summarize_cmd->add_option("--fit", summ.fit, "Fit directory")->required();
  summarize_cmd->add_option("--out", summ.out, "Optional output directory");
  summarize_cmd->add_flag("--force", summ.force, "Overwrite a non-empty output directory");

  StudyOptions study;
  auto* studyc = app.add_subcommand("study", "Replicated simulate/fit/select study");
  add_scenario_options(studyc, study.sim);
  studyc->add_option("--replications", study.replications, "Number of replications")->capture_default_str();
  studyc->add_option("--models", study.models, "Comma-separated models")->capture_default_str();
  // --seed belongs to the scenario here; the sampler seed comes from --sampler-seed.
  studyc->add_option("--config", study.sampler.config_file, "Sampler configuration JSON");
  studyc->add_option("--chains", study.sampler.chains, "Number of chains");
  studyc->add_option("--iter", study.sampler.iter, "Iterations per chain");
  studyc->add_option("--burnin", study.sampler.burnin, "Burn-in iterations");
  studyc->add_option("--thin", study.sampler.thin, "Thinning interval");
  studyc->add_option("--sampler-seed", study.sampler.seed, "Sampler seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*fitc) return cmd_fit(fit);
    if (*select) return cmd_select(sel);
    if (*summarize_cmd) return cmd_summarize(summ);
    if (*studyc) return cmd_study(study);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const SpecError& e) {
    std::cerr << "model spec error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
