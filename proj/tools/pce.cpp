// pce: command-line front end.
//
//   pce fit       point estimates (+ bootstrap) at --points, JSON report
//   pce surface   estimates over --grid, CSV m1,m0,tau_hat,se,ci_lo,ci_hi,status
//   pce simulate  draw a benchmark or synthetic data set as CSV
//   pce study     Monte-Carlo study, JSON summary (+ per-round CSV)
//   pce bench     serial reference vs parallel kernel on one data set
//
// Exit codes: 0 success (possibly with missing points), 2 input error,
// 3 estimation error, 4 configuration error.

#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "pce/config.hpp"
#include "pce/error.hpp"
#include "pce/estimator.hpp"
#include "pce/nuisance.hpp"
#include "pce/simulation.hpp"

namespace {

using pce::RunConfig;
using pce::Settings;
using json = nlohmann::ordered_json;

// Writes to `path`, or stdout when empty or "-".
void emit(const std::string& path, const std::function<void(std::ostream&)>& body) {
  if (path.empty() || path == "-") {
    body(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pce::InputError("cannot write '" + path + "'");
  body(out);
  if (!out) throw pce::InputError("write failed for '" + path + "'");
}

json record_json(const pce::StandardizationRecord& r) {
  json x = json::array();
  for (const auto& c : r.x) x.push_back({c.mean, c.sd});
  return {{"x", x}, {"m", {r.m.mean, r.m.sd}}, {"y", {r.y.mean, r.y.sd}}};
}

struct Prepared {
  pce::Dataset data;  // analysis scale
  pce::StandardizationRecord record;
  double h = 0.0;
};

Prepared prepare(const RunConfig& cfg) {
  if (cfg.input.empty()) throw pce::ConfigError("--input is required");
  const pce::Dataset raw = pce::read_csv_file(cfg.input);
  Prepared p;
  if (cfg.standardize == pce::StandardizeMode::none) {
    p.data = raw;
    p.record = pce::StandardizationRecord::identity(raw.p());
  } else {
    pce::StandardizeOptions opts;
    opts.y = cfg.standardize == pce::StandardizeMode::all;
    auto s = pce::standardize(raw, opts);
    p.data = std::move(s.data);
    p.record = std::move(s.record);
  }
  p.h = cfg.resolved_bandwidth(p.data.size());
  return p;
}

pce::EstimatorConfig estimator_config(const RunConfig& cfg, const Prepared& p) {
  pce::EstimatorConfig ec;
  ec.kernel.h = p.h;
  ec.quad = cfg.quad;
  ec.quad.n = p.data.size();
  ec.density_policy = cfg.density_policy;
  ec.impl = cfg.kernel_impl;
  ec.validate();
  return ec;
}

std::shared_ptr<const pce::NuisanceModel> nuisances(const RunConfig& cfg, const Prepared& p) {
  if (cfg.models_in.empty()) return pce::ParametricStrategy().fit(p.data);
  std::ifstream in(cfg.models_in);
  if (!in) throw pce::InputError("cannot open models file '" + cfg.models_in + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw pce::InputError(std::string("malformed models file: ") + e.what());
  }
  if (doc.contains("standardization") && doc["standardization"] != record_json(p.record)) {
    throw pce::ConfigError("models file was fitted under a different standardization of the data");
  }
  auto model = std::make_shared<pce::ParametricNuisance>(pce::ParametricNuisance::from_json(text));
  if (model->p() != p.data.p()) throw pce::InputError("models file covariate count does not match data");
  return model;
}

void save_models(const RunConfig& cfg, const Prepared& p, const pce::NuisanceModel& model) {
  if (cfg.models_out.empty()) return;
  const auto* parametric = dynamic_cast<const pce::ParametricNuisance*>(&model);
  if (parametric == nullptr) return;
  json doc = json::parse(parametric->to_json());
  doc["standardization"] = record_json(p.record);
  emit(cfg.models_out, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
}

// Estimates (+ intervals) at strata given on the original scale.
std::vector<pce::SurfaceNode> run_points(const RunConfig& cfg, const Prepared& p,
                                         const std::vector<pce::PrincipalPoint>& original,
                                         bool require_one) {
  const auto model = nuisances(cfg, p);
  save_models(cfg, p, *model);
  const pce::FittedNuisances fitted{model, cfg.copula};
  const pce::EstimatorConfig ec = estimator_config(cfg, p);
  std::vector<pce::PrincipalPoint> scaled;
  for (const auto& u : original) scaled.push_back(p.record.to_standard(u));
  auto nodes = pce::estimate_points(p.data, fitted, ec, scaled);
  if (require_one &&
      std::all_of(nodes.begin(), nodes.end(), [](const pce::SurfaceNode& n) { return n.missing(); })) {
    throw pce::EstimationError("every requested stratum failed; first reason: " + nodes.front().reason);
  }
  if (cfg.bootstrap.replicates > 0) {
    pce::Pipeline pipeline{std::make_shared<pce::ParametricStrategy>(), cfg.copula, ec};
    pce::attach_bootstrap(p.data, pipeline, nodes, cfg.bootstrap);
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    nodes[i].u = original[i];
    if (nodes[i].estimate) {
      nodes[i].estimate = pce::rescale_estimate(*nodes[i].estimate, &p.record);
      nodes[i].estimate->u_star = original[i];
    }
    if (nodes[i].interval) nodes[i].interval = pce::rescale_bootstrap(*nodes[i].interval, &p.record);
  }
  return nodes;
}

json run_header(const RunConfig& cfg, const Prepared& p) {
  json c = pce::to_json(cfg);
  c["n"] = p.data.size();
  c["p"] = p.data.p();
  c["h"] = p.h;
  c["h_original_m_units"] = p.h * p.record.m.sd;
  c["standardization"] = record_json(p.record);
  return c;
}

int cmd_fit(const RunConfig& cfg) {
  const Prepared p = prepare(cfg);
  const auto nodes = run_points(cfg, p, cfg.points, false);
  json report;
  report["config"] = run_header(cfg, p);
  json results = json::array();
  for (const auto& n : nodes) results.push_back(pce::to_json(n));
  report["results"] = results;
  emit(cfg.output, [&](std::ostream& out) { out << report.dump(2) << '\n'; });
  return 0;
}

int cmd_surface(const RunConfig& cfg, const std::string& report_path) {
  if (!cfg.grid) throw pce::ConfigError("surface needs --grid m1lo,m1hi;m0lo,m0hi;steps");
  const Prepared p = prepare(cfg);
  const auto nodes = run_points(cfg, p, cfg.grid->nodes(), true);
  emit(cfg.output, [&](std::ostream& out) { pce::write_surface_csv(out, nodes); });
  if (!report_path.empty()) {
    json report;
    report["config"] = run_header(cfg, p);
    json results = json::array();
    for (const auto& n : nodes) results.push_back(pce::to_json(n));
    report["results"] = results;
    emit(report_path, [&](std::ostream& out) { out << report.dump(2) << '\n'; });
  }
  return 0;
}

int cmd_simulate(const RunConfig& cfg) {
  pce::Dataset data;
  if (!cfg.variant.empty()) {
    data = pce::gen_synthetic(pce::parse_synthetic_variant(cfg.variant), cfg.n, cfg.seed).data;
  } else {
    auto s = pce::BenchmarkSetting::parse(cfg.setting);
    s.n = cfg.n;
    s.seed = cfg.seed;
    data = pce::gen_benchmark(s);
  }
  emit(cfg.output, [&](std::ostream& out) { pce::write_csv(out, data); });
  return 0;
}

int cmd_study(const RunConfig& cfg) {
  pce::StudyConfig sc;
  sc.setting = pce::BenchmarkSetting::parse(cfg.setting);
  sc.setting.n = cfg.n;
  sc.rounds = cfg.rounds;
  sc.points = cfg.points;
  sc.copula = cfg.copula;
  sc.bandwidth_rule = cfg.bandwidth_rule;
  sc.bandwidth_scale = cfg.bandwidth_scale;
  sc.bandwidth = cfg.bandwidth.value_or(0.0);
  sc.quad = cfg.quad;
  sc.coverage = cfg.coverage;
  sc.bootstrap = cfg.bootstrap;
  if (sc.coverage && sc.bootstrap.replicates == 0) sc.bootstrap.replicates = 100;
  sc.density_policy = cfg.density_policy;
  sc.n_mc = cfg.n_mc;
  sc.seed = cfg.seed;
  const auto result = pce::run_mc_study(sc);
  emit(cfg.output, [&](std::ostream& out) { out << pce::to_json(result).dump(2) << '\n'; });
  if (!cfg.records_out.empty()) {
    emit(cfg.records_out, [&](std::ostream& out) { pce::write_study_csv(out, result); });
  }
  return 0;
}

// Timings go to stderr; stdout carries only reproducible values.
int cmd_bench(const RunConfig& cfg) {
  auto s = pce::BenchmarkSetting::parse(cfg.setting);
  s.n = cfg.n;
  s.seed = cfg.seed;
  const pce::Dataset data = pce::gen_benchmark(s);
  const pce::FittedNuisances fitted{pce::ParametricStrategy().fit(data), cfg.copula};
  pce::EstimatorConfig ec;
  ec.kernel.h = cfg.resolved_bandwidth(data.size());
  ec.quad = cfg.quad;
  ec.quad.n = data.size();
  const pce::PrincipalPoint u = cfg.points.front();

  using clock = std::chrono::steady_clock;
  ec.impl = pce::KernelImpl::reference;
  const auto t0 = clock::now();
  const auto ref = pce::estimate_point(data, fitted, ec, u);
  const auto t1 = clock::now();
  ec.impl = pce::KernelImpl::parallel;
  const auto fast = pce::estimate_point(data, fitted, ec, u);
  const auto t2 = clock::now();

  json out;
  out["n"] = data.size();
  out["u_star"] = {u.m1, u.m0};
  out["h"] = ec.kernel.h;
  out["grid_2d"] = ec.quad.points_2d();
  out["grid_1d"] = ec.quad.points_1d();
  out["tau_reference"] = ref.tau_hat;
  out["tau_parallel"] = fast.tau_hat;
  out["abs_difference"] = std::abs(ref.tau_hat - fast.tau_hat);
  emit(cfg.output, [&](std::ostream& o) { o << out.dump(2) << '\n'; });
  const double a = std::chrono::duration<double>(t1 - t0).count();
  const double b = std::chrono::duration<double>(t2 - t1).count();
  std::cerr << "reference " << a << " s, parallel " << b << " s (" << omp_get_max_threads()
            << " threads), speedup " << a / b << "x\n";
  return 0;
}

void apply_threads(int flag_threads) {
  int threads = flag_threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("PCE_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || v <= 0) throw pce::ConfigError("PCE_THREADS must be a positive integer");
      threads = static_cast<int>(v);
    }
  }
  if (threads > 0) omp_set_num_threads(threads);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Principal causal effects over continuous principal strata"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Settings flags;
  std::string config_path;
  std::string report_path;
  int threads = 0;

  auto setting = [&](CLI::App* sub, const std::string& name, const std::string& help) {
    sub->add_option_function<std::string>(
        "--" + name, [&flags, name](const std::string& v) { flags[name] = v; }, help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file (flags win)");
    sub->add_option("--threads", threads, "worker threads (default: PCE_THREADS or all cores)");
    setting(sub, "seed", "master seed");
    setting(sub, "output", "output file (default stdout)");
  };
  auto estimation = [&](CLI::App* sub) {
    setting(sub, "input", "CSV with columns x1..xp,z,m,y");
    setting(sub, "copula", "gaussian | fgm | independence");
    setting(sub, "rho", "copula association parameter");
    setting(sub, "bandwidth", "explicit bandwidth h (standardized m units)");
    setting(sub, "bandwidth-rule", "optimal (0.15 n^-1/6) | undersmooth (0.1 n^-1/5)");
    setting(sub, "bandwidth-scale", "replaces the rule constant");
    setting(sub, "quad-c1", "truncation constant (>= 2 sqrt 2)");
    setting(sub, "quad-epsilon", "grid exponent slack");
    setting(sub, "quad-n-override", "explicit grid size per axis");
    setting(sub, "quad-mode", "grid | adaptive");
    setting(sub, "bootstrap", "bootstrap replicates (0 disables)");
    setting(sub, "alpha", "1 - confidence level");
    setting(sub, "ci", "percentile | normal");
    setting(sub, "standardize", "none | xm | all");
    setting(sub, "density-floor", "error | clamp on principal-score density underflow");
    setting(sub, "kernel-impl", "parallel | reference");
    setting(sub, "models-in", "read fitted nuisance models (JSON)");
    setting(sub, "models-out", "write fitted nuisance models (JSON)");
  };

  auto* fit = app.add_subcommand("fit", "Point estimates at the requested strata");
  common(fit);
  estimation(fit);
  setting(fit, "points", "strata 'm1,m0;m1,m0;...' on the original scale");

  auto* surface = app.add_subcommand("surface", "Estimates over a rectangular grid of strata");
  common(surface);
  estimation(surface);
  setting(surface, "grid", "'m1lo,m1hi;m0lo,m0hi;steps' on the original scale");
  surface->add_option("--report", report_path, "also write a JSON report with diagnostics");

  auto* simulate = app.add_subcommand("simulate", "Draw a simulated data set");
  common(simulate);
  setting(simulate, "setting", "benchmark setting tp,ps,om as three digits, e.g. 111");
  setting(simulate, "variant", "synthetic example p1 | p2 instead of a setting");
  setting(simulate, "n", "sample size");

  auto* study = app.add_subcommand("study", "Monte-Carlo study of bias, RMSE and coverage");
  common(study);
  setting(study, "setting", "benchmark setting, e.g. 111");
  setting(study, "n", "sample size per round");
  setting(study, "rounds", "Monte-Carlo rounds");
  setting(study, "points", "strata 'm1,m0;...'");
  setting(study, "copula", "gaussian | fgm | independence");
  setting(study, "rho", "copula association parameter");
  setting(study, "bandwidth", "explicit bandwidth h");
  setting(study, "bandwidth-rule", "optimal | undersmooth");
  setting(study, "bandwidth-scale", "replaces the rule constant");
  setting(study, "quad-c1", "truncation constant");
  setting(study, "quad-epsilon", "grid exponent slack");
  setting(study, "quad-n-override", "explicit grid size per axis");
  setting(study, "quad-mode", "grid | adaptive");
  setting(study, "bootstrap", "bootstrap replicates per round in coverage mode");
  setting(study, "alpha", "1 - confidence level");
  setting(study, "ci", "percentile | normal");
  setting(study, "density-floor", "error | clamp on principal-score density underflow");
  setting(study, "n-mc", "Monte-Carlo draws for the true effect");
  setting(study, "records-out", "per-round CSV");
  study->add_flag_function(
      "--coverage", [&flags](std::int64_t) { flags["coverage"] = "true"; },
      "bootstrap every round and report coverage");

  auto* bench = app.add_subcommand("bench", "Compare the serial reference and parallel kernels");
  common(bench);
  setting(bench, "setting", "benchmark setting, e.g. 111");
  setting(bench, "n", "sample size");
  setting(bench, "points", "stratum 'm1,m0'");
  setting(bench, "copula", "gaussian | fgm | independence");
  setting(bench, "rho", "copula association parameter");
  setting(bench, "bandwidth", "explicit bandwidth h");
  setting(bench, "quad-n-override", "explicit grid size per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(pce::ErrorKind::config);
  }

  try {
    apply_threads(threads);
    const Settings file = config_path.empty() ? Settings{} : pce::read_settings_file(config_path);
    const RunConfig cfg = pce::resolve_run_config(file, flags);
    if (fit->parsed()) return cmd_fit(cfg);
    if (surface->parsed()) return cmd_surface(cfg, report_path);
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (study->parsed()) return cmd_study(cfg);
    if (bench->parsed()) return cmd_bench(cfg);
  } catch (const pce::Error& e) {
    std::cerr << "pce: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "pce: " << e.what() << '\n';
    return static_cast<int>(pce::ErrorKind::estimation);
  }
  return 0;
}
