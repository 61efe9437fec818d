#include "pce/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <ostream>

#include "pce/error.hpp"
#include "pce/normal.hpp"
#include "pce/random.hpp"

namespace pce {

void EstimatorConfig::validate() const {
  kernel.validate();
  quad.validate();
  if (!(pi_floor > 0.0 && pi_floor < 0.5)) throw ConfigError("probability floor must be in (0, 0.5)");
  if (!(density_floor > 0.0)) throw ConfigError("density floor must be positive");
  if (!(denom_floor > 0.0)) throw ConfigError("denominator floor must be positive");
}

double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kBlock = 32;
  if (v.size() <= kBlock) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace {

void check_model(const Dataset& data, const FittedNuisances& nuis) {
  if (!nuis.model) throw ConfigError("no nuisance model supplied");
  if (nuis.model->p() != data.p()) {
    throw InputError("nuisance model expects " + std::to_string(nuis.model->p()) +
                     " covariates, data has " + std::to_string(data.p()));
  }
}

struct Weight {
  double inverse = 0.0;  // 1 / (pi_z f_{zm})
  bool pi_clamped = false;
  bool density_clamped = false;
};

Weight inverse_weight(const NuisanceModel& model, std::span<const double> x, int z, double m,
                      double pi_floor, double density_floor, DensityFloorPolicy policy,
                      std::size_t row) {
  Weight w;
  double pi = model.treatment_probability(x, z);
  if (pi < pi_floor || pi > 1.0 - pi_floor) {
    pi = std::clamp(pi, pi_floor, 1.0 - pi_floor);
    w.pi_clamped = true;
  }
  double f = model.ps_density(x, z, m);
  if (!(f >= density_floor)) {
    if (policy == DensityFloorPolicy::error) {
      throw EstimationError("principal-score density underflow at row " + std::to_string(row));
    }
    f = density_floor;
    w.density_clamped = true;
  }
  w.inverse = 1.0 / (pi * f);
  return w;
}

IntegrationProblem problem_for(const FittedNuisances& nuis, const KernelConfig& kernel,
                               const QuadratureConfig& quad, const PrincipalPoint& u_star) {
  return IntegrationProblem{nuis.model.get(), nuis.copula, kernel, quad, u_star};
}

}  // namespace

double gamma1(const FittedNuisances& nuis, const KernelConfig& kernel, const QuadratureConfig& quad,
              const PrincipalPoint& u_star, std::span<const double> x, int z, double m) {
  if (!nuis.model) throw ConfigError("no nuisance model supplied");
  return gamma_integral(problem_for(nuis, kernel, quad, u_star), x, z, m).value;
}

double xi1(const FittedNuisances& nuis, const KernelConfig& kernel, const QuadratureConfig& quad,
           const PrincipalPoint& u_star, std::span<const double> x, int z, double m) {
  const double g = gamma1(nuis, kernel, quad, u_star, x, z, m);
  const EstimatorConfig defaults;
  const Weight w = inverse_weight(*nuis.model, x, z, m, defaults.pi_floor, defaults.density_floor,
                                  DensityFloorPolicy::error, 0);
  return (z == 1 ? 1.0 : -1.0) * g * w.inverse;
}

PointEstimate estimate_point(const Dataset& data, const FittedNuisances& nuis,
                             const EstimatorConfig& cfg, const PrincipalPoint& u_star) {
  cfg.validate();
  check_model(data, nuis);
  if (!std::isfinite(u_star.m1) || !std::isfinite(u_star.m0)) {
    throw InputError("stratum coordinates must be finite");
  }
  const NuisanceModel& model = *nuis.model;
  const IntegrationProblem pb = problem_for(nuis, cfg.kernel, cfg.quad, u_star);
  const std::vector<RowIntegrals> rows =
      cfg.impl == KernelImpl::parallel ? integrate_rows(pb, data) : integrate_rows_reference(pb, data);

  const std::size_t n = data.size();
  std::vector<double> residual(n), smooth(n), denom(n);
  std::vector<double> b_residual(n), b_smooth(n), b_denom(n);
  PointEstimate est;
  Diagnostics& diag = est.diagnostics;
  for (std::size_t i = 0; i < n; ++i) {
    const Observation obs = data.observation(i);
    const RowIntegrals& r = rows[i];
    const Weight w = inverse_weight(model, obs.x, obs.z, obs.m, cfg.pi_floor, cfg.density_floor,
                                    cfg.density_policy, i);
    diag.pi_clamps += w.pi_clamped;
    diag.density_clamps += w.density_clamped;
    diag.cdf_clamps += r.cdf_clamps;
    const double resid = obs.y - model.outcome_mean(obs.x, obs.z, obs.m);
    const double sign = obs.z == 1 ? 1.0 : -1.0;
    residual[i] = sign * r.gamma * w.inverse * resid;
    smooth[i] = r.smooth;
    denom[i] = r.denom;
    b_residual[i] = r.gamma_bound * w.inverse * std::abs(resid);
    b_smooth[i] = r.smooth_bound;
    b_denom[i] = r.denom_bound;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  est.u_star = u_star;
  est.h = cfg.kernel.h;
  est.n = n;
  est.residual_term = pairwise_sum(residual) * inv_n;
  est.smooth_term = pairwise_sum(smooth) * inv_n;
  est.denom = pairwise_sum(denom) * inv_n;
  if (!(est.denom > cfg.denom_floor)) {
    throw EstimationError("stratum u* has negligible estimated density; widen h or move u*");
  }
  est.tau_hat = (est.residual_term + est.smooth_term) / est.denom;
  if (!std::isfinite(est.tau_hat)) throw EstimationError("non-finite estimate");

  diag.bound_residual = pairwise_sum(b_residual) * inv_n;
  diag.bound_smooth = pairwise_sum(b_smooth) * inv_n;
  diag.bound_denom = pairwise_sum(b_denom) * inv_n;
  diag.quad_bound = diag.bound_denom < est.denom
                        ? (diag.bound_residual + diag.bound_smooth +
                           std::abs(est.tau_hat) * diag.bound_denom) /
                              (est.denom - diag.bound_denom)
                        : std::numeric_limits<double>::infinity();
  if (cfg.quad.mode == QuadratureMode::grid) {
    diag.points_2d = cfg.quad.points_2d();
    diag.points_1d = cfg.quad.points_1d();
  }
  return est;
}

// ---------------------------------------------------------------------------

std::size_t BootstrapResult::failed() const {
  std::size_t total = 0;
  for (const auto& [reason, count] : failures) total += count;
  return total;
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) throw EstimationError("quantile of an empty sample");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

std::vector<BootstrapResult> bootstrap_points(const Dataset& data, const Pipeline& pipeline,
                                              const std::vector<PrincipalPoint>& points,
                                              const BootstrapOptions& options) {
  if (options.replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  if (!pipeline.strategy) throw ConfigError("bootstrap needs a nuisance strategy");
  pipeline.config.validate();

  const std::size_t B = options.replicates;
  const std::size_t P = points.size();
  const std::size_t n = data.size();
  std::vector<std::vector<double>> value(B, std::vector<double>(P, 0.0));
  std::vector<std::vector<std::string>> error(B, std::vector<std::string>(P));
  std::exception_ptr fatal;

#pragma omp parallel for schedule(dynamic, 1)
  for (long long bi = 0; bi < static_cast<long long>(B); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    try {
      CounterRng rng(derive_seed(options.seed, b));
      std::vector<std::size_t> rows(n);
      for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
      const Dataset sample = data.take(rows);
      try {
        const FittedNuisances fitted{pipeline.strategy->fit(sample), pipeline.copula};
        for (std::size_t p = 0; p < P; ++p) {
          try {
            value[b][p] = estimate_point(sample, fitted, pipeline.config, points[p]).tau_hat;
          } catch (const Error& e) {
            error[b][p] = e.what();
          }
        }
      } catch (const Error& e) {
        for (auto& msg : error[b]) msg = e.what();
      }
    } catch (...) {
#pragma omp critical(pce_bootstrap)
      if (!fatal) fatal = std::current_exception();
    }
  }
  if (fatal) std::rethrow_exception(fatal);

  std::vector<double> centers(P, 0.0);
  if (options.ci == CiMethod::normal) {
    const FittedNuisances fitted{pipeline.strategy->fit(data), pipeline.copula};
    for (std::size_t p = 0; p < P; ++p) {
      centers[p] = estimate_point(data, fitted, pipeline.config, points[p]).tau_hat;
    }
  }

  std::vector<BootstrapResult> out(P);
  for (std::size_t p = 0; p < P; ++p) {
    BootstrapResult& r = out[p];
    r.requested = B;
    r.seed = options.seed;
    for (std::size_t b = 0; b < B; ++b) {
      if (error[b][p].empty()) {
        r.replicates.push_back(value[b][p]);
      } else {
        ++r.failures[error[b][p]];
      }
    }
    const double failed = static_cast<double>(r.failed());
    if (failed > options.max_failure_fraction * static_cast<double>(B) || r.replicates.size() < 2) {
      std::string msg = "bootstrap: " + std::to_string(r.failed()) + " of " + std::to_string(B) +
                        " replicates failed at (" + format_double(points[p].m1) + ", " +
                        format_double(points[p].m0) + ")";
      for (const auto& [reason, count] : r.failures) {
        msg += "; " + std::to_string(count) + " x " + reason;
      }
      throw EstimationError(msg);
    }
    const std::size_t k = r.replicates.size();
    const double mean = pairwise_sum(r.replicates) / static_cast<double>(k);
    double ss = 0.0;
    for (double v : r.replicates) ss += (v - mean) * (v - mean);
    r.se = std::sqrt(ss / static_cast<double>(k - 1));
    if (options.ci == CiMethod::percentile) {
      std::vector<double> sorted = r.replicates;
      std::sort(sorted.begin(), sorted.end());
      r.lower = quantile_sorted(sorted, options.alpha / 2.0);
      r.upper = quantile_sorted(sorted, 1.0 - options.alpha / 2.0);
    } else {
      const double zq = normal::quantile(1.0 - options.alpha / 2.0);
      r.lower = centers[p] - zq * r.se;
      r.upper = centers[p] + zq * r.se;
    }
  }
  return out;
}

BootstrapResult bootstrap(const Dataset& data, const Pipeline& pipeline,
                          const PrincipalPoint& u_star, const BootstrapOptions& options) {
  return bootstrap_points(data, pipeline, {u_star}, options).front();
}

// ---------------------------------------------------------------------------

std::vector<SurfaceNode> estimate_points(const Dataset& data, const FittedNuisances& nuis,
                                         const EstimatorConfig& cfg,
                                         const std::vector<PrincipalPoint>& points) {
  cfg.validate();
  check_model(data, nuis);
  std::vector<SurfaceNode> nodes(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    nodes[i].u = points[i];
    try {
      nodes[i].estimate = estimate_point(data, nuis, cfg, points[i]);
    } catch (const EstimationError& e) {
      nodes[i].reason = e.what();
    }
  }
  return nodes;
}

SurfaceEstimate estimate_surface(const Dataset& data, const FittedNuisances& nuis,
                                 const EstimatorConfig& cfg, const GridSpec& grid) {
  grid.validate();
  SurfaceEstimate s;
  s.grid = grid;
  s.nodes = estimate_points(data, nuis, cfg, grid.nodes());
  if (std::all_of(s.nodes.begin(), s.nodes.end(), [](const SurfaceNode& n) { return n.missing(); })) {
    throw EstimationError("every surface node failed; first reason: " + s.nodes.front().reason);
  }
  return s;
}

void attach_bootstrap(const Dataset& data, const Pipeline& pipeline,
                      std::vector<SurfaceNode>& nodes, const BootstrapOptions& options) {
  std::vector<PrincipalPoint> points;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].missing()) {
      points.push_back(nodes[i].u);
      index.push_back(i);
    }
  }
  if (points.empty()) return;
  try {
    auto results = bootstrap_points(data, pipeline, points, options);
    for (std::size_t j = 0; j < points.size(); ++j) nodes[index[j]].interval = std::move(results[j]);
  } catch (const EstimationError&) {
    for (std::size_t j = 0; j < points.size(); ++j) {
      try {
        nodes[index[j]].interval = bootstrap(data, pipeline, points[j], options);
      } catch (const EstimationError& e) {
        nodes[index[j]].interval_error = e.what();
      }
    }
  }
}

PointEstimate rescale_estimate(const PointEstimate& e, const StandardizationRecord* record) {
  if (record == nullptr) throw InputError("rescale: no standardization record");
  PointEstimate r = e;
  const double sy = record->y.sd;
  const double sm = record->m.sd;
  r.u_star = record->to_original(e.u_star);
  r.tau_hat = e.tau_hat * sy;
  // Densities in m carry 1/sd(m) per axis; tau is invariant to that factor.
  const double density_scale = 1.0 / (sm * sm);
  r.residual_term = e.residual_term * sy * density_scale;
  r.smooth_term = e.smooth_term * sy * density_scale;
  r.denom = e.denom * density_scale;
  r.h = e.h * sm;
  r.diagnostics.bound_residual *= sy * density_scale;
  r.diagnostics.bound_smooth *= sy * density_scale;
  r.diagnostics.bound_denom *= density_scale;
  r.diagnostics.quad_bound *= sy;
  return r;
}

BootstrapResult rescale_bootstrap(const BootstrapResult& b, const StandardizationRecord* record) {
  if (record == nullptr) throw InputError("rescale: no standardization record");
  BootstrapResult r = b;
  const double sy = record->y.sd;
  r.se *= sy;
  r.lower *= sy;
  r.upper *= sy;
  for (double& v : r.replicates) v *= sy;
  return r;
}

nlohmann::ordered_json to_json(const SurfaceNode& node) {
  nlohmann::ordered_json j;
  j["u_star"] = {node.u.m1, node.u.m0};
  if (node.missing()) {
    j["status"] = "missing";
    j["reason"] = node.reason;
    return j;
  }
  const PointEstimate& e = *node.estimate;
  j["status"] = "ok";
  j["tau_hat"] = e.tau_hat;
  j["denom"] = e.denom;
  j["h"] = e.h;
  if (node.interval) {
    j["se"] = node.interval->se;
    j["ci"] = {node.interval->lower, node.interval->upper};
    j["bootstrap"] = {{"replicates", node.interval->replicates.size()},
                      {"requested", node.interval->requested},
                      {"failed", node.interval->failed()},
                      {"seed", node.interval->seed}};
  } else {
    j["se"] = nullptr;
    j["ci"] = nullptr;
    if (!node.interval_error.empty()) j["bootstrap_error"] = node.interval_error;
  }
  j["n"] = e.n;
  j["clamp_counts"] = {{"probability", e.diagnostics.pi_clamps},
                       {"density", e.diagnostics.density_clamps},
                       {"cdf", e.diagnostics.cdf_clamps}};
  j["quad_bound"] = e.diagnostics.quad_bound;
  j["terms"] = {{"residual", e.residual_term}, {"smooth", e.smooth_term}};
  return j;
}

void write_surface_csv(std::ostream& out, const std::vector<SurfaceNode>& nodes) {
  out << "m1,m0,tau_hat,se,ci_lo,ci_hi,status\n";
  for (const SurfaceNode& n : nodes) {
    out << format_double(n.u.m1) << ',' << format_double(n.u.m0) << ',';
    if (n.missing()) {
      out << ",,,,missing\n";
      continue;
    }
    out << format_double(n.estimate->tau_hat) << ',';
    if (n.interval) {
      out << format_double(n.interval->se) << ',' << format_double(n.interval->lower) << ','
          << format_double(n.interval->upper);
    } else {
      out << ",,";
    }
    out << ",ok\n";
  }
}

}  // namespace pce
