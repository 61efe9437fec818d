#include "pce/simulation.hpp"

#include <Eigen/Core>
#include <cmath>
#include <exception>
#include <ostream>

#include "pce/error.hpp"
#include "pce/normal.hpp"

namespace pce {

namespace {

constexpr double kSynthRho = 0.25;
constexpr double kBenchRho = 0.5;
constexpr double kBenchSd = 0.5;

double expit(double t) { return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

// Truth shared by every generating process here:
//   mu_z(x, m) = offset_z(x) + slope * m,   M | X, Z=z ~ N(mean_z(x), sd^2).
class GaussianTruth : public NuisanceModel {
 public:
  GaussianTruth(std::size_t p, double slope, double sd) : p_(p), slope_(slope), sd_(sd) {}

  std::size_t p() const override { return p_; }

  double treatment_probability(std::span<const double> x, int z) const override {
    const double p1 = treated_probability(x);
    return z == 1 ? p1 : 1.0 - p1;
  }
  double outcome_mean(std::span<const double> x, int z, double m) const override {
    return outcome_offset(x, z) + slope_ * m;
  }
  double ps_density(std::span<const double> x, int z, double m) const override {
    return normal::pdf((m - ps_mean(x, z)) / sd_) / sd_;
  }
  double ps_cdf(std::span<const double> x, int z, double m) const override {
    return normal::cdf((m - ps_mean(x, z)) / sd_);
  }
  double ps_normal_score(std::span<const double> x, int z, double m) const override {
    return (m - ps_mean(x, z)) / sd_;
  }

  void outcome_mean_batch(std::span<const double> x, int z, std::span<const double> m,
                          std::span<double> out) const override {
    const double a = outcome_offset(x, z);
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = a + slope_ * m[i];
  }
  void ps_density_batch(std::span<const double> x, int z, std::span<const double> m,
                        std::span<double> out) const override {
    const auto n = static_cast<Eigen::Index>(m.size());
    Eigen::Map<const Eigen::ArrayXd> mv(m.data(), n);
    Eigen::Map<Eigen::ArrayXd> ov(out.data(), n);
    ov = (-0.5 * ((mv - ps_mean(x, z)) / sd_).square()).exp() * (normal::kInvSqrt2Pi / sd_);
  }
  void ps_normal_score_batch(std::span<const double> x, int z, std::span<const double> m,
                             std::span<double> out) const override {
    const double mean = ps_mean(x, z);
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] - mean) / sd_;
  }

  virtual double ps_mean(std::span<const double> x, int z) const = 0;

 protected:
  virtual double treated_probability(std::span<const double> x) const = 0;
  virtual double outcome_offset(std::span<const double> x, int z) const = 0;

 private:
  std::size_t p_;
  double slope_;
  double sd_;
};

class SyntheticTruth final : public GaussianTruth {
 public:
  explicit SyntheticTruth(SyntheticVariant v)
      : GaussianTruth(2, v == SyntheticVariant::p1 ? 0.5 : 0.0, 1.0), variant_(v) {}

 protected:
  double treated_probability(std::span<const double>) const override { return 0.5; }
  // x[0] = X1, x[1] = X0.
  double outcome_offset(std::span<const double> x, int z) const override {
    return z == 1 ? x[0] + 0.5 * x[1] : x[1] + 0.5 * x[0];
  }

 public:
  double ps_mean(std::span<const double> x, int z) const override {
    if (variant_ == SyntheticVariant::p2) return 0.0;
    return z == 1 ? x[0] : x[1];
  }

 private:
  SyntheticVariant variant_;
};

class BenchmarkTruth final : public GaussianTruth {
 public:
  explicit BenchmarkTruth(const BenchmarkSetting& s) : GaussianTruth(3, 0.5, kBenchSd), s_(s) {}

 protected:
  double treated_probability(std::span<const double> x) const override {
    if (s_.tp == 1) return expit(x[1] + x[2]);
    return expit(x[0] * x[0] / 2.0 + x[1] * x[1] * x[1] / 2.0);
  }
  double outcome_offset(std::span<const double> x, int z) const override {
    const double zd = z;
    if (s_.om == 1) return x[0] + x[2] + zd * x[0] + zd;
    const double x1 = x[0];
    return x[1] + zd * (x1 + x1 * x1 + x1 * x1 * x1 / 5.0);
  }

 public:
  double ps_mean(std::span<const double> x, int z) const override {
    const double zd = z;
    if (s_.ps == 1) return x[0] / 2.0 + x[1] / 2.0 + x[2] / 2.0 + zd;
    const double x1 = x[0];
    return x1 + zd * (x1 * x1 + x1 * x1 * x1 / 2.0);
  }

 private:
  BenchmarkSetting s_;
};

constexpr double kSynthCross = 0.9682458365518543;  // sqrt(1 - 0.25^2)

}  // namespace

SyntheticVariant parse_synthetic_variant(const std::string& name) {
  if (name == "p1" || name == "P1") return SyntheticVariant::p1;
  if (name == "p2" || name == "P2") return SyntheticVariant::p2;
  throw ConfigError("unknown synthetic variant '" + name + "' (expected p1 or p2)");
}

SyntheticSample gen_synthetic(SyntheticVariant variant, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample size must be positive");
  CounterRng rng(seed);
  SyntheticSample s;
  std::vector<double> x(2 * n), m(n), y(n);
  std::vector<int> z(n);
  s.m1.resize(n);
  s.m0.resize(n);
  s.y1.resize(n);
  s.y0.resize(n);
  const double slope = variant == SyntheticVariant::p1 ? 0.5 : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g1 = rng.normal(), g2 = rng.normal();
    const double x1 = g1, x0 = kSynthRho * g1 + kSynthCross * g2;
    z[i] = rng.bernoulli(0.5);
    const double e1 = rng.normal(), e2 = rng.normal();
    const double base1 = variant == SyntheticVariant::p1 ? x1 : 0.0;
    const double base0 = variant == SyntheticVariant::p1 ? x0 : 0.0;
    s.m1[i] = base1 + e1;
    s.m0[i] = base0 + kSynthRho * e1 + kSynthCross * e2;
    s.y1[i] = slope * s.m1[i] + x1 + 0.5 * x0 + rng.normal();
    s.y0[i] = slope * s.m0[i] + x0 + 0.5 * x1 + rng.normal();
    x[2 * i] = x1;
    x[2 * i + 1] = x0;
    m[i] = z[i] == 1 ? s.m1[i] : s.m0[i];
    y[i] = z[i] == 1 ? s.y1[i] : s.y0[i];
  }
  s.data = Dataset(2, std::move(x), std::move(z), std::move(m), std::move(y));
  return s;
}

void BenchmarkSetting::validate() const {
  auto ok = [](int v) { return v == 1 || v == 2; };
  if (!ok(tp) || !ok(ps) || !ok(om)) throw ConfigError("setting indices must be 1 or 2");
  if (n < 50) throw ConfigError("benchmark sample size must be >= 50");
}

std::string BenchmarkSetting::code() const {
  return std::to_string(tp) + std::to_string(ps) + std::to_string(om);
}

BenchmarkSetting BenchmarkSetting::parse(const std::string& code) {
  if (code.size() != 3) throw ConfigError("setting must be three digits such as 111, got '" + code + "'");
  BenchmarkSetting s;
  s.tp = code[0] - '0';
  s.ps = code[1] - '0';
  s.om = code[2] - '0';
  s.validate();
  return s;
}

Dataset gen_benchmark(const BenchmarkSetting& setting) {
  setting.validate();
  const BenchmarkTruth truth(setting);
  const std::size_t n = setting.n;
  CounterRng rng(setting.seed);
  std::vector<double> x(3 * n), m(n), y(n);
  std::vector<int> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> xi(x.data() + 3 * i, 3);
    for (double& v : xi) v = rng.normal();
    z[i] = rng.bernoulli(truth.treatment_probability(xi, 1));
    m[i] = rng.normal(truth.ps_mean(xi, z[i]), kBenchSd);
    y[i] = rng.normal(truth.outcome_mean(xi, z[i], m[i]), kBenchSd);
  }
  return Dataset(3, std::move(x), std::move(z), std::move(m), std::move(y));
}

std::shared_ptr<const NuisanceModel> true_nuisance(const TruthSource& source) {
  if (const auto* v = std::get_if<SyntheticVariant>(&source)) {
    return std::make_shared<SyntheticTruth>(*v);
  }
  const auto& s = std::get<BenchmarkSetting>(source);
  s.validate();
  return std::make_shared<BenchmarkTruth>(s);
}

CopulaSpec true_copula(const TruthSource& source) {
  const double rho = std::holds_alternative<SyntheticVariant>(source) ? kSynthRho : kBenchRho;
  return CopulaSpec(CopulaFamily::gaussian, rho);
}

std::size_t covariate_dimension(const TruthSource& source) {
  return std::holds_alternative<SyntheticVariant>(source) ? 2 : 3;
}

void sample_covariates(const TruthSource& source, CounterRng& rng, std::span<double> out) {
  if (std::holds_alternative<SyntheticVariant>(source)) {
    const double g1 = rng.normal(), g2 = rng.normal();
    out[0] = g1;
    out[1] = kSynthRho * g1 + kSynthCross * g2;
    return;
  }
  for (double& v : out) v = rng.normal();
}

OracleValue oracle_tau_star(const TruthSource& source, const PrincipalPoint& u,
                            const CopulaSpec& copula, std::size_t n_mc, std::uint64_t seed) {
  if (n_mc < 10000) throw ConfigError("oracle needs at least 10000 Monte-Carlo draws");
  const auto truth = true_nuisance(source);
  const std::size_t p = covariate_dimension(source);
  constexpr std::size_t kChunk = 8192;
  const std::size_t chunks = (n_mc + kChunk - 1) / kChunk;
  std::vector<double> num(n_mc), den(n_mc);
#pragma omp parallel for schedule(static)
  for (long long ci = 0; ci < static_cast<long long>(chunks); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    CounterRng rng(derive_seed(seed, c));
    std::vector<double> x(p);
    const std::size_t end = std::min(n_mc, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      sample_covariates(source, rng, x);
      const double e = joint_principal_density(copula, *truth, x, u);
      const double diff = truth->outcome_mean(x, 1, u.m1) - truth->outcome_mean(x, 0, u.m0);
      num[i] = diff * e;
      den[i] = e;
    }
  }
  const double nd = static_cast<double>(n_mc);
  const double mean_den = pairwise_sum(den) / nd;
  if (!(mean_den > 1e-300)) throw EstimationError("oracle: joint density underflow at u");
  OracleValue out;
  out.n_mc = n_mc;
  out.tau = pairwise_sum(num) / nd / mean_den;
  std::vector<double> infl(n_mc);
  for (std::size_t i = 0; i < n_mc; ++i) {
    const double r = (num[i] - out.tau * den[i]) / mean_den;
    infl[i] = r * r;
  }
  out.se = std::sqrt(pairwise_sum(infl) / (nd - 1.0) / nd);
  return out;
}

// ---------------------------------------------------------------------------

void StudyConfig::validate() const {
  setting.validate();
  if (rounds < 1) throw ConfigError("study needs at least one round");
  if (points.empty()) throw ConfigError("study needs at least one point");
  if (bandwidth < 0.0 || bandwidth_scale < 0.0) throw ConfigError("bandwidth must be positive");
  if (n_mc < 10000) throw ConfigError("oracle needs at least 10000 Monte-Carlo draws");
  if (coverage) {
    if (bootstrap.replicates < 2) throw ConfigError("coverage mode needs at least 2 bootstrap replicates");
    if (!(bootstrap.alpha > 0.0 && bootstrap.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  }
}

double StudyConfig::resolved_bandwidth() const {
  if (bandwidth > 0.0) return bandwidth;
  return bandwidth_for(bandwidth_rule, setting.n, bandwidth_scale);
}

std::uint64_t study_round_seed(std::uint64_t master, std::size_t round) {
  return derive_seed(master, 2 * static_cast<std::uint64_t>(round));
}

std::uint64_t study_bootstrap_seed(std::uint64_t master, std::size_t round) {
  return derive_seed(master, 2 * static_cast<std::uint64_t>(round) + 1);
}

std::uint64_t study_oracle_seed(std::uint64_t master, std::size_t point) {
  return derive_seed(~master, static_cast<std::uint64_t>(point));
}

StudyResult run_mc_study(const StudyConfig& config) {
  config.validate();
  StudyResult result;
  result.config = config;
  result.h = config.resolved_bandwidth();

  Pipeline pipeline;
  pipeline.strategy = std::make_shared<ParametricStrategy>();
  pipeline.copula = config.copula;
  pipeline.config.kernel.h = result.h;
  pipeline.config.quad = config.quad;
  pipeline.config.quad.n = config.setting.n;
  pipeline.config.density_policy = config.density_policy;
  pipeline.config.validate();

  const std::size_t P = config.points.size();
  const std::size_t R = config.rounds;
  result.records.resize(R * P);
  std::exception_ptr fatal;

#pragma omp parallel for schedule(dynamic, 1)
  for (long long ri = 0; ri < static_cast<long long>(R); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    RoundRecord* rec = &result.records[r * P];
    for (std::size_t k = 0; k < P; ++k) {
      rec[k].round = r;
      rec[k].point = k;
    }
    try {
      BenchmarkSetting s = config.setting;
      s.seed = study_round_seed(config.seed, r);
      const Dataset data = gen_benchmark(s);
      std::vector<PrincipalPoint> ok_points;
      std::vector<std::size_t> ok_index;
      try {
        const FittedNuisances fitted{pipeline.strategy->fit(data), pipeline.copula};
        for (std::size_t k = 0; k < P; ++k) {
          try {
            rec[k].tau_hat = estimate_point(data, fitted, pipeline.config, config.points[k]).tau_hat;
            ok_points.push_back(config.points[k]);
            ok_index.push_back(k);
          } catch (const Error& e) {
            rec[k].error = e.what();
          }
        }
      } catch (const Error& e) {
        for (std::size_t k = 0; k < P; ++k) rec[k].error = e.what();
      }
      if (config.coverage && !ok_points.empty()) {
        BootstrapOptions opts = config.bootstrap;
        opts.seed = study_bootstrap_seed(config.seed, r);
        auto store = [&](std::size_t k, const BootstrapResult& b) {
          rec[k].se = b.se;
          rec[k].lower = b.lower;
          rec[k].upper = b.upper;
        };
        try {
          const auto boots = bootstrap_points(data, pipeline, ok_points, opts);
          for (std::size_t j = 0; j < ok_points.size(); ++j) store(ok_index[j], boots[j]);
        } catch (const Error&) {
          // Isolate the failing point(s).
          for (std::size_t j = 0; j < ok_points.size(); ++j) {
            try {
              store(ok_index[j], bootstrap(data, pipeline, ok_points[j], opts));
            } catch (const Error& e) {
              rec[ok_index[j]].error = e.what();
            }
          }
        }
      }
    } catch (...) {
#pragma omp critical(pce_study)
      if (!fatal) fatal = std::current_exception();
    }
  }
  if (fatal) std::rethrow_exception(fatal);

  const CopulaSpec truth_copula = true_copula(config.setting);
  for (std::size_t k = 0; k < P; ++k) {
    PointSummary sum;
    sum.u = config.points[k];
    sum.truth = oracle_tau_star(config.setting, sum.u, truth_copula, config.n_mc,
                                study_oracle_seed(config.seed, k));
    std::vector<double> est, err, abs_err, sq_err, ses;
    std::size_t covered = 0, intervals = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const RoundRecord& rec = result.records[r * P + k];
      if (!rec.tau_hat) {
        ++sum.failures;
        continue;
      }
      const double e = *rec.tau_hat - sum.truth.tau;
      est.push_back(*rec.tau_hat);
      err.push_back(e);
      abs_err.push_back(std::abs(e));
      sq_err.push_back(e * e);
      if (rec.lower) {
        ++intervals;
        ses.push_back(*rec.se);
        if (*rec.lower <= sum.truth.tau && sum.truth.tau <= *rec.upper) ++covered;
      }
    }
    sum.rounds = est.size();
    if (!est.empty()) {
      const double cnt = static_cast<double>(est.size());
      sum.mean_tau_hat = pairwise_sum(est) / cnt;
      sum.mean_bias = pairwise_sum(err) / cnt;
      sum.mean_abs_error = pairwise_sum(abs_err) / cnt;
      sum.rmse = std::sqrt(pairwise_sum(sq_err) / cnt);
    }
    if (intervals > 0) {
      sum.coverage = static_cast<double>(covered) / static_cast<double>(intervals);
      sum.mean_se = pairwise_sum(ses) / static_cast<double>(intervals);
    }
    result.summaries.push_back(sum);
  }
  return result;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const StudyResult& r) {
  using json = nlohmann::ordered_json;
  const StudyConfig& c = r.config;
  json cfg;
  cfg["setting"] = c.setting.code();
  cfg["n"] = c.setting.n;
  cfg["rounds"] = c.rounds;
  json pts = json::array();
  for (const auto& u : c.points) pts.push_back({u.m1, u.m0});
  cfg["points"] = pts;
  cfg["copula"] = CopulaSpec::family_name(c.copula.family());
  cfg["rho"] = c.copula.rho();
  cfg["h"] = r.h;
  cfg["quad_c1"] = c.quad.c1;
  cfg["quad_epsilon"] = c.quad.epsilon;
  cfg["quad_n_override"] = c.quad.override_n;
  cfg["quad_mode"] = c.quad.mode == QuadratureMode::grid ? "grid" : "adaptive";
  cfg["coverage"] = c.coverage;
  cfg["bootstrap"] = c.coverage ? c.bootstrap.replicates : 0;
  cfg["alpha"] = c.bootstrap.alpha;
  cfg["ci"] = c.bootstrap.ci == CiMethod::percentile ? "percentile" : "normal";
  cfg["density_floor"] = c.density_policy == DensityFloorPolicy::error ? "error" : "clamp";
  cfg["n_mc"] = c.n_mc;
  cfg["seed"] = c.seed;

  json summaries = json::array();
  for (const auto& s : r.summaries) {
    json j;
    j["u"] = {s.u.m1, s.u.m0};
    j["tau_star"] = s.truth.tau;
    j["tau_star_se"] = s.truth.se;
    j["mean_tau_hat"] = s.mean_tau_hat;
    j["mean_bias"] = s.mean_bias;
    j["mean_abs_error"] = s.mean_abs_error;
    j["rmse"] = s.rmse;
    j["coverage"] = optional_json(s.coverage);
    j["mean_se"] = optional_json(s.mean_se);
    j["rounds"] = s.rounds;
    j["failures"] = s.failures;
    summaries.push_back(j);
  }
  json records = json::array();
  for (const auto& rec : r.records) {
    json j;
    j["round"] = rec.round;
    j["u"] = {c.points[rec.point].m1, c.points[rec.point].m0};
    j["tau_hat"] = optional_json(rec.tau_hat);
    j["se"] = optional_json(rec.se);
    j["ci"] = rec.lower ? json{*rec.lower, *rec.upper} : json(nullptr);
    if (!rec.error.empty()) j["error"] = rec.error;
    records.push_back(j);
  }
  json out;
  out["config"] = cfg;
  out["summary"] = summaries;
  out["records"] = records;
  return out;
}

void write_study_csv(std::ostream& out, const StudyResult& r) {
  out << "round,m1,m0,tau_hat,se,ci_lo,ci_hi,status\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& rec : r.records) {
    const PrincipalPoint& u = r.config.points[rec.point];
    out << rec.round << ',' << format_double(u.m1) << ',' << format_double(u.m0) << ','
        << opt(rec.tau_hat) << ',' << opt(rec.se) << ',' << opt(rec.lower) << ',' << opt(rec.upper)
        << ',' << (rec.tau_hat ? "ok" : "missing") << '\n';
  }
}

}  // namespace pce
