#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pce/copula.hpp"
#include "pce/dataset.hpp"
#include "pce/estimator.hpp"
#include "pce/kernel.hpp"
#include "pce/nuisance.hpp"
#include "pce/random.hpp"

namespace pce {

// ---------------------------------------------------------------------------
// Synthetic surrogate examples
//
// X = (X1, X0) ~ N(0, S), Z ~ Bern(1/2), S = [[1, .25], [.25, 1]].
// P1: (M1, M0) ~ N(X, S),  Y_{z,m} = m/2 + X_z + X_{1-z}/2 + N(0,1).
// P2: (M1, M0) ~ N(0, S),  Y_{z,m} = X_z + X_{1-z}/2 + N(0,1).
// Covariate columns are x1 = X1, x2 = X0.

enum class SyntheticVariant { p1, p2 };

SyntheticVariant parse_synthetic_variant(const std::string& name);

struct SyntheticSample {
  Dataset data;
  std::vector<double> m1, m0, y1, y0;
};

/// Needs n large enough for both arms and n >= 5 (Dataset invariants).
SyntheticSample gen_synthetic(SyntheticVariant variant, std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Benchmark settings (tp, ps, om) with X ~ N(0, I_3)

struct BenchmarkSetting {
  int tp = 1;
  int ps = 1;
  int om = 1;
  std::size_t n = 1000;
  std::uint64_t seed = 1;

  void validate() const;
  /// "111"-style code.
  std::string code() const;
  /// Parses a three-digit code; n and seed keep their defaults.
  static BenchmarkSetting parse(const std::string& code);
};

Dataset gen_benchmark(const BenchmarkSetting& setting);

using TruthSource = std::variant<SyntheticVariant, BenchmarkSetting>;

/// The data-generating nuisance functions.
std::shared_ptr<const NuisanceModel> true_nuisance(const TruthSource& source);

/// Association of (M1, M0) given X in the generating process.
CopulaSpec true_copula(const TruthSource& source);

/// Draws one covariate vector from the generating distribution.
void sample_covariates(const TruthSource& source, CounterRng& rng, std::span<double> out);
std::size_t covariate_dimension(const TruthSource& source);

struct OracleValue {
  double tau = 0.0;
  double se = 0.0;  // delta-method Monte-Carlo standard error
  std::size_t n_mc = 0;
};

/// Monte-Carlo ratio sum (mu_1 - mu_0) e_u(X) / sum e_u(X) over n_mc draws
/// of X, with the true nuisance functions and the given copula.
OracleValue oracle_tau_star(const TruthSource& source, const PrincipalPoint& u,
                            const CopulaSpec& copula, std::size_t n_mc, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Monte-Carlo studies

struct StudyConfig {
  BenchmarkSetting setting;
  std::size_t rounds = 10;
  std::vector<PrincipalPoint> points{{0.0, 0.0}};
  CopulaSpec copula{CopulaFamily::gaussian, 0.5};
  BandwidthRule bandwidth_rule = BandwidthRule::optimal;
  double bandwidth_scale = 0.0;  // replaces the rule constant when > 0
  double bandwidth = 0.0;        // explicit h when > 0
  QuadratureConfig quad;         // quad.n is set from setting.n
  bool coverage = false;
  BootstrapOptions bootstrap;
  /// Clamping lets misspecified principal-score models still produce estimates.
  DensityFloorPolicy density_policy = DensityFloorPolicy::error;
  std::size_t n_mc = 1000000;
  std::uint64_t seed = 1;

  void validate() const;
  double resolved_bandwidth() const;
};

/// Seed of the data set in round r.
std::uint64_t study_round_seed(std::uint64_t master, std::size_t round);
/// Bootstrap master seed in round r.
std::uint64_t study_bootstrap_seed(std::uint64_t master, std::size_t round);
/// Seed of the oracle evaluation at point index k.
std::uint64_t study_oracle_seed(std::uint64_t master, std::size_t point);

struct RoundRecord {
  std::size_t round = 0;
  std::size_t point = 0;
  std::optional<double> tau_hat;
  std::optional<double> se;
  std::optional<double> lower;
  std::optional<double> upper;
  std::string error;
};

struct PointSummary {
  PrincipalPoint u;
  OracleValue truth;
  double mean_tau_hat = 0.0;
  double mean_bias = 0.0;
  double mean_abs_error = 0.0;
  double rmse = 0.0;
  std::optional<double> coverage;
  std::optional<double> mean_se;
  std::size_t rounds = 0;    // successful rounds
  std::size_t failures = 0;  // failed rounds
};

struct StudyResult {
  StudyConfig config;
  double h = 0.0;
  std::vector<PointSummary> summaries;
  std::vector<RoundRecord> records;  // round-major
};

/// Rounds run in parallel; every round draws from its own derived seed so
/// the result does not depend on the number of workers.
StudyResult run_mc_study(const StudyConfig& config);

nlohmann::ordered_json to_json(const StudyResult& result);
/// round,m1,m0,tau_hat,se,ci_lo,ci_hi,status
void write_study_csv(std::ostream& out, const StudyResult& result);

}  // namespace pce
