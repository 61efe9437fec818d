#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pce/copula.hpp"
#include "pce/dataset.hpp"
#include "pce/integration_kernels.hpp"
#include "pce/kernel.hpp"
#include "pce/nuisance.hpp"
#include "pce/quadrature.hpp"

namespace pce {

/// Nuisance functions plus the user-chosen association model.
struct FittedNuisances {
  std::shared_ptr<const NuisanceModel> model;
  CopulaSpec copula;
};

enum class DensityFloorPolicy { error, clamp };
enum class KernelImpl { parallel, reference };

struct EstimatorConfig {
  KernelConfig kernel;
  QuadratureConfig quad;
  double pi_floor = 1e-6;
  double density_floor = 1e-12;
  double denom_floor = 1e-10;
  DensityFloorPolicy density_policy = DensityFloorPolicy::error;
  KernelImpl impl = KernelImpl::parallel;

  void validate() const;
};

struct Diagnostics {
  long long pi_clamps = 0;
  long long density_clamps = 0;
  long long cdf_clamps = 0;
  /// Bounds on the quadrature error of each mean, and the implied bound on tau.
  double bound_residual = 0.0;
  double bound_smooth = 0.0;
  double bound_denom = 0.0;
  double quad_bound = 0.0;
  std::size_t points_2d = 0;
  std::size_t points_1d = 0;
};

struct PointEstimate {
  PrincipalPoint u_star;
  double tau_hat = 0.0;
  /// tau_hat = (residual_term + smooth_term) / denom.
  double residual_term = 0.0;
  double smooth_term = 0.0;
  double denom = 0.0;
  double h = 0.0;
  std::size_t n = 0;
  Diagnostics diagnostics;
};

/// gamma^{(z)}_{1,u*}(m, x) >= 0.
double gamma1(const FittedNuisances& nuis, const KernelConfig& kernel, const QuadratureConfig& quad,
              const PrincipalPoint& u_star, std::span<const double> x, int z, double m);

/// Signed weight (-1)^{z+1} gamma / (pi_z f_{zm}). Throws EstimationError
/// when f_{zm}(x) is below the density floor.
double xi1(const FittedNuisances& nuis, const KernelConfig& kernel, const QuadratureConfig& quad,
           const PrincipalPoint& u_star, std::span<const double> x, int z, double m);

/// Throws EstimationError when the mean smoothed density is <= denom_floor.
PointEstimate estimate_point(const Dataset& data, const FittedNuisances& nuis,
                             const EstimatorConfig& cfg, const PrincipalPoint& u_star);

// ---------------------------------------------------------------------------
// Bootstrap

enum class CiMethod { percentile, normal };

struct BootstrapOptions {
  std::size_t replicates = 100;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  CiMethod ci = CiMethod::percentile;
  double max_failure_fraction = 0.2;
};

struct BootstrapResult {
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::vector<double> replicates;  // successful replicates, in replicate order
  std::size_t requested = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::size_t> failures;  // message -> count

  std::size_t failed() const;
};

/// The full pipeline rerun on each resample: nuisance fits, then estimation.
struct Pipeline {
  std::shared_ptr<const NuisanceStrategy> strategy;
  CopulaSpec copula;
  EstimatorConfig config;
};

/// Nonparametric bootstrap at several strata sharing one set of resamples.
/// Replicate b draws rows from the stream derive_seed(seed, b), so results
/// do not depend on scheduling. Throws EstimationError with the failure
/// breakdown when more than max_failure_fraction of replicates fail at any
/// stratum.
std::vector<BootstrapResult> bootstrap_points(const Dataset& data, const Pipeline& pipeline,
                                              const std::vector<PrincipalPoint>& points,
                                              const BootstrapOptions& options);

BootstrapResult bootstrap(const Dataset& data, const Pipeline& pipeline,
                          const PrincipalPoint& u_star, const BootstrapOptions& options);

/// Type-7 sample quantile of sorted values.
double quantile_sorted(const std::vector<double>& sorted, double q);

// ---------------------------------------------------------------------------
// Surfaces and reporting

struct SurfaceNode {
  PrincipalPoint u;
  std::optional<PointEstimate> estimate;
  std::optional<BootstrapResult> interval;
  std::string reason;          // why the node is missing
  std::string interval_error;  // why the bootstrap failed at this node

  bool missing() const { return !estimate.has_value(); }
};

struct SurfaceEstimate {
  GridSpec grid;
  std::vector<SurfaceNode> nodes;
};

/// estimate_point at every grid node (m1 outer). Failing nodes are kept as
/// missing with the reason; throws EstimationError if every node fails.
SurfaceEstimate estimate_surface(const Dataset& data, const FittedNuisances& nuis,
                                 const EstimatorConfig& cfg, const GridSpec& grid);

/// Estimates at a list of strata; failing points are kept as missing.
std::vector<SurfaceNode> estimate_points(const Dataset& data, const FittedNuisances& nuis,
                                         const EstimatorConfig& cfg,
                                         const std::vector<PrincipalPoint>& points);

/// Bootstraps every non-missing node with one shared set of resamples. If
/// that fails, points are retried one at a time so a failing point only
/// loses its own interval (recorded in interval_error).
void attach_bootstrap(const Dataset& data, const Pipeline& pipeline,
                      std::vector<SurfaceNode>& nodes, const BootstrapOptions& options);

/// Maps an estimate made on standardized data back to original units:
/// tau scales by sd(y), u* goes through the inverse m transform, densities
/// scale by 1/sd(m)^2. Throws InputError on a null record.
PointEstimate rescale_estimate(const PointEstimate& estimate, const StandardizationRecord* record);
BootstrapResult rescale_bootstrap(const BootstrapResult& result, const StandardizationRecord* record);

nlohmann::ordered_json to_json(const SurfaceNode& node);
/// Surface CSV: m1,m0,tau_hat,se,ci_lo,ci_hi,status.
void write_surface_csv(std::ostream& out, const std::vector<SurfaceNode>& nodes);

/// Pairwise summation in index order; the result depends only on the values.
double pairwise_sum(std::span<const double> values);

}  // namespace pce
