#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "pce/dataset.hpp"
#include "pce/error.hpp"
#include "pce/kernel.hpp"

namespace pce {

enum class QuadratureMode { grid, adaptive };

/// Truncated uniform-grid integration of kernel-weighted integrands.
///
/// The 2-D smoother integrates over the square centred at u* with edge
/// c1 * h * sqrt(log n) on an N x N midpoint grid, N = ceil((log n)^{1+eps/2} sqrt(n)).
/// The 1-D integrals (gamma) use the interval m*_free +- c1 * h * sqrt(log n)
/// with N = ceil((log n)^{1+eps} n) midpoints. c1 >= 2 sqrt(2) keeps the
/// kernel mass outside the square at O(1/n).
struct QuadratureConfig {
  double c1 = 4.0;
  double epsilon = 0.5;
  std::size_t n = 1000;
  std::size_t override_n = 0;  // 0: use the rule
  QuadratureMode mode = QuadratureMode::grid;
  double adaptive_tolerance = 1e-9;

  void validate() const;
  std::size_t points_2d() const;
  std::size_t points_1d() const;
  /// Half edge of the 2-D square.
  double half_width_2d(double h) const;
  /// Half length of the 1-D interval.
  double half_width_1d(double h) const;
  /// Kernel mass outside the square / interval.
  double truncation_mass_2d() const;
  double truncation_mass_1d() const;
};

QuadratureMode parse_quadrature_mode(const std::string& name);

struct QuadratureResult {
  double value = 0.0;
  double error_bound = 0.0;
  std::size_t evaluations = 0;
};

using Integrand2d = std::function<double(const PrincipalPoint&)>;
using Integrand1d = std::function<double(double)>;

/// Integral of g(u) k_{u*}(u) du on the truncated grid. The bound is the
/// truncated kernel mass times max|g| plus 2 V L^2 / N, where V is the
/// discrete variation of g*k on the grid. Throws EstimationError on a
/// non-finite g value.
QuadratureResult smooth2d(const QuadratureConfig& cfg, const KernelConfig& kernel,
                          const PrincipalPoint& u_star, const Integrand2d& g);

/// Integral of g(m_free) k_{u*}(u) over the free axis with `fixed_axis`
/// pinned at m_fixed.
QuadratureResult smooth1d(const QuadratureConfig& cfg, const KernelConfig& kernel,
                          const PrincipalPoint& u_star, Axis fixed_axis, double m_fixed,
                          const Integrand1d& g);

/// Thrown when adaptive subdivision runs out of budget.
class QuadratureBudgetError : public EstimationError {
 public:
  QuadratureBudgetError(double best, double achieved);
  double best_estimate() const { return best_; }
  double achieved_error() const { return achieved_; }

 private:
  double best_;
  double achieved_;
};

/// Adaptive Gauss-Kronrod (7-15) integration of f over [a, b] to absolute
/// tolerance `tol`, subdividing the interval with the largest error first.
QuadratureResult adaptive_1d(const std::function<double(double)>& f, double a, double b, double tol,
                             std::size_t max_intervals = 4000);

/// Iterated adaptive integration of g(u) k_{u*}(u) over u* +- 12h on both
/// axes (the kernel mass beyond is below 1e-32). Reference quality, slow.
QuadratureResult adaptive_oracle_2d(const PrincipalPoint& u_star, const KernelConfig& kernel,
                                    const Integrand2d& g, double tol);

/// Adaptive counterpart of smooth1d.
QuadratureResult adaptive_oracle_1d(const PrincipalPoint& u_star, const KernelConfig& kernel,
                                    Axis fixed_axis, double m_fixed, const Integrand1d& g,
                                    double tol);

}  // namespace pce
