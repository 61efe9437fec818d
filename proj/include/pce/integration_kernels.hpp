#pragma once

// Per-observation integrals behind the estimator:
//   denom_i  = [[ e_u(x_i) ]]_{u*}
//   smooth_i = [[ (mu_1(x_i, m1) - mu_0(x_i, m0)) e_u(x_i) ]]_{u*}
//   gamma_i  = gamma^{(z_i)}_{1,u*}(m_i, x_i)
//
// Two implementations share one contract. `integrate_rows_reference` is a
// plain serial loop calling smooth2d / smooth1d with pointwise e_u(x)
// evaluations; it exists for testing. `integrate_rows` is the production
// kernel: OpenMP over rows, and within a row it exploits that e_u(x)
// factorizes into per-axis margin terms and a copula term, so nuisance
// functions are evaluated O(N) times and only the copula is evaluated on
// the N x N grid. Both produce the same midpoint sums up to rounding.

#include <cstddef>
#include <vector>

#include "pce/copula.hpp"
#include "pce/dataset.hpp"
#include "pce/kernel.hpp"
#include "pce/nuisance.hpp"
#include "pce/quadrature.hpp"

namespace pce {

struct IntegrationProblem {
  const NuisanceModel* model = nullptr;
  CopulaSpec copula;
  KernelConfig kernel;
  QuadratureConfig quad;
  PrincipalPoint u_star;
};

struct RowIntegrals {
  double denom = 0.0;
  double smooth = 0.0;
  double gamma = 0.0;
  double denom_bound = 0.0;
  double smooth_bound = 0.0;
  double gamma_bound = 0.0;
  long long cdf_clamps = 0;
};

/// Serial pointwise reference.
RowIntegrals integrate_row_reference(const IntegrationProblem& problem, const Observation& obs);
std::vector<RowIntegrals> integrate_rows_reference(const IntegrationProblem& problem,
                                                   const Dataset& data);

/// Production kernel (grid or adaptive per problem.quad.mode). Results are
/// indexed by row and independent of the number of threads.
std::vector<RowIntegrals> integrate_rows(const IntegrationProblem& problem, const Dataset& data);

/// gamma^{(z)}_{1,u*}(m, x) alone, through smooth1d (or the adaptive rule).
QuadratureResult gamma_integral(const IntegrationProblem& problem, std::span<const double> x, int z,
                                double m, ClampCounter* counter = nullptr);

}  // namespace pce
