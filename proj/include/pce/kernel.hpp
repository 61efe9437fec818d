#pragma once

#include <cstddef>
#include <string>

#include "pce/dataset.hpp"

namespace pce {

enum class BandwidthRule { explicit_value, optimal, undersmooth };

/// Standard bivariate Gaussian product kernel with bandwidth h, in
/// (standardized) m units.
struct KernelConfig {
  double h = 0.2;

  void validate() const;
};

/// h^{-2} phi((m1 - m1*)/h) phi((m0 - m0*)/h).
double kernel_weight(const KernelConfig& cfg, const PrincipalPoint& u_star, const PrincipalPoint& u);

enum class Axis { treated = 1, control = 0 };

/// Integral of kernel_weight over the free axis with `fixed_axis` pinned at
/// m: h^{-1} phi((m - m*_fixed)/h).
double kernel_marginal(const KernelConfig& cfg, const PrincipalPoint& u_star, Axis fixed_axis,
                       double m);

/// Rule constants: optimal h = 0.15 n^{-1/6}, undersmooth h = 0.1 n^{-1/5}.
/// `scale` replaces the leading constant when positive.
double bandwidth_for(BandwidthRule rule, std::size_t n, double scale = 0.0);

BandwidthRule parse_bandwidth_rule(const std::string& name);

}  // namespace pce
