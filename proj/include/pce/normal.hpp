#pragma once

// Standard normal distribution primitives shared by the principal-score
// model, the Gaussian copula and the data generators.

#include <cmath>

namespace pce::normal {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kSqrt2 = 1.41421356237309504880;

inline double pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

/// Phi(z) via erfc; relative error is that of erfc (~1 ulp) in both tails.
double cdf(double z);

/// Upper tail 1 - Phi(z) without cancellation.
double ccdf(double z);

/// Phi^{-1}(p) for p in (0,1). Acklam's rational approximation
/// (|relative error| < 1.15e-9) followed by one Halley correction on Phi.
/// Returns -inf / +inf at p == 0 / p == 1.
double quantile(double p);

}  // namespace pce::normal
