#pragma once

#include <span>
#include <string>

#include "pce/dataset.hpp"
#include "pce/nuisance.hpp"

namespace pce {

enum class CopulaFamily { independence, gaussian, fgm };

/// Which transform of the marginal CDF value a family consumes: nothing,
/// the probability itself, or its normal score Phi^{-1}(F).
enum class MarginScale { none, probability, normal_score };

/// F values are clamped to [kCdfClamp, 1 - kCdfClamp] before entering a copula.
inline constexpr double kCdfClamp = 1e-12;
/// Phi^{-1}(1 - kCdfClamp); the same clamp expressed on the normal-score scale.
inline constexpr double kScoreClamp = 7.034483825301131;

/// Association model c_rho(u, v) between the two potential intermediates.
class CopulaSpec {
 public:
  CopulaSpec() = default;
  /// Throws ConfigError when rho is out of range for the family.
  CopulaSpec(CopulaFamily family, double rho);

  CopulaFamily family() const { return family_; }
  double rho() const { return rho_; }
  MarginScale scale() const;

  /// c(u, v) for u, v in (0,1); throws InputError outside.
  double density(double u, double v) const;

  /// c expressed on the family's margin scale (see scale()). For the
  /// Gaussian family s, t are normal scores; for FGM they are probabilities.
  double density_on_scale(double s, double t) const;

  static CopulaFamily parse_family(const std::string& name);
  static std::string family_name(CopulaFamily family);

 private:
  CopulaFamily family_ = CopulaFamily::independence;
  double rho_ = 0.0;
};

/// Free-function form of CopulaSpec::density.
double copula_density(const CopulaSpec& spec, double u, double v);

/// Clamp counter shared by callers that evaluate margins.
struct ClampCounter {
  long long cdf = 0;
};

/// Transform a margin value onto the copula's scale, applying the CDF clamp.
/// `cdf` and `score` describe the same point; only the one the family
/// needs is read.
double margin_coordinate(MarginScale scale, double cdf, double score, ClampCounter* counter);

/// e_u(x) = c(F_{1 m1}(x), F_{0 m0}(x)) f_{1 m1}(x) f_{0 m0}(x).
double joint_principal_density(const CopulaSpec& spec, const NuisanceModel& model,
                               std::span<const double> x, const PrincipalPoint& u,
                               ClampCounter* counter = nullptr);

/// Overload on the bare principal-score model.
double joint_principal_density(const CopulaSpec& spec, const PrincipalScoreModel& ps,
                               std::span<const double> x, const PrincipalPoint& u);

}  // namespace pce
