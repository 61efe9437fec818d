#include "pce/copula.hpp"

#include <cmath>

#include "pce/error.hpp"
#include "pce/normal.hpp"

namespace pce {

CopulaSpec::CopulaSpec(CopulaFamily family, double rho) : family_(family), rho_(rho) {
  if (!std::isfinite(rho)) throw ConfigError("copula rho must be finite");
  switch (family) {
    case CopulaFamily::gaussian:
      if (!(std::abs(rho) < 1.0)) throw ConfigError("gaussian copula requires |rho| < 1");
      break;
    case CopulaFamily::fgm:
      if (!(std::abs(rho) <= 1.0)) throw ConfigError("FGM copula requires rho in [-1, 1]");
      break;
    case CopulaFamily::independence:
      rho_ = 0.0;
      break;
  }
}

MarginScale CopulaSpec::scale() const {
  switch (family_) {
    case CopulaFamily::gaussian:
      return MarginScale::normal_score;
    case CopulaFamily::fgm:
      return MarginScale::probability;
    case CopulaFamily::independence:
      break;
  }
  return MarginScale::none;
}

double CopulaSpec::density_on_scale(double s, double t) const {
  switch (family_) {
    case CopulaFamily::gaussian: {
      const double r2 = rho_ * rho_;
      const double q = 1.0 - r2;
      return std::exp(-(r2 * (s * s + t * t) - 2.0 * rho_ * s * t) / (2.0 * q)) / std::sqrt(q);
    }
    case CopulaFamily::fgm:
      return 1.0 + rho_ * (1.0 - 2.0 * s) * (1.0 - 2.0 * t);
    case CopulaFamily::independence:
      break;
  }
  return 1.0;
}

double CopulaSpec::density(double u, double v) const {
  if (!(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0)) {
    throw InputError("copula density: arguments must lie in (0,1)");
  }
  switch (scale()) {
    case MarginScale::normal_score:
      return density_on_scale(normal::quantile(u), normal::quantile(v));
    case MarginScale::probability:
      return density_on_scale(u, v);
    case MarginScale::none:
      break;
  }
  return 1.0;
}

CopulaFamily CopulaSpec::parse_family(const std::string& name) {
  if (name == "gaussian") return CopulaFamily::gaussian;
  if (name == "fgm") return CopulaFamily::fgm;
  if (name == "independence") return CopulaFamily::independence;
  throw ConfigError("unknown copula '" + name + "' (expected gaussian, fgm or independence)");
}

std::string CopulaSpec::family_name(CopulaFamily family) {
  switch (family) {
    case CopulaFamily::gaussian:
      return "gaussian";
    case CopulaFamily::fgm:
      return "fgm";
    case CopulaFamily::independence:
      break;
  }
  return "independence";
}

double copula_density(const CopulaSpec& spec, double u, double v) { return spec.density(u, v); }

double margin_coordinate(MarginScale scale, double cdf, double score, ClampCounter* counter) {
  switch (scale) {
    case MarginScale::probability:
      if (cdf < kCdfClamp || cdf > 1.0 - kCdfClamp) {
        if (counter) ++counter->cdf;
        return cdf < kCdfClamp ? kCdfClamp : 1.0 - kCdfClamp;
      }
      return cdf;
    case MarginScale::normal_score:
      if (!(std::abs(score) <= kScoreClamp)) {
        if (counter) ++counter->cdf;
        return score < 0.0 ? -kScoreClamp : kScoreClamp;
      }
      return score;
    case MarginScale::none:
      break;
  }
  return 0.0;
}

double joint_principal_density(const CopulaSpec& spec, const NuisanceModel& model,
                               std::span<const double> x, const PrincipalPoint& u,
                               ClampCounter* counter) {
  const double f1 = model.ps_density(x, 1, u.m1);
  const double f0 = model.ps_density(x, 0, u.m0);
  const MarginScale scale = spec.scale();
  if (scale == MarginScale::none) return f1 * f0;
  double s1 = 0.0, s0 = 0.0, c1 = 0.0, c0 = 0.0;
  if (scale == MarginScale::normal_score) {
    s1 = model.ps_normal_score(x, 1, u.m1);
    s0 = model.ps_normal_score(x, 0, u.m0);
  } else {
    c1 = model.ps_cdf(x, 1, u.m1);
    c0 = model.ps_cdf(x, 0, u.m0);
  }
  const double a = margin_coordinate(scale, c1, s1, counter);
  const double b = margin_coordinate(scale, c0, s0, counter);
  return spec.density_on_scale(a, b) * f1 * f0;
}

double joint_principal_density(const CopulaSpec& spec, const PrincipalScoreModel& ps,
                               std::span<const double> x, const PrincipalPoint& u) {
  const double f1 = ps_density(ps, x, 1, u.m1);
  const double f0 = ps_density(ps, x, 0, u.m0);
  const double F1 = std::clamp(ps_cdf(ps, x, 1, u.m1), kCdfClamp, 1.0 - kCdfClamp);
  const double F0 = std::clamp(ps_cdf(ps, x, 0, u.m0), kCdfClamp, 1.0 - kCdfClamp);
  return spec.density(F1, F0) * f1 * f0;
}

}  // namespace pce
