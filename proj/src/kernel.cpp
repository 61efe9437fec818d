#include "pce/kernel.hpp"

#include <cmath>

#include "pce/error.hpp"
#include "pce/normal.hpp"

namespace pce {

void KernelConfig::validate() const {
  if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("bandwidth h must be positive");
}

double kernel_weight(const KernelConfig& cfg, const PrincipalPoint& u_star,
                     const PrincipalPoint& u) {
  const double a = (u.m1 - u_star.m1) / cfg.h;
  const double b = (u.m0 - u_star.m0) / cfg.h;
  return normal::pdf(a) * normal::pdf(b) / (cfg.h * cfg.h);
}

double kernel_marginal(const KernelConfig& cfg, const PrincipalPoint& u_star, Axis fixed_axis,
                       double m) {
  const double center = fixed_axis == Axis::treated ? u_star.m1 : u_star.m0;
  return normal::pdf((m - center) / cfg.h) / cfg.h;
}

double bandwidth_for(BandwidthRule rule, std::size_t n, double scale) {
  const auto nn = static_cast<double>(n);
  switch (rule) {
    case BandwidthRule::optimal:
      return (scale > 0.0 ? scale : 0.15) * std::pow(nn, -1.0 / 6.0);
    case BandwidthRule::undersmooth:
      return (scale > 0.0 ? scale : 0.1) * std::pow(nn, -1.0 / 5.0);
    case BandwidthRule::explicit_value:
      break;
  }
  throw ConfigError("explicit bandwidth rule needs a value");
}

BandwidthRule parse_bandwidth_rule(const std::string& name) {
  if (name == "optimal") return BandwidthRule::optimal;
  if (name == "undersmooth") return BandwidthRule::undersmooth;
  throw ConfigError("unknown bandwidth rule '" + name + "' (expected optimal or undersmooth)");
}

}  // namespace pce
