#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pce/copula.hpp"
#include "pce/dataset.hpp"
#include "pce/estimator.hpp"
#include "pce/kernel.hpp"
#include "pce/quadrature.hpp"
#include "pce/simulation.hpp"

namespace pce {

using Settings = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment; values may be double-quoted.
/// Keys are normalized to lower case with '_' replaced by '-'.
Settings parse_settings(std::istream& in, const std::string& source);
Settings read_settings_file(const std::string& path);
std::string normalize_key(std::string key);

/// "m1,m0;m1,m0;..."
std::vector<PrincipalPoint> parse_points(const std::string& text);
/// "m1lo,m1hi;m0lo,m0hi;steps"
GridSpec parse_grid(const std::string& text);

enum class StandardizeMode { none, xm, all };

/// Fully resolved options for one CLI invocation.
struct RunConfig {
  std::string input;
  std::string output;
  std::string models_in;
  std::string models_out;
  CopulaSpec copula{CopulaFamily::gaussian, 0.5};
  std::optional<double> bandwidth;
  BandwidthRule bandwidth_rule = BandwidthRule::optimal;
  double bandwidth_scale = 0.0;
  std::vector<PrincipalPoint> points{{0.0, 0.0}};
  std::optional<GridSpec> grid;
  QuadratureConfig quad;
  BootstrapOptions bootstrap{0, 0.05, 1, CiMethod::percentile, 0.2};
  std::uint64_t seed = 1;
  StandardizeMode standardize = StandardizeMode::xm;
  DensityFloorPolicy density_policy = DensityFloorPolicy::error;
  KernelImpl kernel_impl = KernelImpl::parallel;
  // simulate / study
  std::string setting = "111";
  std::string variant;  // p1 | p2 selects a synthetic example instead of a setting
  std::size_t n = 1000;
  std::size_t rounds = 10;
  bool coverage = false;
  std::size_t n_mc = 1000000;
  std::string records_out;

  /// Bandwidth for a sample of size n.
  double resolved_bandwidth(std::size_t sample_size) const;
};

/// Every accepted key.
const std::vector<std::string>& known_settings();

/// Builds a RunConfig from file settings overridden by flag settings.
/// Throws ConfigError on unknown keys or invalid values.
RunConfig resolve_run_config(const Settings& file, const Settings& flags);

/// The resolved configuration as embedded in reports. Worker count is not
/// part of it: outputs must not depend on it.
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace pce
