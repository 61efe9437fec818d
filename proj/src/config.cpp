#include "pce/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "pce/error.hpp"

namespace pce {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

}  // namespace

std::string normalize_key(std::string key) {
  for (char& c : key) {
    c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return key;
}

Settings parse_settings(std::istream& in, const std::string& source) {
  Settings out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = normalize_key(trim(body.substr(0, eq)));
    std::string value = trim(body.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

Settings read_settings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_settings(in, path);
}

std::vector<PrincipalPoint> parse_points(const std::string& text) {
  std::vector<PrincipalPoint> out;
  for (const std::string& item : split(text, ';')) {
    if (item.empty()) continue;
    const auto xy = split(item, ',');
    if (xy.size() != 2) throw ConfigError("point '" + item + "' must be 'm1,m0'");
    out.push_back({to_double("points", xy[0]), to_double("points", xy[1])});
  }
  if (out.empty()) throw ConfigError("no points given");
  return out;
}

GridSpec parse_grid(const std::string& text) {
  const auto parts = split(text, ';');
  if (parts.size() != 3) throw ConfigError("grid must be 'm1lo,m1hi;m0lo,m0hi;steps'");
  const auto r1 = split(parts[0], ',');
  const auto r0 = split(parts[1], ',');
  if (r1.size() != 2 || r0.size() != 2) throw ConfigError("grid ranges must be 'lo,hi'");
  GridSpec g;
  g.m1_range = {to_double("grid", r1[0]), to_double("grid", r1[1])};
  g.m0_range = {to_double("grid", r0[0]), to_double("grid", r0[1])};
  const auto steps = to_unsigned("grid", parts[2]);
  if (steps > 10000) throw ConfigError("grid steps too large");
  g.steps = static_cast<int>(steps);
  try {
    g.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return g;
}

const std::vector<std::string>& known_settings() {
  static const std::vector<std::string> keys = {
      "input",       "output",         "models-in",       "models-out", "copula",
      "rho",         "bandwidth",      "bandwidth-rule",  "bandwidth-scale",
      "points",      "grid",           "quad-c1",         "quad-epsilon",
      "quad-n-override", "quad-mode",  "bootstrap",       "alpha",      "ci",
      "seed",        "standardize",    "density-floor",   "kernel-impl",
      "setting",     "variant",        "n",               "rounds",     "coverage",
      "n-mc",        "records-out"};
  return keys;
}

double RunConfig::resolved_bandwidth(std::size_t sample_size) const {
  if (bandwidth) return *bandwidth;
  return bandwidth_for(bandwidth_rule, sample_size, bandwidth_scale);
}

RunConfig resolve_run_config(const Settings& file, const Settings& flags) {
  Settings merged = file;
  for (const auto& [k, v] : flags) merged[k] = v;
  const auto& keys = known_settings();
  for (const auto& [k, v] : merged) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("unknown setting '" + k + "'");
    }
  }
  auto get = [&](const std::string& k) -> const std::string* {
    const auto it = merged.find(k);
    return it == merged.end() ? nullptr : &it->second;
  };

  RunConfig c;
  if (auto v = get("input")) c.input = *v;
  if (auto v = get("output")) c.output = *v;
  if (auto v = get("models-in")) c.models_in = *v;
  if (auto v = get("models-out")) c.models_out = *v;
  if (auto v = get("records-out")) c.records_out = *v;
  {
    CopulaFamily family = c.copula.family();
    double rho = c.copula.rho();
    if (auto v = get("copula")) family = CopulaSpec::parse_family(*v);
    if (auto v = get("rho")) rho = to_double("rho", *v);
    if (family == CopulaFamily::independence) rho = 0.0;
    c.copula = CopulaSpec(family, rho);
  }
  if (auto v = get("bandwidth")) {
    c.bandwidth = to_double("bandwidth", *v);
    if (!(*c.bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
  }
  if (auto v = get("bandwidth-rule")) c.bandwidth_rule = parse_bandwidth_rule(*v);
  if (auto v = get("bandwidth-scale")) {
    c.bandwidth_scale = to_double("bandwidth-scale", *v);
    if (!(c.bandwidth_scale > 0.0)) throw ConfigError("bandwidth-scale must be positive");
  }
  if (auto v = get("points")) c.points = parse_points(*v);
  if (auto v = get("grid")) c.grid = parse_grid(*v);
  if (auto v = get("quad-c1")) c.quad.c1 = to_double("quad-c1", *v);
  if (auto v = get("quad-epsilon")) c.quad.epsilon = to_double("quad-epsilon", *v);
  if (auto v = get("quad-n-override")) c.quad.override_n = to_unsigned("quad-n-override", *v);
  if (auto v = get("quad-mode")) c.quad.mode = parse_quadrature_mode(*v);
  if (auto v = get("bootstrap")) c.bootstrap.replicates = to_unsigned("bootstrap", *v);
  if (auto v = get("alpha")) c.bootstrap.alpha = to_double("alpha", *v);
  if (auto v = get("ci")) {
    if (*v == "percentile") {
      c.bootstrap.ci = CiMethod::percentile;
    } else if (*v == "normal") {
      c.bootstrap.ci = CiMethod::normal;
    } else {
      throw ConfigError("ci must be percentile or normal");
    }
  }
  if (auto v = get("seed")) c.seed = to_unsigned("seed", *v);
  c.bootstrap.seed = c.seed;
  if (auto v = get("standardize")) {
    if (*v == "none") {
      c.standardize = StandardizeMode::none;
    } else if (*v == "xm") {
      c.standardize = StandardizeMode::xm;
    } else if (*v == "all") {
      c.standardize = StandardizeMode::all;
    } else {
      throw ConfigError("standardize must be none, xm or all");
    }
  }
  if (auto v = get("density-floor")) {
    if (*v == "error") {
      c.density_policy = DensityFloorPolicy::error;
    } else if (*v == "clamp") {
      c.density_policy = DensityFloorPolicy::clamp;
    } else {
      throw ConfigError("density-floor must be error or clamp");
    }
  }
  if (auto v = get("kernel-impl")) {
    if (*v == "parallel") {
      c.kernel_impl = KernelImpl::parallel;
    } else if (*v == "reference") {
      c.kernel_impl = KernelImpl::reference;
    } else {
      throw ConfigError("kernel-impl must be parallel or reference");
    }
  }
  if (auto v = get("setting")) {
    BenchmarkSetting::parse(*v);
    c.setting = *v;
  }
  if (auto v = get("variant")) {
    parse_synthetic_variant(*v);
    c.variant = *v;
  }
  if (auto v = get("n")) c.n = to_unsigned("n", *v);
  if (auto v = get("rounds")) c.rounds = to_unsigned("rounds", *v);
  if (auto v = get("coverage")) c.coverage = to_bool("coverage", *v);
  if (auto v = get("n-mc")) c.n_mc = to_unsigned("n-mc", *v);

  c.quad.validate();
  if (c.bootstrap.replicates == 1) throw ConfigError("bootstrap needs at least 2 replicates");
  if (!(c.bootstrap.alpha > 0.0 && c.bootstrap.alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  return c;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["input"] = c.input;
  j["copula"] = CopulaSpec::family_name(c.copula.family());
  j["rho"] = c.copula.rho();
  if (c.bandwidth) {
    j["bandwidth"] = *c.bandwidth;
  } else {
    j["bandwidth_rule"] = c.bandwidth_rule == BandwidthRule::undersmooth ? "undersmooth" : "optimal";
    j["bandwidth_scale"] = c.bandwidth_scale;
  }
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& u : c.points) pts.push_back({u.m1, u.m0});
  if (c.grid) {
    j["grid"] = {{"m1_range", c.grid->m1_range}, {"m0_range", c.grid->m0_range}, {"steps", c.grid->steps}};
  } else {
    j["points"] = pts;
  }
  j["quad"] = {{"c1", c.quad.c1},
               {"epsilon", c.quad.epsilon},
               {"n_override", c.quad.override_n},
               {"mode", c.quad.mode == QuadratureMode::grid ? "grid" : "adaptive"}};
  j["bootstrap"] = c.bootstrap.replicates;
  j["alpha"] = c.bootstrap.alpha;
  j["ci"] = c.bootstrap.ci == CiMethod::percentile ? "percentile" : "normal";
  j["seed"] = c.seed;
  j["standardize"] = c.standardize == StandardizeMode::none ? "none"
                     : c.standardize == StandardizeMode::xm ? "xm"
                                                            : "all";
  j["density_floor"] = c.density_policy == DensityFloorPolicy::error ? "error" : "clamp";
  return j;
}

}  // namespace pce
