#include "pce/quadrature.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <vector>

#include "pce/normal.hpp"

namespace pce {

void QuadratureConfig::validate() const {
  if (!(c1 >= 2.0 * std::sqrt(2.0))) throw ConfigError("quadrature c1 must be >= 2*sqrt(2)");
  if (!(epsilon > 0.0)) throw ConfigError("quadrature epsilon must be positive");
  if (n < 3) throw ConfigError("quadrature sample size must be >= 3");
  if (override_n != 0 && override_n < 8) throw ConfigError("quadrature grid size must be >= 8");
  if (!(adaptive_tolerance > 0.0)) throw ConfigError("adaptive tolerance must be positive");
}

std::size_t QuadratureConfig::points_2d() const {
  if (override_n != 0) return override_n;
  const double ln = std::log(static_cast<double>(n));
  const double v = std::ceil(std::pow(ln, 1.0 + epsilon / 2.0) * std::sqrt(static_cast<double>(n)));
  return std::max<std::size_t>(8, static_cast<std::size_t>(v));
}

std::size_t QuadratureConfig::points_1d() const {
  if (override_n != 0) return override_n;
  const double ln = std::log(static_cast<double>(n));
  const double v = std::ceil(std::pow(ln, 1.0 + epsilon) * static_cast<double>(n));
  return std::max<std::size_t>(8, static_cast<std::size_t>(v));
}

double QuadratureConfig::half_width_2d(double h) const {
  return 0.5 * c1 * h * std::sqrt(std::log(static_cast<double>(n)));
}

double QuadratureConfig::half_width_1d(double h) const {
  return c1 * h * std::sqrt(std::log(static_cast<double>(n)));
}

double QuadratureConfig::truncation_mass_2d() const {
  const double t = 0.5 * c1 * std::sqrt(std::log(static_cast<double>(n)));
  const double inside = 1.0 - 2.0 * normal::ccdf(t);
  return 1.0 - inside * inside;
}

double QuadratureConfig::truncation_mass_1d() const {
  return 2.0 * normal::ccdf(c1 * std::sqrt(std::log(static_cast<double>(n))));
}

QuadratureMode parse_quadrature_mode(const std::string& name) {
  if (name == "grid") return QuadratureMode::grid;
  if (name == "adaptive") return QuadratureMode::adaptive;
  throw ConfigError("unknown quadrature mode '" + name + "' (expected grid or adaptive)");
}

QuadratureResult smooth2d(const QuadratureConfig& cfg, const KernelConfig& kernel,
                          const PrincipalPoint& u_star, const Integrand2d& g) {
  const std::size_t N = cfg.points_2d();
  const double half = cfg.half_width_2d(kernel.h);
  const double step = 2.0 * half / static_cast<double>(N);
  std::vector<double> prev(N), cur(N);
  double sum = 0.0, gmax = 0.0, variation = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const double m1 = u_star.m1 - half + (static_cast<double>(j) + 0.5) * step;
    for (std::size_t k = 0; k < N; ++k) {
      const PrincipalPoint u{m1, u_star.m0 - half + (static_cast<double>(k) + 0.5) * step};
      const double gv = g(u);
      if (!std::isfinite(gv)) {
        throw EstimationError("non-finite integrand at grid point (" + format_double(u.m1) + ", " +
                              format_double(u.m0) + ")");
      }
      gmax = std::max(gmax, std::abs(gv));
      cur[k] = gv * kernel_weight(kernel, u_star, u);
      sum += cur[k];
      if (j > 0 && k > 0) variation += std::abs(cur[k] - cur[k - 1] - prev[k] + prev[k - 1]);
      if (j == N - 1 && k > 0) variation += std::abs(cur[k] - cur[k - 1]);
    }
    if (j > 0) variation += std::abs(cur[N - 1] - prev[N - 1]);
    std::swap(prev, cur);
  }
  const double area = step * step;
  const double L = 2.0 * half;
  QuadratureResult r;
  r.value = sum * area;
  r.error_bound = cfg.truncation_mass_2d() * gmax + 2.0 * variation * L * L / static_cast<double>(N);
  r.evaluations = N * N;
  return r;
}

QuadratureResult smooth1d(const QuadratureConfig& cfg, const KernelConfig& kernel,
                          const PrincipalPoint& u_star, Axis fixed_axis, double m_fixed,
                          const Integrand1d& g) {
  const std::size_t N = cfg.points_1d();
  const double half = cfg.half_width_1d(kernel.h);
  const double step = 2.0 * half / static_cast<double>(N);
  const double center = fixed_axis == Axis::treated ? u_star.m0 : u_star.m1;
  double sum = 0.0, gmax = 0.0, variation = 0.0, prev = 0.0;
  for (std::size_t t = 0; t < N; ++t) {
    const double m = center - half + (static_cast<double>(t) + 0.5) * step;
    const double gv = g(m);
    if (!std::isfinite(gv)) {
      throw EstimationError("non-finite integrand at free-axis point " + format_double(m));
    }
    const PrincipalPoint u = fixed_axis == Axis::treated ? PrincipalPoint{m_fixed, m}
                                                         : PrincipalPoint{m, m_fixed};
    const double w = gv * kernel_weight(kernel, u_star, u);
    gmax = std::max(gmax, std::abs(gv));
    sum += w;
    if (t > 0) variation += std::abs(w - prev);
    prev = w;
  }
  QuadratureResult r;
  r.value = sum * step;
  r.error_bound = cfg.truncation_mass_1d() * gmax * kernel_marginal(kernel, u_star, fixed_axis, m_fixed) +
                  variation * step;
  r.evaluations = N;
  return r;
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod

namespace {

// 15-point Kronrod abscissae (non-negative half) and weights, with the
// embedded 7-point Gauss weights (QUADPACK qk15).
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

Segment gk15(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double r = 0.5 * (b - a);
  const double fc = f(c);
  double kron = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = r * kXgk[static_cast<std::size_t>(j)];
    const double f1 = f(c - dx);
    const double f2 = f(c + dx);
    kron += kWgk[static_cast<std::size_t>(j)] * (f1 + f2);
    if (j % 2 == 1) gauss += kWg[static_cast<std::size_t>(j / 2)] * (f1 + f2);
  }
  return {a, b, kron * r, std::abs((kron - gauss) * r)};
}

}  // namespace

QuadratureBudgetError::QuadratureBudgetError(double best, double achieved)
    : EstimationError("adaptive quadrature: subdivision budget exhausted (best estimate " +
                      format_double(best) + ", achieved error " + format_double(achieved) + ")"),
      best_(best),
      achieved_(achieved) {}

QuadratureResult adaptive_1d(const std::function<double(double)>& f, double a, double b, double tol,
                             std::size_t max_intervals) {
  std::priority_queue<Segment> heap;
  std::size_t evaluations = 15;
  Segment first = gk15(f, a, b);
  double total = first.value, error = first.error;
  heap.push(first);
  while (error > tol) {
    if (heap.size() >= max_intervals) throw QuadratureBudgetError(total, error);
    const Segment s = heap.top();
    heap.pop();
    const double mid = 0.5 * (s.a + s.b);
    const Segment left = gk15(f, s.a, mid);
    const Segment right = gk15(f, mid, s.b);
    evaluations += 30;
    total += left.value + right.value - s.value;
    error += left.error + right.error - s.error;
    heap.push(left);
    heap.push(right);
    if (!std::isfinite(total)) throw EstimationError("adaptive quadrature: non-finite integrand");
  }
  // Re-sum to drop the running-update rounding.
  double value = 0.0, err = 0.0;
  while (!heap.empty()) {
    value += heap.top().value;
    err += heap.top().error;
    heap.pop();
  }
  return {value, err, evaluations};
}

namespace {
constexpr double kOracleHalfWidth = 12.0;  // in units of h
}

QuadratureResult adaptive_oracle_2d(const PrincipalPoint& u_star, const KernelConfig& kernel,
                                    const Integrand2d& g, double tol) {
  if (!(tol > 0.0)) throw ConfigError("adaptive tolerance must be positive");
  const double h = kernel.h;
  const double w = kOracleHalfWidth * h;
  // Half the budget goes to the outer rule; inner errors, scaled by the
  // outer kernel factor, may contribute at most tol / (4w) per unit length.
  const double inner_tol = 0.5 * tol / (2.0 * w);
  std::size_t evaluations = 0;
  double inner_error = 0.0;
  auto outer = [&](double m1) {
    const double k1 = normal::pdf((m1 - u_star.m1) / h) / h;
    auto inner = [&](double m0) {
      return g({m1, m0}) * normal::pdf((m0 - u_star.m0) / h) / h;
    };
    auto r = adaptive_1d(inner, u_star.m0 - w, u_star.m0 + w, inner_tol / std::max(k1, 1e-300));
    evaluations += r.evaluations;
    inner_error = std::max(inner_error, r.error_bound * k1);
    return k1 * r.value;
  };
  auto r = adaptive_1d(outer, u_star.m1 - w, u_star.m1 + w, 0.5 * tol);
  r.error_bound += inner_error * 2.0 * w;
  r.evaluations = evaluations;
  return r;
}

QuadratureResult adaptive_oracle_1d(const PrincipalPoint& u_star, const KernelConfig& kernel,
                                    Axis fixed_axis, double m_fixed, const Integrand1d& g,
                                    double tol) {
  const double h = kernel.h;
  const double w = kOracleHalfWidth * h;
  const double center = fixed_axis == Axis::treated ? u_star.m0 : u_star.m1;
  const double pinned = kernel_marginal(kernel, u_star, fixed_axis, m_fixed);
  auto f = [&](double m) { return g(m) * normal::pdf((m - center) / h) / h; };
  if (pinned == 0.0) return {0.0, 0.0, 0};
  auto r = adaptive_1d(f, center - w, center + w, tol / pinned);
  r.value *= pinned;
  r.error_bound *= pinned;
  return r;
}

}  // namespace pce
