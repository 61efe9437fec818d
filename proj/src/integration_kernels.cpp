#include "pce/integration_kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <exception>

#include "pce/normal.hpp"

namespace pce {

namespace {

using Array = Eigen::ArrayXd;

QuadratureResult smooth_adaptive_2d(const IntegrationProblem& pb, const Integrand2d& g) {
  return adaptive_oracle_2d(pb.u_star, pb.kernel, g, pb.quad.adaptive_tolerance);
}

}  // namespace

QuadratureResult gamma_integral(const IntegrationProblem& pb, std::span<const double> x, int z,
                                double m, ClampCounter* counter) {
  const NuisanceModel& model = *pb.model;
  const Axis fixed = z == 1 ? Axis::treated : Axis::control;
  Integrand1d g = [&](double free) {
    const PrincipalPoint u = z == 1 ? PrincipalPoint{m, free} : PrincipalPoint{free, m};
    return joint_principal_density(pb.copula, model, x, u, counter);
  };
  if (pb.quad.mode == QuadratureMode::adaptive) {
    return adaptive_oracle_1d(pb.u_star, pb.kernel, fixed, m, g, pb.quad.adaptive_tolerance);
  }
  return smooth1d(pb.quad, pb.kernel, pb.u_star, fixed, m, g);
}

RowIntegrals integrate_row_reference(const IntegrationProblem& pb, const Observation& obs) {
  const NuisanceModel& model = *pb.model;
  ClampCounter clamps;
  Integrand2d e = [&](const PrincipalPoint& u) {
    return joint_principal_density(pb.copula, model, obs.x, u, &clamps);
  };
  Integrand2d contrast = [&](const PrincipalPoint& u) {
    const double diff = model.outcome_mean(obs.x, 1, u.m1) - model.outcome_mean(obs.x, 0, u.m0);
    return diff * joint_principal_density(pb.copula, model, obs.x, u, nullptr);
  };
  RowIntegrals row;
  const bool adaptive = pb.quad.mode == QuadratureMode::adaptive;
  const auto d = adaptive ? smooth_adaptive_2d(pb, e) : smooth2d(pb.quad, pb.kernel, pb.u_star, e);
  const auto s = adaptive ? smooth_adaptive_2d(pb, contrast)
                          : smooth2d(pb.quad, pb.kernel, pb.u_star, contrast);
  const auto g = gamma_integral(pb, obs.x, obs.z, obs.m, &clamps);
  row.denom = d.value;
  row.denom_bound = d.error_bound;
  row.smooth = s.value;
  row.smooth_bound = s.error_bound;
  row.gamma = g.value;
  row.gamma_bound = g.error_bound;
  row.cdf_clamps = clamps.cdf;
  return row;
}

std::vector<RowIntegrals> integrate_rows_reference(const IntegrationProblem& pb,
                                                   const Dataset& data) {
  std::vector<RowIntegrals> rows(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows[i] = integrate_row_reference(pb, data.observation(i));
  }
  return rows;
}

namespace {

// Row-independent grid layout plus per-thread scratch space.
class GridKernel {
 public:
  explicit GridKernel(const IntegrationProblem& pb) : pb_(pb) {
    const double h = pb.kernel.h;
    n2_ = static_cast<Eigen::Index>(pb.quad.points_2d());
    n1_ = static_cast<Eigen::Index>(pb.quad.points_1d());
    half2_ = pb.quad.half_width_2d(h);
    step2_ = 2.0 * half2_ / static_cast<double>(n2_);
    half1_ = pb.quad.half_width_1d(h);
    step1_ = 2.0 * half1_ / static_cast<double>(n1_);

    offsets2_ = Array(n2_);
    for (Eigen::Index j = 0; j < n2_; ++j) offsets2_[j] = -half2_ + (static_cast<double>(j) + 0.5) * step2_;
    // Kernel factor per axis with the cell width folded in.
    kern2_ = (-0.5 * (offsets2_ / h).square()).exp() * (normal::kInvSqrt2Pi / h * step2_);
    nodes_m1_ = offsets2_ + pb.u_star.m1;
    nodes_m0_ = offsets2_ + pb.u_star.m0;

    offsets1_ = Array(n1_);
    for (Eigen::Index t = 0; t < n1_; ++t) offsets1_[t] = -half1_ + (static_cast<double>(t) + 0.5) * step1_;
    kern1_ = (-0.5 * (offsets1_ / h).square()).exp() * (normal::kInvSqrt2Pi / h * step1_);
    free_m0_ = offsets1_ + pb.u_star.m0;
    free_m1_ = offsets1_ + pb.u_star.m1;

    const double rho = pb.copula.rho();
    const double q = 1.0 - rho * rho;
    kappa_ = 1.0 / std::sqrt(q);
    alpha_ = rho * rho / (2.0 * q);
    beta_ = rho / q;
  }

  RowIntegrals row(const Observation& obs);

 private:
  struct Margin {
    Array density, coord, mean;
  };

  void margin(std::span<const double> x, int z, const Array& nodes, Margin& out, long long& clamps,
              bool with_mean) const;
  void grid_2d(const Observation& obs, RowIntegrals& out, long long& clamps);
  void gamma_1d(const Observation& obs, RowIntegrals& out, long long& clamps);

  const IntegrationProblem& pb_;
  Eigen::Index n2_ = 0, n1_ = 0;
  double half2_ = 0, step2_ = 0, half1_ = 0, step1_ = 0;
  Array offsets2_, kern2_, nodes_m1_, nodes_m0_;
  Array offsets1_, kern1_, free_m0_, free_m1_;
  double kappa_ = 1, alpha_ = 0, beta_ = 0;

  // scratch
  Margin treated_, control_, free_;
  Array a_, b_, e_, w_, w_prev_, p_, colsum_;
};

void GridKernel::margin(std::span<const double> x, int z, const Array& nodes, Margin& out,
                        long long& clamps, bool with_mean) const {
  const NuisanceModel& model = *pb_.model;
  const auto n = nodes.size();
  const auto m = std::span<const double>(nodes.data(), static_cast<std::size_t>(n));
  out.density.resize(n);
  model.ps_density_batch(x, z, m, {out.density.data(), static_cast<std::size_t>(n)});
  out.coord.resize(n);
  std::span<double> coord(out.coord.data(), static_cast<std::size_t>(n));
  ClampCounter counter;
  switch (pb_.copula.scale()) {
    case MarginScale::normal_score:
      model.ps_normal_score_batch(x, z, m, coord);
      for (double& s : coord) s = margin_coordinate(MarginScale::normal_score, 0.0, s, &counter);
      break;
    case MarginScale::probability:
      model.ps_cdf_batch(x, z, m, coord);
      for (double& c : coord) c = margin_coordinate(MarginScale::probability, c, 0.0, &counter);
      break;
    case MarginScale::none:
      out.coord.setZero();
      break;
  }
  clamps += counter.cdf;
  if (with_mean) {
    out.mean.resize(n);
    model.outcome_mean_batch(x, z, m, {out.mean.data(), static_cast<std::size_t>(n)});
  }
}

namespace {

// True when coord[k] = coord[0] + k * (coord[1] - coord[0]) to rounding.
bool is_affine(const Array& coord) {
  const auto n = coord.size();
  if (n < 2) return false;
  const double d = coord[1] - coord[0];
  double scale = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) scale = std::max(scale, std::abs(coord[k]));
  const double tol = 1e-11 * (1.0 + scale);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (std::abs(coord[k] - (coord[0] + static_cast<double>(k) * d)) > tol) return false;
  }
  return true;
}

// Rows between direct re-evaluations of the copula exponential.
constexpr Eigen::Index kAnchorRows = 32;

}  // namespace

void GridKernel::grid_2d(const Observation& obs, RowIntegrals& out, long long& clamps) {
  // Clamps are reported per density evaluation, as the pointwise reference
  // does: a clamped node on one axis is reused by all N nodes of the other.
  long long node_clamps = 0;
  margin(obs.x, 1, nodes_m1_, treated_, node_clamps, true);
  margin(obs.x, 0, nodes_m0_, control_, node_clamps, true);
  clamps += node_clamps * static_cast<long long>(nodes_m0_.size());
  const bool gaussian = pb_.copula.family() == CopulaFamily::gaussian;

  // With c = kappa exp(-alpha (s^2 + t^2) + beta s t), the margin factors
  // absorb kappa exp(-alpha s^2) and exp(-alpha t^2); e holds exp(beta s t).
  Array g1 = treated_.density, g0 = control_.density;
  if (gaussian) {
    g1 = kappa_ * g1 * (-alpha_ * treated_.coord.square()).exp();
    g0 = g0 * (-alpha_ * control_.coord.square()).exp();
  }
  a_ = g1 * kern2_;
  b_ = g0 * kern2_;

  const auto N = n2_;
  // Affine scores make exp(beta s_j t) a geometric sequence in j.
  const bool recurrence = gaussian && is_affine(treated_.coord);
  if (recurrence) {
    p_ = (control_.coord * (beta_ * (treated_.coord[1] - treated_.coord[0]))).exp();
  }
  colsum_.setZero(N);
  e_.resize(N);
  w_.resize(N);
  w_prev_.resize(N);
  double denom = 0.0, smooth_treated = 0.0, gmax = 0.0, var_w = 0.0, var_p = 0.0;

  const double* b = b_.data();
  const double* g0p = g0.data();
  const double* mu0 = control_.mean.data();
  const double* mult = p_.data();
  double* e = e_.data();
  double* cs = colsum_.data();
  double* cur = w_.data();
  double* prev = w_prev_.data();
  double mu1_prev = 0.0;

  for (Eigen::Index j = 0; j < N; ++j) {
    if (!gaussian) {
      for (Eigen::Index k = 0; k < N; ++k) {
        e[k] = pb_.copula.density_on_scale(treated_.coord[j], control_.coord[k]);
      }
    } else if (!recurrence || j % kAnchorRows == 0) {
      e_ = (control_.coord * (beta_ * treated_.coord[j])).exp();
    } else {
#pragma omp simd
      for (Eigen::Index k = 0; k < N; ++k) e[k] *= mult[k];
    }
    const double aj = a_[j], mu1 = treated_.mean[j];
    double rowsum = 0.0, gm = 0.0;
#pragma omp simd reduction(+ : rowsum) reduction(max : gm)
    for (Eigen::Index k = 0; k < N; ++k) {
      const double w = aj * b[k] * e[k];
      cur[k] = w;
      rowsum += w;
      cs[k] += w;
      gm = std::max(gm, g0p[k] * e[k]);
    }
    denom += rowsum;
    smooth_treated += mu1 * rowsum;
    gmax = std::max(gmax, g1[j] * gm);
    // Discrete mixed variation of w and of p = (mu1 - mu0) w for the grid
    // error bound, with the same boundary terms as the reference smoother.
    if (j > 0) {
      double vw = 0.0, vp = 0.0;
#pragma omp simd reduction(+ : vw, vp)
      for (Eigen::Index k = 1; k < N; ++k) {
        const double dw1 = cur[k] - prev[k];
        const double dw0 = cur[k - 1] - prev[k - 1];
        const double dp1 = (mu1 - mu0[k]) * cur[k] - (mu1_prev - mu0[k]) * prev[k];
        const double dp0 = (mu1 - mu0[k - 1]) * cur[k - 1] - (mu1_prev - mu0[k - 1]) * prev[k - 1];
        vw += std::abs(dw1 - dw0);
        vp += std::abs(dp1 - dp0);
      }
      const Eigen::Index l = N - 1;
      var_w += vw + std::abs(cur[l] - prev[l]);
      var_p += vp + std::abs((mu1 - mu0[l]) * cur[l] - (mu1_prev - mu0[l]) * prev[l]);
    }
    std::swap(cur, prev);
    mu1_prev = mu1;
  }
  // Differences along the last row.
  {
    double vw = 0.0, vp = 0.0;
#pragma omp simd reduction(+ : vw, vp)
    for (Eigen::Index k = 1; k < N; ++k) {
      vw += std::abs(prev[k] - prev[k - 1]);
      vp += std::abs((mu1_prev - mu0[k]) * prev[k] - (mu1_prev - mu0[k - 1]) * prev[k - 1]);
    }
    var_w += vw;
    var_p += vp;
  }

  const double smooth = smooth_treated - (control_.mean * colsum_).sum();
  if (!std::isfinite(denom) || !std::isfinite(smooth)) {
    throw EstimationError("non-finite integrand on the quadrature grid");
  }
  // Variation was accumulated on cell-weighted values w = g k step^2.
  const double L = 2.0 * half2_;
  const double cell = step2_ * step2_;
  const double grid_factor = 2.0 * L * L / static_cast<double>(N) / cell;
  const double trunc = pb_.quad.truncation_mass_2d();
  const double mu_span = treated_.mean.abs().maxCoeff() + control_.mean.abs().maxCoeff();
  out.denom = denom;
  out.smooth = smooth;
  out.denom_bound = trunc * gmax + grid_factor * var_w;
  out.smooth_bound = trunc * gmax * mu_span + grid_factor * var_p;
}

void GridKernel::gamma_1d(const Observation& obs, RowIntegrals& out, long long& clamps) {
  const NuisanceModel& model = *pb_.model;
  const int z = obs.z;
  const double h = pb_.kernel.h;
  const double pinned_center = z == 1 ? pb_.u_star.m1 : pb_.u_star.m0;
  const double pinned_kernel = normal::pdf((obs.m - pinned_center) / h) / h;
  const double pinned_density = model.ps_density(obs.x, z, obs.m);
  ClampCounter counter;
  double pinned_coord = 0.0;
  switch (pb_.copula.scale()) {
    case MarginScale::normal_score:
      pinned_coord = margin_coordinate(MarginScale::normal_score, 0.0,
                                       model.ps_normal_score(obs.x, z, obs.m), &counter);
      break;
    case MarginScale::probability:
      pinned_coord = margin_coordinate(MarginScale::probability, model.ps_cdf(obs.x, z, obs.m), 0.0,
                                       &counter);
      break;
    case MarginScale::none:
      break;
  }
  const auto& free_nodes = z == 1 ? free_m0_ : free_m1_;
  clamps += counter.cdf * static_cast<long long>(free_nodes.size());
  margin(obs.x, 1 - z, free_nodes, free_, clamps, false);
  const double pinned = pinned_kernel * pinned_density;
  if (pinned == 0.0) {
    out.gamma = 0.0;
    out.gamma_bound = 0.0;
    return;
  }
  Array& c = e_;
  if (pb_.copula.family() == CopulaFamily::gaussian) {
    c = kappa_ * (beta_ * pinned_coord * free_.coord - alpha_ * (free_.coord.square() + pinned_coord * pinned_coord)).exp();
  } else {
    c.resize(free_.coord.size());
    for (Eigen::Index t = 0; t < c.size(); ++t) {
      c[t] = z == 1 ? pb_.copula.density_on_scale(pinned_coord, free_.coord[t])
                    : pb_.copula.density_on_scale(free_.coord[t], pinned_coord);
    }
  }
  const Array g = free_.density * c;
  w_ = g * kern1_;
  const auto N = w_.size();
  const double variation = (w_.tail(N - 1) - w_.head(N - 1)).abs().sum();
  out.gamma = pinned * w_.sum();
  if (!std::isfinite(out.gamma)) throw EstimationError("non-finite integrand in gamma");
  out.gamma_bound =
      pinned * (pb_.quad.truncation_mass_1d() * g.maxCoeff() + variation);
}

RowIntegrals GridKernel::row(const Observation& obs) {
  RowIntegrals out;
  long long clamps = 0;
  grid_2d(obs, out, clamps);
  gamma_1d(obs, out, clamps);
  out.cdf_clamps = clamps;
  return out;
}

}  // namespace

std::vector<RowIntegrals> integrate_rows(const IntegrationProblem& pb, const Dataset& data) {
  const auto n = static_cast<long long>(data.size());
  std::vector<RowIntegrals> rows(data.size());
  if (pb.quad.mode == QuadratureMode::adaptive) {
#pragma omp parallel for schedule(dynamic, 8)
    for (long long i = 0; i < n; ++i) {
      rows[static_cast<std::size_t>(i)] =
          integrate_row_reference(pb, data.observation(static_cast<std::size_t>(i)));
    }
    return rows;
  }
  // Exceptions must not escape an OpenMP region; keep the first one.
  std::exception_ptr failure;
#pragma omp parallel
  {
    GridKernel kernel(pb);
#pragma omp for schedule(static)
    for (long long i = 0; i < n; ++i) {
      try {
        rows[static_cast<std::size_t>(i)] = kernel.row(data.observation(static_cast<std::size_t>(i)));
      } catch (...) {
#pragma omp critical(pce_integrate_rows)
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

}  // namespace pce
