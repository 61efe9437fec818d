#include "pce/nuisance.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "pce/error.hpp"
#include "pce/normal.hpp"

namespace pce {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

constexpr int kMaxIrlsSteps = 100;
constexpr double kGradientTolerance = 1e-8;
constexpr double kSeparationNorm = 1e3;

double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double log_likelihood(const Matrix& X, const Vector& z, const Vector& beta) {
  const Vector eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + e^eta) computed stably.
    const double e = eta[i];
    const double softplus = e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += z[i] * e - softplus;
  }
  return ll;
}

struct LeastSquares {
  Vector coefficients;
  double rss = 0.0;
};

// Rank-revealing QR solve; throws naming the columns that fall outside the
// numerical rank.
LeastSquares solve_least_squares(const Matrix& X, const Vector& y,
                                 const std::vector<std::string>& names, const char* what) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < X.cols(); ++k) {
      if (!cols.empty()) cols += ", ";
      cols += names[static_cast<std::size_t>(perm[k])];
    }
    throw EstimationError(std::string(what) + ": design matrix is rank deficient; collinear columns: " +
                          cols);
  }
  LeastSquares out;
  out.coefficients = qr.solve(y);
  out.rss = (y - X * out.coefficients).squaredNorm();
  return out;
}

Matrix treatment_design(const Dataset& data) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto p = static_cast<Eigen::Index>(data.p());
  Matrix X(n, p + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    auto x = data.x(static_cast<std::size_t>(i));
    for (Eigen::Index k = 0; k < p; ++k) X(i, k + 1) = x[static_cast<std::size_t>(k)];
  }
  return X;
}

std::vector<std::string> principal_names(std::size_t p) {
  std::vector<std::string> names{"(intercept)"};
  for (std::size_t k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1));
  names.push_back("z");
  return names;
}

EstimationError separation_error() {
  return EstimationError(
      "treatment model: the arms look perfectly separated by the covariates (fitted "
      "probabilities reach 0 or 1). Consider a ridge-penalized treatment model.");
}

}  // namespace

std::vector<std::string> outcome_basis_names(std::size_t p) {
  std::vector<std::string> names{"(intercept)"};
  for (std::size_t k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1));
  names.push_back("z");
  names.push_back("m");
  for (std::size_t k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1) + ":z");
  return names;
}

TreatmentModel fit_treatment(const Dataset& data) {
  const std::size_t treated = data.count_treated();
  if (treated == 0 || treated == data.size()) {
    throw EstimationError("treatment model: both arms must be nonempty");
  }
  const Matrix X = treatment_design(data);
  Vector z(X.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = data.z(static_cast<std::size_t>(i));

  Vector beta = Vector::Zero(X.cols());
  double ll = log_likelihood(X, z, beta);
  for (int iter = 0; iter <= kMaxIrlsSteps; ++iter) {
    const Vector eta = X * beta;
    Vector prob(eta.size()), weight(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      prob[i] = expit(eta[i]);
      weight[i] = prob[i] * (1.0 - prob[i]);
    }
    const Vector gradient = X.transpose() * (z - prob);
    const double gnorm = gradient.norm();
    if (gnorm <= kGradientTolerance) {
      if (((z - prob).array().abs() < 1e-6).all()) throw separation_error();
      return {std::vector<double>(beta.data(), beta.data() + beta.size()), iter, gnorm};
    }
    if (iter == kMaxIrlsSteps) break;
    const Matrix hessian = X.transpose() * weight.asDiagonal() * X;
    const Vector step = hessian.ldlt().solve(gradient);
    // Stationary to working precision: further Newton steps cannot move beta.
    if (step.norm() <= 1e-14 * (1.0 + beta.norm())) {
      if (((z - prob).array().abs() < 1e-6).all()) throw separation_error();
      return {std::vector<double>(beta.data(), beta.data() + beta.size()), iter, gnorm};
    }
    double t = 1.0;
    Vector candidate = beta + step;
    double ll_new = log_likelihood(X, z, candidate);
    // Near the optimum the gain drops below the rounding of ll; a step that
    // loses no more than that is accepted.
    const double slack = 1e-13 * (1.0 + std::abs(ll));
    for (int halving = 0; halving < 40 && !(ll_new >= ll - slack); ++halving) {
      t *= 0.5;
      candidate = beta + t * step;
      ll_new = log_likelihood(X, z, candidate);
    }
    beta = candidate;
    ll = ll_new;
    if (!beta.allFinite() || beta.norm() > kSeparationNorm) throw separation_error();
  }
  throw EstimationError("treatment model: IRLS did not converge in 100 steps");
}

OutcomeModel fit_outcome(const Dataset& data) {
  const std::size_t p = data.p();
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto cols = static_cast<Eigen::Index>(2 * p + 3);
  Matrix X(n, cols);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    auto x = data.x(row);
    const double z = data.z(row);
    X(i, 0) = 1.0;
    for (std::size_t k = 0; k < p; ++k) {
      X(i, static_cast<Eigen::Index>(k + 1)) = x[k];
      X(i, static_cast<Eigen::Index>(p + 3 + k)) = x[k] * z;
    }
    X(i, static_cast<Eigen::Index>(p + 1)) = z;
    X(i, static_cast<Eigen::Index>(p + 2)) = data.m(row);
    y[i] = data.y(row);
  }
  auto ls = solve_least_squares(X, y, outcome_basis_names(p), "outcome model");
  return {std::vector<double>(ls.coefficients.data(), ls.coefficients.data() + cols), p};
}

PrincipalScoreModel fit_principal_score(const Dataset& data) {
  const std::size_t p = data.p();
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto cols = static_cast<Eigen::Index>(p + 2);
  Matrix X(n, cols);
  Vector m(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    auto x = data.x(row);
    X(i, 0) = 1.0;
    for (std::size_t k = 0; k < p; ++k) X(i, static_cast<Eigen::Index>(k + 1)) = x[k];
    X(i, cols - 1) = data.z(row);
    m[i] = data.m(row);
  }
  auto ls = solve_least_squares(X, m, principal_names(p), "principal score model");
  const double sigma2 = ls.rss / static_cast<double>(n - cols);
  const double scale = (m.array() - m.mean()).square().mean();
  if (!(sigma2 > 1e-20 * (1.0 + scale))) {
    throw EstimationError(
        "principal score model: residual variance is numerically zero (degenerate fit)");
  }
  return {std::vector<double>(ls.coefficients.data(), ls.coefficients.data() + cols), sigma2};
}

double PrincipalScoreModel::mean(std::span<const double> x, int z) const {
  double v = ell[0];
  for (std::size_t k = 0; k < x.size(); ++k) v += ell[k + 1] * x[k];
  return v + ell[x.size() + 1] * z;
}

double PrincipalScoreModel::sd() const { return std::sqrt(sigma2); }

double predict_pi(const TreatmentModel& model, std::span<const double> x, int z) {
  double eta = model.coefficients[0];
  for (std::size_t k = 0; k < x.size(); ++k) eta += model.coefficients[k + 1] * x[k];
  // The larger probability is computed directly and the smaller one as its
  // exact complement, so the pair sums to one without rounding.
  const double big = expit(std::abs(eta));
  const double small = 1.0 - big;
  const bool treated_is_big = eta >= 0.0;
  return (z == 1) == treated_is_big ? big : small;
}

double predict_mu(const OutcomeModel& model, std::span<const double> x, int z, double m) {
  const auto& c = model.coefficients;
  const std::size_t p = x.size();
  double v = c[0] + c[p + 1] * z + c[p + 2] * m;
  for (std::size_t k = 0; k < p; ++k) v += (c[k + 1] + c[p + 3 + k] * z) * x[k];
  return v;
}

double ps_density(const PrincipalScoreModel& model, std::span<const double> x, int z, double m) {
  const double sd = model.sd();
  return normal::pdf((m - model.mean(x, z)) / sd) / sd;
}

double ps_cdf(const PrincipalScoreModel& model, std::span<const double> x, int z, double m) {
  return normal::cdf((m - model.mean(x, z)) / model.sd());
}

// ---------------------------------------------------------------------------

double NuisanceModel::ps_normal_score(std::span<const double> x, int z, double m) const {
  return normal::quantile(ps_cdf(x, z, m));
}

void NuisanceModel::outcome_mean_batch(std::span<const double> x, int z,
                                       std::span<const double> m, std::span<double> out) const {
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = outcome_mean(x, z, m[i]);
}

void NuisanceModel::ps_density_batch(std::span<const double> x, int z, std::span<const double> m,
                                     std::span<double> out) const {
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = ps_density(x, z, m[i]);
}

void NuisanceModel::ps_cdf_batch(std::span<const double> x, int z, std::span<const double> m,
                                 std::span<double> out) const {
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = ps_cdf(x, z, m[i]);
}

void NuisanceModel::ps_normal_score_batch(std::span<const double> x, int z,
                                          std::span<const double> m,
                                          std::span<double> out) const {
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = ps_normal_score(x, z, m[i]);
}

ParametricNuisance::ParametricNuisance(TreatmentModel treatment, OutcomeModel outcome,
                                       PrincipalScoreModel principal)
    : treatment_(std::move(treatment)),
      outcome_(std::move(outcome)),
      principal_(std::move(principal)) {
  const std::size_t p = outcome_.p;
  if (treatment_.coefficients.size() != p + 1 || outcome_.coefficients.size() != 2 * p + 3 ||
      principal_.ell.size() != p + 2) {
    throw ConfigError("nuisance models disagree on the covariate dimension");
  }
  if (!(principal_.sigma2 > 0.0)) throw ConfigError("principal score variance must be positive");
}

double ParametricNuisance::treatment_probability(std::span<const double> x, int z) const {
  return predict_pi(treatment_, x, z);
}

double ParametricNuisance::outcome_mean(std::span<const double> x, int z, double m) const {
  return predict_mu(outcome_, x, z, m);
}

double ParametricNuisance::ps_density(std::span<const double> x, int z, double m) const {
  return pce::ps_density(principal_, x, z, m);
}

double ParametricNuisance::ps_cdf(std::span<const double> x, int z, double m) const {
  return pce::ps_cdf(principal_, x, z, m);
}

double ParametricNuisance::ps_normal_score(std::span<const double> x, int z, double m) const {
  return (m - principal_.mean(x, z)) / principal_.sd();
}

void ParametricNuisance::outcome_mean_batch(std::span<const double> x, int z,
                                            std::span<const double> m,
                                            std::span<double> out) const {
  const double base = predict_mu(outcome_, x, z, 0.0);
  const double slope = outcome_.coefficients[outcome_.p + 2];
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = base + slope * m[i];
}

void ParametricNuisance::ps_density_batch(std::span<const double> x, int z,
                                          std::span<const double> m,
                                          std::span<double> out) const {
  const double mean = principal_.mean(x, z);
  const double sd = principal_.sd();
  Eigen::Map<const Eigen::ArrayXd> mm(m.data(), static_cast<Eigen::Index>(m.size()));
  Eigen::Map<Eigen::ArrayXd> o(out.data(), static_cast<Eigen::Index>(out.size()));
  o = (-0.5 * ((mm - mean) / sd).square()).exp() * (normal::kInvSqrt2Pi / sd);
}

void ParametricNuisance::ps_normal_score_batch(std::span<const double> x, int z,
                                               std::span<const double> m,
                                               std::span<double> out) const {
  const double mean = principal_.mean(x, z);
  const double inv_sd = 1.0 / principal_.sd();
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = (m[i] - mean) * inv_sd;
}

std::string ParametricNuisance::to_json() const {
  nlohmann::ordered_json j;
  j["p"] = outcome_.p;
  j["treatment"] = {{"basis", principal_names(outcome_.p)},
                    {"coefficients", treatment_.coefficients},
                    {"iterations", treatment_.iterations},
                    {"gradient_norm", treatment_.gradient_norm}};
  j["treatment"]["basis"].erase(j["treatment"]["basis"].size() - 1);
  j["outcome"] = {{"basis", outcome_basis_names(outcome_.p)},
                  {"coefficients", outcome_.coefficients}};
  j["principal_score"] = {{"basis", principal_names(outcome_.p)},
                          {"coefficients", principal_.ell},
                          {"sigma2", principal_.sigma2}};
  return j.dump(2);
}

ParametricNuisance ParametricNuisance::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TreatmentModel t;
    t.coefficients = j.at("treatment").at("coefficients").get<std::vector<double>>();
    OutcomeModel o;
    o.coefficients = j.at("outcome").at("coefficients").get<std::vector<double>>();
    o.p = (o.coefficients.size() - 3) / 2;
    PrincipalScoreModel ps;
    ps.ell = j.at("principal_score").at("coefficients").get<std::vector<double>>();
    ps.sigma2 = j.at("principal_score").at("sigma2").get<double>();
    return ParametricNuisance(std::move(t), std::move(o), std::move(ps));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed nuisance model JSON: ") + e.what());
  }
}

std::shared_ptr<const NuisanceModel> ParametricStrategy::fit(const Dataset& data) const {
  return std::make_shared<ParametricNuisance>(fit_treatment(data), fit_outcome(data),
                                              fit_principal_score(data));
}

}  // namespace pce
