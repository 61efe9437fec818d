#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pce/dataset.hpp"

namespace pce {

/// Logistic model P(Z=1|X=x) = expit(b0 + b'x).
struct TreatmentModel {
  std::vector<double> coefficients;  // (intercept, x1..xp)
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Linear model for E(Y|X,Z,M) over the basis (1, x, z, m, x*z).
struct OutcomeModel {
  std::vector<double> coefficients;  // length 2p + 3
  std::size_t p = 0;
};

/// Gaussian-linear model M | X, Z ~ N(ell'(1, x, z), sigma2).
struct PrincipalScoreModel {
  std::vector<double> ell;  // (intercept, x1..xp, z)
  double sigma2 = 1.0;

  double mean(std::span<const double> x, int z) const;
  double sd() const;
};

TreatmentModel fit_treatment(const Dataset& data);
OutcomeModel fit_outcome(const Dataset& data);
PrincipalScoreModel fit_principal_score(const Dataset& data);

/// P(Z=z|X=x). The two arms sum to exactly one; no clamping here.
double predict_pi(const TreatmentModel& model, std::span<const double> x, int z);
double predict_mu(const OutcomeModel& model, std::span<const double> x, int z, double m);
double ps_density(const PrincipalScoreModel& model, std::span<const double> x, int z, double m);
double ps_cdf(const PrincipalScoreModel& model, std::span<const double> x, int z, double m);

/// Basis names in coefficient order, for diagnostics.
std::vector<std::string> outcome_basis_names(std::size_t p);

/// Fitted nuisance functions as seen by the estimator. Implementations must
/// be immutable after construction and safe to share across threads.
class NuisanceModel {
 public:
  virtual ~NuisanceModel() = default;

  virtual std::size_t p() const = 0;
  /// pi_z(x), unclamped.
  virtual double treatment_probability(std::span<const double> x, int z) const = 0;
  /// mu_z(x, m).
  virtual double outcome_mean(std::span<const double> x, int z, double m) const = 0;
  /// f_{zm}(x), the density of M given X = x, Z = z.
  virtual double ps_density(std::span<const double> x, int z, double m) const = 0;
  /// F_{zm}(x).
  virtual double ps_cdf(std::span<const double> x, int z, double m) const = 0;
  /// Phi^{-1}(F_{zm}(x)); unclamped, may be infinite. Override when the
  /// score has a closed form.
  virtual double ps_normal_score(std::span<const double> x, int z, double m) const;

  // Batched forms over many m for a fixed (x, z). Defaults loop.
  virtual void outcome_mean_batch(std::span<const double> x, int z, std::span<const double> m,
                                  std::span<double> out) const;
  virtual void ps_density_batch(std::span<const double> x, int z, std::span<const double> m,
                                std::span<double> out) const;
  virtual void ps_cdf_batch(std::span<const double> x, int z, std::span<const double> m,
                            std::span<double> out) const;
  virtual void ps_normal_score_batch(std::span<const double> x, int z, std::span<const double> m,
                                     std::span<double> out) const;
};

/// The parametric strategy: logistic treatment model, linear outcome model
/// with x*z interactions, Gaussian-linear principal score.
class ParametricNuisance final : public NuisanceModel {
 public:
  ParametricNuisance(TreatmentModel treatment, OutcomeModel outcome,
                     PrincipalScoreModel principal);

  const TreatmentModel& treatment() const { return treatment_; }
  const OutcomeModel& outcome() const { return outcome_; }
  const PrincipalScoreModel& principal() const { return principal_; }

  std::size_t p() const override { return outcome_.p; }
  double treatment_probability(std::span<const double> x, int z) const override;
  double outcome_mean(std::span<const double> x, int z, double m) const override;
  double ps_density(std::span<const double> x, int z, double m) const override;
  double ps_cdf(std::span<const double> x, int z, double m) const override;
  double ps_normal_score(std::span<const double> x, int z, double m) const override;

  void outcome_mean_batch(std::span<const double> x, int z, std::span<const double> m,
                          std::span<double> out) const override;
  void ps_density_batch(std::span<const double> x, int z, std::span<const double> m,
                        std::span<double> out) const override;
  void ps_normal_score_batch(std::span<const double> x, int z, std::span<const double> m,
                             std::span<double> out) const override;

  /// JSON document with `treatment`, `outcome`, `principal_score` objects.
  std::string to_json() const;
  static ParametricNuisance from_json(const std::string& text);

 private:
  TreatmentModel treatment_;
  OutcomeModel outcome_;
  PrincipalScoreModel principal_;
};

/// How nuisances are trained from a sample. Bootstrap replicates call this
/// once per resample.
class NuisanceStrategy {
 public:
  virtual ~NuisanceStrategy() = default;
  virtual std::shared_ptr<const NuisanceModel> fit(const Dataset& data) const = 0;
};

class ParametricStrategy final : public NuisanceStrategy {
 public:
  std::shared_ptr<const NuisanceModel> fit(const Dataset& data) const override;
};

/// Returns the same model for every sample (known nuisances).
class FixedStrategy final : public NuisanceStrategy {
 public:
  explicit FixedStrategy(std::shared_ptr<const NuisanceModel> model) : model_(std::move(model)) {}
  std::shared_ptr<const NuisanceModel> fit(const Dataset&) const override { return model_; }

 private:
  std::shared_ptr<const NuisanceModel> model_;
};

}  // namespace pce
