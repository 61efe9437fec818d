#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pce/dataset.hpp"
#include "pce/nuisance.hpp"
#include "pce/random.hpp"

namespace fixture {

/// Random data set with p covariates; z ~ Bern(expit(x1)), m and y linear
/// plus noise. Both arms are guaranteed present.
inline pce::Dataset random_dataset(std::size_t n, std::size_t p, std::uint64_t seed,
                                   double noise = 1.0) {
  pce::CounterRng rng(seed);
  std::vector<double> x(n * p), m(n), y(n);
  std::vector<int> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lin = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      x[i * p + k] = rng.normal();
      lin += 0.3 * x[i * p + k];
    }
    z[i] = i < 2 ? static_cast<int>(i) : rng.bernoulli(1.0 / (1.0 + std::exp(-lin)));
    m[i] = lin + 0.8 * z[i] + noise * rng.normal();
    y[i] = 1.0 + lin + 0.5 * z[i] + 0.7 * m[i] + noise * rng.normal();
  }
  return pce::Dataset(p, std::move(x), std::move(z), std::move(m), std::move(y));
}

/// Rows of the outcome design (1, x, z, m, x*z).
inline std::vector<std::vector<double>> outcome_design(const pce::Dataset& d) {
  std::vector<std::vector<double>> X;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<double> row{1.0};
    for (double v : d.x(i)) row.push_back(v);
    row.push_back(d.z(i));
    row.push_back(d.m(i));
    for (double v : d.x(i)) row.push_back(v * d.z(i));
    X.push_back(row);
  }
  return X;
}

/// Nuisance model with logistic principal-score margins, so normal scores
/// are not affine in m. p = 1.
class LogisticMargins final : public pce::NuisanceModel {
 public:
  std::size_t p() const override { return 1; }
  double treatment_probability(std::span<const double> x, int z) const override {
    const double e = 1.0 / (1.0 + std::exp(-0.4 * x[0]));
    return z == 1 ? e : 1.0 - e;
  }
  double outcome_mean(std::span<const double> x, int z, double m) const override {
    return 0.5 + x[0] + z * (1.0 + 0.3 * x[0]) + 0.6 * m + 0.1 * m * m;
  }
  double ps_density(std::span<const double> x, int z, double m) const override {
    const double s = scale();
    const double e = std::exp(-(m - center(x, z)) / s);
    return e / (s * (1.0 + e) * (1.0 + e));
  }
  double ps_cdf(std::span<const double> x, int z, double m) const override {
    return 1.0 / (1.0 + std::exp(-(m - center(x, z)) / scale()));
  }

 private:
  static double scale() { return 0.45; }
  static double center(std::span<const double> x, int z) { return 0.3 * x[0] + 0.8 * z; }
};

}  // namespace fixture
