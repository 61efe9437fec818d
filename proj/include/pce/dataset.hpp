#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pce {

/// A principal stratum u = (m1, m0).
struct PrincipalPoint {
  double m1 = 0.0;
  double m0 = 0.0;

  friend bool operator==(const PrincipalPoint&, const PrincipalPoint&) = default;
};

/// Rectangular evaluation grid over strata, `steps` nodes per axis.
struct GridSpec {
  std::array<double, 2> m1_range{-1.0, 1.0};
  std::array<double, 2> m0_range{-1.0, 1.0};
  int steps = 2;

  void validate() const;
  /// Nodes in row-major order: m1 outer, m0 inner.
  std::vector<PrincipalPoint> nodes() const;
};

/// Read-only view of one row.
struct Observation {
  std::span<const double> x;
  int z = 0;
  double m = 0.0;
  double y = 0.0;
};

struct ColumnScale {
  double mean = 0.0;
  double sd = 1.0;

  double forward(double v) const { return (v - mean) / sd; }
  double inverse(double v) const { return mean + sd * v; }
};

/// Affine maps applied to the continuous columns; identity entries for
/// columns that were left alone.
struct StandardizationRecord {
  std::vector<ColumnScale> x;
  ColumnScale m;
  ColumnScale y;

  static StandardizationRecord identity(std::size_t p);
  bool is_identity() const;
  PrincipalPoint to_standard(const PrincipalPoint& u) const;
  PrincipalPoint to_original(const PrincipalPoint& u) const;
};

/// Immutable observed sample (X, Z, M, Y). Covariates are stored row-major.
class Dataset {
 public:
  Dataset() = default;

  /// Validates: finite entries, z in {0,1}, consistent lengths, n >= p + 3,
  /// both arms present. Throws InputError.
  Dataset(std::size_t p, std::vector<double> x, std::vector<int> z, std::vector<double> m,
          std::vector<double> y);

  std::size_t size() const { return z_.size(); }
  std::size_t p() const { return p_; }

  std::span<const double> x(std::size_t i) const { return {x_.data() + i * p_, p_}; }
  int z(std::size_t i) const { return z_[i]; }
  double m(std::size_t i) const { return m_[i]; }
  double y(std::size_t i) const { return y_[i]; }
  Observation observation(std::size_t i) const { return {x(i), z_[i], m_[i], y_[i]}; }

  std::span<const double> x_data() const { return x_; }
  std::span<const int> z_data() const { return z_; }
  std::span<const double> m_data() const { return m_; }
  std::span<const double> y_data() const { return y_; }

  std::size_t count_treated() const;

  /// Rows picked by index (with repetition), e.g. a bootstrap resample.
  /// Only the dimensional invariants are re-checked.
  Dataset take(std::span<const std::size_t> rows) const;

  /// Same data with y replaced (used for outcome-scale checks).
  Dataset with_outcome(std::vector<double> y) const;
  Dataset with_intermediate(std::vector<double> m) const;

 private:
  struct Unchecked {};
  Dataset(Unchecked, std::size_t p, std::vector<double> x, std::vector<int> z,
          std::vector<double> m, std::vector<double> y);

  std::size_t p_ = 0;
  std::vector<double> x_;
  std::vector<int> z_;
  std::vector<double> m_;
  std::vector<double> y_;
};

struct StandardizeOptions {
  bool x = true;
  bool m = true;
  bool y = true;
};

struct Standardized {
  Dataset data;
  StandardizationRecord record;
};

/// Centers and scales the selected continuous columns to sample mean 0 and
/// sample sd 1 (denominator n-1). z is untouched. Throws InputError
/// "zero variance: <column>" for a constant column.
Standardized standardize(const Dataset& data, StandardizeOptions options = {});

/// CSV with header `x1..xp,z,m,y` (any column order). Throws InputError with
/// line and column on malformed input.
Dataset read_csv(std::istream& in);
Dataset read_csv_file(const std::string& path);
void write_csv(std::ostream& out, const Dataset& data);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace pce
