#include "pce/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "pce/error.hpp"

namespace pce {

void GridSpec::validate() const {
  if (!(m1_range[0] < m1_range[1]) || !(m0_range[0] < m0_range[1])) {
    throw ConfigError("grid range must satisfy lo < hi");
  }
  if (steps < 2) throw ConfigError("grid needs at least 2 steps per axis");
}

std::vector<PrincipalPoint> GridSpec::nodes() const {
  validate();
  std::vector<PrincipalPoint> out;
  out.reserve(static_cast<std::size_t>(steps) * steps);
  const double d1 = (m1_range[1] - m1_range[0]) / (steps - 1);
  const double d0 = (m0_range[1] - m0_range[0]) / (steps - 1);
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      out.push_back({m1_range[0] + i * d1, m0_range[0] + j * d0});
    }
  }
  return out;
}

StandardizationRecord StandardizationRecord::identity(std::size_t p) {
  StandardizationRecord r;
  r.x.assign(p, ColumnScale{});
  return r;
}

bool StandardizationRecord::is_identity() const {
  auto id = [](const ColumnScale& c) { return c.mean == 0.0 && c.sd == 1.0; };
  for (const auto& c : x) {
    if (!id(c)) return false;
  }
  return id(m) && id(y);
}

PrincipalPoint StandardizationRecord::to_standard(const PrincipalPoint& u) const {
  return {m.forward(u.m1), m.forward(u.m0)};
}

PrincipalPoint StandardizationRecord::to_original(const PrincipalPoint& u) const {
  return {m.inverse(u.m1), m.inverse(u.m0)};
}

Dataset::Dataset(Unchecked, std::size_t p, std::vector<double> x, std::vector<int> z,
                 std::vector<double> m, std::vector<double> y)
    : p_(p), x_(std::move(x)), z_(std::move(z)), m_(std::move(m)), y_(std::move(y)) {}

Dataset::Dataset(std::size_t p, std::vector<double> x, std::vector<int> z, std::vector<double> m,
                 std::vector<double> y)
    : Dataset(Unchecked{}, p, std::move(x), std::move(z), std::move(m), std::move(y)) {
  const std::size_t n = z_.size();
  if (m_.size() != n || y_.size() != n || x_.size() != n * p_) {
    throw InputError("dataset columns have inconsistent lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (z_[i] != 0 && z_[i] != 1) {
      throw InputError("row " + std::to_string(i + 1) + ": z must be 0 or 1");
    }
    if (!std::isfinite(m_[i]) || !std::isfinite(y_[i])) {
      throw InputError("row " + std::to_string(i + 1) + ": non-finite m or y");
    }
    for (std::size_t k = 0; k < p_; ++k) {
      if (!std::isfinite(x_[i * p_ + k])) {
        throw InputError("row " + std::to_string(i + 1) + ": non-finite x" + std::to_string(k + 1));
      }
    }
  }
  if (n < p_ + 3) {
    throw InputError("need at least p + 3 = " + std::to_string(p_ + 3) + " rows, got " +
                     std::to_string(n));
  }
  const std::size_t treated = count_treated();
  if (treated == 0 || treated == n) throw InputError("both treatment arms must be nonempty");
}

std::size_t Dataset::count_treated() const {
  std::size_t c = 0;
  for (int z : z_) c += static_cast<std::size_t>(z);
  return c;
}

Dataset Dataset::take(std::span<const std::size_t> rows) const {
  std::vector<double> x;
  std::vector<int> z;
  std::vector<double> m, y;
  x.reserve(rows.size() * p_);
  z.reserve(rows.size());
  m.reserve(rows.size());
  y.reserve(rows.size());
  for (std::size_t r : rows) {
    auto xr = this->x(r);
    x.insert(x.end(), xr.begin(), xr.end());
    z.push_back(z_[r]);
    m.push_back(m_[r]);
    y.push_back(y_[r]);
  }
  return Dataset(Unchecked{}, p_, std::move(x), std::move(z), std::move(m), std::move(y));
}

Dataset Dataset::with_outcome(std::vector<double> y) const {
  return Dataset(p_, x_, z_, m_, std::move(y));
}

Dataset Dataset::with_intermediate(std::vector<double> m) const {
  return Dataset(p_, x_, z_, std::move(m), y_);
}

namespace {

ColumnScale column_scale(std::span<const double> v, std::size_t stride, std::size_t offset,
                         std::size_t n, const std::string& name) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += v[i * stride + offset];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = v[i * stride + offset] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 1e-300) || sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
    throw InputError("zero variance: " + name);
  }
  return {mean, sd};
}

}  // namespace

Standardized standardize(const Dataset& data, StandardizeOptions options) {
  const std::size_t n = data.size();
  const std::size_t p = data.p();
  StandardizationRecord rec = StandardizationRecord::identity(p);
  std::vector<double> x(data.x_data().begin(), data.x_data().end());
  std::vector<double> m(data.m_data().begin(), data.m_data().end());
  std::vector<double> y(data.y_data().begin(), data.y_data().end());
  std::vector<int> z(data.z_data().begin(), data.z_data().end());
  if (options.x) {
    for (std::size_t k = 0; k < p; ++k) {
      rec.x[k] = column_scale(x, p, k, n, "x" + std::to_string(k + 1));
      for (std::size_t i = 0; i < n; ++i) x[i * p + k] = rec.x[k].forward(x[i * p + k]);
    }
  }
  if (options.m) {
    rec.m = column_scale(m, 1, 0, n, "m");
    for (double& v : m) v = rec.m.forward(v);
  }
  if (options.y) {
    rec.y = column_scale(y, 1, 0, n, "y");
    for (double& v : y) v = rec.y.forward(v);
  }
  return {Dataset(p, std::move(x), std::move(z), std::move(m), std::move(y)), std::move(rec)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  }
  return out;
}

double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v)) {
    throw InputError("line " + std::to_string(line) + ", column " + column + ": cannot parse '" +
                     cell + "' as a finite number");
  }
  return v;
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV: missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!index.emplace(header[c], c).second) {
      throw InputError("line 1: duplicate column '" + header[c] + "'");
    }
  }
  for (const char* req : {"z", "m", "y"}) {
    if (!index.count(req)) throw InputError(std::string("line 1: missing column '") + req + "'");
  }
  std::size_t p = 0;
  while (index.count("x" + std::to_string(p + 1))) ++p;
  if (index.size() != p + 3) {
    for (const auto& [name, c] : index) {
      if (name != "z" && name != "m" && name != "y" &&
          !(name.size() > 1 && name[0] == 'x' &&
            std::all_of(name.begin() + 1, name.end(), ::isdigit) &&
            std::stoul(name.substr(1)) >= 1 && std::stoul(name.substr(1)) <= p)) {
        throw InputError("line 1, column " + std::to_string(c + 1) + ": unexpected column '" +
                         name + "' (expected x1..xp, z, m, y)");
      }
    }
  }
  std::vector<std::size_t> xcol(p);
  for (std::size_t k = 0; k < p; ++k) xcol[k] = index.at("x" + std::to_string(k + 1));
  const std::size_t zc = index.at("z"), mc = index.at("m"), yc = index.at("y");

  std::vector<double> x, m, y;
  std::vector<int> z;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw InputError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k < p; ++k) {
      x.push_back(parse_number(cells[xcol[k]], lineno, "x" + std::to_string(k + 1)));
    }
    const double zv = parse_number(cells[zc], lineno, "z");
    if (zv != 0.0 && zv != 1.0) {
      throw InputError("line " + std::to_string(lineno) + ", column z: must be 0 or 1");
    }
    z.push_back(static_cast<int>(zv));
    m.push_back(parse_number(cells[mc], lineno, "m"));
    y.push_back(parse_number(cells[yc], lineno, "y"));
  }
  return Dataset(p, std::move(x), std::move(z), std::move(m), std::move(y));
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_csv(in);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const Dataset& data) {
  for (std::size_t k = 0; k < data.p(); ++k) out << 'x' << (k + 1) << ',';
  out << "z,m,y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.x(i)) out << format_double(v) << ',';
    out << data.z(i) << ',' << format_double(data.m(i)) << ',' << format_double(data.y(i)) << '\n';
  }
}

}  // namespace pce
