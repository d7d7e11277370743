#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/backward.hpp"
#include "nsmc/csv.hpp"
#include "nsmc/log_weight.hpp"
#include "nsmc/matrix.hpp"
#include "nsmc/oracle/enumerate.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sampling.hpp"
#include "nsmc/sequential_target.hpp"

namespace nsmc::models {

/// Binary spatio-temporal drought field on an I x J grid. x = 1 is the
/// abnormal (drought) state. Site parameters are per-location Gaussian
/// emission parameters; C1 couples spatial neighbours, C2 couples years.
struct DroughtParams {
  int rows = 0;  // I
  int cols = 0;  // J
  double c1 = 0.5;
  double c2 = 3.0;
  Matrix mu_norm;  // I x J
  Matrix mu_ab;    // I x J
  Matrix sigma;    // I x J

  int sites() const { return rows * cols; }
  void validate() const {
    if (rows < 1 || cols < 1) throw std::invalid_argument("DroughtParams: empty grid");
    for (double s : sigma.data)
      if (!(s > 0.0)) throw std::invalid_argument("DroughtParams: sigma must be positive");
  }
};

/// Flattened binary grid, row-major: cell (i, j) at index i * cols + j.
using Grid = std::vector<std::uint8_t>;
using Column = std::vector<std::uint8_t>;

/// Yearly precipitation observations, one I x J grid per year.
struct PrecipGrid {
  int rows = 0;
  int cols = 0;
  std::vector<Matrix> years;

  int horizon() const { return static_cast<int>(years.size()); }
};

namespace detail {

inline double log_phi_site(double y, double mu_norm, double mu_ab, double sigma, int x) {
  const double mean = x ? mu_ab : mu_norm;
  const double r = (y - mean) / sigma;
  return -std::log(sigma) - 0.5 * std::log(2.0 * 3.14159265358979323846) - 0.5 * r * r;
}

inline void require_binary(const Grid& g) {
  for (std::uint8_t v : g)
    if (v > 1) throw std::invalid_argument("drought grid entries must be binary");
}

}  // namespace detail

/// Log of the year-k factor of the drought target: per-site Gaussian
/// emissions (normalizing constant included), C1 for each matching left /
/// up neighbour pair, C2 for each site matching the previous year. Terms
/// whose neighbour index would leave the grid contribute nothing; the
/// temporal factor is absent when x_prev is null.
inline double drought_log_increment(const DroughtParams& p, const Grid& x, const Grid* x_prev,
                                    const Matrix& y) {
  detail::require_binary(x);
  if (x_prev) detail::require_binary(*x_prev);
  const int I = p.rows, J = p.cols;
  if (static_cast<int>(x.size()) != I * J || y.rows != I || y.cols != J)
    throw std::invalid_argument("drought_log_increment: shape mismatch");
  double v = 0.0;
  for (int i = 0; i < I; ++i) {
    for (int j = 0; j < J; ++j) {
      const int s = i * J + j;
      v += detail::log_phi_site(y.at(i, j), p.mu_norm.at(i, j), p.mu_ab.at(i, j), p.sigma.at(i, j),
                                x[s]);
      if (j > 0 && x[s] == x[s - 1]) v += p.c1;
      if (i > 0 && x[s] == x[s - J]) v += p.c1;
      if (x_prev && x[s] == (*x_prev)[s]) v += p.c2;
    }
  }
  return v;
}

/// The drought model as a sequential target over years.
class DroughtTarget {
public:
  using State = Grid;

  DroughtTarget(DroughtParams params, PrecipGrid precip)
      : p_(std::move(params)), precip_(std::move(precip)) {
    p_.validate();
    if (precip_.rows != p_.rows || precip_.cols != p_.cols)
      throw std::invalid_argument("DroughtTarget: precipitation shape mismatch");
  }

  int horizon() const { return precip_.horizon(); }
  const DroughtParams& params() const { return p_; }
  const PrecipGrid& precip() const { return precip_; }

  double log_increment(int k, std::span<const Grid> path) const {
    return drought_log_increment(p_, path[k], k > 0 ? &path[k - 1] : nullptr,
                                 precip_.years[k]);
  }

  double log_density(int k, std::span<const Grid> path) const {
    double s = 0.0;
    for (int j = 0; j <= k; ++j) s += log_increment(j, path);
    return s;
  }

private:
  DroughtParams p_;
  PrecipGrid precip_;
};

/// Level-2 chain: the columns of one year's grid, conditioned on the previous
/// year. Step j's increment carries everything new that column j brings:
/// its emissions, vertical C1 pairs, horizontal C1 pairs against column j-1,
/// and its C2 terms. Column increments sum to the year increment exactly.
class DroughtColumnTarget {
public:
  using State = Column;

  DroughtColumnTarget(const DroughtParams* params, Matrix y_k, std::optional<Grid> x_prev)
      : p_(params), y_(std::move(y_k)), x_prev_(std::move(x_prev)) {}

  int horizon() const { return p_->cols; }

  double log_increment(int j, std::span<const Column> path) const {
    const int I = p_->rows, J = p_->cols;
    const Column& col = path[j];
    if (static_cast<int>(col.size()) != I)
      throw std::invalid_argument("DroughtColumnTarget: column length mismatch");
    double v = 0.0;
    for (int i = 0; i < I; ++i) {
      if (col[i] > 1) throw std::invalid_argument("drought grid entries must be binary");
      v += detail::log_phi_site(y_.at(i, j), p_->mu_norm.at(i, j), p_->mu_ab.at(i, j),
                                p_->sigma.at(i, j), col[i]);
      if (i > 0 && col[i] == col[i - 1]) v += p_->c1;
      if (j > 0 && col[i] == path[j - 1][i]) v += p_->c1;
      if (x_prev_ && col[i] == (*x_prev_)[i * J + j]) v += p_->c2;
    }
    return v;
  }

  double log_density(int j, std::span<const Column> path) const {
    double s = 0.0;
    for (int c = 0; c <= j; ++c) s += log_increment(c, path);
    return s;
  }

  const DroughtParams& params() const { return *p_; }
  const Matrix& y() const { return y_; }
  const std::optional<Grid>& x_prev() const { return x_prev_; }

private:
  const DroughtParams* p_;
  Matrix y_;
  std::optional<Grid> x_prev_;
};

/// Level-3 chain: the cells of one column, bottom of the nesting. Cell i's
/// increment carries its emission, the vertical C1 pair against cell i-1,
/// the horizontal C1 pair against the (fixed) previous column, and its C2
/// term. Cell increments sum to the column increment exactly.
class DroughtCellTarget {
public:
  using State = std::uint8_t;

  DroughtCellTarget(const DroughtParams* params, int col, std::vector<double> y_col,
                    std::optional<Column> prev_col, std::optional<Column> x_prev_col)
      : p_(params),
        col_(col),
        y_col_(std::move(y_col)),
        prev_col_(std::move(prev_col)),
        x_prev_col_(std::move(x_prev_col)) {}

  int horizon() const { return p_->rows; }

  double log_increment(int i, std::span<const std::uint8_t> path) const {
    const std::uint8_t x = path[i];
    if (x > 1) throw std::invalid_argument("drought grid entries must be binary");
    double v = detail::log_phi_site(y_col_[i], p_->mu_norm.at(i, col_), p_->mu_ab.at(i, col_),
                                    p_->sigma.at(i, col_), x);
    if (i > 0 && x == path[i - 1]) v += p_->c1;
    if (prev_col_ && x == (*prev_col_)[i]) v += p_->c1;
    if (x_prev_col_ && x == (*x_prev_col_)[i]) v += p_->c2;
    return v;
  }

  double log_density(int i, std::span<const std::uint8_t> path) const {
    double s = 0.0;
    for (int r = 0; r <= i; ++r) s += log_increment(r, path);
    return s;
  }

  /// Unnormalized bootstrap proposal over {0, 1}: the temporal factor when a
  /// previous year exists, flat otherwise.
  double log_proposal(int i, std::uint8_t x) const {
    return x_prev_col_ && x == (*x_prev_col_)[i] ? p_->c2 : 0.0;
  }

private:
  const DroughtParams* p_;
  int col_;
  std::vector<double> y_col_;
  std::optional<Column> prev_col_;
  std::optional<Column> x_prev_col_;
};

/// Bootstrap factory for the cell chain: exact two-point samplers for the
/// unnormalized temporal proposal.
class DroughtCellBootstrapFactory {
public:
  explicit DroughtCellBootstrapFactory(const DroughtCellTarget& target) : target_(&target) {}

  auto operator()(int i, std::span<const std::uint8_t>, int, RngStream) const {
    const double w0 = target_->log_proposal(i, 0);
    const double w1 = target_->log_proposal(i, 1);
    const LogWeight z = log_sum_exp({LogWeight::from_log(w0), LogWeight::from_log(w1)});
    const double p1 = std::exp(w1 - z.log());
    return make_exact_sampler<std::uint8_t>(z, [p1](RngStream& rng) {
      return static_cast<std::uint8_t>(rng.next_double() < p1 ? 1 : 0);
    });
  }

private:
  const DroughtCellTarget* target_;
};

class DroughtCellBootstrapDensity {
public:
  explicit DroughtCellBootstrapDensity(const DroughtCellTarget& target) : target_(&target) {}
  double operator()(int i, std::span<const std::uint8_t>, const std::uint8_t& x) const {
    return target_->log_proposal(i, x);
  }

private:
  const DroughtCellTarget* target_;
};

/// Level-2 step factory: one cell-chain bootstrap SMC per column, wrapped as
/// a properly weighted sampler. The precision argument is the level-3
/// particle count.
class DroughtColumnFactory {
public:
  explicit DroughtColumnFactory(const DroughtColumnTarget& column_target)
      : column_target_(&column_target) {}

  NsmcSampler<DroughtCellTarget> operator()(int j, std::span<const Column> colprefix, int n_cells,
                                            RngStream rng) const {
    const DroughtParams& p = column_target_->params();
    std::vector<double> y_col(p.rows);
    for (int i = 0; i < p.rows; ++i) y_col[i] = column_target_->y().at(i, j);
    std::optional<Column> prev_col;
    if (j > 0) prev_col = colprefix[j - 1];
    std::optional<Column> x_prev_col;
    if (column_target_->x_prev()) {
      Column c(p.rows);
      for (int i = 0; i < p.rows; ++i) c[i] = (*column_target_->x_prev())[i * p.cols + j];
      x_prev_col = std::move(c);
    }
    DroughtCellTarget cell(&p, j, std::move(y_col), std::move(prev_col), std::move(x_prev_col));
    DroughtCellBootstrapFactory factory(cell);
    DroughtCellBootstrapDensity density(cell);
    auto history = run_nested_smc_aux(cell, factory, density, UnitAdjustment{}, n_cells, 1, rng);
    return NsmcSampler<DroughtCellTarget>(std::move(cell), std::move(history), true);
  }

private:
  const DroughtColumnTarget* column_target_;
};

/// Level-1 step factory: one column-chain nested SMC per year, whose own
/// factory is the cell-chain sampler above; trajectories of columns are
/// assembled back into a grid. The precision argument is the level-2
/// particle count; the level-3 count is fixed at construction.
class DroughtYearFactory {
public:
  DroughtYearFactory(const DroughtTarget& target, int n_cells)
      : target_(&target), n_cells_(n_cells) {}

  auto operator()(int k, std::span<const Grid> prefix, int n_columns, RngStream rng) const {
    const DroughtParams& p = target_->params();
    std::optional<Grid> x_prev;
    if (k > 0) x_prev = prefix[k - 1];
    DroughtColumnTarget column_target(&p, target_->precip().years[k], std::move(x_prev));
    DroughtColumnFactory factory(column_target);
    auto history = run_nested_smc_fa(column_target, factory, n_columns, n_cells_, rng);
    NsmcSampler<DroughtColumnTarget> sampler(std::move(column_target), std::move(history), false);
    const int rows = p.rows, cols = p.cols;
    return map_sampler(std::move(sampler), [rows, cols](std::vector<Column> columns) {
      Grid g(static_cast<std::size_t>(rows) * cols);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) g[i * cols + j] = columns[j][i];
      return g;
    });
  }

private:
  const DroughtTarget* target_;
  int n_cells_;
};

/// Filtering marginals P(x = 1 | y so far) per year, plus the outer history.
struct ThreeLevelResult {
  std::vector<Matrix> marginals;  // per year, I x J
  ParticleHistory<Grid> history;
};

/// The three-level composition, wired entirely from the generic nested
/// samplers: years on the outside (N particles), columns in the middle (N1),
/// cells at the bottom (N2, bootstrap).
inline ThreeLevelResult three_level_nsmc(const DroughtParams& params, const PrecipGrid& precip,
                                         int n_outer, int n_columns, int n_cells, RngStream rng) {
  if (n_outer < 1 || n_columns < 1 || n_cells < 1)
    throw std::invalid_argument("three_level_nsmc: particle counts must be >= 1");
  DroughtTarget target(params, precip);
  DroughtYearFactory factory(target, n_cells);
  auto history = run_nested_smc_fa(target, factory, n_outer, n_columns, rng);

  ThreeLevelResult out{.marginals = {}, .history = std::move(history)};
  const int n = precip.horizon();
  out.marginals.reserve(n);
  for (int k = 0; k < n; ++k) {
    Matrix m(params.rows, params.cols, 0.0);
    for (int i = 0; i < n_outer; ++i) {
      const Grid& g = out.history.value(k, i);
      for (int s = 0; s < params.sites(); ++s) m.data[s] += g[s];
    }
    for (double& v : m.data) v /= n_outer;
    out.marginals.push_back(std::move(m));
  }
  return out;
}

/// Per-site emission parameters estimated from the precipitation series:
/// each site's series is split at its median; the below part is the abnormal
/// (drought) mean, the above part the normal mean, sigma is the sample
/// standard deviation of the whole series. Constant series fall back to
/// mu_norm = the constant, mu_ab = 0, sigma^2 = mean variance of the
/// non-constant sites.
inline DroughtParams estimate_site_params(const PrecipGrid& precip, double c1 = 0.5,
                                          double c2 = 3.0) {
  const int I = precip.rows, J = precip.cols, n = precip.horizon();
  if (I < 1 || J < 1) throw std::invalid_argument("estimate_site_params: empty grid");
  if (n < 2) throw std::invalid_argument("estimate_site_params: need at least 2 years");

  DroughtParams p;
  p.rows = I;
  p.cols = J;
  p.c1 = c1;
  p.c2 = c2;
  p.mu_norm = Matrix(I, J);
  p.mu_ab = Matrix(I, J);
  p.sigma = Matrix(I, J);

  Matrix variance(I, J);
  std::vector<std::pair<int, int>> constant_sites;
  double var_sum = 0.0;
  int var_count = 0;

  std::vector<double> series(n);
  for (int i = 0; i < I; ++i) {
    for (int j = 0; j < J; ++j) {
      for (int k = 0; k < n; ++k) series[k] = precip.years[k].at(i, j);
      double mean = 0.0;
      for (double v : series) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : series) var += (v - mean) * (v - mean);
      var /= (n - 1);
      variance.at(i, j) = var;
      if (var == 0.0) {
        constant_sites.emplace_back(i, j);
        continue;
      }
      var_sum += var;
      ++var_count;

      std::vector<double> sorted = series;
      std::sort(sorted.begin(), sorted.end());
      const double median = 0.5 * (sorted[(n - 1) / 2] + sorted[n / 2]);
      double lo_sum = 0.0, hi_sum = 0.0;
      int lo_n = 0, hi_n = 0;
      for (double v : series) {
        if (v <= median) {
          lo_sum += v;
          ++lo_n;
        } else {
          hi_sum += v;
          ++hi_n;
        }
      }
      if (hi_n == 0) {  // ties swallowed the upper half; flip the tie side
        lo_sum = hi_sum = 0.0;
        lo_n = hi_n = 0;
        for (double v : series) {
          if (v < median) {
            lo_sum += v;
            ++lo_n;
          } else {
            hi_sum += v;
            ++hi_n;
          }
        }
      }
      p.mu_ab.at(i, j) = lo_sum / lo_n;     // drought = low precipitation
      p.mu_norm.at(i, j) = hi_sum / hi_n;
      p.sigma.at(i, j) = std::sqrt(var);
    }
  }

  if (var_count == 0 && !constant_sites.empty())
    throw std::invalid_argument("estimate_site_params: every site is constant");
  for (auto [i, j] : constant_sites) {
    p.mu_norm.at(i, j) = precip.years[0].at(i, j);
    p.mu_ab.at(i, j) = 0.0;
    p.sigma.at(i, j) = std::sqrt(var_sum / var_count);
  }
  return p;
}

/// Synthetic precipitation with per-site two-regime structure and a
/// persistent latent drought indicator; stands in for real data.
inline PrecipGrid generate_synthetic_precip(int rows, int cols, int years, RngStream rng) {
  PrecipGrid out;
  out.rows = rows;
  out.cols = cols;
  for (int k = 0; k < years; ++k) out.years.emplace_back(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      RngStream site = rng.split(i * cols + j);
      const double mu_norm = 600.0 + 400.0 * site.next_double();
      const double mu_ab = mu_norm * (0.35 + 0.25 * site.next_double());
      const double sigma = 40.0 + 40.0 * site.next_double();
      bool drought = site.next_double() < 0.25;
      for (int k = 0; k < years; ++k) {
        if (site.next_double() > 0.85) drought = !drought;
        const double mean = drought ? mu_ab : mu_norm;
        out.years[k].at(i, j) = std::max(0.0, mean + sigma * site.next_gaussian());
      }
    }
  }
  return out;
}

/// Exact enumeration adapter: one chain state per whole-grid configuration,
/// bit (i * J + j) of the state is cell (i, j). Feasible for I*J <= 12.
inline oracle::DiscreteChainModel make_enumeration_model(const DroughtParams& params,
                                                         const PrecipGrid& precip) {
  const int sites = params.sites();
  if (sites > 30) throw OracleInfeasibleError("make_enumeration_model: grid too large");
  auto decode = [sites, cols = params.cols](int s) {
    Grid g(sites);
    for (int b = 0; b < sites; ++b) g[b] = (s >> b) & 1;
    return g;
  };
  oracle::DiscreteChainModel m;
  m.num_states = 1 << sites;
  m.horizon = precip.horizon();
  m.log_init = [params, y0 = precip.years[0], decode](int s) {
    const Grid g = decode(s);
    return drought_log_increment(params, g, nullptr, y0);
  };
  m.log_step = [params, precip, decode](int k, int sp, int s) {
    const Grid g = decode(s);
    const Grid gp = decode(sp);
    return drought_log_increment(params, g, &gp, precip.years[k]);
  };
  return m;
}

/// year,row,col,precip_mm; one row per site-year.
inline void write_precip_csv(const std::string& path, const PrecipGrid& precip,
                             int first_year = 0) {
  std::string out = csv_line({"year", "row", "col", "precip_mm"});
  for (int k = 0; k < precip.horizon(); ++k)
    for (int i = 0; i < precip.rows; ++i)
      for (int j = 0; j < precip.cols; ++j)
        out += csv_line({std::to_string(first_year + k), std::to_string(i), std::to_string(j),
                         format_double(precip.years[k].at(i, j))});
  write_text_file(path, out);
}

inline PrecipGrid read_precip_csv(const std::string& path) {
  std::vector<std::string> header;
  auto rows = read_csv(path, &header);
  if (header != std::vector<std::string>{"year", "row", "col", "precip_mm"})
    throw std::runtime_error("read_precip_csv: unexpected header in " + path);
  int max_row = -1, max_col = -1;
  long min_year = std::numeric_limits<long>::max(), max_year = std::numeric_limits<long>::min();
  for (const auto& r : rows) {
    min_year = std::min(min_year, std::stol(r[0]));
    max_year = std::max(max_year, std::stol(r[0]));
    max_row = std::max(max_row, std::stoi(r[1]));
    max_col = std::max(max_col, std::stoi(r[2]));
  }
  if (rows.empty()) throw std::runtime_error("read_precip_csv: no data in " + path);
  PrecipGrid out;
  out.rows = max_row + 1;
  out.cols = max_col + 1;
  const int n = static_cast<int>(max_year - min_year + 1);
  for (int k = 0; k < n; ++k) out.years.emplace_back(out.rows, out.cols);
  for (const auto& r : rows)
    out.years[std::stol(r[0]) - min_year].at(std::stoi(r[1]), std::stoi(r[2])) = std::stod(r[3]);
  return out;
}

/// year,row,col,p_drought rows for every site, then per-year summary rows
/// (row = -1, col = threshold in percent) counting sites whose estimated
/// drought probability exceeds 0.5 / 0.7 / 0.9.
inline void write_marginals_csv(const std::string& path, const std::vector<Matrix>& marginals,
                                const std::string& manifest_hash = "", int first_year = 0) {
  std::string out;
  if (!manifest_hash.empty()) out += "# manifest=" + manifest_hash + "\n";
  out += csv_line({"year", "row", "col", "p_drought"});
  for (std::size_t k = 0; k < marginals.size(); ++k) {
    const Matrix& m = marginals[k];
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j)
        out += csv_line({std::to_string(first_year + static_cast<int>(k)), std::to_string(i),
                         std::to_string(j), format_double(m.at(i, j))});
    for (double thr : {0.5, 0.7, 0.9}) {
      int count = 0;
      for (double v : m.data)
        if (v > thr) ++count;
      out += csv_line({std::to_string(first_year + static_cast<int>(k)), "-1",
                       std::to_string(static_cast<int>(thr * 100)), std::to_string(count)});
    }
  }
  write_text_file(path, out);
}

}  // namespace nsmc::models
