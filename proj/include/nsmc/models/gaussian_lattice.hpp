#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/backward.hpp"
#include "nsmc/csv.hpp"
#include "nsmc/log_weight.hpp"
#include "nsmc/matrix.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sequential_target.hpp"

namespace nsmc::models {

/// theta = (tau_psi, a, tau_rho, tau_phi) of the d-dimensional lattice model.
struct GaussianLatticeParams {
  int dim = 0;
  double tau_psi = 1.0;
  double a = 0.5;
  double tau_rho = 1.0;
  double tau_phi = 10.0;
};

/// Symmetric tridiagonal matrix: main diagonal plus one off-diagonal.
struct Tridiag {
  std::vector<double> diag;
  std::vector<double> off;  // size = dim - 1
  int dim() const { return static_cast<int>(diag.size()); }
};

/// The stationary spatial precision: tau_rho I + tau_psi K with K the chain
/// Laplacian, i.e. tau_rho + tau_psi at both ends, tau_rho + 2 tau_psi
/// inside, -tau_psi off the diagonal. d = 1 has no spatial couplings.
inline Tridiag build_precision_matrix(int d, double tau_rho, double tau_psi) {
  if (d < 1) throw std::invalid_argument("build_precision_matrix: d must be >= 1");
  if (tau_rho <= 0.0 || tau_psi < 0.0)
    throw std::invalid_argument("build_precision_matrix: precisions must be positive");
  Tridiag t;
  t.diag.assign(d, tau_rho + 2.0 * tau_psi);
  if (d >= 1) t.diag.front() = tau_rho + (d > 1 ? tau_psi : 0.0);
  if (d > 1) t.diag.back() = tau_rho + tau_psi;
  t.off.assign(d > 1 ? d - 1 : 0, -tau_psi);
  return t;
}

/// Cholesky factorization of a tridiagonal SPD matrix (L lower bidiagonal),
/// with O(d) solves and zero-mean sampling from the implied covariance.
class TridiagChol {
public:
  static TridiagChol compute(const Tridiag& t) {
    TridiagChol c;
    const int d = t.dim();
    c.l_diag.resize(d);
    c.l_off.resize(d > 1 ? d - 1 : 0);
    double prev_off = 0.0;
    for (int i = 0; i < d; ++i) {
      const double v = t.diag[i] - prev_off * prev_off;
      if (v <= 0.0) throw std::runtime_error("TridiagChol: matrix not positive definite");
      c.l_diag[i] = std::sqrt(v);
      if (i + 1 < d) {
        c.l_off[i] = t.off[i] / c.l_diag[i];
        prev_off = c.l_off[i];
      }
    }
    return c;
  }

  int dim() const { return static_cast<int>(l_diag.size()); }

  double log_det_l() const {
    double s = 0.0;
    for (double v : l_diag) s += std::log(v);
    return s;
  }

  /// L y = b, in place.
  void solve_lower(std::span<double> b) const {
    const int d = dim();
    b[0] /= l_diag[0];
    for (int i = 1; i < d; ++i) b[i] = (b[i] - l_off[i - 1] * b[i - 1]) / l_diag[i];
  }

  /// L^T x = b, in place.
  void solve_upper(std::span<double> b) const {
    const int d = dim();
    b[d - 1] /= l_diag[d - 1];
    for (int i = d - 2; i >= 0; --i) b[i] = (b[i] - l_off[i] * b[i + 1]) / l_diag[i];
  }

  /// (L L^T) x = b, in place.
  void solve(std::span<double> b) const {
    solve_lower(b);
    solve_upper(b);
  }

  /// Draw from N(0, (L L^T)^{-1}).
  void sample_zero_mean(RngStream& rng, std::span<double> out) const {
    for (double& v : out) v = rng.next_gaussian();
    solve_upper(out);
  }

private:
  std::vector<double> l_diag;
  std::vector<double> l_off;
};

/// Exact draw of the generating state space model: x_0 ~ N(0, Sigma),
/// x_k = a tau_rho Sigma x_{k-1} + v_k with v ~ N(0, Sigma), y_k = x_k + e_k
/// with e ~ N(0, tau_phi^{-1} I). All linear algebra goes through the
/// tridiagonal factorization of Sigma^{-1}.
inline std::pair<Matrix, Matrix> simulate_generating_ssm(const GaussianLatticeParams& p, int n,
                                                         RngStream rng) {
  if (n < 1) throw std::invalid_argument("simulate_generating_ssm: n must be >= 1");
  const int d = p.dim;
  const Tridiag lambda = build_precision_matrix(d, p.tau_rho, p.tau_psi);
  const TridiagChol chol = TridiagChol::compute(lambda);

  Matrix x(n, d), y(n, d);
  std::vector<double> noise(d), drift(d);
  const double obs_sd = 1.0 / std::sqrt(p.tau_phi);
  for (int k = 0; k < n; ++k) {
    RngStream step = rng.split(k);
    RngStream state_rng = step.split(0);
    RngStream obs_rng = step.split(1);
    chol.sample_zero_mean(state_rng, noise);
    if (k == 0) {
      for (int l = 0; l < d; ++l) x.at(0, l) = noise[l];
    } else {
      for (int l = 0; l < d; ++l) drift[l] = x.at(k - 1, l);
      chol.solve(drift);  // Sigma x_{k-1}
      for (int l = 0; l < d; ++l) x.at(k, l) = p.a * p.tau_rho * drift[l] + noise[l];
    }
    for (int l = 0; l < d; ++l) y.at(k, l) = x.at(k, l) + obs_sd * obs_rng.next_gaussian();
  }
  return {std::move(x), std::move(y)};
}

/// The three site-wise log potentials of the lattice target.
struct LatticePotentials {
  double tau_psi, a, tau_rho, tau_phi;

  double log_phi(double x, double y) const { return -0.5 * tau_phi * (x - y) * (x - y); }
  double log_psi(double x, double x_left) const {
    return -0.5 * tau_psi * (x - x_left) * (x - x_left);
  }
  double log_rho(double x, double x_prev) const {
    const double r = x - a * x_prev;
    return -0.5 * tau_rho * r * r;
  }
};

inline LatticePotentials lattice_log_potentials(const GaussianLatticeParams& p) {
  return {p.tau_psi, p.a, p.tau_rho, p.tau_phi};
}

/// The inner chain over the d components of one time step: step l has
/// increment phi_l * rho_l * psi_l (psi absent at l = 0). Its full-path
/// density equals the outer increment at the same (x_k, x_{k-1}, y_k), and
/// its normalizing constant is the outer optimal proposal's Z_q(x_{k-1}).
class LatticeInnerTarget {
public:
  using State = double;

  LatticeInnerTarget(LatticePotentials pots, std::vector<double> x_prev, std::vector<double> y_row)
      : pots_(pots), x_prev_(std::move(x_prev)), y_(std::move(y_row)) {
    if (x_prev_.size() != y_.size())
      throw std::invalid_argument("LatticeInnerTarget: dimension mismatch");
  }

  int horizon() const { return static_cast<int>(y_.size()); }

  double log_increment(int l, std::span<const double> path) const {
    const double x = path[l];
    double v = pots_.log_phi(x, y_[l]) + pots_.log_rho(x, x_prev_[l]);
    if (l > 0) v += pots_.log_psi(x, path[l - 1]);
    return v;
  }

  double log_density(int l, std::span<const double> path) const {
    double s = 0.0;
    for (int j = 0; j <= l; ++j) s += log_increment(j, path);
    return s;
  }

  const std::vector<double>& x_prev() const { return x_prev_; }
  const std::vector<double>& y_row() const { return y_; }
  const LatticePotentials& potentials() const { return pots_; }

private:
  LatticePotentials pots_;
  std::vector<double> x_prev_;
  std::vector<double> y_;
};

/// The lattice MRF as a sequential target over time, one d-vector per step.
class LatticeModel {
public:
  using State = std::vector<double>;

  LatticeModel(GaussianLatticeParams params, Matrix observations)
      : p_(params), y_(std::move(observations)) {
    if (y_.cols != p_.dim) throw std::invalid_argument("LatticeModel: dimension mismatch");
  }

  int horizon() const { return y_.rows; }
  int dim() const { return p_.dim; }
  const GaussianLatticeParams& params() const { return p_; }
  const Matrix& observations() const { return y_; }

  double log_increment(int k, std::span<const State> path) const {
    const LatticePotentials pots = lattice_log_potentials(p_);
    const State& x = path[k];
    const State* xp = k > 0 ? &path[k - 1] : nullptr;
    const int d = p_.dim;
    double v = 0.0;
    for (int l = 0; l < d; ++l) {
      v += pots.log_phi(x[l], y_.at(k, l));
      v += pots.log_rho(x[l], xp ? (*xp)[l] : 0.0);
      if (l > 0) v += pots.log_psi(x[l], x[l - 1]);
    }
    return v;
  }

  double log_density(int k, std::span<const State> path) const {
    double s = 0.0;
    for (int j = 0; j <= k; ++j) s += log_increment(j, path);
    return s;
  }

  /// Inner component chain for outer step `k` conditioned on the prefix
  /// (rho is anchored at zero when there is no previous step).
  LatticeInnerTarget inner_chain_target(int k, std::span<const State> prefix) const {
    std::vector<double> x_prev =
        k > 0 ? prefix[k - 1] : std::vector<double>(p_.dim, 0.0);
    if (static_cast<int>(x_prev.size()) != p_.dim)
      throw std::invalid_argument("inner_chain_target: dimension mismatch");
    std::vector<double> y_row(y_.row(k).begin(), y_.row(k).end());
    return {lattice_log_potentials(p_), std::move(x_prev), std::move(y_row)};
  }

private:
  GaussianLatticeParams p_;
  Matrix y_;
};

/// Exact optimal step proposal for the lattice target. The step precision
/// C = Lambda + tau_phi I is constant, so one tridiagonal factorization
/// serves every (k, prefix): Z_q and exact Gaussian draws are O(d).
class LatticeOptimalProposal {
public:
  using State = std::vector<double>;

  explicit LatticeOptimalProposal(const LatticeModel& model)
      : p_(model.params()), y_(&model.observations()) {
    Tridiag c = build_precision_matrix(p_.dim, p_.tau_rho, p_.tau_psi);
    for (double& v : c.diag) v += p_.tau_phi;
    chol_ = TridiagChol::compute(c);
  }

  double log_z(int k, std::span<const State> prefix) const {
    const int d = p_.dim;
    std::vector<double> b(d);
    double constant = 0.0;
    fill_linear_term(k, prefix, b, constant);
    chol_.solve_lower(b);
    double quad = 0.0;
    for (double v : b) quad += v * v;
    return 0.5 * d * std::log(2.0 * 3.14159265358979323846) - chol_.log_det_l() + 0.5 * quad +
           constant;
  }

  State sample(int k, std::span<const State> prefix, RngStream& rng) const {
    const int d = p_.dim;
    std::vector<double> mean(d);
    double constant = 0.0;
    fill_linear_term(k, prefix, mean, constant);
    chol_.solve(mean);
    std::vector<double> noise(d);
    chol_.sample_zero_mean(rng, noise);
    for (int l = 0; l < d; ++l) mean[l] += noise[l];
    return mean;
  }

private:
  void fill_linear_term(int k, std::span<const State> prefix, std::span<double> b,
                        double& constant) const {
    const int d = p_.dim;
    constant = 0.0;
    for (int l = 0; l < d; ++l) {
      const double yk = y_->at(k, l);
      const double xp = k > 0 ? prefix[k - 1][l] : 0.0;
      b[l] = p_.tau_phi * yk + p_.a * p_.tau_rho * xp;
      constant -= 0.5 * p_.tau_phi * yk * yk;
      constant -= 0.5 * p_.a * p_.a * p_.tau_rho * xp * xp;
    }
  }

  GaussianLatticeParams p_;
  const Matrix* y_;
  TridiagChol chol_;
};

/// Bootstrap machinery for the inner component chain: exact samplers for the
/// unnormalized rho dynamics, q_l(x | .) = exp(-tau_rho/2 (x - a x_prev_l)^2).
class LatticeInnerBootstrapFactory {
public:
  explicit LatticeInnerBootstrapFactory(const LatticeInnerTarget& target)
      : a_(target.potentials().a),
        tau_rho_(target.potentials().tau_rho),
        x_prev_(target.x_prev()),
        log_z_(0.5 * std::log(2.0 * 3.14159265358979323846 / target.potentials().tau_rho)) {}

  auto operator()(int l, std::span<const double>, int, RngStream) const {
    const double mean = a_ * x_prev_[l];
    const double sd = 1.0 / std::sqrt(tau_rho_);
    return make_exact_sampler<double>(
        LogWeight::from_log(log_z_),
        [mean, sd](RngStream& rng) { return mean + sd * rng.next_gaussian(); });
  }

private:
  double a_;
  double tau_rho_;
  std::vector<double> x_prev_;
  double log_z_;
};

class LatticeInnerBootstrapDensity {
public:
  explicit LatticeInnerBootstrapDensity(const LatticeInnerTarget& target)
      : a_(target.potentials().a), tau_rho_(target.potentials().tau_rho), x_prev_(target.x_prev()) {}

  double operator()(int l, std::span<const double>, const double& x) const {
    const double r = x - a_ * x_prev_[l];
    return -0.5 * tau_rho_ * r * r;
  }

private:
  double a_;
  double tau_rho_;
  std::vector<double> x_prev_;
};

/// Step factory for the two-level sampler of the lattice model: each outer
/// ancestor gets an inner bootstrap particle filter over the d components,
/// wrapped as a properly weighted sampler (forward pass at construction,
/// backward simulation per draw). The factory's precision argument is the
/// inner particle count.
class LatticeInnerPfFactory {
public:
  explicit LatticeInnerPfFactory(const LatticeModel& model) : model_(&model) {}

  NsmcSampler<LatticeInnerTarget> operator()(int k, std::span<const std::vector<double>> prefix,
                                             int n_inner, RngStream rng) const {
    LatticeInnerTarget inner = model_->inner_chain_target(k, prefix);
    LatticeInnerBootstrapFactory factory(inner);
    LatticeInnerBootstrapDensity density(inner);
    return NsmcSampler<LatticeInnerTarget>::auxiliary(std::move(inner), factory, density,
                                                      UnitAdjustment{}, n_inner, 1, rng);
  }

private:
  const LatticeModel* model_;
};

/// Direct bootstrap proposal at the full d-vector level (the comparison
/// baseline): q_k(x | x_{k-1}) = prod_l rho_l, an unnormalized spherical
/// Gaussian around a x_{k-1}.
class LatticeBootstrapSampler {
public:
  using State = std::vector<double>;
  LatticeBootstrapSampler(std::vector<double> mean, double sd, double log_z)
      : mean_(std::move(mean)), sd_(sd), log_z_(log_z) {}
  LogWeight log_z() const { return LogWeight::from_log(log_z_); }
  State simulate(RngStream& rng) const {
    State x(mean_.size());
    for (std::size_t l = 0; l < x.size(); ++l) x[l] = mean_[l] + sd_ * rng.next_gaussian();
    return x;
  }

private:
  std::vector<double> mean_;
  double sd_;
  double log_z_;
};

class LatticeBootstrapFactory {
public:
  explicit LatticeBootstrapFactory(const LatticeModel& model)
      : a_(model.params().a),
        tau_rho_(model.params().tau_rho),
        dim_(model.dim()),
        log_z_(0.5 * model.dim() *
               std::log(2.0 * 3.14159265358979323846 / model.params().tau_rho)) {}

  LatticeBootstrapSampler operator()(int k, std::span<const std::vector<double>> prefix, int,
                                     RngStream) const {
    std::vector<double> mean(dim_, 0.0);
    if (k > 0)
      for (int l = 0; l < dim_; ++l) mean[l] = a_ * prefix[k - 1][l];
    return {std::move(mean), 1.0 / std::sqrt(tau_rho_), log_z_};
  }

private:
  double a_;
  double tau_rho_;
  int dim_;
  double log_z_;
};

class LatticeBootstrapDensity {
public:
  explicit LatticeBootstrapDensity(const LatticeModel& model)
      : a_(model.params().a), tau_rho_(model.params().tau_rho) {}

  double operator()(int k, std::span<const std::vector<double>> prefix,
                    const std::vector<double>& x) const {
    double s = 0.0;
    for (std::size_t l = 0; l < x.size(); ++l) {
      const double r = x[l] - (k > 0 ? a_ * prefix[k - 1][l] : 0.0);
      s -= 0.5 * tau_rho_ * r * r;
    }
    return s;
  }

private:
  double a_;
  double tau_rho_;
};

/// One row per time step, columns y_1..y_d (or x_1..x_d for latent truth).
inline void write_lattice_csv(const std::string& path, const Matrix& m,
                              const std::string& column_prefix = "y",
                              const std::string& comment = "") {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  std::vector<std::string> header(m.cols);
  for (int c = 0; c < m.cols; ++c) header[c] = column_prefix + "_" + std::to_string(c + 1);
  out += csv_line(header);
  for (int r = 0; r < m.rows; ++r) {
    std::vector<std::string> cells(m.cols);
    for (int c = 0; c < m.cols; ++c) cells[c] = format_double(m.at(r, c));
    out += csv_line(cells);
  }
  write_text_file(path, out);
}

inline Matrix read_lattice_csv(const std::string& path) {
  std::vector<std::string> header;
  auto rows = read_csv(path, &header);
  if (header.empty()) throw std::runtime_error("read_lattice_csv: missing header in " + path);
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(header.size()));
  for (int r = 0; r < m.rows; ++r) {
    if (rows[r].size() != header.size())
      throw std::runtime_error("read_lattice_csv: ragged row in " + path);
    for (int c = 0; c < m.cols; ++c) m.at(r, c) = std::stod(rows[r][c]);
  }
  return m;
}

}  // namespace nsmc::models
