#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nsmc/errors.hpp"
#include "nsmc/matrix.hpp"
#include "nsmc/models/gaussian_lattice.hpp"

namespace nsmc::oracle {

/// Exact filtering marginals and evidence of the lattice MRF target.
struct FilterMarginals {
  Matrix mean;                             // n x d
  Matrix variance;                         // n x d
  std::vector<double> log_evidence_trace;  // cumulative log Z_k
  double log_evidence() const { return log_evidence_trace.back(); }
};

namespace detail {

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, double* log_det) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gaussian_filter: non-SPD intermediate matrix");
  if (log_det) {
    double s = 0.0;
    const auto& L = llt.matrixLLT();
    for (int i = 0; i < m.rows(); ++i) s += std::log(L(i, i));
    *log_det = 2.0 * s;
  }
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

// Per-component scalar recursion for the decoupled case tau_psi == 0; exact
// at any dimension.
inline FilterMarginals gaussian_filter_decoupled(const models::GaussianLatticeParams& p,
                                                 const Matrix& y) {
  const int n = y.rows, d = y.cols;
  const double c = p.tau_rho + p.tau_phi;
  FilterMarginals out;
  out.mean = Matrix(n, d);
  out.variance = Matrix(n, d);
  std::vector<double> mu(d, 0.0), prec(d, 0.0);
  double log_ev = 0.0;
  const double half_log_2pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < d; ++l) {
      const double yk = y.at(k, l);
      double lam, b, dL;
      if (k == 0) {
        lam = c;
        b = p.tau_phi * yk;
        dL = half_log_2pi - 0.5 * std::log(lam) + 0.5 * b * b / lam -
             0.5 * p.tau_phi * yk * yk;
      } else {
        const double j = prec[l];
        const double m = j + p.a * p.a * p.tau_rho;
        lam = c - std::pow(p.a * p.tau_rho, 2) / m;
        const double jm = j * mu[l];
        b = p.tau_phi * yk + p.a * p.tau_rho * jm / m;
        dL = half_log_2pi + 0.5 * std::log(j) - 0.5 * std::log(m) - 0.5 * std::log(lam) -
             0.5 * jm * mu[l] + 0.5 * jm * jm / m - 0.5 * p.tau_phi * yk * yk +
             0.5 * b * b / lam;
      }
      prec[l] = lam;
      mu[l] = b / lam;
      out.mean.at(k, l) = mu[l];
      out.variance.at(k, l) = 1.0 / lam;
      log_ev += dL;
    }
    out.log_evidence_trace.push_back(log_ev);
  }
  return out;
}

}  // namespace detail

/// Sequential Gaussian conditioning on the lattice MRF target: exact means,
/// variances and log evidence of x_k | y_{0:k}. Dense d x d updates up to
/// `dense_limit`; above it only the decoupled tau_psi == 0 case is exact
/// (the marginalized precision fills in otherwise), anything else raises
/// OracleInfeasibleError.
inline FilterMarginals gaussian_filter(const models::GaussianLatticeParams& p, const Matrix& y,
                                       int dense_limit = 512) {
  const int n = y.rows, d = y.cols;
  if (n < 1 || d < 1) throw std::invalid_argument("gaussian_filter: empty observations");
  if (d > dense_limit) {
    if (p.tau_psi == 0.0) return detail::gaussian_filter_decoupled(p, y);
    throw OracleInfeasibleError("gaussian_filter: d exceeds the dense limit and tau_psi > 0");
  }

  const double log_2pi = std::log(2.0 * 3.14159265358979323846);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, d);
  {
    models::Tridiag lambda = models::build_precision_matrix(d, p.tau_rho, p.tau_psi);
    for (int i = 0; i < d; ++i) C(i, i) = lambda.diag[i] + p.tau_phi;
    for (int i = 0; i + 1 < d; ++i) {
      C(i, i + 1) = lambda.off[i];
      C(i + 1, i) = lambda.off[i];
    }
  }

  FilterMarginals out;
  out.mean = Matrix(n, d);
  out.variance = Matrix(n, d);

  Eigen::VectorXd mu(d);
  Eigen::MatrixXd J(d, d);
  double log_ev = 0.0;
  const double ar = p.a * p.tau_rho;

  for (int k = 0; k < n; ++k) {
    Eigen::VectorXd yk(d);
    for (int l = 0; l < d; ++l) yk(l) = y.at(k, l);

    Eigen::MatrixXd lam_new;
    Eigen::VectorXd b(d);
    double dL = 0.5 * d * log_2pi - 0.5 * p.tau_phi * yk.squaredNorm();

    if (k == 0) {
      lam_new = C;
      b = p.tau_phi * yk;
    } else {
      Eigen::MatrixXd M = J + (p.a * p.a * p.tau_rho) * Eigen::MatrixXd::Identity(d, d);
      double log_det_m = 0.0;
      Eigen::MatrixXd M_inv = detail::spd_inverse(M, &log_det_m);
      lam_new = C - (ar * ar) * M_inv;
      const Eigen::VectorXd j_mu = J * mu;
      b = p.tau_phi * yk + ar * (M_inv * j_mu);

      double log_det_j = 0.0;
      detail::spd_inverse(J, &log_det_j);
      dL += 0.5 * log_det_j - 0.5 * log_det_m - 0.5 * mu.dot(j_mu) +
            0.5 * j_mu.dot(M_inv * j_mu);
    }

    double log_det_lam = 0.0;
    Eigen::MatrixXd cov = detail::spd_inverse(lam_new, &log_det_lam);
    mu = cov * b;
    J = lam_new;
    dL += -0.5 * log_det_lam + 0.5 * b.dot(mu);

    log_ev += dL;
    out.log_evidence_trace.push_back(log_ev);
    for (int l = 0; l < d; ++l) {
      out.mean.at(k, l) = mu(l);
      out.variance.at(k, l) = cov(l, l);
    }
  }
  return out;
}

}  // namespace nsmc::oracle
