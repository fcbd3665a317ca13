#include "koopman/forecast.hpp"

#include "koopman/errors.hpp"
#include "koopman/numkit.hpp"

#include <Eigen/LU>

#include <cmath>

namespace koopman::forecast {

namespace {

constexpr double gram_rtol = 1e-12;

CVec phase_powers(const CVec& eigvals, long n) {
  CVec out(eigvals.size());
  for (Index j = 0; j < eigvals.size(); ++j)
    out(j) = std::polar(1.0, static_cast<double>(n) * std::arg(eigvals(j)));
  return out;
}

}  // namespace

CMat project_observable(const dictionary::GramPair& gp, const Eigen::Ref<const CMat>& psi_x,
                        const Eigen::Ref<const RVec>& weights, const Eigen::Ref<const CMat>& samples) {
  if (psi_x.rows() != samples.rows() || psi_x.rows() != weights.size())
    throw InvalidInput("project_observable: row counts of Psi_X, samples and weights must agree");
  if (psi_x.cols() != gp.G.rows()) throw InvalidInput("project_observable: Psi_X does not match G");

  numkit::EigPair eg = numkit::hermitian_eig(gp.G);
  RVec lam = eg.values.real();
  if (lam(0) <= gram_rtol * lam(lam.size() - 1))
    throw IllConditionedGram("project_observable: Gram matrix is numerically rank-deficient");

  CMat rhs = psi_x.adjoint() * (weights.cast<Complex>().asDiagonal() * samples);
  return eg.vectors * lam.cwiseInverse().asDiagonal() * (eg.vectors.adjoint() * rhs);
}

KMD build_kmd(const decomp::KoopmanModel& model, const dictionary::GramPair& gp,
              const Eigen::Ref<const CMat>& psi_x, const Eigen::Ref<const RVec>& weights,
              const Eigen::Ref<const CMat>& targets) {
  CMat coeffs = project_observable(gp, psi_x, weights, targets);
  KMD kmd;
  kmd.eigvals = model.eigvals;
  if (model.method == decomp::Method::mpedmd) {
    // V^{-1} = vhat^* G^{1/2} exactly, by unitarity of vhat.
    kmd.modes = model.vhat.adjoint() * (model.Ghalf * coeffs);
    kmd.unit_circle = true;
  } else {
    Eigen::FullPivLU<CMat> lu(model.eigvecs);
    if (!lu.isInvertible())
      throw NumericalError("build_kmd: eigenvector matrix is singular (defective eigenproblem)");
    kmd.modes = lu.solve(coeffs);
    kmd.unit_circle = model.method == decomp::Method::pidmd;
  }
  return kmd;
}

CVec eigfun_row(const decomp::KoopmanModel& model, const CVec& psi_x0) {
  if (psi_x0.size() != model.size()) throw InvalidInput("eigfun_row: dictionary row has wrong length");
  return (psi_x0.transpose() * model.eigvecs).transpose();
}

CVec predict(const KMD& kmd, const CVec& x0_row, long n) {
  if (n < 0) throw InvalidInput("predict: horizon must be nonnegative");
  if (x0_row.size() != kmd.eigvals.size()) throw InvalidInput("predict: row has wrong length");
  CVec pw(kmd.eigvals.size());
  if (kmd.unit_circle) {
    pw = phase_powers(kmd.eigvals, n);
  } else {
    for (Index j = 0; j < pw.size(); ++j) pw(j) = std::pow(kmd.eigvals(j), static_cast<double>(n));
  }
  return (x0_row.cwiseProduct(pw).transpose() * kmd.modes).transpose();
}

CVec advance_coeffs(const decomp::KoopmanModel& model, const CVec& a0, long n) {
  if (n < 0) throw InvalidInput("advance_coeffs: n must be nonnegative");
  if (a0.size() != model.size()) throw InvalidInput("advance_coeffs: coefficient vector has wrong length");
  if (model.method == decomp::Method::mpedmd) {
    CVec b = model.vhat.adjoint() * (model.Ghalf * a0);
    b = b.cwiseProduct(phase_powers(model.eigvals, n));
    return model.Gneghalf * (model.vhat * b);
  }
  CVec a = a0;
  for (long k = 0; k < n; ++k) a = model.K * a;
  return a;
}

double coeff_energy(const decomp::KoopmanModel& model, const CVec& a0, long n) {
  CVec a = advance_coeffs(model, a0, n);
  return (a.adjoint() * model.G * a).value().real();
}

RVec energy_series(const decomp::KoopmanModel& model, const CVec& a0, long n_max) {
  if (n_max < 0) throw InvalidInput("energy_series: n_max must be nonnegative");
  RVec out(n_max + 1);
  if (model.method == decomp::Method::mpedmd) {
    CVec b = model.vhat.adjoint() * (model.Ghalf * a0);
    for (long n = 0; n <= n_max; ++n) {
      CVec a = model.Gneghalf * (model.vhat * b.cwiseProduct(phase_powers(model.eigvals, n)));
      out(n) = (a.adjoint() * model.G * a).value().real();
    }
    return out;
  }
  CVec a = a0;
  for (long n = 0; n <= n_max; ++n) {
    out(n) = (a.adjoint() * model.G * a).value().real();
    if (n < n_max) a = model.K * a;
  }
  return out;
}

}  // namespace koopman::forecast
