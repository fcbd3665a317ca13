#include "koopman/numkit.hpp"

#include "koopman/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace koopman::numkit {

namespace {

constexpr double eps = std::numeric_limits<double>::epsilon();

void check_finite(const Eigen::Ref<const CMat>& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entries");
}

/// Multiply column j by the phase that makes its largest-modulus entry real
/// positive. Returns the applied phase factor (1 for a zero column).
Complex normalize_column_phase(CMat& m, Index j) {
  Index k = 0;
  double best = 0.0;
  for (Index i = 0; i < m.rows(); ++i) {
    double a = std::abs(m(i, j));
    if (a > best) {
      best = a;
      k = i;
    }
  }
  if (best == 0.0) return Complex(1.0, 0.0);
  Complex alpha = std::conj(m(k, j)) / best;
  m.col(j) *= alpha;
  return alpha;
}

}  // namespace

EigPair hermitian_eig(const Eigen::Ref<const CMat>& H) {
  if (H.rows() != H.cols()) throw InvalidInput("hermitian_eig: matrix must be square");
  check_finite(H, "hermitian_eig");
  const double scale = H.norm();
  if ((H - H.adjoint()).norm() > 1e-8 * std::max(scale, 1.0))
    throw InvalidInput("hermitian_eig: matrix is not Hermitian within tolerance");

  CMat S = 0.5 * (H + H.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(S);
  if (es.info() != Eigen::Success) throw NumericalError("hermitian_eig: eigensolver failed");

  EigPair out;
  out.values = es.eigenvalues().cast<Complex>();
  out.vectors = es.eigenvectors();
  for (Index j = 0; j < out.vectors.cols(); ++j) normalize_column_phase(out.vectors, j);
  return out;
}

Svd svd(const Eigen::Ref<const CMat>& B) {
  check_finite(B, "svd");
  Eigen::BDCSVD<CMat> dec(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success) throw NumericalError("svd: decomposition failed");

  Svd out;
  out.U = dec.matrixU();
  out.sigma = dec.singularValues();
  out.Vt = dec.matrixV().adjoint();

  // Phase normalization. For sigma_j > 0 the pair (u_j, v_j) carries one joint
  // phase; for numerically zero sigma_j the two null-space vectors are
  // independent and each gets its own deterministic phase.
  const double zero_tol =
      static_cast<double>(std::max(B.rows(), B.cols())) * eps * (out.sigma.size() ? out.sigma(0) : 0.0);
  for (Index j = 0; j < out.sigma.size(); ++j) {
    Complex alpha = normalize_column_phase(out.U, j);
    if (out.sigma(j) > zero_tol) {
      out.Vt.row(j) *= std::conj(alpha);
    } else {
      CMat vt = out.Vt.row(j).adjoint();  // v_j as a column
      normalize_column_phase(vt, 0);
      out.Vt.row(j) = vt.adjoint();
    }
  }
  return out;
}

SpdRoots spd_sqrt(const Eigen::Ref<const CMat>& G, double rtol) {
  EigPair eg = hermitian_eig(G);
  const Index n = eg.values.size();
  RVec lam = eg.values.real();
  const double lam_max = (n > 0) ? lam(n - 1) : 0.0;
  if (n == 0 || lam(0) <= rtol * lam_max)
    throw IllConditionedGram("spd_sqrt: Gram matrix is numerically rank-deficient (min eig " +
                             std::to_string(n ? lam(0) : 0.0) + ", max eig " + std::to_string(lam_max) + ")");

  RVec sq = lam.cwiseSqrt();
  CMat Vs = eg.vectors * sq.asDiagonal();
  CMat Vi = eg.vectors * sq.cwiseInverse().asDiagonal();
  SpdRoots out;
  out.half = Vs * eg.vectors.adjoint();
  out.neg_half = Vi * eg.vectors.adjoint();
  out.half = 0.5 * (out.half + out.half.adjoint()).eval();
  out.neg_half = 0.5 * (out.neg_half + out.neg_half.adjoint()).eval();
  return out;
}

EigPair unitary_eig(const Eigen::Ref<const CMat>& Q) {
  if (Q.rows() != Q.cols()) throw InvalidInput("unitary_eig: matrix must be square");
  check_finite(Q, "unitary_eig");
  const Index n = Q.rows();
  const double defect = (Q.adjoint() * Q - CMat::Identity(n, n)).norm();
  if (defect > 1e-8 * std::sqrt(static_cast<double>(n)))
    throw NotUnitary("unitary_eig: input is not unitary (||Q*Q - I||_F = " + std::to_string(defect) + ")");

  // Schur of a unitary matrix: T is numerically diagonal and the Schur basis
  // is unitary, so columns of U are the eigenvectors.
  Eigen::ComplexSchur<CMat> sch(Q);
  if (sch.info() != Eigen::Success) throw NumericalError("unitary_eig: Schur factorization failed");
  CMat vectors = sch.matrixU();
  CVec raw = sch.matrixT().diagonal();

  CVec values(n);
  for (Index j = 0; j < n; ++j) {
    double a = std::abs(raw(j));
    values(j) = (a > 0.0) ? raw(j) / a : Complex(1.0, 0.0);
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::arg(values(a)) < std::arg(values(b)); });

  EigPair out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Index j = 0; j < n; ++j) {
    out.values(j) = values(order[static_cast<std::size_t>(j)]);
    out.vectors.col(j) = vectors.col(order[static_cast<std::size_t>(j)]);
  }
  for (Index j = 0; j < n; ++j) normalize_column_phase(out.vectors, j);
  return out;
}

double cond2(const Eigen::Ref<const CMat>& B) {
  check_finite(B, "cond2");
  Eigen::BDCSVD<CMat> dec(B);
  const RVec& s = dec.singularValues();
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

}  // namespace koopman::numkit
