#pragma once

#include "koopman/types.hpp"

namespace koopman::numkit {

/// Eigenvalue/eigenvector pair: vectors.col(j) belongs to values(j).
struct EigPair {
  CVec values;
  CMat vectors;
};

/// Thin SVD, B = U * sigma.asDiagonal() * Vt with sigma descending.
/// U and Vt.adjoint() have orthonormal columns. Column phases are
/// normalized deterministically (largest-modulus entry of each left
/// singular vector is real positive); singular vectors belonging to
/// numerically zero singular values are normalized independently on
/// both sides, which fixes the otherwise arbitrary null-space phases.
struct Svd {
  CMat U;
  RVec sigma;
  CMat Vt;
};

/// Hermitian square root pair: half * half ~= G, half * neg_half ~= I.
struct SpdRoots {
  CMat half;
  CMat neg_half;
};

/// Eigendecomposition of a Hermitian matrix. The input is symmetrized to
/// (H + H*)/2 before factoring; it must already be Hermitian to
/// 1e-8 * ||H||_F. Values are real (zero imaginary part), ascending, and
/// the eigenvector matrix is unitary.
EigPair hermitian_eig(const Eigen::Ref<const CMat>& H);

Svd svd(const Eigen::Ref<const CMat>& B);

/// G^{1/2} and G^{-1/2} for Hermitian positive definite G. Throws
/// IllConditionedGram when the smallest eigenvalue of the symmetrized G
/// does not exceed rtol times the largest.
SpdRoots spd_sqrt(const Eigen::Ref<const CMat>& G, double rtol = 1e-12);

/// Eigendecomposition of a unitary matrix via a Schur factorization, so the
/// eigenvector matrix is unitary by construction (not renormalized output of
/// a general eigensolver). Eigenvalues are projected onto the unit circle
/// (lambda / |lambda|) and sorted by phase ascending in (-pi, pi], ties
/// broken by original column index.
EigPair unitary_eig(const Eigen::Ref<const CMat>& Q);

/// 2-norm condition number sigma_max / sigma_min (inf when sigma_min == 0).
double cond2(const Eigen::Ref<const CMat>& B);

}  // namespace koopman::numkit
