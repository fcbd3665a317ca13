#pragma once

#include "koopman/decomp.hpp"
#include "koopman/dictionary.hpp"
#include "koopman/numkit.hpp"
#include "koopman/types.hpp"

#include <Eigen/QR>

#include <random>

namespace koopman::testing {

inline CMat random_cmat(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  CMat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = Complex(gauss(rng), gauss(rng));
  return m;
}

inline CVec random_cvec(Index n, std::uint64_t seed) { return random_cmat(n, 1, seed); }

inline CMat random_hermitian(Index n, std::uint64_t seed) {
  CMat a = random_cmat(n, n, seed);
  return 0.5 * (a + a.adjoint());
}

/// Well-conditioned random Hermitian positive definite matrix.
inline CMat random_spd(Index n, std::uint64_t seed, double shift = 1.0) {
  CMat b = random_cmat(n, n, seed);
  CMat g = b.adjoint() * b + shift * CMat::Identity(n, n);
  return 0.5 * (g + g.adjoint());
}

inline CMat random_unitary(Index n, std::uint64_t seed) {
  Eigen::HouseholderQR<CMat> qr(random_cmat(n, n, seed));
  CMat q = qr.householderQ();
  // Fix the phase ambiguity of the QR factor so columns are Haar-like.
  CMat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j) {
    Complex d = r(j, j);
    q.col(j) *= (std::abs(d) > 0.0) ? d / std::abs(d) : Complex(1.0, 0.0);
  }
  return q;
}

/// Random Gram pair with prescribed conditioning: G = B^*B + shift I.
inline dictionary::GramPair random_gram_pair(Index n, std::uint64_t seed, double shift = 0.5) {
  dictionary::GramPair gp;
  gp.G = random_spd(n, seed, shift);
  gp.A = random_cmat(n, n, seed + 1);
  return gp;
}

/// Gram pair of data consistent with a G-isometric operator: A = G K where
/// K = G^{-1/2} Q G^{1/2} for unitary Q, so K^* G K = G holds exactly in the
/// large-data sense and mpEDMD recovers K.
inline std::pair<dictionary::GramPair, CMat> isometric_gram_pair(Index n, std::uint64_t seed) {
  dictionary::GramPair gp;
  gp.G = random_spd(n, seed);
  numkit::SpdRoots roots = numkit::spd_sqrt(gp.G);
  CMat q = random_unitary(n, seed + 1);
  CMat k = roots.neg_half * q * roots.half;
  gp.A = gp.G * k;
  return {gp, k};
}

}  // namespace koopman::testing
