#pragma once

#include "koopman/decomp.hpp"
#include "koopman/dictionary.hpp"
#include "koopman/types.hpp"

namespace koopman::forecast {

/// Weighted least-squares coefficients of g in the dictionary:
/// ghat = G^{-1} Psi_X^* W (g(x^(1)) ... g(x^(M)))^T. Each column of
/// `samples` is one target observable sampled at the snapshots.
CMat project_observable(const dictionary::GramPair& gp, const Eigen::Ref<const CMat>& psi_x,
                        const Eigen::Ref<const RVec>& weights, const Eigen::Ref<const CMat>& samples);

/// Koopman mode decomposition g(x_n) ~= [Psi(x_0) V] Lambda^n [modes]:
/// modes = V^{-1} (sqrt(W) Psi_X)^+ sqrt(W) [samples], one column per target.
/// unit_circle marks spectra on the circle, where Lambda^n is computed by
/// phase multiplication e^{i n theta} to avoid modulus drift.
struct KMD {
  CVec eigvals;
  CMat modes;
  bool unit_circle = false;
};

KMD build_kmd(const decomp::KoopmanModel& model, const dictionary::GramPair& gp,
              const Eigen::Ref<const CMat>& psi_x, const Eigen::Ref<const RVec>& weights,
              const Eigen::Ref<const CMat>& targets);

/// Eigenfunction evaluations Psi(x0) V for a dictionary row Psi(x0).
CVec eigfun_row(const decomp::KoopmanModel& model, const CVec& psi_x0);

/// n-step prediction row * Lambda^n * modes (one value per target).
CVec predict(const KMD& kmd, const CVec& x0_row, long n);

/// Coefficient vector after n steps, a_n = K^n a_0. mpedmd advances through
/// the unitary eigendecomposition (exact diagonal phase powers); other
/// methods multiply by K repeatedly.
CVec advance_coeffs(const decomp::KoopmanModel& model, const CVec& a0, long n);

/// Energy a_n^* G a_n of the advanced coefficient vector.
double coeff_energy(const decomp::KoopmanModel& model, const CVec& a0, long n);

/// Energies for all n = 0..n_max.
RVec energy_series(const decomp::KoopmanModel& model, const CVec& a0, long n_max);

}  // namespace koopman::forecast
