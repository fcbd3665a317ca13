#pragma once

#include "koopman/decomp.hpp"
#include "koopman/dictionary.hpp"
#include "koopman/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace koopman::spectral {

/// Atomic probability measure on the unit circle: atom j sits at phase
/// phases(j) in (-pi, pi] with mass masses(j) >= 0; phases ascending.
struct SpectralMeasure {
  RVec phases;
  RVec masses;

  double total_mass() const { return masses.sum(); }
};

/// Merge atoms closer than tol in phase (masses summed).
SpectralMeasure merge_atoms(const SpectralMeasure& mu, double tol = 1e-12);

/// Scalar-valued spectral measure of an mpedmd model with respect to the
/// observable with dictionary coefficients ghat: mass |v_j^* G ghat|^2 at
/// phase(lambda_j), after normalizing ghat^* G ghat = 1.
SpectralMeasure scalar_measure(const decomp::KoopmanModel& model, const CVec& ghat);

/// Right-continuous cdf F(theta) = sum_{theta_j <= theta} p_j on a grid
/// within (-pi, pi].
RVec cdf(const SpectralMeasure& mu, const Eigen::Ref<const RVec>& grid);

/// Wasserstein-1 distance on the cut circle: the exact L1 distance between
/// the two cdfs over (-pi, pi].
double w1(const SpectralMeasure& mu, const SpectralMeasure& nu);

/// l-th moment sum_j lambda_j^l |v_j^* G ghat|^2; equals ghat^* G K^l ghat.
Complex moment(const decomp::KoopmanModel& model, const CVec& ghat, long l);

/// Test function on the unit circle: either a closed form evaluated at the
/// eigenphases or a truncated Laurent series sum c_l lambda^l.
class TestFunction {
 public:
  static TestFunction from_function(std::string name, std::function<Complex(Complex)> f);
  /// coeffs(k) multiplies lambda^{lmin + k}.
  static TestFunction laurent(CVec coeffs, long lmin);

  Complex operator()(Complex lambda) const;
  const std::string& name() const { return name_; }

 private:
  TestFunction() = default;
  std::string name_;
  std::function<Complex(Complex)> fn_;
  CVec coeffs_;
  long lmin_ = 0;
};

/// Laurent coefficients c_l, |l| <= L, of phi on the unit circle, computed
/// with the periodic trapezoidal rule (quad_points == 0 picks a default).
CVec laurent_coefficients(const std::function<Complex(Complex)>& phi, long L, Index quad_points = 0);

/// Matrix functional calculus against the discrete projection-valued
/// measure: coefficients of Psi (int phi dE) ghat, computed as
/// G^{-1/2} vhat diag(phi(lambda_j)) vhat^* G^{1/2} ghat. mpedmd only.
CVec apply_test_function(const decomp::KoopmanModel& model, const TestFunction& phi, const CVec& ghat);

/// Residual estimate sqrt(max(0, Re v^*[(1+|l|^2)G - conj(l) A - l A^*] v))
/// with v normalized to v^* G v = 1. In the large data limit this equals
/// ||(K - lambda) Psi v|| and bounds the distance to the spectrum from below.
double residual(const dictionary::GramPair& gp, Complex lambda, const CVec& v);

/// Residuals of all eigenpairs of a model against the given Gram pair.
RVec eig_residuals(const decomp::KoopmanModel& model, const dictionary::GramPair& gp);

/// Eigenpairs whose residual does not exceed eps, in phase order.
struct FilteredSpectrum {
  std::vector<Index> indices;
  CVec values;
  CMat vectors;
  RVec residuals;
};

FilteredSpectrum filter_spectrum(const decomp::KoopmanModel& model, const dictionary::GramPair& gp,
                                 double eps);

/// CSV "theta,mass" per atom.
void write_measure_csv(const SpectralMeasure& mu, const std::string& path);
SpectralMeasure read_measure_csv(const std::string& path);

/// CSV "theta,F" of the cdf on a uniform grid over (-pi, pi].
void write_cdf_csv(const SpectralMeasure& mu, Index grid_points, const std::string& path);

}  // namespace koopman::spectral
