#include "koopman/spectral.hpp"

#include "koopman/errors.hpp"
#include "koopman/sampling.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <cstdio>
#include <filesystem>
#include <random>

using namespace koopman;
using namespace koopman::spectral;
using decomp::KoopmanModel;
using dictionary::GramPair;

namespace {

SpectralMeasure make_measure(std::initializer_list<double> phases, std::initializer_list<double> masses) {
  SpectralMeasure mu;
  mu.phases = RVec(static_cast<Index>(phases.size()));
  mu.masses = RVec(static_cast<Index>(masses.size()));
  Index i = 0;
  for (double p : phases) mu.phases(i++) = p;
  i = 0;
  for (double m : masses) mu.masses(i++) = m;
  return mu;
}

SpectralMeasure random_measure(std::uint64_t seed, Index atoms) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(-pi + 1e-9, pi);
  std::uniform_real_distribution<double> mass(0.0, 1.0);
  std::vector<double> ph(static_cast<std::size_t>(atoms));
  for (auto& p : ph) p = phase(rng);
  std::sort(ph.begin(), ph.end());
  SpectralMeasure mu;
  mu.phases = Eigen::Map<const RVec>(ph.data(), atoms);
  mu.masses.resize(atoms);
  for (Index j = 0; j < atoms; ++j) mu.masses(j) = mass(rng);
  mu.masses /= mu.masses.sum();
  return mu;
}

struct RotationModel {
  KoopmanModel model;
  GramPair gp;
  int kmax;
  double alpha;
};

RotationModel rotation_model(double alpha, int kmax, Index m) {
  RotationModel r;
  r.alpha = alpha;
  r.kmax = kmax;
  RMat x(m, 1), y(m, 1);
  for (Index i = 0; i < m; ++i) {
    x(i, 0) = -pi + 2.0 * pi * double(i) / double(m);
    y(i, 0) = sampling::rotation_map(x(i, 0), alpha);
  }
  dictionary::Dictionary dict = dictionary::Dictionary::fourier(kmax);
  r.gp = dictionary::gram(dict.evaluate(x), dict.evaluate(y), RVec::Constant(m, 2.0 * pi / double(m)));
  r.model = decomp::mpedmd(r.gp);
  return r;
}

}  // namespace

TEST_CASE("scalar_measure of an eigenvector is a unit atom") {
  GramPair gp = testing::random_gram_pair(6, 11);
  KoopmanModel m = decomp::mpedmd(gp);
  const Index j = 3;
  SpectralMeasure mu = scalar_measure(m, m.eigvecs.col(j));
  CHECK(std::abs(mu.total_mass() - 1.0) <= 1e-10);
  CHECK(mu.masses(j) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(mu.phases(j) == doctest::Approx(std::arg(m.eigvals(j))));
}

TEST_CASE("scalar_measure of the rotation eigenfunction is an atom at alpha") {
  RotationModel r = rotation_model(1.0, 5, 256);
  CVec ghat = CVec::Zero(11);
  ghat(6) = 1.0;  // k = 1 element, g = e^{i theta}
  SpectralMeasure mu = scalar_measure(r.model, ghat);
  Index top = 0;
  mu.masses.maxCoeff(&top);
  CHECK(std::abs(mu.phases(top) - 1.0) <= 1e-8);
  CHECK(std::abs(mu.masses(top) - 1.0) <= 1e-8);
}

TEST_CASE("scalar_measure of identity dynamics concentrates at phase zero") {
  CMat psi = testing::random_cmat(24, 5, 3);
  GramPair gp = dictionary::gram(psi, psi, RVec::Constant(24, 1.0 / 24.0));
  KoopmanModel m = decomp::mpedmd(gp);
  CVec ghat = testing::random_cvec(5, 4);
  SpectralMeasure mu = scalar_measure(m, ghat);
  // all eigenvalues are 1, so the whole mass sits at phase 0
  RVec grid(2);
  grid << -1e-6, 1e-6;
  RVec f = cdf(mu, grid);
  CHECK(f(0) == doctest::Approx(0.0));
  CHECK(f(1) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("scalar_measure is a probability measure and rejects zero observables") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    GramPair gp = testing::random_gram_pair(4 + Index(seed % 5) * 4, 70 + seed);
    KoopmanModel m = decomp::mpedmd(gp);
    SpectralMeasure mu = scalar_measure(m, testing::random_cvec(m.size(), 200 + seed));
    CHECK(std::abs(mu.total_mass() - 1.0) <= 1e-10);
    CHECK((mu.masses.array() >= 0.0).all());
    for (Index j = 1; j < mu.phases.size(); ++j) CHECK(mu.phases(j) >= mu.phases(j - 1));
  }
  GramPair gp = testing::random_gram_pair(4, 1);
  KoopmanModel m = decomp::mpedmd(gp);
  CHECK_THROWS_AS(scalar_measure(m, CVec::Zero(4)), InvalidInput);
}

TEST_CASE("cdf basics") {
  SpectralMeasure single = make_measure({0.0}, {1.0});
  RVec grid(3);
  grid << -0.1, 0.0, pi;
  RVec f = cdf(single, grid);
  CHECK(f(0) == 0.0);
  CHECK(f(1) == 1.0);
  CHECK(f(2) == 1.0);

  SpectralMeasure two = make_measure({-pi / 2.0, pi / 2.0}, {0.5, 0.5});
  RVec mid(1);
  mid << 0.0;
  CHECK(cdf(two, mid)(0) == 0.5);
}

TEST_CASE("w1 of identical measures vanishes and transports atoms by arc length") {
  SpectralMeasure mu = random_measure(5, 7);
  CHECK(w1(mu, mu) == 0.0);
  SpectralMeasure a = make_measure({0.0}, {1.0});
  SpectralMeasure b = make_measure({0.3}, {1.0});
  CHECK(w1(a, b) == doctest::Approx(0.3));
  CHECK(w1(b, a) == doctest::Approx(0.3));
}

TEST_CASE("w1 satisfies the triangle inequality on random atom measures") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SpectralMeasure a = random_measure(3 * seed + 1, 4);
    SpectralMeasure b = random_measure(3 * seed + 2, 6);
    SpectralMeasure c = random_measure(3 * seed + 3, 3);
    CHECK(w1(a, c) <= w1(a, b) + w1(b, c) + 1e-12);
  }
}

TEST_CASE("merge_atoms combines close phases") {
  SpectralMeasure mu = make_measure({0.1, 0.1 + 1e-14, 0.5}, {0.2, 0.3, 0.5});
  SpectralMeasure merged = merge_atoms(mu);
  CHECK(merged.phases.size() == 2);
  CHECK(merged.masses(0) == doctest::Approx(0.5));
}

TEST_CASE("moments match matrix powers of the fitted K") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GramPair gp = testing::random_gram_pair(7, 300 + seed);
    KoopmanModel m = decomp::mpedmd(gp);
    CVec ghat = testing::random_cvec(7, 400 + seed);
    const double norm2 = (ghat.adjoint() * gp.G * ghat).value().real();
    ghat /= std::sqrt(norm2);

    CHECK(std::abs(moment(m, ghat, 0) - 1.0) <= 1e-12);

    CVec kg = ghat;
    for (long l = 1; l <= 5; ++l) {
      kg = m.K * kg;
      const Complex expected = (ghat.adjoint() * gp.G * kg).value();
      CHECK(std::abs(moment(m, ghat, l) - expected) <= 1e-10);
      CHECK(std::abs(moment(m, ghat, -l) - std::conj(moment(m, ghat, l))) <= 1e-12);
    }
    // negative powers against explicit solves with K
    Eigen::PartialPivLU<CMat> lu(m.K);
    CVec kinv = ghat;
    for (long l = 1; l <= 5; ++l) {
      kinv = lu.solve(kinv);
      const Complex expected = (ghat.adjoint() * gp.G * kinv).value();
      CHECK(std::abs(moment(m, ghat, -l) - expected) <= 1e-9);
    }
  }
}

TEST_CASE("apply_test_function reproduces the identity and monomials") {
  GramPair gp = testing::random_gram_pair(6, 21);
  KoopmanModel m = decomp::mpedmd(gp);
  CVec ghat = testing::random_cvec(6, 22);

  TestFunction one = TestFunction::from_function("one", [](Complex) { return Complex(1.0, 0.0); });
  CHECK((apply_test_function(m, one, ghat) - ghat).norm() <= 1e-12 * ghat.norm());

  TestFunction lam = TestFunction::from_function("lambda", [](Complex z) { return z; });
  CHECK((apply_test_function(m, lam, ghat) - m.K * ghat).norm() <= 1e-10 * ghat.norm());

  TestFunction lam2 = TestFunction::from_function("lambda^2", [](Complex z) { return z * z; });
  CHECK((apply_test_function(m, lam2, ghat) - m.K * (m.K * ghat)).norm() <= 1e-10 * ghat.norm());
}

TEST_CASE("functional calculus is multiplicative on Laurent polynomials") {
  GramPair gp = testing::random_gram_pair(8, 31);
  KoopmanModel m = decomp::mpedmd(gp);
  CVec ghat = testing::random_cvec(8, 32);

  CVec c1(3);
  c1 << Complex(0.5, 0.0), Complex(0.0, 1.0), Complex(-0.25, 0.0);
  TestFunction phi1 = TestFunction::laurent(c1, -1);  // 0.5/z + i - z/4
  CVec c2(2);
  c2 << Complex(1.0, 0.0), Complex(2.0, -1.0);
  TestFunction phi2 = TestFunction::laurent(c2, 1);  // z + (2 - i) z^2
  TestFunction product = TestFunction::from_function(
      "phi1*phi2", [&](Complex z) { return phi1(z) * phi2(z); });

  CVec composed = apply_test_function(m, phi1, apply_test_function(m, phi2, ghat));
  CVec direct = apply_test_function(m, product, ghat);
  CHECK((composed - direct).norm() <= 1e-10 * std::max(1.0, direct.norm()));
}

TEST_CASE("laurent_coefficients recover truncated series") {
  auto phi = [](Complex z) { return z * z + 0.5 / z; };
  CVec c = laurent_coefficients(phi, 4);
  for (long l = -4; l <= 4; ++l) {
    const Complex expected = l == 2 ? Complex(1.0, 0.0) : l == -1 ? Complex(0.5, 0.0) : Complex(0.0, 0.0);
    CHECK(std::abs(c(l + 4) - expected) <= 1e-12);
  }
  TestFunction t = TestFunction::laurent(c, -4);
  CHECK(std::abs(t(std::polar(1.0, 0.7)) - phi(std::polar(1.0, 0.7))) <= 1e-12);
}

TEST_CASE("residual of exact rotation eigenpairs is tiny, and 1 at lambda = 0") {
  RotationModel r = rotation_model(1.0, 3, 128);
  RVec res = eig_residuals(r.model, r.gp);
  CHECK(res.maxCoeff() <= 1e-7);

  CVec v = testing::random_cvec(7, 9);
  CHECK(residual(r.gp, Complex(0.0, 0.0), v) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK_THROWS_AS(residual(r.gp, Complex(1.0, 0.0), CVec::Zero(7)), InvalidInput);
}

TEST_CASE("residual is invariant under a global phase of v") {
  GramPair gp = testing::random_gram_pair(5, 51);
  CVec v = testing::random_cvec(5, 52);
  const Complex lambda = std::polar(0.9, 0.3);
  const double base = residual(gp, lambda, v);
  for (double beta : {0.5, 1.7, -2.2}) {
    CVec rotated = std::polar(1.0, beta) * v;
    CHECK(residual(gp, lambda, rotated) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("residual bounds the distance to the spectrum on isometric data") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto [gp, k_true] = testing::isometric_gram_pair(7, 500 + seed);
    KoopmanModel m = decomp::mpedmd(gp);
    std::mt19937_64 rng(600 + seed);
    std::uniform_real_distribution<double> uni(-1.2, 1.2);
    for (int probe = 0; probe < 20; ++probe) {
      const Complex lambda(uni(rng), uni(rng));
      CVec v = testing::random_cvec(7, 10000 * seed + static_cast<std::uint64_t>(probe));
      double dist = 1e300;
      for (Index j = 0; j < m.size(); ++j) dist = std::min(dist, std::abs(lambda - m.eigvals(j)));
      CHECK(residual(gp, lambda, v) >= dist - 1e-10);
    }
  }
}

TEST_CASE("filter_spectrum keeps everything at eps = inf and flags constructed pollution") {
  // Rotation dictionary: Fourier modes |k| <= 3 plus one observable whose
  // Koopman image leaves the span, h = sum_{k=4}^{40} cos(k theta)/k. The
  // trapezoid rule with 256 nodes integrates all products exactly, so the
  // genuine eigenpairs have residuals at roundoff while the polluted one
  // carries an O(1) residual.
  const double alpha = 1.0;
  const Index m = 256;
  const int kmax = 3;
  std::vector<dictionary::Observable> fns;
  for (int k = -kmax; k <= kmax; ++k)
    fns.push_back({"fourier", [k](const RVec& x) { return std::polar(1.0, double(k) * x(0)); }});
  fns.push_back({"tail", [](const RVec& x) {
                   double v = 0.0;
                   for (int k = 4; k <= 40; ++k) v += std::cos(double(k) * x(0)) / double(k);
                   return Complex(v, 0.0);
                 }});
  dictionary::Dictionary dict = dictionary::Dictionary::explicit_functions(std::move(fns));

  RMat x(m, 1), y(m, 1);
  for (Index i = 0; i < m; ++i) {
    x(i, 0) = -pi + 2.0 * pi * double(i) / double(m);
    y(i, 0) = sampling::rotation_map(x(i, 0), alpha);
  }
  GramPair gp = dictionary::gram(dict.evaluate(x), dict.evaluate(y), RVec::Constant(m, 2.0 * pi / double(m)));
  KoopmanModel model = decomp::mpedmd(gp);
  RVec res = eig_residuals(model, gp);

  FilteredSpectrum all = filter_spectrum(model, gp, std::numeric_limits<double>::infinity());
  CHECK(all.values.size() == model.size());

  // exactly one polluted pair, with residual > 10x every genuine one
  Index worst = 0;
  res.maxCoeff(&worst);
  for (Index j = 0; j < res.size(); ++j)
    if (j != worst) CHECK(res(worst) > 10.0 * res(j));

  FilteredSpectrum clean = filter_spectrum(model, gp, res(worst) / 2.0);
  CHECK(clean.values.size() == model.size() - 1);
  for (Index idx : clean.indices) CHECK(idx != worst);

  // a strictly zero threshold on noisy data keeps (typically) nothing
  CMat px = sampling::perturb(dict.evaluate(x), 0.05, 99);
  CMat py = sampling::perturb(dict.evaluate(y), 0.05, 100);
  GramPair noisy = dictionary::gram(px, py, RVec::Constant(m, 2.0 * pi / double(m)));
  KoopmanModel nm = decomp::mpedmd(noisy);
  FilteredSpectrum none = filter_spectrum(nm, noisy, 0.0);
  CHECK(none.values.size() == 0);
}

TEST_CASE("measure CSV round trip") {
  SpectralMeasure mu = random_measure(17, 5);
  const std::string path = (std::filesystem::temp_directory_path() / "measure_rt.csv").string();
  write_measure_csv(mu, path);
  SpectralMeasure r = read_measure_csv(path);
  CHECK((r.phases - mu.phases).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.masses - mu.masses).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}
