#include "koopman/decomp.hpp"

#include "koopman/errors.hpp"
#include "koopman/sampling.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace koopman;
using namespace koopman::decomp;
using dictionary::GramPair;

namespace {

/// Weighted EDMD objective sum_m w_m ||psi_y(m,:) - psi_x(m,:) B||^2.
double edmd_objective(const CMat& psi_x, const CMat& psi_y, const RVec& w, const CMat& b) {
  double total = 0.0;
  CMat r = psi_y - psi_x * b;
  for (Index m = 0; m < r.rows(); ++m) total += w(m) * r.row(m).squaredNorm();
  return total;
}

GramPair shift_gram(Index n, Index m) {
  RMat x(m, 1), y(m, 1);
  for (Index i = 0; i < m; ++i) {
    x(i, 0) = double(i + 1);
    y(i, 0) = sampling::shift_map(x(i, 0));
  }
  dictionary::Dictionary dict = dictionary::indicator_dictionary(n);
  return dictionary::gram(dict.evaluate(x), dict.evaluate(y), RVec::Ones(m));
}

struct RotationSetup {
  CMat psi_x, psi_y;
  RVec w;
  GramPair gp;
  double alpha;
  int kmax;
};

RotationSetup rotation_setup(double alpha, int kmax, Index m) {
  RotationSetup r;
  r.alpha = alpha;
  r.kmax = kmax;
  RMat x(m, 1), y(m, 1);
  for (Index i = 0; i < m; ++i) {
    x(i, 0) = -pi + 2.0 * pi * double(i) / double(m);
    y(i, 0) = sampling::rotation_map(x(i, 0), alpha);
  }
  dictionary::Dictionary dict = dictionary::Dictionary::fourier(kmax);
  r.psi_x = dict.evaluate(x);
  r.psi_y = dict.evaluate(y);
  r.w = RVec::Constant(m, 2.0 * pi / double(m));
  r.gp = dictionary::gram(r.psi_x, r.psi_y, r.w);
  return r;
}

}  // namespace

TEST_CASE("edmd on identity dynamics gives K = I") {
  CMat psi = testing::random_cmat(20, 4, 1);
  GramPair gp = dictionary::gram(psi, psi, RVec::Constant(20, 0.05));
  KoopmanModel m = edmd(gp);
  CHECK((m.K - CMat::Identity(4, 4)).norm() < 1e-12);
  CHECK(m.eig_reliable);
}

TEST_CASE("edmd on the shift example is the nilpotent lower shift, flagged defective") {
  const Index n = 6;
  KoopmanModel m = edmd(shift_gram(n, 10));
  CMat expected = CMat::Zero(n, n);
  for (Index i = 1; i < n; ++i) expected(i, i - 1) = 1.0;
  CHECK((m.K - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_FALSE(m.eig_reliable);
}

TEST_CASE("edmd minimizes the weighted least squares objective") {
  const Index mrows = 24, n = 5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CMat psi_x = testing::random_cmat(mrows, n, 60 + seed);
    CMat psi_y = testing::random_cmat(mrows, n, 80 + seed);
    RVec w = RVec::Constant(mrows, 1.0 / double(mrows));
    KoopmanModel m = edmd(dictionary::gram(psi_x, psi_y, w));
    const double base = edmd_objective(psi_x, psi_y, w, m.K);
    for (std::uint64_t probe = 0; probe < 20; ++probe) {
      CMat delta = 1e-3 * testing::random_cmat(n, n, 1000 * seed + probe);
      CHECK(base <= edmd_objective(psi_x, psi_y, w, m.K + delta) + 1e-12);
    }
  }
}

TEST_CASE("edmd rejects a singular Gram matrix") {
  GramPair gp;
  gp.G = CMat::Zero(2, 2);
  gp.G(0, 0) = 1.0;  // rank deficient
  gp.A = CMat::Identity(2, 2);
  CHECK_THROWS_AS(edmd(gp), IllConditionedGram);
}

TEST_CASE("dmd scales and identity") {
  RMat x = RMat::Random(30, 3);
  RVec w = RVec::Constant(30, 1.0 / 30.0);
  KoopmanModel doubled = dmd(x, 2.0 * x, w);
  CHECK((doubled.K - 2.0 * CMat::Identity(3, 3)).norm() < 1e-10);
  KoopmanModel id = dmd(x, x, w);
  CHECK((id.K - CMat::Identity(3, 3)).norm() < 1e-10);
}

TEST_CASE("dmd equals the transposed pseudoinverse DMD matrix") {
  RMat x = RMat::Random(40, 3);
  RMat y = RMat::Random(40, 3);
  RVec w = RVec::LinSpaced(40, 0.01, 0.05);
  KoopmanModel m = dmd(x, y, w);

  // (sqrt(W) Psi_X)^+ sqrt(W) Psi_Y through an explicit SVD pseudoinverse.
  RMat sw = w.cwiseSqrt().asDiagonal() * RMat::Identity(40, 40);
  RMat bx = sw * x, by = sw * y;
  Eigen::BDCSVD<RMat> svd(bx, Eigen::ComputeThinU | Eigen::ComputeThinV);
  RMat pinv = svd.matrixV() * svd.singularValues().cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  RMat expected = pinv * by;
  CHECK((m.K.real() - expected).norm() < 1e-10);
  CHECK(m.K.imag().norm() < 1e-12);
  // the usual DMD matrix Y_w X_w^+ is the transpose of the fitted K
  RMat usual = (by.transpose()) * (pinv.transpose());
  CHECK((usual - m.K.real().transpose()).norm() < 1e-10);
}

TEST_CASE("procrustes of identical inputs has zero objective") {
  CMat p = testing::random_cmat(9, 5, 5);
  Procrustes r = procrustes(p, p);
  CHECK((p * r.C - p).norm() < 1e-10 * p.norm());
  CHECK((r.C.adjoint() * r.C - CMat::Identity(5, 5)).norm() < 1e-12);
}

TEST_CASE("procrustes with P = I returns the unitary polar factor") {
  CMat q = testing::random_cmat(6, 6, 15);
  Procrustes r = procrustes(CMat::Identity(6, 6), q);
  numkit::Svd s = numkit::svd(q);
  CMat polar = s.U * s.Vt;
  CHECK((r.C - polar).norm() < 1e-10);
}

TEST_CASE("procrustes optimality against random unitary probes") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CMat p = testing::random_cmat(10, 6, 500 + seed);
    CMat q = testing::random_cmat(10, 6, 600 + seed);
    Procrustes r = procrustes(p, q);
    const double objective = (p * r.C - q).squaredNorm();
    const double identity = p.squaredNorm() + q.squaredNorm() - 2.0 * r.sigma.sum();
    CHECK(std::abs(objective - identity) <= 1e-10 * std::max(1.0, objective));
    for (std::uint64_t probe = 0; probe < 100; ++probe) {
      CMat rot = testing::random_unitary(6, 7000 * seed + probe);
      CHECK(objective <= (p * (r.C * rot) - q).squaredNorm() + 1e-9);
    }
  }
}

TEST_CASE("mpedmd on identity dynamics") {
  CMat psi = testing::random_cmat(20, 4, 2);
  GramPair gp = dictionary::gram(psi, psi, RVec::Constant(20, 0.05));
  KoopmanModel m = mpedmd(gp);
  CHECK((m.K - CMat::Identity(4, 4)).norm() < 1e-10);
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(m.eigvals(j) - 1.0) < 1e-10);
}

TEST_CASE("mpedmd on the shift example is the cyclic shift with the corner entry") {
  const Index n = 6;
  KoopmanModel m = mpedmd(shift_gram(n, 10));
  CMat expected = CMat::Zero(n, n);
  for (Index i = 1; i < n; ++i) expected(i, i - 1) = 1.0;
  expected(0, n - 1) = 1.0;
  CHECK((m.K - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mpedmd diagonalizes the rotation on the Fourier dictionary") {
  RotationSetup r = rotation_setup(1.0, 3, 64);
  KoopmanModel m = mpedmd(r.gp);
  // eigenvalues are e^{i k alpha}, k = -3..3 (multiset match, and the fitted
  // K maps each dictionary element to its analytic image)
  std::vector<bool> used(7, false);
  for (int k = -3; k <= 3; ++k) {
    double best = 1e9;
    Index bj = 0;
    for (Index j = 0; j < 7; ++j) {
      if (used[std::size_t(j)]) continue;
      const double d = std::abs(m.eigvals(j) - std::polar(1.0, double(k)));
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    used[std::size_t(bj)] = true;
    CHECK(best <= 1e-8);
  }
  // invariant-subspace exactness: K e_k ~= e^{i k alpha} e_k
  for (int k = -3; k <= 3; ++k) {
    CVec ek = CVec::Zero(7);
    ek(k + 3) = 1.0;
    CHECK((m.K * ek - std::polar(1.0, double(k) * r.alpha) * ek).norm() <= 1e-8);
  }
}

TEST_CASE("mpedmd measure-preservation invariants on random Gram pairs") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const Index n = 3 + static_cast<Index>(seed % 10) * 3;
    GramPair gp = testing::random_gram_pair(n, 900 + seed);
    KoopmanModel m = mpedmd(gp);
    CHECK((m.K.adjoint() * gp.G * m.K - gp.G).norm() <= 1e-10 * gp.G.norm());
    double dev = 0.0;
    for (Index j = 0; j < n; ++j) dev = std::max(dev, std::abs(std::abs(m.eigvals(j)) - 1.0));
    CHECK(dev <= 1e-12);
    CHECK((m.vhat.adjoint() * m.vhat - CMat::Identity(n, n)).norm() <= 1e-9 * std::sqrt(double(n)));
    CHECK(numkit::cond2(m.eigvecs) <= numkit::cond2(m.Ghalf) * (1.0 + 1e-8));
    CHECK((m.K * m.eigvecs - m.eigvecs * m.eigvals.asDiagonal()).norm() <=
          1e-8 * m.K.norm() * std::max(1.0, m.eigvecs.norm()));
  }
}

TEST_CASE("mpedmd recovers a G-isometric operator and coincides with edmd there") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto [gp, k_true] = testing::isometric_gram_pair(8, 40 + seed);
    KoopmanModel mp = mpedmd(gp);
    KoopmanModel ed = edmd(gp);
    CHECK((mp.K - k_true).norm() <= 1e-9 * k_true.norm());
    CHECK((ed.K - mp.K).norm() <= 1e-9 * mp.K.norm());
  }
}

TEST_CASE("pidmd on identity data with orthogonal columns") {
  RMat x(4, 2);
  x << 1, 0, 0, 1, -1, 0, 0, -1;
  KoopmanModel m = pidmd_unitary(x, x, RVec::Constant(4, 0.25));
  CHECK((m.K - CMat::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("pidmd recovers a planar rotation (transposed convention)") {
  const Index m = 8;
  const double alpha = 2.0 * pi / double(m);
  RMat x(m, 2), y(m, 2);
  for (Index i = 0; i < m; ++i) {
    const double t = alpha * double(i) + 0.3;
    x.row(i) << std::cos(t), std::sin(t);
    y.row(i) << std::cos(t + alpha), std::sin(t + alpha);
  }
  KoopmanModel model = pidmd_unitary(x, y, RVec::Constant(m, 1.0 / double(m)));
  RMat rot(2, 2);
  rot << std::cos(alpha), -std::sin(alpha), std::sin(alpha), std::cos(alpha);
  // Table-1 convention: the fitted K is the transpose of the state-space map.
  CHECK((model.K.real() - rot.transpose()).norm() < 1e-12);
  CHECK(std::abs(model.eigvals(0) - std::polar(1.0, -alpha)) < 1e-12);
  CHECK(std::abs(model.eigvals(1) - std::polar(1.0, alpha)) < 1e-12);
}

TEST_CASE("pidmd equals mpedmd when XX* and W are multiples of the identity") {
  const Index m = 12;
  const double alpha = 2.0 * pi / double(m);
  RMat x(m, 2), y(m, 2);
  for (Index i = 0; i < m; ++i) {
    const double t = alpha * double(i);
    x.row(i) << std::cos(t), std::sin(t);
    y.row(i) << std::cos(t + alpha), std::sin(t + alpha);
  }
  RVec w = RVec::Constant(m, 1.0 / double(m));
  KoopmanModel pi_model = pidmd_unitary(x, y, w);
  KoopmanModel mp_model = mpedmd(dictionary::gram(x.cast<Complex>(), y.cast<Complex>(), w));
  CHECK((pi_model.K - mp_model.K).norm() < 1e-10);
}

TEST_CASE("model JSON round trip is exact") {
  GramPair gp = testing::random_gram_pair(5, 77);
  KoopmanModel m = mpedmd(gp);
  m.dict.type = "linear";
  m.meta.system = "test";
  m.meta.dt = 0.25;

  nlohmann::json j = nlohmann::json::parse(to_json(m).dump());
  KoopmanModel r = model_from_json(j);
  CHECK(r.method == Method::mpedmd);
  CHECK((r.K - m.K).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.eigvals - m.eigvals).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.eigvecs - m.eigvecs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.G - m.G).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.vhat - m.vhat).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.meta.system == "test");

  const std::string path = (std::filesystem::temp_directory_path() / "model_rt.json").string();
  write_model(m, path);
  KoopmanModel f = read_model(path);
  CHECK((f.K - m.K).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}
