#include "koopman/spectral.hpp"

#include "koopman/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>
#include <vector>

namespace koopman::spectral {

namespace {

void require_mpedmd(const decomp::KoopmanModel& model, const char* op) {
  if (model.method != decomp::Method::mpedmd)
    throw InvalidInput(std::string(op) + ": needs an mpedmd model (measure-preserving spectrum)");
}

/// |v_j^* G ghat|^2 for all j, together with the normalized coefficients.
std::pair<RVec, CVec> measure_masses(const decomp::KoopmanModel& model, const CVec& ghat) {
  if (ghat.size() != model.size()) throw InvalidInput("spectral: coefficient vector has wrong length");
  const double norm2 = (ghat.adjoint() * model.G * ghat).value().real();
  if (!(norm2 > 0.0) || !std::isfinite(norm2))
    throw InvalidInput("spectral: observable has zero norm under G");
  CVec gn = ghat / std::sqrt(norm2);
  CVec b = model.eigvecs.adjoint() * (model.G * gn);
  return {b.cwiseAbs2(), std::move(gn)};
}

}  // namespace

SpectralMeasure merge_atoms(const SpectralMeasure& mu, double tol) {
  const Index n = mu.phases.size();
  if (n == 0) return mu;
  std::vector<double> ph, ms;
  ph.reserve(static_cast<std::size_t>(n));
  ms.reserve(static_cast<std::size_t>(n));
  ph.push_back(mu.phases(0));
  ms.push_back(mu.masses(0));
  for (Index j = 1; j < n; ++j) {
    if (mu.phases(j) - ph.back() <= tol) {
      ms.back() += mu.masses(j);
    } else {
      ph.push_back(mu.phases(j));
      ms.push_back(mu.masses(j));
    }
  }
  SpectralMeasure out;
  out.phases = Eigen::Map<const RVec>(ph.data(), static_cast<Index>(ph.size()));
  out.masses = Eigen::Map<const RVec>(ms.data(), static_cast<Index>(ms.size()));
  return out;
}

SpectralMeasure scalar_measure(const decomp::KoopmanModel& model, const CVec& ghat) {
  require_mpedmd(model, "scalar_measure");
  SpectralMeasure mu;
  mu.phases.resize(model.size());
  for (Index j = 0; j < model.size(); ++j) mu.phases(j) = std::arg(model.eigvals(j));
  mu.masses = measure_masses(model, ghat).first.cwiseMax(0.0);
  return mu;
}

RVec cdf(const SpectralMeasure& mu, const Eigen::Ref<const RVec>& grid) {
  RVec out(grid.size());
  for (Index i = 0; i < grid.size(); ++i) {
    double f = 0.0;
    for (Index j = 0; j < mu.phases.size() && mu.phases(j) <= grid(i); ++j) f += mu.masses(j);
    out(i) = f;
  }
  return out;
}

double w1(const SpectralMeasure& mu_in, const SpectralMeasure& nu_in) {
  SpectralMeasure mu = merge_atoms(mu_in);
  SpectralMeasure nu = merge_atoms(nu_in);

  // Exact integral of |F_mu - F_nu| over (-pi, pi]: both cdfs are step
  // functions, so walk the merged breakpoints.
  struct Event {
    double theta;
    double dmu;
    double dnu;
  };
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(mu.phases.size() + nu.phases.size()));
  for (Index j = 0; j < mu.phases.size(); ++j) events.push_back({mu.phases(j), mu.masses(j), 0.0});
  for (Index j = 0; j < nu.phases.size(); ++j) events.push_back({nu.phases(j), 0.0, nu.masses(j)});
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.theta < b.theta; });

  double total = 0.0, fmu = 0.0, fnu = 0.0, prev = -pi;
  for (const Event& e : events) {
    total += std::abs(fmu - fnu) * (e.theta - prev);
    prev = e.theta;
    fmu += e.dmu;
    fnu += e.dnu;
  }
  total += std::abs(fmu - fnu) * (pi - prev);
  return total;
}

Complex moment(const decomp::KoopmanModel& model, const CVec& ghat, long l) {
  require_mpedmd(model, "moment");
  if (ghat.size() != model.size()) throw InvalidInput("moment: coefficient vector has wrong length");
  CVec b = model.eigvecs.adjoint() * (model.G * ghat);
  Complex out(0.0, 0.0);
  for (Index j = 0; j < model.size(); ++j) {
    const double theta = std::arg(model.eigvals(j));
    out += std::polar(1.0, static_cast<double>(l) * theta) * std::norm(b(j));
  }
  return out;
}

TestFunction TestFunction::from_function(std::string name, std::function<Complex(Complex)> f) {
  TestFunction t;
  t.name_ = std::move(name);
  t.fn_ = std::move(f);
  return t;
}

TestFunction TestFunction::laurent(CVec coeffs, long lmin) {
  if (!coeffs.allFinite()) throw InvalidInput("TestFunction::laurent: non-finite coefficients");
  TestFunction t;
  t.name_ = "laurent";
  t.coeffs_ = std::move(coeffs);
  t.lmin_ = lmin;
  return t;
}

Complex TestFunction::operator()(Complex lambda) const {
  if (fn_) return fn_(lambda);
  const double theta = std::arg(lambda);
  Complex out(0.0, 0.0);
  for (Index k = 0; k < coeffs_.size(); ++k)
    out += coeffs_(k) * std::polar(1.0, static_cast<double>(lmin_ + k) * theta);
  return out;
}

CVec laurent_coefficients(const std::function<Complex(Complex)>& phi, long L, Index quad_points) {
  if (L < 0) throw InvalidInput("laurent_coefficients: L must be nonnegative");
  const Index m = quad_points > 0 ? quad_points : std::max<Index>(1024, 8 * static_cast<Index>(L) + 1);
  CVec out = CVec::Zero(2 * L + 1);
  for (Index q = 0; q < m; ++q) {
    const double theta = 2.0 * pi * static_cast<double>(q) / static_cast<double>(m);
    const Complex value = phi(std::polar(1.0, theta));
    for (long l = -L; l <= L; ++l)
      out(l + L) += value * std::polar(1.0, -static_cast<double>(l) * theta);
  }
  out /= static_cast<double>(m);
  return out;
}

CVec apply_test_function(const decomp::KoopmanModel& model, const TestFunction& phi, const CVec& ghat) {
  require_mpedmd(model, "apply_test_function");
  if (ghat.size() != model.size())
    throw InvalidInput("apply_test_function: coefficient vector has wrong length");
  CVec b = model.vhat.adjoint() * (model.Ghalf * ghat);
  for (Index j = 0; j < b.size(); ++j) b(j) *= phi(model.eigvals(j));
  return model.Gneghalf * (model.vhat * b);
}

double residual(const dictionary::GramPair& gp, Complex lambda, const CVec& v) {
  if (v.size() != gp.G.rows()) throw InvalidInput("residual: coefficient vector has wrong length");
  const double norm2 = (v.adjoint() * gp.G * v).value().real();
  if (!(norm2 > 0.0) || !std::isfinite(norm2)) throw InvalidInput("residual: zero vector");
  CVec vn = v / std::sqrt(norm2);
  const Complex quad = (vn.adjoint() * ((1.0 + std::norm(lambda)) * (gp.G * vn) -
                                        std::conj(lambda) * (gp.A * vn) - lambda * (gp.A.adjoint() * vn)))
                           .value();
  return std::sqrt(std::max(0.0, quad.real()));
}

RVec eig_residuals(const decomp::KoopmanModel& model, const dictionary::GramPair& gp) {
  RVec out(model.size());
  for (Index j = 0; j < model.size(); ++j)
    out(j) = residual(gp, model.eigvals(j), model.eigvecs.col(j));
  return out;
}

FilteredSpectrum filter_spectrum(const decomp::KoopmanModel& model, const dictionary::GramPair& gp,
                                 double eps) {
  if (eps < 0.0) throw InvalidInput("filter_spectrum: eps must be nonnegative");
  RVec res = eig_residuals(model, gp);
  FilteredSpectrum out;
  for (Index j = 0; j < model.size(); ++j)
    if (res(j) <= eps) out.indices.push_back(j);
  const Index k = static_cast<Index>(out.indices.size());
  out.values.resize(k);
  out.vectors.resize(model.eigvecs.rows(), k);
  out.residuals.resize(k);
  for (Index i = 0; i < k; ++i) {
    out.values(i) = model.eigvals(out.indices[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = model.eigvecs.col(out.indices[static_cast<std::size_t>(i)]);
    out.residuals(i) = res(out.indices[static_cast<std::size_t>(i)]);
  }
  return out;
}

void write_measure_csv(const SpectralMeasure& mu, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("measure: cannot write " + path);
  out << "theta,mass\n";
  char buf[96];
  for (Index j = 0; j < mu.phases.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", mu.phases(j), mu.masses(j));
    out << buf;
  }
}

SpectralMeasure read_measure_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("measure: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "theta,mass")
    throw InvalidInput("measure: malformed header in " + path);
  std::vector<double> ph, ms;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double t, m;
    if (std::sscanf(line.c_str(), "%lg,%lg", &t, &m) != 2)
      throw InvalidInput("measure: malformed row in " + path + ": '" + line + "'");
    ph.push_back(t);
    ms.push_back(m);
  }
  SpectralMeasure mu;
  mu.phases = Eigen::Map<const RVec>(ph.data(), static_cast<Index>(ph.size()));
  mu.masses = Eigen::Map<const RVec>(ms.data(), static_cast<Index>(ms.size()));
  return mu;
}

void write_cdf_csv(const SpectralMeasure& mu, Index grid_points, const std::string& path) {
  if (grid_points < 2) throw InvalidInput("cdf: need at least 2 grid points");
  RVec grid(grid_points);
  for (Index i = 0; i < grid_points; ++i)
    grid(i) = -pi + 2.0 * pi * static_cast<double>(i + 1) / static_cast<double>(grid_points);
  RVec f = cdf(mu, grid);
  std::ofstream out(path);
  if (!out) throw InvalidInput("cdf: cannot write " + path);
  out << "theta,F\n";
  char buf[96];
  for (Index i = 0; i < grid_points; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", grid(i), f(i));
    out << buf;
  }
}

}  // namespace koopman::spectral
