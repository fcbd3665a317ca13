#include "koopman/sampling.hpp"

#include "koopman/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace koopman::sampling {

namespace {

Index default_substeps(double dt, double max_h = 0.005) {
  return std::max<Index>(1, static_cast<Index>(std::ceil(dt / max_h)));
}

template <int Dim, typename Rhs>
Eigen::Matrix<double, Dim, 1> rk4_step(const Eigen::Matrix<double, Dim, 1>& x, double h, const Rhs& rhs) {
  using V = Eigen::Matrix<double, Dim, 1>;
  V k1 = rhs(x);
  V k2 = rhs(x + 0.5 * h * k1);
  V k3 = rhs(x + 0.5 * h * k2);
  V k4 = rhs(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <int Dim, typename Rhs>
Eigen::Matrix<double, Dim, 1> integrate(const Eigen::Matrix<double, Dim, 1>& x, double dt, Index substeps,
                                        const Rhs& rhs) {
  Eigen::Matrix<double, Dim, 1> y = x;
  const double h = dt / static_cast<double>(substeps);
  for (Index k = 0; k < substeps; ++k) y = rk4_step<Dim>(y, h, rhs);
  return y;
}

void check_state(const RVec& x, const char* system, Index step) {
  if (!x.allFinite())
    throw NumericalError(std::string(system) + " trajectory blew up at step " + std::to_string(step));
}

}  // namespace

void validate(const SnapshotSet& s) {
  if (s.X.rows() != s.Y.rows() || s.X.cols() != s.Y.cols())
    throw InvalidInput("snapshots: X and Y must have the same shape");
  if (s.weights.size() != s.X.rows()) throw InvalidInput("snapshots: weights length must equal M");
  if (s.X.rows() == 0) throw InvalidInput("snapshots: empty set");
  if ((s.weights.array() < 0.0).any()) throw InvalidInput("snapshots: negative quadrature weight");
  if (!(s.weights.sum() > 0.0)) throw InvalidInput("snapshots: weights must not all vanish");
  if (!s.X.allFinite() || !s.Y.allFinite() || !s.weights.allFinite())
    throw InvalidInput("snapshots: non-finite entries");
}

Trajectory lorenz_trajectory(const Eigen::Vector3d& x0, double dt, Index steps, double sigma, double rho,
                             double beta, Index substeps) {
  if (!(dt > 0.0)) throw InvalidInput("lorenz_trajectory: dt must be positive");
  if (substeps <= 0) substeps = default_substeps(dt);
  auto rhs = [&](const Eigen::Vector3d& x) {
    return Eigen::Vector3d(sigma * (x(1) - x(0)), x(0) * (rho - x(2)) - x(1), x(0) * x(1) - beta * x(2));
  };
  Trajectory t;
  t.dt = dt;
  t.states.resize(steps + 1, 3);
  Eigen::Vector3d x = x0;
  t.states.row(0) = x.transpose();
  for (Index k = 1; k <= steps; ++k) {
    x = integrate<3>(x, dt, substeps, rhs);
    check_state(x, "lorenz", k);
    t.states.row(k) = x.transpose();
  }
  return t;
}

Trajectory pendulum_trajectory(const Eigen::Vector2d& x0, double dt, Index steps, Index substeps) {
  if (!(dt > 0.0)) throw InvalidInput("pendulum_trajectory: dt must be positive");
  if (substeps <= 0) substeps = default_substeps(dt);
  auto rhs = [](const Eigen::Vector2d& x) { return Eigen::Vector2d(x(1), -std::sin(x(0))); };
  Trajectory t;
  t.dt = dt;
  t.states.resize(steps + 1, 2);
  Eigen::Vector2d x(wrap_phase(x0(0)), x0(1));
  t.states.row(0) = x.transpose();
  for (Index k = 1; k <= steps; ++k) {
    x = integrate<2>(x, dt, substeps, rhs);
    x(0) = wrap_phase(x(0));
    check_state(x, "pendulum", k);
    t.states.row(k) = x.transpose();
  }
  return t;
}

FlowMap pendulum_flow(double dt, Index substeps) {
  if (!(dt > 0.0)) throw InvalidInput("pendulum_flow: dt must be positive");
  if (substeps <= 0) substeps = default_substeps(dt);
  return [dt, substeps](const RVec& x) -> RVec {
    if (x.size() != 2) throw InvalidInput("pendulum_flow: state must be 2-dimensional");
    auto rhs = [](const Eigen::Vector2d& s) { return Eigen::Vector2d(s(1), -std::sin(s(0))); };
    Eigen::Vector2d y = integrate<2>(Eigen::Vector2d(x(0), x(1)), dt, substeps, rhs);
    y(0) = wrap_phase(y(0));
    check_state(y, "pendulum", 1);
    return y;
  };
}

double rotation_map(double theta, double alpha) { return wrap_two_pi(theta + alpha); }

FlowMap rotation_flow(double alpha) {
  return [alpha](const RVec& x) -> RVec {
    RVec y(1);
    y(0) = rotation_map(x(0), alpha);
    return y;
  };
}

double shift_map(double x) { return std::max(x - 1.0, 0.0); }

FlowMap shift_flow() {
  return [](const RVec& x) -> RVec {
    RVec y(1);
    y(0) = shift_map(x(0));
    return y;
  };
}

Trajectory iterate_map(const FlowMap& flow, const RVec& x0, Index steps, double dt) {
  Trajectory t;
  t.dt = dt;
  t.states.resize(steps + 1, x0.size());
  RVec x = x0;
  t.states.row(0) = x.transpose();
  for (Index k = 1; k <= steps; ++k) {
    x = flow(x);
    check_state(x, "map", k);
    t.states.row(k) = x.transpose();
  }
  return t;
}

SnapshotSet snapshots_from_trajectory(const Trajectory& t, bool unit_weights) {
  const Index n = t.states.rows();
  if (n < 2) throw InvalidInput("snapshots_from_trajectory: trajectory too short (need >= 2 states)");
  const Index m = n - 1;
  SnapshotSet s;
  s.X = t.states.topRows(m);
  s.Y = t.states.bottomRows(m);
  s.weights = RVec::Constant(m, unit_weights ? 1.0 : 1.0 / static_cast<double>(m));
  s.meta.dt = t.dt;
  s.meta.regime = unit_weights ? "counting" : "trajectory";
  return s;
}

SnapshotSet tensor_trapezoid_snapshots(Index m1, Index m2, double x2_bound, const FlowMap& flow) {
  if (m1 < 2 || m2 < 2) throw InvalidInput("tensor_trapezoid_snapshots: need at least 2 points per direction");
  if (!(x2_bound > 0.0)) throw InvalidInput("tensor_trapezoid_snapshots: x2_bound must be positive");

  RVec x1(m1), w1(m1);
  for (Index i = 0; i < m1; ++i) {
    x1(i) = -pi + 2.0 * pi * static_cast<double>(i) / static_cast<double>(m1);
    w1(i) = 2.0 * pi / static_cast<double>(m1);
  }
  RVec x2(m2), w2(m2);
  const double h2 = 2.0 * x2_bound / static_cast<double>(m2 - 1);
  for (Index i = 0; i < m2; ++i) {
    x2(i) = -x2_bound + h2 * static_cast<double>(i);
    w2(i) = (i == 0 || i == m2 - 1) ? 0.5 * h2 : h2;
  }

  const Index m = m1 * m2;
  SnapshotSet s;
  s.X.resize(m, 2);
  s.Y.resize(m, 2);
  s.weights.resize(m);
  Index row = 0;
  for (Index i = 0; i < m1; ++i) {
    for (Index j = 0; j < m2; ++j, ++row) {
      RVec x(2);
      x << x1(i), x2(j);
      s.X.row(row) = x.transpose();
      s.Y.row(row) = flow(x).transpose();
      s.weights(row) = w1(i) * w2(j);
    }
  }
  s.meta.regime = "tensor-trapezoid";
  return s;
}

CMat perturb(const Eigen::Ref<const CMat>& psi, double tau, std::uint64_t seed) {
  if (tau < 0.0) throw InvalidInput("perturb: tau must be nonnegative");
  if (tau == 0.0) return psi;
  const double mn = static_cast<double>(psi.rows()) * static_cast<double>(psi.cols());
  const double rms = psi.norm() / std::sqrt(mn);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(2.0));
  CMat out = psi;
  for (Index j = 0; j < out.cols(); ++j)
    for (Index i = 0; i < out.rows(); ++i) out(i, j) += tau * rms * Complex(gauss(rng), gauss(rng));
  return out;
}

FlowMap flow_from_meta(const SnapshotMeta& meta) {
  auto param = [&meta](const std::string& key, double fallback) {
    auto it = meta.params.find(key);
    return it == meta.params.end() ? fallback : it->second;
  };
  if (meta.system == "lorenz") {
    if (!(meta.dt > 0.0)) return {};
    const double sigma = param("sigma", 10.0), rho = param("rho", 28.0), beta = param("beta", 8.0 / 3.0);
    const double dt = meta.dt;
    const Index substeps = static_cast<Index>(param("substeps", 0.0));
    return [=](const RVec& x) -> RVec {
      if (x.size() != 3) throw InvalidInput("lorenz flow: state must be 3-dimensional");
      Trajectory t = lorenz_trajectory(Eigen::Vector3d(x(0), x(1), x(2)), dt, 1, sigma, rho, beta, substeps);
      return t.states.row(1).transpose();
    };
  }
  if (meta.system == "pendulum") {
    if (!(meta.dt > 0.0)) return {};
    return pendulum_flow(meta.dt, static_cast<Index>(param("substeps", 0.0)));
  }
  if (meta.system == "rotation") {
    auto it = meta.params.find("alpha");
    if (it == meta.params.end()) return {};
    return rotation_flow(it->second);
  }
  if (meta.system == "shift") return shift_flow();
  return {};
}

namespace {

using nlohmann::json;

SnapshotSet read_snapshots_json(std::istream& in, const std::string& path) {
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidInput("snapshots: failed to parse " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("X") || !j.contains("Y") || !j.contains("weights"))
    throw InvalidInput("snapshots: JSON file must contain X, Y and weights");

  auto to_matrix = [&](const json& a, const char* name) {
    if (!a.is_array() || a.empty()) throw InvalidInput(std::string("snapshots: ") + name + " must be a nonempty array");
    const Index m = static_cast<Index>(a.size());
    const Index d = static_cast<Index>(a.at(0).size());
    RMat out(m, d);
    for (Index i = 0; i < m; ++i) {
      const json& row = a.at(static_cast<std::size_t>(i));
      if (static_cast<Index>(row.size()) != d)
        throw InvalidInput(std::string("snapshots: inconsistent row length in ") + name);
      for (Index k = 0; k < d; ++k) out(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
    }
    return out;
  };

  SnapshotSet s;
  s.X = to_matrix(j.at("X"), "X");
  s.Y = to_matrix(j.at("Y"), "Y");
  const json& w = j.at("weights");
  s.weights.resize(static_cast<Index>(w.size()));
  for (Index i = 0; i < s.weights.size(); ++i) s.weights(i) = w.at(static_cast<std::size_t>(i)).get<double>();
  if (j.contains("meta") && j.at("meta").is_object()) {
    const json& m = j.at("meta");
    s.meta.system = m.value("system", std::string{});
    s.meta.dt = m.value("dt", 0.0);
    s.meta.regime = m.value("regime", std::string{});
    if (m.contains("params"))
      for (auto it = m.at("params").begin(); it != m.at("params").end(); ++it)
        s.meta.params[it.key()] = it.value().get<double>();
  }
  validate(s);
  return s;
}

SnapshotSet read_snapshots_text(std::istream& in, const std::string& path) {
  std::string header;
  if (!std::getline(in, header)) throw InvalidInput("snapshots: empty file " + path);
  long m = 0, d = 0;
  if (std::sscanf(header.c_str(), "# snapshots M=%ld d=%ld", &m, &d) != 2 || m <= 0 || d <= 0)
    throw InvalidInput("snapshots: malformed header in " + path + ": '" + header + "'");

  auto read_block = [&](RMat& out, const char* name) {
    out.resize(m, d);
    std::string line;
    for (long i = 0; i < m; ++i) {
      if (!std::getline(in, line)) throw InvalidInput(std::string("snapshots: truncated ") + name + " block");
      std::istringstream row(line);
      for (long k = 0; k < d; ++k)
        if (!(row >> out(i, k))) throw InvalidInput(std::string("snapshots: inconsistent row length in ") + name);
      double extra;
      if (row >> extra) throw InvalidInput(std::string("snapshots: inconsistent row length in ") + name);
    }
  };

  SnapshotSet s;
  read_block(s.X, "X");
  read_block(s.Y, "Y");

  std::vector<double> w;
  double v;
  while (in >> v) w.push_back(v);
  if (static_cast<long>(w.size()) != m)
    throw InvalidInput("snapshots: expected " + std::to_string(m) + " weights, got " + std::to_string(w.size()));
  s.weights = Eigen::Map<const RVec>(w.data(), static_cast<Index>(w.size()));
  validate(s);
  return s;
}

bool is_json_path(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
}

}  // namespace

SnapshotSet read_snapshots(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("snapshots: cannot open " + path);
  if (is_json_path(path)) return read_snapshots_json(in, path);
  // Content sniff: JSON payloads may also arrive without the extension.
  int c = in.peek();
  if (c == '{') return read_snapshots_json(in, path);
  return read_snapshots_text(in, path);
}

void write_snapshots(const SnapshotSet& s, const std::string& path) {
  validate(s);
  std::ofstream out(path);
  if (!out) throw InvalidInput("snapshots: cannot write " + path);
  if (is_json_path(path)) {
    nlohmann::ordered_json j;
    auto matrix_json = [](const RMat& m) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(std::move(row));
      }
      return rows;
    };
    j["X"] = matrix_json(s.X);
    j["Y"] = matrix_json(s.Y);
    j["weights"] = std::vector<double>(s.weights.data(), s.weights.data() + s.weights.size());
    nlohmann::ordered_json meta;
    meta["system"] = s.meta.system;
    meta["dt"] = s.meta.dt;
    meta["regime"] = s.meta.regime;
    meta["params"] = s.meta.params;
    j["meta"] = std::move(meta);
    out << j.dump(2) << '\n';
    return;
  }

  char buf[64];
  auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf << sep;
  };
  out << "# snapshots M=" << s.size() << " d=" << s.dim() << '\n';
  for (const RMat* block : {&s.X, &s.Y})
    for (Index i = 0; i < block->rows(); ++i)
      for (Index k = 0; k < block->cols(); ++k) put((*block)(i, k), k + 1 == block->cols() ? '\n' : ' ');
  for (Index i = 0; i < s.weights.size(); ++i) put(s.weights(i), i + 1 == s.weights.size() ? '\n' : ' ');
}

}  // namespace koopman::sampling
