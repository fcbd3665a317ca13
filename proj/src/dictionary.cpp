#include "koopman/dictionary.hpp"

#include "koopman/errors.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <utility>

namespace koopman::dictionary {

namespace {

using std::literals::complex_literals::operator""i;

void check_weights(const Eigen::Ref<const RVec>& w, Index m) {
  if (w.size() != m) throw InvalidInput("gram: weights length must match the number of rows");
  if ((w.array() < 0.0).any()) throw InvalidInput("gram: negative quadrature weight");
}

}  // namespace

Observable builtin_observable(const std::string& name) {
  if (name.size() == 2 && name[0] == 'x' && name[1] >= '1' && name[1] <= '9') {
    const Index j = name[1] - '1';
    return {name, [j, name](const RVec& x) -> Complex {
              if (x.size() <= j) throw InvalidInput("observable " + name + ": state dimension too small");
              return Complex(x(j), 0.0);
            }};
  }
  if (name == "exp-itheta")
    return {name, [](const RVec& x) { return std::exp(1.0i * x(0)); }};
  if (name == "pendulum-g")
    return {name, [](const RVec& x) -> Complex {
              if (x.size() < 2) throw InvalidInput("observable pendulum-g: state dimension too small");
              return std::exp(1.0i * x(0)) * x(1) * std::exp(-0.5 * x(1) * x(1));
            }};
  throw InvalidInput("unknown builtin observable '" + name + "'");
}

Dictionary Dictionary::linear(Index dim) {
  if (dim <= 0) throw InvalidInput("Dictionary::linear: dimension must be positive");
  Dictionary d;
  d.kind_ = Kind::linear;
  d.size_ = dim;
  d.dim_ = dim;
  return d;
}

Dictionary Dictionary::fourier(int kmax) {
  if (kmax < 0) throw InvalidInput("Dictionary::fourier: kmax must be nonnegative");
  Dictionary d;
  d.kind_ = Kind::fourier;
  d.size_ = 2 * static_cast<Index>(kmax) + 1;
  d.dim_ = 1;
  d.kmax_ = kmax;
  return d;
}

Dictionary Dictionary::explicit_functions(std::vector<Observable> fns) {
  if (fns.empty()) throw InvalidInput("Dictionary::explicit_functions: empty dictionary");
  Dictionary d;
  d.kind_ = Kind::explicit_functions;
  d.size_ = static_cast<Index>(fns.size());
  d.fns_ = std::move(fns);
  return d;
}

Dictionary Dictionary::pod_modes(RMat modes) {
  if (modes.cols() == 0) throw InvalidInput("Dictionary::pod_modes: empty mode set");
  Dictionary d;
  d.kind_ = Kind::pod;
  d.size_ = modes.cols();
  d.dim_ = modes.rows();
  d.modes_ = std::move(modes);
  return d;
}

CVec Dictionary::evaluate_state(const RVec& x) const {
  if (dim_ > 0 && x.size() != dim_)
    throw InvalidInput("Dictionary::evaluate: state dimension mismatch");
  CVec row(size_);
  switch (kind_) {
    case Kind::linear:
      row = x.cast<Complex>();
      break;
    case Kind::fourier: {
      const Complex base = std::exp(1.0i * x(0));
      Complex v = std::pow(base, -kmax_);
      for (Index j = 0; j < size_; ++j, v *= base) row(j) = v;
      break;
    }
    case Kind::explicit_functions:
      for (Index j = 0; j < size_; ++j) row(j) = fns_[static_cast<std::size_t>(j)](x);
      break;
    case Kind::pod:
      row = (modes_.transpose() * x).cast<Complex>();
      break;
  }
  if (!row.allFinite()) throw NumericalError("Dictionary::evaluate: non-finite observable value");
  return row;
}

CMat Dictionary::evaluate(const Eigen::Ref<const RMat>& states) const {
  if (!states.allFinite()) throw InvalidInput("Dictionary::evaluate: non-finite states");
  CMat out(states.rows(), size_);
  for (Index m = 0; m < states.rows(); ++m) out.row(m) = evaluate_state(states.row(m)).transpose();
  return out;
}

GramPair gram(const Eigen::Ref<const CMat>& psi_x, const Eigen::Ref<const CMat>& psi_y,
              const Eigen::Ref<const RVec>& weights) {
  if (psi_x.rows() != psi_y.rows() || psi_x.cols() != psi_y.cols())
    throw InvalidInput("gram: Psi_X and Psi_Y must have the same shape");
  check_weights(weights, psi_x.rows());
  CVec sw = weights.cwiseSqrt().cast<Complex>();
  CMat bx = sw.asDiagonal() * psi_x;
  CMat by = sw.asDiagonal() * psi_y;
  GramPair gp;
  gp.G = bx.adjoint() * bx;
  gp.G = 0.5 * (gp.G + gp.G.adjoint()).eval();
  gp.A = bx.adjoint() * by;
  return gp;
}

DelayMatrices delay_matrices(const CVec& values, Index n_delays, Index m_pairs) {
  if (n_delays <= 0 || m_pairs <= 0) throw InvalidInput("delay_matrices: N and M must be positive");
  if (values.size() < m_pairs + n_delays)
    throw InvalidInput("delay_matrices: trajectory too short (need " + std::to_string(m_pairs + n_delays) +
                       " samples, have " + std::to_string(values.size()) + ")");
  DelayMatrices out;
  out.psi_x.resize(m_pairs, n_delays);
  out.psi_y.resize(m_pairs, n_delays);
  for (Index m = 0; m < m_pairs; ++m)
    for (Index j = 0; j < n_delays; ++j) {
      out.psi_x(m, j) = values(m + j);
      out.psi_y(m, j) = values(m + j + 1);
    }
  out.weights = RVec::Constant(m_pairs, 1.0 / static_cast<double>(m_pairs));
  return out;
}

DelayMatrices delay_matrices(const sampling::Trajectory& traj, const Observable& g, Index n_delays,
                             Index m_pairs) {
  const Index len = traj.states.rows();
  if (len < m_pairs + n_delays)
    throw InvalidInput("delay_matrices: trajectory too short for requested M and N");
  CVec values(len);
  for (Index k = 0; k < len; ++k) values(k) = g(traj.states.row(k));
  if (!values.allFinite()) throw NumericalError("delay_matrices: non-finite observable value");
  return delay_matrices(values, n_delays, m_pairs);
}

DelayMatrices delay_matrices_from_states(const Eigen::Ref<const RMat>& states,
                                         const Eigen::Ref<const RVec>& weights,
                                         const sampling::FlowMap& flow, const Observable& g,
                                         Index n_delays) {
  if (n_delays <= 0) throw InvalidInput("delay_matrices_from_states: N must be positive");
  const Index m = states.rows();
  check_weights(weights, m);
  DelayMatrices out;
  out.psi_x.resize(m, n_delays);
  out.psi_y.resize(m, n_delays);
  out.weights = weights;
  for (Index node = 0; node < m; ++node) {
    RVec x = states.row(node).transpose();
    Complex v = g(x);
    for (Index j = 0; j <= n_delays; ++j) {
      if (j < n_delays) out.psi_x(node, j) = v;
      if (j > 0) out.psi_y(node, j - 1) = v;
      if (j == n_delays) break;
      x = flow(x);
      v = g(x);
    }
  }
  if (!out.psi_x.allFinite() || !out.psi_y.allFinite())
    throw NumericalError("delay_matrices_from_states: non-finite observable value");
  return out;
}

namespace {

// Shared block-accumulation of the (N+1) x (N+1) one-sided Gram of the delay
// window; scalar may be double or complex<double>.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> delay_window_gram(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& values, Index n_delays, Index m_pairs) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Index w = n_delays + 1;
  if (values.size() < m_pairs + n_delays)
    throw InvalidInput("delay_gram: trajectory too short for requested M and N");
  Mat h = Mat::Zero(w, w);
  const Index block = std::max<Index>(1, 1 << 12);
  Mat rows(std::min(block, m_pairs), w);
  for (Index m0 = 0; m0 < m_pairs; m0 += block) {
    const Index b = std::min(block, m_pairs - m0);
    for (Index r = 0; r < b; ++r) rows.row(r) = values.segment(m0 + r, w).transpose();
    h.template selfadjointView<Eigen::Lower>().rankUpdate(rows.topRows(b).adjoint(), 1.0);
  }
  h.template triangularView<Eigen::StrictlyUpper>() = h.adjoint();
  h /= static_cast<double>(m_pairs);
  return h;
}

template <typename Scalar>
GramPair delay_gram_impl(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& values, Index n, Index m) {
  auto h = delay_window_gram<Scalar>(values, n, m);
  GramPair gp;
  gp.G = h.topLeftCorner(n, n).template cast<Complex>();
  gp.G = 0.5 * (gp.G + gp.G.adjoint()).eval();
  gp.A = h.block(0, 1, n, n).template cast<Complex>();
  return gp;
}

}  // namespace

GramPair delay_gram(const Eigen::Ref<const RVec>& values, Index n_delays, Index m_pairs) {
  RVec v = values;
  return delay_gram_impl<double>(v, n_delays, m_pairs);
}

RMat delay_autocorr(const Eigen::Ref<const RVec>& values, Index window, Index m_pairs) {
  if (window < 2) throw InvalidInput("delay_autocorr: window must be at least 2");
  RVec v = values;
  return delay_window_gram<double>(v, window - 1, m_pairs);
}

GramPair delay_gram_from_autocorr(const Eigen::Ref<const RMat>& h, Index n_delays) {
  if (n_delays + 1 > h.rows() || h.rows() != h.cols())
    throw InvalidInput("delay_gram_from_autocorr: window too small for requested depth");
  GramPair gp;
  gp.G = h.topLeftCorner(n_delays, n_delays).cast<Complex>();
  gp.G = 0.5 * (gp.G + gp.G.adjoint()).eval();
  gp.A = h.block(0, 1, n_delays, n_delays).cast<Complex>();
  return gp;
}

GramPair delay_gram(const Eigen::Ref<const CVec>& values, Index n_delays, Index m_pairs) {
  CVec v = values;
  return delay_gram_impl<Complex>(v, n_delays, m_pairs);
}

Dictionary pod_dictionary(const Eigen::Ref<const RMat>& states, const Eigen::Ref<const RVec>& weights,
                          Index rank) {
  const Index m = states.rows(), d = states.cols();
  check_weights(weights, m);
  if (rank <= 0 || rank > std::min(m, d))
    throw InvalidInput("pod_dictionary: rank must be in [1, min(M, d)]");
  RMat b = weights.cwiseSqrt().asDiagonal() * states;
  Eigen::BDCSVD<RMat> dec(b, Eigen::ComputeThinV);
  return Dictionary::pod_modes(dec.matrixV().leftCols(rank));
}

double empirical_norm(const Eigen::Ref<const CVec>& values, const Eigen::Ref<const RVec>& weights) {
  check_weights(weights, values.size());
  return std::sqrt((weights.array() * values.array().abs2()).sum());
}

Dictionary indicator_dictionary(Index n) {
  if (n <= 0) throw InvalidInput("indicator_dictionary: N must be positive");
  std::vector<Observable> fns;
  fns.reserve(static_cast<std::size_t>(n));
  for (Index k = 1; k <= n; ++k)
    fns.push_back({"e" + std::to_string(k), [k](const RVec& x) -> Complex {
                     return std::llround(x(0)) == k ? Complex(1.0, 0.0) : Complex(0.0, 0.0);
                   }});
  return Dictionary::explicit_functions(std::move(fns));
}

DictionarySpec parse_dictionary_spec(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type")) throw InvalidInput("dictionary spec: missing 'type'");
  DictionarySpec spec;
  spec.type = j.at("type").get<std::string>();

  auto reject_unknown = [&](std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* k : allowed) ok = ok || it.key() == k;
      if (!ok) throw InvalidInput("dictionary spec: unknown key '" + it.key() + "' for type " + spec.type);
    }
  };

  if (spec.type == "delay") {
    reject_unknown({"type", "observable", "N"});
    if (!j.contains("observable") || !j.contains("N"))
      throw InvalidInput("dictionary spec: delay requires 'observable' and 'N'");
    spec.observable = j.at("observable").get<std::string>();
    spec.n = j.at("N").get<Index>();
    if (spec.n <= 0) throw InvalidInput("dictionary spec: N must be positive");
  } else if (spec.type == "linear") {
    reject_unknown({"type"});
  } else if (spec.type == "fourier") {
    reject_unknown({"type", "kmax"});
    if (!j.contains("kmax")) throw InvalidInput("dictionary spec: fourier requires 'kmax'");
    spec.kmax = j.at("kmax").get<int>();
    if (spec.kmax < 0) throw InvalidInput("dictionary spec: kmax must be nonnegative");
  } else if (spec.type == "pod") {
    reject_unknown({"type", "rank"});
    if (!j.contains("rank")) throw InvalidInput("dictionary spec: pod requires 'rank'");
    spec.rank = j.at("rank").get<Index>();
    if (spec.rank <= 0) throw InvalidInput("dictionary spec: rank must be positive");
  } else if (spec.type == "indicator") {
    reject_unknown({"type", "N"});
    if (!j.contains("N")) throw InvalidInput("dictionary spec: indicator requires 'N'");
    spec.n = j.at("N").get<Index>();
    if (spec.n <= 0) throw InvalidInput("dictionary spec: N must be positive");
  } else {
    throw InvalidInput("dictionary spec: unknown type '" + spec.type + "'");
  }
  return spec;
}

nlohmann::ordered_json to_json(const DictionarySpec& spec) {
  nlohmann::ordered_json j;
  j["type"] = spec.type;
  if (spec.type == "delay") {
    j["observable"] = spec.observable;
    j["N"] = spec.n;
  } else if (spec.type == "fourier") {
    j["kmax"] = spec.kmax;
  } else if (spec.type == "pod") {
    j["rank"] = spec.rank;
  } else if (spec.type == "indicator") {
    j["N"] = spec.n;
  }
  return j;
}

namespace {

bool is_single_trajectory(const sampling::SnapshotSet& s) {
  const Index m = s.size();
  for (Index i = 0; i + 1 < m; ++i) {
    double scale = std::max(1.0, s.X.row(i + 1).cwiseAbs().maxCoeff());
    if ((s.Y.row(i) - s.X.row(i + 1)).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  }
  return true;
}

}  // namespace

Features assemble_features(const DictionarySpec& spec, const sampling::SnapshotSet& snaps) {
  sampling::validate(snaps);
  Features f;
  if (spec.type != "delay") {
    Dictionary dict = spec.type == "linear"      ? Dictionary::linear(snaps.dim())
                      : spec.type == "fourier"   ? Dictionary::fourier(spec.kmax)
                      : spec.type == "indicator" ? indicator_dictionary(spec.n)
                                                 : pod_dictionary(snaps.X, snaps.weights, spec.rank);
    if (spec.type == "fourier" && snaps.dim() != 1)
      throw InvalidInput("dictionary spec: fourier requires 1-dimensional states");
    f.psi_x = dict.evaluate(snaps.X);
    f.psi_y = dict.evaluate(snaps.Y);
    f.weights = snaps.weights;
    f.eval_row = [dict](const RVec& x) { return dict.evaluate_state(x); };
    return f;
  }

  // Delay embedding. Data along a single trajectory realizes the shifts
  // directly; otherwise each node needs the system flow from the metadata.
  Observable g = builtin_observable(spec.observable);
  if (is_single_trajectory(snaps)) {
    const Index m = snaps.size();
    RMat series(m + 1, snaps.dim());
    series.topRows(m) = snaps.X;
    series.row(m) = snaps.Y.row(m - 1);
    if (m + 1 < spec.n + 1)
      throw InvalidInput("dictionary spec: trajectory too short for delay depth N");
    CVec values(m + 1);
    for (Index k = 0; k <= m; ++k) values(k) = g(series.row(k));
    const Index pairs = m + 1 - spec.n;
    DelayMatrices dm = delay_matrices(values, spec.n, pairs);
    f.psi_x = std::move(dm.psi_x);
    f.psi_y = std::move(dm.psi_y);
    f.weights = std::move(dm.weights);
  } else {
    sampling::FlowMap flow = sampling::flow_from_meta(snaps.meta);
    if (!flow)
      throw InvalidInput(
          "dictionary spec: delay on non-trajectory data needs a known system in the snapshot metadata");
    DelayMatrices dm = delay_matrices_from_states(snaps.X, snaps.weights, flow, g, spec.n);
    f.psi_x = std::move(dm.psi_x);
    f.psi_y = std::move(dm.psi_y);
    f.weights = std::move(dm.weights);
  }

  if (sampling::FlowMap flow = sampling::flow_from_meta(snaps.meta)) {
    const Index n = spec.n;
    f.eval_row = [flow, g, n](const RVec& x0) {
      CVec row(n);
      RVec x = x0;
      for (Index j = 0; j < n; ++j) {
        row(j) = g(x);
        if (j + 1 < n) x = flow(x);
      }
      return row;
    };
  }
  return f;
}

}  // namespace koopman::dictionary
