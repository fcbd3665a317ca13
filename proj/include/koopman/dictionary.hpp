#pragma once

#include "koopman/sampling.hpp"
#include "koopman/types.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace koopman::dictionary {

/// A named scalar observable g: state -> C.
struct Observable {
  std::string name;
  std::function<Complex(const RVec&)> fn;

  Complex operator()(const RVec& x) const { return fn(x); }
};

/// Builtins: "x1".."x9" (coordinates), "exp-itheta" (e^{i theta} on the
/// circle), "pendulum-g" (e^{i x1} x2 e^{-x2^2/2}).
Observable builtin_observable(const std::string& name);

/// A finite family of observables psi_1..psi_N, evaluable row-wise at states.
class Dictionary {
 public:
  enum class Kind { linear, fourier, explicit_functions, pod };

  static Dictionary linear(Index dim);
  /// Fourier modes e^{i k theta}, k = -kmax..kmax (ascending), on d = 1.
  static Dictionary fourier(int kmax);
  static Dictionary explicit_functions(std::vector<Observable> fns);
  /// psi_j(x) = <x, mode_j>; modes are the columns.
  static Dictionary pod_modes(RMat modes);

  Kind kind() const { return kind_; }
  Index size() const { return size_; }

  /// Row m is Psi(x^(m)); throws on non-finite observable values.
  CMat evaluate(const Eigen::Ref<const RMat>& states) const;
  CVec evaluate_state(const RVec& x) const;

  const RMat& modes() const { return modes_; }
  int kmax() const { return kmax_; }

 private:
  Dictionary() = default;
  Kind kind_ = Kind::linear;
  Index size_ = 0;
  Index dim_ = 0;  // 0 = any
  int kmax_ = 0;
  RMat modes_;
  std::vector<Observable> fns_;
};

/// Gram pair G = Psi_X^* W Psi_X (symmetrized) and A = Psi_X^* W Psi_Y.
struct GramPair {
  CMat G;
  CMat A;
};

GramPair gram(const Eigen::Ref<const CMat>& psi_x, const Eigen::Ref<const CMat>& psi_y,
              const Eigen::Ref<const RVec>& weights);

/// Time-delay feature matrices built from the values of one observable along
/// a contiguous trajectory: psi_x(m, j) = g(s_{m+j}), psi_y(m, j) =
/// g(s_{m+j+1}). Columns 1..N-1 of psi_y coincide with columns 2..N of psi_x
/// by construction. Weights are 1/M.
struct DelayMatrices {
  CMat psi_x;
  CMat psi_y;
  RVec weights;
};

DelayMatrices delay_matrices(const CVec& values, Index n_delays, Index m_pairs);
DelayMatrices delay_matrices(const sampling::Trajectory& traj, const Observable& g, Index n_delays,
                             Index m_pairs);

/// Delay features from arbitrary quadrature nodes: from every node the flow
/// is iterated n_delays steps and g is recorded along the way.
DelayMatrices delay_matrices_from_states(const Eigen::Ref<const RMat>& states,
                                         const Eigen::Ref<const RVec>& weights,
                                         const sampling::FlowMap& flow, const Observable& g,
                                         Index n_delays);

/// Gram pair of a delay dictionary computed directly from the observable
/// values, without materializing the M x N feature matrices. Equals
/// gram(delay_matrices(values, n, m)) up to summation order.
GramPair delay_gram(const Eigen::Ref<const RVec>& values, Index n_delays, Index m_pairs);
GramPair delay_gram(const Eigen::Ref<const CVec>& values, Index n_delays, Index m_pairs);

/// One-sided Gram of the full delay window, H(j, k) = (1/M) sum_m
/// v_{m+j} v_{m+k}, j,k = 0..window-1. The Gram pair of any delay depth
/// N < window with the same M is the pair of slices H(0:N, 0:N) and
/// H(0:N, 1:N+1).
RMat delay_autocorr(const Eigen::Ref<const RVec>& values, Index window, Index m_pairs);

/// Gram pair sliced out of a delay window Gram at depth n_delays.
GramPair delay_gram_from_autocorr(const Eigen::Ref<const RMat>& h, Index n_delays);

/// Dictionary of the top-r right singular vectors of sqrt(W) X.
Dictionary pod_dictionary(const Eigen::Ref<const RMat>& states, const Eigen::Ref<const RVec>& weights,
                          Index rank);

/// Empirical L2 norm sqrt(sum_m w_m |v_m|^2); used to normalize observables
/// against the sampled measure.
double empirical_norm(const Eigen::Ref<const CVec>& values, const Eigen::Ref<const RVec>& weights);

/// Indicator dictionary on integer states: psi_k(x) = [round(x_1) == k],
/// k = 1..n.
Dictionary indicator_dictionary(Index n);

/// CLI-facing dictionary descriptor:
///   {"type":"delay","observable":"<builtin>","N":...} | {"type":"linear"} |
///   {"type":"fourier","kmax":...} | {"type":"pod","rank":...} |
///   {"type":"indicator","N":...}
struct DictionarySpec {
  std::string type;
  std::string observable;
  Index n = 0;
  int kmax = 0;
  Index rank = 0;
};

DictionarySpec parse_dictionary_spec(const nlohmann::json& j);
nlohmann::ordered_json to_json(const DictionarySpec& spec);

/// Feature matrices assembled from snapshots according to a descriptor.
/// eval_row evaluates Psi at a fresh state when that is possible (it needs
/// the system flow for delay dictionaries); it is empty otherwise.
struct Features {
  CMat psi_x;
  CMat psi_y;
  RVec weights;
  std::function<CVec(const RVec&)> eval_row;
};

Features assemble_features(const DictionarySpec& spec, const sampling::SnapshotSet& snaps);

}  // namespace koopman::dictionary
