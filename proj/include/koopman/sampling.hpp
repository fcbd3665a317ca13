#pragma once

#include "koopman/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>

namespace koopman::sampling {

/// One-step map of a dynamical system acting on state vectors.
using FlowMap = std::function<RVec(const RVec&)>;

/// Contiguous samples of one trajectory: states.row(k) is the state after k
/// steps of size dt.
struct Trajectory {
  RMat states;
  double dt = 1.0;
};

struct SnapshotMeta {
  std::string system;
  double dt = 0.0;
  std::string regime;
  std::map<std::string, double> params;
};

/// Paired snapshots (x^(m), y^(m) = F(x^(m))) with quadrature weights.
struct SnapshotSet {
  RMat X;
  RMat Y;
  RVec weights;
  SnapshotMeta meta;

  Index size() const { return X.rows(); }
  Index dim() const { return X.cols(); }
};

void validate(const SnapshotSet& s);

/// Lorenz system sampled every dt, integrated with classical RK4 using
/// `substeps` internal stages per sample (substeps == 0 picks the default,
/// the smallest count with dt/substeps <= 0.005). Returns steps+1 states.
Trajectory lorenz_trajectory(const Eigen::Vector3d& x0, double dt, Index steps, double sigma = 10.0,
                             double rho = 28.0, double beta = 8.0 / 3.0, Index substeps = 0);

/// Nonlinear pendulum x1' = x2, x2' = -sin(x1) on [-pi, pi]_per x R.
/// x1 is wrapped back to [-pi, pi] at every recorded sample.
Trajectory pendulum_trajectory(const Eigen::Vector2d& x0, double dt, Index steps, Index substeps = 0);

/// One-step pendulum flow with the same integrator, for quadrature grids.
FlowMap pendulum_flow(double dt, Index substeps = 0);

/// Circle rotation theta -> theta + alpha (mod 2*pi).
double rotation_map(double theta, double alpha);
FlowMap rotation_flow(double alpha);

/// Shift on {0, 1, 2, ...}: x -> max(x - 1, 0).
double shift_map(double x);
FlowMap shift_flow();

/// Iterate an arbitrary one-step map into a trajectory (steps+1 states).
Trajectory iterate_map(const FlowMap& flow, const RVec& x0, Index steps, double dt = 1.0);

/// Consecutive pairs x^(m) = s_{m-1}, y^(m) = s_m with weights 1/M, or unit
/// weights w_m = 1 for counting-measure setups.
SnapshotSet snapshots_from_trajectory(const Trajectory& t, bool unit_weights = false);

/// Tensor-product quadrature grid for the pendulum state space: periodic
/// trapezoid in x1 over [-pi, pi) (uniform weights 2*pi/m1) and trapezoid in
/// x2 over [-x2_bound, x2_bound] (half weights at the endpoints). Y holds the
/// flow applied to each node.
SnapshotSet tensor_trapezoid_snapshots(Index m1, Index m2, double x2_bound, const FlowMap& flow);

/// Additive measurement noise: psi + tau * s * E where E has i.i.d. standard
/// complex Gaussian entries (real and imaginary parts of variance 1/2) and
/// s = ||psi||_F / sqrt(M*N) is the RMS entry magnitude. Deterministic given
/// the seed.
CMat perturb(const Eigen::Ref<const CMat>& psi, double tau, std::uint64_t seed);

/// Reconstruct the one-step flow of a builtin system ("lorenz", "pendulum",
/// "rotation", "shift") from snapshot metadata; empty when the system is
/// unknown or required parameters are missing.
FlowMap flow_from_meta(const SnapshotMeta& meta);

/// Snapshot files. Text format:
///   # snapshots M=<int> d=<int>
///   <M lines: d floats of x>
///   <M lines: d floats of y>
///   <M lines (or a single line): weights>
/// Paths ending in .json use a JSON object with keys X, Y, weights, meta.
SnapshotSet read_snapshots(const std::string& path);
void write_snapshots(const SnapshotSet& s, const std::string& path);

}  // namespace koopman::sampling
