#pragma once

#include "koopman/dictionary.hpp"
#include "koopman/numkit.hpp"
#include "koopman/sampling.hpp"
#include "koopman/types.hpp"

#include <json.hpp>

#include <string>

namespace koopman::decomp {

enum class Method { dmd, edmd, pidmd, mpedmd };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

/// A fitted Koopman matrix with its eigendecomposition and provenance.
///
/// Eigenvalues are sorted by phase ascending in (-pi, pi]. For mpedmd the
/// spectrum lies on the unit circle, vhat = G^{1/2} V is unitary and
/// K^* G K = G; eig_reliable is false when a general eigensolver produced an
/// ill-conditioned eigenvector basis (EDMD on defective problems).
struct KoopmanModel {
  Method method = Method::edmd;
  CMat K;
  CVec eigvals;
  CMat eigvecs;
  CMat G;
  CMat Ghalf;
  CMat Gneghalf;
  CMat vhat;
  bool eig_reliable = true;
  dictionary::DictionarySpec dict;
  sampling::SnapshotMeta meta;

  Index size() const { return K.rows(); }
};

/// EDMD fit K = G^{-1} A. Throws IllConditionedGram when G is numerically
/// singular. A defective eigenproblem does not throw; the model comes back
/// with eig_reliable = false.
KoopmanModel edmd(const dictionary::GramPair& gp);

/// DMD as EDMD with the linear-coordinate dictionary. The fitted K is the
/// transpose of the usual DMD matrix Y_w X_w^+.
KoopmanModel dmd(const Eigen::Ref<const RMat>& X, const Eigen::Ref<const RMat>& Y,
                 const Eigen::Ref<const RVec>& weights);

/// Solution of min_{C unitary} ||P C - Q||_F via the SVD Q^* P = U1 S U2^*,
/// C = U2 U1^*. sigma holds the singular values of Q^* P; the optimal
/// objective value is ||P||_F^2 + ||Q||_F^2 - 2 sum(sigma).
struct Procrustes {
  CMat C;
  RVec sigma;
};

Procrustes procrustes(const Eigen::Ref<const CMat>& P, const Eigen::Ref<const CMat>& Q);

/// Measure-preserving EDMD:
///   1. SVD of G^{-1/2} A^* G^{-1/2} = U1 S U2^*
///   2. unitary eigendecomposition U2 U1^* = vhat L vhat^*
///   3. K = G^{-1/2} U2 U1^* G^{1/2}, V = G^{-1/2} vhat
/// K solves the G-isometry-constrained least squares problem and satisfies
/// K^* G K = G with unit-modulus spectrum.
KoopmanModel mpedmd(const dictionary::GramPair& gp);

/// Unitary-constrained DMD on linear observables: from the SVD
/// Y X^* = V1 S V2^* (states as columns), K = V2 V1^*. This is the
/// transposed-matrix convention; it matches the fitted K of the other
/// methods, which acts on dictionary coefficients.
KoopmanModel pidmd_unitary(const Eigen::Ref<const RMat>& X, const Eigen::Ref<const RMat>& Y,
                           const Eigen::Ref<const RVec>& weights);

nlohmann::ordered_json to_json(const KoopmanModel& model);
KoopmanModel model_from_json(const nlohmann::json& j);

void write_model(const KoopmanModel& model, const std::string& path);
KoopmanModel read_model(const std::string& path);

}  // namespace koopman::decomp
