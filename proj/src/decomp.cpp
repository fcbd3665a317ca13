#include "koopman/decomp.hpp"

#include "koopman/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

namespace koopman::decomp {

namespace {

constexpr double gram_rtol = 1e-12;

/// Sort an eigendecomposition by eigenvalue phase ascending, stable in the
/// original column order.
void sort_by_phase(CVec& values, CMat& vectors) {
  const Index n = values.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::arg(values(a)) < std::arg(values(b)); });
  CVec sv(n);
  CMat sm(vectors.rows(), n);
  for (Index j = 0; j < n; ++j) {
    sv(j) = values(order[static_cast<std::size_t>(j)]);
    sm.col(j) = vectors.col(order[static_cast<std::size_t>(j)]);
  }
  values = std::move(sv);
  vectors = std::move(sm);
}

numkit::EigPair checked_gram_eig(const CMat& G) {
  numkit::EigPair eg = numkit::hermitian_eig(G);
  const Index n = eg.values.size();
  const double lam_min = eg.values(0).real();
  const double lam_max = eg.values(n - 1).real();
  if (lam_min <= gram_rtol * lam_max)
    throw IllConditionedGram("Gram matrix is numerically rank-deficient (min/max eigenvalue ratio " +
                             std::to_string(lam_min / std::max(lam_max, 1e-300)) + ")");
  return eg;
}

Procrustes procrustes_from_cross(const CMat& cross) {
  numkit::Svd dec = numkit::svd(cross);
  Procrustes out;
  out.C = dec.Vt.adjoint() * dec.U.adjoint();
  out.sigma = dec.sigma;
  return out;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::dmd: return "dmd";
    case Method::edmd: return "edmd";
    case Method::pidmd: return "pidmd";
    case Method::mpedmd: return "mpedmd";
  }
  return "edmd";
}

Method method_from_string(const std::string& name) {
  if (name == "dmd") return Method::dmd;
  if (name == "edmd") return Method::edmd;
  if (name == "pidmd") return Method::pidmd;
  if (name == "mpedmd") return Method::mpedmd;
  throw InvalidInput("unknown method '" + name + "' (expected dmd|edmd|pidmd|mpedmd)");
}

KoopmanModel edmd(const dictionary::GramPair& gp) {
  if (gp.G.rows() != gp.G.cols() || gp.A.rows() != gp.A.cols() || gp.G.rows() != gp.A.rows())
    throw InvalidInput("edmd: G and A must be square with equal size");
  numkit::EigPair eg = checked_gram_eig(gp.G);
  RVec lam = eg.values.real();

  KoopmanModel model;
  model.method = Method::edmd;
  model.G = gp.G;
  model.Ghalf = eg.vectors * lam.cwiseSqrt().asDiagonal() * eg.vectors.adjoint();
  model.Gneghalf = eg.vectors * lam.cwiseSqrt().cwiseInverse().asDiagonal() * eg.vectors.adjoint();
  model.K = eg.vectors * lam.cwiseInverse().asDiagonal() * (eg.vectors.adjoint() * gp.A);

  Eigen::ComplexEigenSolver<CMat> es(model.K);
  if (es.info() != Eigen::Success) throw NumericalError("edmd: eigensolver failed");
  model.eigvals = es.eigenvalues();
  model.eigvecs = es.eigenvectors();
  sort_by_phase(model.eigvals, model.eigvecs);
  for (Index j = 0; j < model.eigvecs.cols(); ++j) {
    const double gn = (model.eigvecs.col(j).adjoint() * gp.G * model.eigvecs.col(j)).value().real();
    if (gn > 0.0 && std::isfinite(gn)) model.eigvecs.col(j) /= std::sqrt(gn);
  }

  // An eigenvector basis this far from invertible means the eigenproblem is
  // numerically defective; keep the model but mark the pairs unreliable.
  const double cond = numkit::cond2(model.eigvecs);
  model.eig_reliable = model.eigvecs.allFinite() && std::isfinite(cond) && cond < 1e8;
  return model;
}

KoopmanModel dmd(const Eigen::Ref<const RMat>& X, const Eigen::Ref<const RMat>& Y,
                 const Eigen::Ref<const RVec>& weights) {
  dictionary::GramPair gp = dictionary::gram(X.cast<Complex>(), Y.cast<Complex>(), weights);
  KoopmanModel model = edmd(gp);
  model.method = Method::dmd;
  model.dict.type = "linear";
  return model;
}

Procrustes procrustes(const Eigen::Ref<const CMat>& P, const Eigen::Ref<const CMat>& Q) {
  if (P.rows() != Q.rows() || P.cols() != Q.cols())
    throw InvalidInput("procrustes: P and Q must have the same shape");
  if (!P.allFinite() || !Q.allFinite()) throw InvalidInput("procrustes: non-finite entries");
  return procrustes_from_cross(Q.adjoint() * P);
}

KoopmanModel mpedmd(const dictionary::GramPair& gp) {
  if (gp.G.rows() != gp.G.cols() || gp.A.rows() != gp.A.cols() || gp.G.rows() != gp.A.rows())
    throw InvalidInput("mpedmd: G and A must be square with equal size");
  numkit::SpdRoots roots = numkit::spd_sqrt(gp.G, gram_rtol);
  Procrustes pc = procrustes_from_cross(roots.neg_half * gp.A.adjoint() * roots.neg_half);
  numkit::EigPair ep = numkit::unitary_eig(pc.C);

  KoopmanModel model;
  model.method = Method::mpedmd;
  model.G = gp.G;
  model.Ghalf = roots.half;
  model.Gneghalf = roots.neg_half;
  model.K = roots.neg_half * pc.C * roots.half;
  model.eigvals = ep.values;
  model.vhat = ep.vectors;
  model.eigvecs = roots.neg_half * ep.vectors;
  return model;
}

KoopmanModel pidmd_unitary(const Eigen::Ref<const RMat>& X, const Eigen::Ref<const RMat>& Y,
                           const Eigen::Ref<const RVec>& weights) {
  if (X.rows() != Y.rows() || X.cols() != Y.cols())
    throw InvalidInput("pidmd: X and Y must have the same shape");
  CMat xc = X.transpose().cast<Complex>();  // states as columns
  CMat yc = Y.transpose().cast<Complex>();
  numkit::Svd dec = numkit::svd(yc * xc.adjoint());
  CMat K = dec.Vt.adjoint() * dec.U.adjoint();  // V2 V1^*
  numkit::EigPair ep = numkit::unitary_eig(K);

  KoopmanModel model;
  model.method = Method::pidmd;
  model.K = std::move(K);
  model.eigvals = ep.values;
  model.eigvecs = ep.vectors;
  model.dict.type = "linear";

  dictionary::GramPair gp = dictionary::gram(X.cast<Complex>(), Y.cast<Complex>(), weights);
  model.G = gp.G;
  try {
    numkit::SpdRoots roots = numkit::spd_sqrt(gp.G, gram_rtol);
    model.Ghalf = std::move(roots.half);
    model.Gneghalf = std::move(roots.neg_half);
  } catch (const IllConditionedGram&) {
    // piDMD itself never touches G; leave the cached roots empty.
  }
  return model;
}

namespace {

nlohmann::ordered_json cmat_to_json(const CMat& m) {
  nlohmann::ordered_json re = nlohmann::ordered_json::array();
  nlohmann::ordered_json im = nlohmann::ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::ordered_json rr = nlohmann::ordered_json::array();
    nlohmann::ordered_json ri = nlohmann::ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) {
      rr.push_back(m(i, j).real());
      ri.push_back(m(i, j).imag());
    }
    re.push_back(std::move(rr));
    im.push_back(std::move(ri));
  }
  nlohmann::ordered_json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  out["re"] = std::move(re);
  out["im"] = std::move(im);
  return out;
}

CMat cmat_from_json(const nlohmann::json& j, const char* name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("re") || !j.contains("im"))
    throw InvalidInput(std::string("model: malformed matrix field ") + name);
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  CMat m(rows, cols);
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (static_cast<Index>(re.size()) != rows || static_cast<Index>(im.size()) != rows)
    throw InvalidInput(std::string("model: inconsistent matrix field ") + name);
  for (Index i = 0; i < rows; ++i) {
    const auto& rr = re.at(static_cast<std::size_t>(i));
    const auto& ri = im.at(static_cast<std::size_t>(i));
    if (static_cast<Index>(rr.size()) != cols || static_cast<Index>(ri.size()) != cols)
      throw InvalidInput(std::string("model: inconsistent matrix field ") + name);
    for (Index k = 0; k < cols; ++k)
      m(i, k) = Complex(rr.at(static_cast<std::size_t>(k)).get<double>(),
                        ri.at(static_cast<std::size_t>(k)).get<double>());
  }
  return m;
}

}  // namespace

nlohmann::ordered_json to_json(const KoopmanModel& model) {
  nlohmann::ordered_json j;
  j["format"] = "koopman-mp/model-v1";
  j["method"] = to_string(model.method);
  j["n"] = model.size();
  j["eig_reliable"] = model.eig_reliable;
  if (!model.dict.type.empty()) j["dictionary"] = dictionary::to_json(model.dict);
  {
    nlohmann::ordered_json meta;
    meta["system"] = model.meta.system;
    meta["dt"] = model.meta.dt;
    meta["regime"] = model.meta.regime;
    meta["params"] = model.meta.params;
    j["meta"] = std::move(meta);
  }
  j["K"] = cmat_to_json(model.K);
  j["eigvals"] = cmat_to_json(model.eigvals);
  j["V"] = cmat_to_json(model.eigvecs);
  j["G"] = cmat_to_json(model.G);
  if (model.vhat.size() > 0) j["vhat"] = cmat_to_json(model.vhat);
  return j;
}

KoopmanModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", std::string{}) != "koopman-mp/model-v1")
    throw InvalidInput("model: not a koopman-mp/model-v1 document");
  KoopmanModel model;
  model.method = method_from_string(j.at("method").get<std::string>());
  model.eig_reliable = j.value("eig_reliable", true);
  if (j.contains("dictionary")) model.dict = dictionary::parse_dictionary_spec(j.at("dictionary"));
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    model.meta.system = m.value("system", std::string{});
    model.meta.dt = m.value("dt", 0.0);
    model.meta.regime = m.value("regime", std::string{});
    if (m.contains("params"))
      for (auto it = m.at("params").begin(); it != m.at("params").end(); ++it)
        model.meta.params[it.key()] = it.value().get<double>();
  }
  model.K = cmat_from_json(j.at("K"), "K");
  model.eigvals = cmat_from_json(j.at("eigvals"), "eigvals").col(0);
  model.eigvecs = cmat_from_json(j.at("V"), "V");
  model.G = cmat_from_json(j.at("G"), "G");
  if (j.contains("vhat")) model.vhat = cmat_from_json(j.at("vhat"), "vhat");

  // Cached roots are recomputed deterministically from the stored G.
  if (model.method == Method::mpedmd || model.vhat.size() > 0) {
    numkit::SpdRoots roots = numkit::spd_sqrt(model.G, gram_rtol);
    model.Ghalf = std::move(roots.half);
    model.Gneghalf = std::move(roots.neg_half);
  }
  return model;
}

void write_model(const KoopmanModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("model: cannot write " + path);
  out << to_json(model).dump(1) << '\n';
}

KoopmanModel read_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("model: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("model: failed to parse " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace koopman::decomp
