#include "bparhmm/types.hpp"

#include <Eigen/Cholesky>

namespace bparhmm {

SequenceData SequenceData::fromObservations(std::string id, const MatrixXd& y, int r) {
  if (r < 1) throw ContractError("SequenceData: lag order must be positive");
  if (y.rows() <= r)
    throw ContractError("SequenceData: sequence '" + id + "' needs more than r observations");
  SequenceData s;
  s.id = std::move(id);
  s.y = y;
  s.r = r;
  s.d = static_cast<int>(y.cols());
  const int eff = static_cast<int>(y.rows()) - r;
  s.ylagged.resize(eff, r * s.d);
  for (int t = 0; t < eff; ++t)
    for (int l = 1; l <= r; ++l)
      s.ylagged.block(t, (l - 1) * s.d, 1, s.d) = y.row(r + t - l);
  return s;
}

std::vector<int> FeatureMatrix::activeSet(int i) const {
  std::vector<int> out;
  for (int k = 0; k < K(); ++k)
    if (get(i, k)) out.push_back(k);
  return out;
}

std::vector<int> FeatureMatrix::uniqueFeatures(int i) const {
  std::vector<int> out;
  for (int k = 0; k < K(); ++k)
    if (get(i, k) && usage(k) == 1) out.push_back(k);
  return out;
}

void FeatureMatrix::appendColumn() {
  f_.conservativeResize(Eigen::NoChange, f_.cols() + 1);
  f_.col(f_.cols() - 1).setZero();
}

void FeatureMatrix::removeColumn(int k) {
  const int kk = static_cast<int>(f_.cols());
  if (k < 0 || k >= kk) throw ContractError("FeatureMatrix::removeColumn: index out of range");
  for (int j = k; j + 1 < kk; ++j) f_.col(j) = f_.col(j + 1);
  f_.conservativeResize(Eigen::NoChange, kk - 1);
}

bool FeatureMatrix::valid() const {
  for (int i = 0; i < N(); ++i)
    if (rowCount(i) == 0) return false;
  for (int k = 0; k < K(); ++k)
    if (usage(k) == 0) return false;
  return true;
}

namespace {
void checkSPD(const MatrixXd& m, const char* name) {
  if (m.rows() != m.cols()) throw ContractError(std::string(name) + " must be square");
  if (!m.isApprox(m.transpose(), 1e-8))
    throw ContractError(std::string(name) + " must be symmetric");
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw ContractError(std::string(name) + " must be positive definite");
}
}  // namespace

void MNIWPrior::validate() const {
  checkSPD(S0, "MNIWPrior::S0");
  checkSPD(L, "MNIWPrior::L");
  if (!(n0 > d() - 1)) throw ContractError("MNIWPrior: n0 must exceed d - 1");
  if (M.rows() != S0.rows() || M.cols() != L.rows())
    throw ContractError("MNIWPrior: M has inconsistent shape");
}

MNIWPrior MNIWPrior::defaultFor(int d, int r) {
  MNIWPrior p;
  p.n0 = d + 2;
  p.S0 = MatrixXd::Identity(d, d);
  p.M = MatrixXd::Zero(d, r * d);
  p.L = MatrixXd::Identity(r * d, r * d);
  return p;
}

void ModelHypers::validate() const {
  if (!(alpha > 0.0)) throw ContractError("ModelHypers: alpha must be positive");
  if (!(c > 0.0)) throw ContractError("ModelHypers: c must be positive");
  if (!(gamma > 0.0)) throw ContractError("ModelHypers: gamma must be positive");
  if (!(kappa >= 0.0)) throw ContractError("ModelHypers: kappa must be nonnegative");
  mniw.validate();
}

void checkConsistency(const Dataset& data, const FeatureMatrix& F, const StateSequenceSet& z) {
  if (static_cast<int>(z.size()) != F.N() || data.size() != z.size())
    throw ContractError("checkConsistency: N mismatch between data, F, and z");
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (static_cast<int>(z[i].size()) != data[i].effLen())
      throw ContractError("checkConsistency: z length mismatch for sequence " + data[i].id);
    for (int lab : z[i]) {
      if (lab < 0 || lab >= F.K() || !F.get(static_cast<int>(i), lab))
        throw ContractError("checkConsistency: state not owned by sequence " + data[i].id);
    }
  }
}

}  // namespace bparhmm
