#include "bparhmm/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace bparhmm {

namespace {

double logSumExpRow(const Eigen::RowVectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

int TransitionWeights::localOf(int global) const {
  for (std::size_t j = 0; j < activeIndex.size(); ++j)
    if (activeIndex[j] == global) return static_cast<int>(j);
  return -1;
}

MatrixXd buildTransitionRows(const TransitionWeights& w) {
  MatrixXd pi = w.eta;
  for (int j = 0; j < pi.rows(); ++j) {
    const double s = pi.row(j).sum();
    if (!(s > 0.0)) throw ContractError("buildTransitionRows: nonpositive row sum");
    pi.row(j) /= s;
  }
  return pi;
}

TransitionWeights subsetWeights(const TransitionWeights& full, const std::vector<int>& active) {
  const int K = static_cast<int>(active.size());
  std::vector<int> cols(K);
  for (int j = 0; j < K; ++j) {
    cols[j] = full.localOf(active[j]);
    if (cols[j] < 0) throw ContractError("subsetWeights: feature not present in source weights");
  }
  TransitionWeights w;
  w.activeIndex = active;
  w.eta.resize(K + 1, K);
  for (int j = 0; j < K; ++j)
    for (int k = 0; k < K; ++k) w.eta(j, k) = full.eta(cols[j], cols[k]);
  for (int k = 0; k < K; ++k) w.eta(K, k) = full.eta(full.eta.rows() - 1, cols[k]);
  return w;
}

double varLogLik(const VectorXd& y, const VectorXd& ylag, const BehaviorParams& theta) {
  const int d = static_cast<int>(y.size());
  Eigen::LLT<MatrixXd> llt(theta.Sigma);
  if (llt.info() != Eigen::Success)
    throw NumericError("varLogLik: Sigma not positive definite");
  const VectorXd resid = y - theta.A * ylag;
  const VectorXd half = llt.matrixL().solve(resid);
  const double logDet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * d * std::log(2.0 * M_PI) - 0.5 * logDet - 0.5 * half.squaredNorm();
}

MatrixXd emissionLogTable(const SequenceData& seq, const std::vector<BehaviorParams>& thetas) {
  const int Teff = seq.effLen();
  const int K = static_cast<int>(thetas.size());
  MatrixXd E(Teff, K);
  for (int k = 0; k < K; ++k) {
    Eigen::LLT<MatrixXd> llt(thetas[k].Sigma);
    if (llt.info() != Eigen::Success)
      throw NumericError("emissionLogTable: Sigma not positive definite for behavior " +
                         std::to_string(k));
    const double logDet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double base = -0.5 * seq.d * std::log(2.0 * M_PI) - 0.5 * logDet;
    // residual matrix for all steps at once
    MatrixXd resid = seq.y.bottomRows(Teff) - seq.ylagged * thetas[k].A.transpose();
    MatrixXd half = llt.matrixL().solve(resid.transpose());
    E.col(k) = base - 0.5 * half.colwise().squaredNorm().transpose().array();
  }
  return E;
}

MatrixXd selectColumns(const MatrixXd& table, const std::vector<int>& cols) {
  MatrixXd out(table.rows(), static_cast<int>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = table.col(cols[j]);
  return out;
}

BackwardMessages backwardMessages(const MatrixXd& logE, const MatrixXd& logPi) {
  const int T = static_cast<int>(logE.rows());
  const int K = static_cast<int>(logE.cols());
  BackwardMessages bm;
  bm.logM = MatrixXd::Zero(T, K);
  bm.norms = VectorXd::Zero(T);
  for (int t = T - 2; t >= 0; --t) {
    for (int k = 0; k < K; ++k) {
      Eigen::RowVectorXd terms =
          logPi.row(k) + logE.row(t + 1) + bm.logM.row(t + 1);
      bm.logM(t, k) = logSumExpRow(terms);
    }
    const double m = bm.logM.row(t).maxCoeff();
    bm.logM.row(t).array() -= m;
    bm.norms(t) = m;
  }
  return bm;
}

double sequenceLogLik(const MatrixXd& logE, const MatrixXd& logPi) {
  const int T = static_cast<int>(logE.rows());
  const int K = static_cast<int>(logE.cols());
  if (T == 0) return 0.0;
  Eigen::RowVectorXd logA = logPi.row(K) + logE.row(0);  // initial pseudo-row
  double acc = 0.0;
  for (int t = 1; t < T; ++t) {
    const double m = logA.maxCoeff();
    acc += m;
    logA.array() -= m;
    Eigen::RowVectorXd next(K);
    for (int k = 0; k < K; ++k) {
      // from-state rows only; row K is the initial pseudo-row
      const Eigen::RowVectorXd terms = logA + logPi.col(k).head(K).transpose();
      next(k) = logSumExpRow(terms) + logE(t, k);
    }
    logA = next;
  }
  return acc + logSumExpRow(logA);
}

std::vector<int> blockSampleZ(const MatrixXd& logE, const MatrixXd& logPi, Rng& rng,
                              double* logDensity) {
  const int T = static_cast<int>(logE.rows());
  const int K = static_cast<int>(logE.cols());
  const BackwardMessages bm = backwardMessages(logE, logPi);
  std::vector<int> z(T);
  double ld = 0.0;
  int prev = K;  // initial pseudo-row
  for (int t = 0; t < T; ++t) {
    Eigen::RowVectorXd logw = logPi.row(prev) + logE.row(t) + bm.logM.row(t);
    const double lse = logSumExpRow(logw);
    Eigen::RowVectorXd p = (logw.array() - lse).exp();
    double u = rng.uniform();
    int k = K - 1;
    double cum = 0.0;
    for (int j = 0; j < K; ++j) {
      cum += p(j);
      if (u < cum) {
        k = j;
        break;
      }
    }
    z[t] = k;
    ld += logw(k) - lse;
    prev = k;
  }
  if (logDensity) *logDensity = ld;
  return z;
}

double blockSampleLogDensity(const MatrixXd& logE, const MatrixXd& logPi,
                             const std::vector<int>& labels) {
  const int T = static_cast<int>(logE.rows());
  const int K = static_cast<int>(logE.cols());
  if (static_cast<int>(labels.size()) != T)
    throw ContractError("blockSampleLogDensity: label length mismatch");
  const BackwardMessages bm = backwardMessages(logE, logPi);
  double ld = 0.0;
  int prev = K;
  for (int t = 0; t < T; ++t) {
    const int k = labels[t];
    if (k < 0 || k >= K) throw ContractError("blockSampleLogDensity: label out of range");
    Eigen::RowVectorXd logw = logPi.row(prev) + logE.row(t) + bm.logM.row(t);
    ld += logw(k) - logSumExpRow(logw);
    prev = k;
  }
  return ld;
}

TransitionCounts countTransitions(const std::vector<int>& zLocal, int Ki) {
  TransitionCounts c;
  c.n = Eigen::MatrixXi::Zero(Ki + 1, Ki);
  int prev = Ki;
  for (int lab : zLocal) {
    if (lab < 0 || lab >= Ki) throw ContractError("countTransitions: label out of range");
    ++c.n(prev, lab);
    prev = lab;
  }
  return c;
}

std::vector<int> toLocalLabels(const std::vector<int>& zGlobal, const std::vector<int>& active) {
  std::vector<int> out(zGlobal.size());
  for (std::size_t t = 0; t < zGlobal.size(); ++t) {
    auto it = std::lower_bound(active.begin(), active.end(), zGlobal[t]);
    if (it == active.end() || *it != zGlobal[t])
      throw ContractError("toLocalLabels: label not in active set");
    out[t] = static_cast<int>(it - active.begin());
  }
  return out;
}

std::vector<int> toGlobalLabels(const std::vector<int>& zLocal, const std::vector<int>& active) {
  std::vector<int> out(zLocal.size());
  for (std::size_t t = 0; t < zLocal.size(); ++t) {
    if (zLocal[t] < 0 || zLocal[t] >= static_cast<int>(active.size()))
      throw ContractError("toGlobalLabels: label out of range");
    out[t] = active[zLocal[t]];
  }
  return out;
}

}  // namespace bparhmm
