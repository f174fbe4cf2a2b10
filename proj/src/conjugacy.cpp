#include "bparhmm/conjugacy.hpp"

#include <atomic>
#include <cmath>

namespace bparhmm {

namespace {

std::atomic<long> g_jitterEvents{0};

// log-determinant of an SPD matrix; applies a trace-scaled jitter floor if
// the factorization fails, counting the event.
Eigen::LLT<MatrixXd> factorSPD(const MatrixXd& m, const char* what) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-10 * m.trace() / static_cast<double>(m.rows());
  MatrixXd mj = m + jitter * MatrixXd::Identity(m.rows(), m.cols());
  llt.compute(mj);
  ++g_jitterEvents;
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string("factorSPD: matrix not positive definite: ") + what);
  return llt;
}

double logDetFromLLT(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

long BehaviorSuffStats::jitterEvents() { return g_jitterEvents.load(); }

BehaviorSuffStats::BehaviorSuffStats(const MNIWPrior& prior) {
  Slyly_ = prior.L;
  Syly_ = prior.M * prior.L;
  Syy_ = Syly_ * prior.M.transpose();
  count_ = 0;
}

void BehaviorSuffStats::add(const VectorXd& y, const VectorXd& ylag) {
  Syy_.noalias() += y * y.transpose();
  Syly_.noalias() += y * ylag.transpose();
  Slyly_.noalias() += ylag * ylag.transpose();
  ++count_;
  invalidate();
}

void BehaviorSuffStats::remove(const VectorXd& y, const VectorXd& ylag) {
  if (count_ == 0) throw ContractError("BehaviorSuffStats::remove on empty stats");
  Syy_.noalias() -= y * y.transpose();
  Syly_.noalias() -= y * ylag.transpose();
  Slyly_.noalias() -= ylag * ylag.transpose();
  --count_;
  invalidate();
}

const Eigen::LLT<MatrixXd>& BehaviorSuffStats::lltSlyly() const {
  if (!lltCache_) lltCache_ = factorSPD(Slyly_, "S_lylag");
  return *lltCache_;
}

MatrixXd BehaviorSuffStats::schur() const {
  // Syy - Syly Slyly^{-1} Syly^T via the cached factorization
  MatrixXd solved = lltSlyly().solve(Syly_.transpose());
  MatrixXd s = Syy_ - Syly_ * solved;
  return 0.5 * (s + s.transpose());  // enforce symmetry against roundoff
}

double logMvGamma(int d, double a) {
  if (!(a > 0.5 * (d - 1))) throw std::domain_error("logMvGamma: pole (a <= (d-1)/2)");
  double s = 0.25 * d * (d - 1) * std::log(M_PI);
  for (int j = 1; j <= d; ++j) s += std::lgamma(a + 0.5 * (1 - j));
  return s;
}

double logMarginalLikelihood(const BehaviorSuffStats& stats, const MNIWPrior& prior) {
  const int d = prior.d();
  const double n0 = prior.n0;
  const double nk = stats.count();
  if (stats.count() == 0) return 0.0;  // m(empty) = 1

  const Eigen::LLT<MatrixXd> lltS0 = factorSPD(prior.S0, "S0");
  const Eigen::LLT<MatrixXd> lltL = factorSPD(prior.L, "L");
  const double logDetSlyly = logDetFromLLT(stats.lltSlyly());
  const MatrixXd post = stats.schur() + prior.S0;
  const Eigen::LLT<MatrixXd> lltPost = factorSPD(post, "S_{y|lag} + S0");

  return -0.5 * nk * d * std::log(M_PI)
         + logMvGamma(d, 0.5 * (nk + n0)) - logMvGamma(d, 0.5 * n0)
         + 0.5 * n0 * logDetFromLLT(lltS0)
         - 0.5 * (nk + n0) * logDetFromLLT(lltPost)
         + 0.5 * d * (logDetFromLLT(lltL) - logDetSlyly);
}

MNIWPosterior posteriorParams(const MNIWPrior& prior, const BehaviorSuffStats& stats) {
  MNIWPosterior p;
  const Eigen::LLT<MatrixXd> llt = factorSPD(stats.Slyly(), "S_lylag");
  p.meanA = llt.solve(stats.Syly().transpose()).transpose();
  p.colPrecision = stats.Slyly();
  p.dof = stats.count() + prior.n0;
  MatrixXd schur = stats.Syy() - p.meanA * stats.Syly().transpose();
  p.scale = 0.5 * (schur + schur.transpose()) + prior.S0;
  return p;
}

double logMNIWPdf(const MNIWPrior& p, const BehaviorParams& theta) {
  const int d = p.d();
  const int m = p.m();
  const Eigen::LLT<MatrixXd> lltSig = factorSPD(theta.Sigma, "MNIW Sigma");
  const Eigen::LLT<MatrixXd> lltL = factorSPD(p.L, "MNIW L");
  const Eigen::LLT<MatrixXd> lltS0 = factorSPD(p.S0, "MNIW S0");
  const double logDetSig = logDetFromLLT(lltSig);

  const MatrixXd dev = theta.A - p.M;
  const double quadMN = (p.L * dev.transpose() * lltSig.solve(dev)).trace();
  const double quadIW = lltSig.solve(p.S0).trace();

  const double mn = -0.5 * d * m * std::log(2.0 * M_PI) + 0.5 * d * logDetFromLLT(lltL) -
                    0.5 * m * logDetSig - 0.5 * quadMN;
  const double iw = 0.5 * p.n0 * logDetFromLLT(lltS0) - 0.5 * p.n0 * d * std::log(2.0) -
                    logMvGamma(d, 0.5 * p.n0) - 0.5 * (p.n0 + d + 1.0) * logDetSig -
                    0.5 * quadIW;
  return mn + iw;
}

MatrixXd sampleInverseWishart(double dof, const MatrixXd& scale, Rng& rng) {
  const int d = static_cast<int>(scale.rows());
  if (!(dof > d - 1)) throw ContractError("sampleInverseWishart: dof too small");
  // W ~ Wishart(dof, scale^{-1}); Sigma = W^{-1}
  const Eigen::LLT<MatrixXd> lltScale = factorSPD(scale, "IW scale");
  MatrixXd scaleInv = lltScale.solve(MatrixXd::Identity(d, d));
  scaleInv = 0.5 * (scaleInv + scaleInv.transpose());
  const Eigen::LLT<MatrixXd> lltInv = factorSPD(scaleInv, "IW scale inverse");
  MatrixXd A = MatrixXd::Zero(d, d);  // Bartlett factor
  for (int i = 0; i < d; ++i) {
    A(i, i) = std::sqrt(2.0 * rng.gammaDraw(0.5 * (dof - i)));
    for (int j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  MatrixXd B = lltInv.matrixL() * A;  // W = B B^T
  // Sigma = (B B^T)^{-1} = B^{-T} B^{-1}
  MatrixXd Binv = B.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(d, d));
  MatrixXd sigma = Binv.transpose() * Binv;
  return 0.5 * (sigma + sigma.transpose());
}

MatrixXd sampleMatrixNormal(const MatrixXd& mean, const MatrixXd& rowCov,
                            const MatrixXd& colPrecision, Rng& rng) {
  const int d = static_cast<int>(mean.rows());
  const int m = static_cast<int>(mean.cols());
  const Eigen::LLT<MatrixXd> lltRow = factorSPD(rowCov, "MN row covariance");
  const Eigen::LLT<MatrixXd> lltColP = factorSPD(colPrecision, "MN column precision");
  MatrixXd Z(d, m);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < m; ++j) Z(i, j) = rng.normal();
  // X = mean + chol(rowCov) Z chol(colPrecision)^{-1}
  MatrixXd LZ = lltRow.matrixL() * Z;
  MatrixXd C = lltColP.matrixL();
  // LZ * C^{-1} = (C^{-T} LZ^T)^T
  MatrixXd rhs = C.transpose().triangularView<Eigen::Upper>().solve(LZ.transpose());
  return mean + rhs.transpose();
}

BehaviorParams samplePosteriorTheta(const MNIWPrior& prior, const BehaviorSuffStats& stats, Rng& rng) {
  const MNIWPosterior post = posteriorParams(prior, stats);
  BehaviorParams theta;
  theta.Sigma = sampleInverseWishart(post.dof, post.scale, rng);
  theta.A = sampleMatrixNormal(post.meanA, theta.Sigma, post.colPrecision, rng);
  return theta;
}

BehaviorParams posteriorMeanTheta(const MNIWPrior& prior, const BehaviorSuffStats& stats) {
  const MNIWPosterior post = posteriorParams(prior, stats);
  const int d = prior.d();
  BehaviorParams theta;
  theta.A = post.meanA;
  if (post.dof > d + 1) {
    theta.Sigma = post.scale / (post.dof - d - 1);
  } else {
    // mean undefined; use the IW mode instead
    theta.Sigma = post.scale / (post.dof + d + 1);
  }
  return theta;
}

}  // namespace bparhmm
