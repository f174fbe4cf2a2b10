#include "bparhmm/oracle.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "bparhmm/dynamics.hpp"
#include "bparhmm/model.hpp"
#include "bparhmm/simulate.hpp"

namespace bparhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logSumExp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

// Sequential Polya-urn log probability of one label sequence: each step uses
// the Dirichlet-multinomial predictive given the counts so far.
double urnLogProb(const std::vector<int>& zLocal, int Ki, double gamma, double kappa) {
  Eigen::MatrixXd n = Eigen::MatrixXd::Zero(Ki + 1, Ki);
  double lp = 0.0;
  int prev = Ki;  // initial pseudo-row
  for (int lab : zLocal) {
    const double a = gamma + ((prev < Ki && prev == lab) ? kappa : 0.0);
    const double A = Ki * gamma + ((prev < Ki) ? kappa : 0.0);
    const double rowTot = n.row(prev).sum();
    lp += std::log(a + n(prev, lab)) - std::log(A + rowTot);
    n(prev, lab) += 1.0;
    prev = lab;
  }
  return lp;
}

// Running MNIW posterior kept as explicit prior-form parameters, updated one
// observation at a time; predictive is the multivariate Student-t.
struct RunningMNIW {
  double n0;
  MatrixXd S0, M, L;

  explicit RunningMNIW(const MNIWPrior& p) : n0(p.n0), S0(p.S0), M(p.M), L(p.L) {}

  double logPredictive(const VectorXd& y, const VectorXd& ylag) const {
    const int d = static_cast<int>(S0.rows());
    const double nu = n0 - d + 1.0;
    const double q = 1.0 + ylag.dot(L.ldlt().solve(ylag));
    const MatrixXd Lambda = (q / nu) * S0;
    const VectorXd resid = y - M * ylag;
    const double quad = resid.dot(Lambda.ldlt().solve(resid));
    return std::lgamma((nu + d) / 2.0) - std::lgamma(nu / 2.0) -
           0.5 * d * std::log(nu * M_PI) - 0.5 * std::log(Lambda.determinant()) -
           0.5 * (nu + d) * std::log1p(quad / nu);
  }

  void update(const VectorXd& y, const VectorXd& ylag) {
    const MatrixXd Lnew = L + ylag * ylag.transpose();
    const MatrixXd Mnum = M * L + y * ylag.transpose();
    const MatrixXd Mnew = Lnew.ldlt().solve(Mnum.transpose()).transpose();
    // scale update from the rank-one likelihood completion
    S0 += y * y.transpose() + M * L * M.transpose() - Mnew * Lnew * Mnew.transpose();
    M = Mnew;
    L = Lnew;
    n0 += 1.0;
  }
};

}  // namespace

double bruteForceJointLogProb(const Dataset& data, const FeatureMatrix& F,
                              const ModelHypers& hypers) {
  const int N = static_cast<int>(data.size());
  const int K = F.K();
  long totalSteps = 0;
  for (const SequenceData& s : data) totalSteps += s.effLen();
  if (K > 3 || totalSteps > 10)
    throw ContractError("bruteForceJointLogProb: instance too large to enumerate");

  std::vector<std::vector<int>> active(N);
  std::vector<int> effLen(N);
  for (int i = 0; i < N; ++i) {
    active[i] = F.activeSet(i);
    effLen[i] = data[i].effLen();
  }

  // odometer over the concatenated local label vector
  std::vector<int> labels(static_cast<std::size_t>(totalSteps), 0);
  std::vector<int> radix(labels.size());
  {
    std::size_t pos = 0;
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < effLen[i]; ++t) radix[pos++] = static_cast<int>(active[i].size());
  }

  double logSum = kNegInf;
  while (true) {
    double lp = 0.0;
    std::vector<RunningMNIW> chains;
    chains.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) chains.emplace_back(hypers.mniw);

    std::size_t pos = 0;
    for (int i = 0; i < N; ++i) {
      const int Ki = static_cast<int>(active[i].size());
      std::vector<int> zLocal(labels.begin() + static_cast<long>(pos),
                              labels.begin() + static_cast<long>(pos) + effLen[i]);
      lp += urnLogProb(zLocal, Ki, hypers.gamma, hypers.kappa);
      for (int t = 0; t < effLen[i]; ++t) {
        const int k = active[i][zLocal[t]];
        const VectorXd y = data[i].obs(t);
        const VectorXd ylag = data[i].lag(t);
        lp += chains[k].logPredictive(y, ylag);
        chains[k].update(y, ylag);
      }
      pos += static_cast<std::size_t>(effLen[i]);
    }
    logSum = logSumExp2(logSum, lp);

    // advance the odometer
    std::size_t carry = 0;
    while (carry < labels.size()) {
      if (++labels[carry] < radix[carry]) break;
      labels[carry] = 0;
      ++carry;
    }
    if (carry == labels.size()) break;
  }
  return ibpMarkedLogProb(F, hypers.alpha, hypers.c) + logSum;
}

double bruteForceSequenceLogLik(const MatrixXd& logE, const MatrixXd& logPi) {
  const int T = static_cast<int>(logE.rows());
  const int K = static_cast<int>(logE.cols());
  if (T == 0) return 0.0;
  if (std::pow(static_cast<double>(K), T) > 1e7)
    throw ContractError("bruteForceSequenceLogLik: instance too large to enumerate");
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double logSum = kNegInf;
  while (true) {
    double lp = logPi(K, path[0]) + logE(0, path[0]);
    for (int t = 1; t < T; ++t) lp += logPi(path[t - 1], path[t]) + logE(t, path[t]);
    logSum = logSumExp2(logSum, lp);
    int carry = 0;
    while (carry < T) {
      if (++path[carry] < K) break;
      path[carry] = 0;
      ++carry;
    }
    if (carry == T) break;
  }
  return logSum;
}

namespace {

ModelHypers drawHypers(const HyperPriors& hp, const MNIWPrior& mniw, Rng& rng) {
  ModelHypers h;
  h.alpha = rng.gammaDraw(hp.alphaShape, hp.alphaRate);
  h.c = rng.gammaDraw(hp.cShape, hp.cRate);
  h.gamma = rng.gammaDraw(hp.gammaShape, hp.gammaRate);
  h.kappa = rng.gammaDraw(hp.kappaShape, hp.kappaRate);
  h.mniw = mniw;
  return h;
}

// y | F, z, theta-prior: first r observations iid standard normal, then the
// VAR recursion along the fixed label path.
Dataset regenerateData(const GewekeConfig& cfg, const FeatureMatrix& F,
                       const StateSequenceSet& z, const ModelHypers& hypers, Rng& rng) {
  const int K = F.K();
  std::vector<BehaviorParams> thetas(K);
  for (int k = 0; k < K; ++k) {
    BehaviorSuffStats empty(hypers.mniw);
    thetas[k] = samplePosteriorTheta(hypers.mniw, empty, rng);
  }
  Dataset data;
  for (int i = 0; i < F.N(); ++i) {
    MatrixXd y(cfg.T, cfg.d);
    for (int t = 0; t < cfg.r; ++t)
      for (int j = 0; j < cfg.d; ++j) y(t, j) = rng.normal();
    for (int t = cfg.r; t < cfg.T; ++t) {
      VectorXd ylag(cfg.r * cfg.d);
      for (int l = 1; l <= cfg.r; ++l)
        ylag.segment((l - 1) * cfg.d, cfg.d) = y.row(t - l).transpose();
      const BehaviorParams& th = thetas[z[i][t - cfg.r]];
      Eigen::LLT<MatrixXd> llt(th.Sigma);
      VectorXd noise(cfg.d);
      for (int j = 0; j < cfg.d; ++j) noise(j) = rng.normal();
      y.row(t) = (th.A * ylag + llt.matrixL() * noise).transpose();
    }
    data.push_back(SequenceData::fromObservations("g" + std::to_string(i), y, cfg.r));
  }
  return data;
}

struct JointDraw {
  ModelHypers hypers;
  FeatureMatrix F;
  StateSequenceSet z;
  Dataset data;
};

// Joint rejection: hypers and F are redrawn together until every row is
// nonempty, matching the support the sampler kernels preserve.
JointDraw forwardDraw(const GewekeConfig& cfg, const MNIWPrior& mniw, Rng& rng) {
  JointDraw d;
  while (true) {
    d.hypers = drawHypers(cfg.hyperPriors, mniw, rng);
    d.F = sampleIBP(d.hypers.alpha, d.hypers.c, cfg.N, rng);
    bool ok = true;
    for (int i = 0; i < cfg.N; ++i)
      if (d.F.rowCount(i) == 0) ok = false;
    if (ok) break;
  }
  SyntheticResult sim = generateFromBehaviors(d.hypers, d.F, [&] {
    std::vector<BehaviorParams> thetas(d.F.K());
    for (int k = 0; k < d.F.K(); ++k) {
      BehaviorSuffStats empty(d.hypers.mniw);
      thetas[k] = samplePosteriorTheta(d.hypers.mniw, empty, rng);
    }
    return thetas;
  }(), cfg.T, cfg.r, rng);
  d.z = sim.truth.trueZ;
  d.data = std::move(sim.data);
  return d;
}

std::vector<double> trackedStats(const ModelHypers& hypers, const FeatureMatrix& F,
                                 const StateSequenceSet& z) {
  double selfCount = 0.0;
  for (const auto& zi : z)
    for (std::size_t t = 1; t < zi.size(); ++t)
      if (zi[t] == zi[t - 1]) selfCount += 1.0;
  return {static_cast<double>(F.K()), static_cast<double>(F.raw().sum()),
          selfCount / static_cast<double>(z.size()), hypers.alpha};
}

void meanAndBatchSE(const std::vector<std::vector<double>>& samples, int nBatches,
                    std::vector<double>& mean, std::vector<double>& se) {
  const std::size_t n = samples.size();
  const std::size_t dims = samples[0].size();
  mean.assign(dims, 0.0);
  for (const auto& s : samples)
    for (std::size_t j = 0; j < dims; ++j) mean[j] += s[j];
  for (std::size_t j = 0; j < dims; ++j) mean[j] /= static_cast<double>(n);

  const std::size_t batchSize = std::max<std::size_t>(1, n / static_cast<std::size_t>(nBatches));
  const std::size_t used = (n / batchSize) * batchSize;
  const std::size_t B = used / batchSize;
  se.assign(dims, 0.0);
  std::vector<double> bm(dims);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(bm.begin(), bm.end(), 0.0);
    for (std::size_t s = b * batchSize; s < (b + 1) * batchSize; ++s)
      for (std::size_t j = 0; j < dims; ++j) bm[j] += samples[s][j];
    for (std::size_t j = 0; j < dims; ++j) {
      bm[j] /= static_cast<double>(batchSize);
      const double dlt = bm[j] - mean[j];
      se[j] += dlt * dlt;
    }
  }
  for (std::size_t j = 0; j < dims; ++j)
    se[j] = (B > 1) ? std::sqrt(se[j] / static_cast<double>(B - 1) / static_cast<double>(B)) : 0.0;
}

}  // namespace

GewekeReport gewekeJointTest(const GewekeConfig& cfg, long iterations, Rng& rng) {
  GewekeReport report;
  const std::vector<std::string> names = {"K", "sum_mk", "mean_self_transitions", "alpha"};
  if (iterations <= 0) return report;  // inconclusive

  MNIWPrior mniw = cfg.mniw;
  if (mniw.S0.size() == 0) mniw = MNIWPrior::defaultFor(cfg.d, cfg.r);

  std::vector<std::vector<double>> fwd;
  fwd.reserve(static_cast<std::size_t>(cfg.forwardDraws));
  for (long s = 0; s < cfg.forwardDraws; ++s) {
    const JointDraw d = forwardDraw(cfg, mniw, rng);
    fwd.push_back(trackedStats(d.hypers, d.F, d.z));
  }

  JointDraw cur = forwardDraw(cfg, mniw, rng);
  SamplerState st;
  st.F = cur.F;
  st.z = cur.z;
  st.hypers = cur.hypers;
  Sampler sampler(cur.data, cfg.sampler, st, rng);
  std::vector<std::vector<double>> chain;
  chain.reserve(static_cast<std::size_t>(iterations));
  for (long s = 0; s < iterations; ++s) {
    sampler.iterate();
    const SamplerState& cs = sampler.state();
    sampler.setData(regenerateData(cfg, cs.F, cs.z, cs.hypers, sampler.rng()));
    chain.push_back(trackedStats(cs.hypers, cs.F, cs.z));
  }

  std::vector<double> fm, fs, cm, cs;
  meanAndBatchSE(fwd, 50, fm, fs);
  meanAndBatchSE(chain, 50, cm, cs);

  report.inconclusive = false;
  report.passed = true;
  for (std::size_t j = 0; j < names.size(); ++j) {
    GewekeStat st2;
    st2.name = names[j];
    st2.forwardMean = fm[j];
    st2.forwardSE = fs[j];
    st2.chainMean = cm[j];
    st2.chainSE = cs[j];
    const double denom = std::sqrt(fs[j] * fs[j] + cs[j] * cs[j]);
    st2.z = (denom > 0.0) ? (cm[j] - fm[j]) / denom : 0.0;
    report.maxAbsZ = std::max(report.maxAbsZ, std::abs(st2.z));
    if (std::abs(st2.z) > 3.0) report.passed = false;
    report.stats.push_back(std::move(st2));
  }
  return report;
}

}  // namespace bparhmm
