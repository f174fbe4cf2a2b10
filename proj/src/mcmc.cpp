#include "bparhmm/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bparhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logGammaPdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) + (shape - 1.0) * std::log(x) - rate * x - std::lgamma(shape);
}

double logSumExp(const std::vector<double>& v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Prior-mean transition weights over K local states (sticky bonus on the
// diagonal, none on the initial pseudo-row).
MatrixXd priorMeanWeights(int K, double gamma, double kappa) {
  MatrixXd eta = MatrixXd::Constant(K + 1, K, gamma);
  for (int k = 0; k < K; ++k) eta(k, k) += kappa;
  return eta;
}

MatrixXd logRows(const MatrixXd& eta, const std::vector<int>& active) {
  TransitionWeights w;
  w.eta = eta;
  w.activeIndex = active;
  return buildTransitionRows(w).array().log().matrix();
}

// Emission and transition tables for a collapsed-z proposal: given behavior
// parameter estimates (indexed by the active set's global ids) and prior-mean
// transition weights.
void proposalTables(const SequenceData& seq, const std::vector<BehaviorParams>& thetaByGlobal,
                    const std::vector<int>& active, double gamma, double kappa, MatrixXd& logE,
                    MatrixXd& logPi) {
  std::vector<BehaviorParams> sel;
  sel.reserve(active.size());
  for (int k : active) sel.push_back(thetaByGlobal.at(static_cast<std::size_t>(k)));
  logE = emissionLogTable(seq, sel);
  logPi = logRows(priorMeanWeights(static_cast<int>(active.size()), gamma, kappa), active);
}

double collapsedSeqLogLik(const SequenceData& seq, const std::vector<BehaviorParams>& thetaByGlobal,
                          const std::vector<int>& active, double gamma, double kappa) {
  MatrixXd logE, logPi;
  proposalTables(seq, thetaByGlobal, active, gamma, kappa, logE, logPi);
  return sequenceLogLik(logE, logPi);
}

// Block z proposal for one sequence under estimated behaviors and prior-mean
// transition rows.  Samples into outGlobal when targetGlobal is null;
// otherwise returns the density of the given target labels.
double proposeZSeq(const SequenceData& seq, const std::vector<BehaviorParams>& thetaByGlobal,
                   const std::vector<int>& active, double gamma, double kappa, Rng* rng,
                   const std::vector<int>* targetGlobal, std::vector<int>* outGlobal) {
  MatrixXd logE, logPi;
  proposalTables(seq, thetaByGlobal, active, gamma, kappa, logE, logPi);
  if (targetGlobal != nullptr)
    return blockSampleLogDensity(logE, logPi, toLocalLabels(*targetGlobal, active));
  double ld = 0.0;
  const std::vector<int> zLocal = blockSampleZ(logE, logPi, *rng, &ld);
  *outGlobal = toGlobalLabels(zLocal, active);
  return ld;
}

void addAssigned(BehaviorSuffStats& s, const SequenceData& seq, const std::vector<int>& zSeq,
                 int label) {
  for (int t = 0; t < seq.effLen(); ++t)
    if (zSeq[t] == label) s.add(seq.obs(t), seq.lag(t));
}

void removeAssigned(BehaviorSuffStats& s, const SequenceData& seq, const std::vector<int>& zSeq,
                    int label) {
  for (int t = 0; t < seq.effLen(); ++t)
    if (zSeq[t] == label) s.remove(seq.obs(t), seq.lag(t));
}

double pooledLogML(const Dataset& data, const StateSequenceSet& z, int a, int b,
                   const MNIWPrior& prior) {
  BehaviorSuffStats s(prior);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int t = 0; t < data[i].effLen(); ++t)
      if (z[i][t] == a || z[i][t] == b) s.add(data[i].obs(t), data[i].lag(t));
  return logMarginalLikelihood(s, prior);
}

double featureLogML(const Dataset& data, const StateSequenceSet& z, int k,
                    const MNIWPrior& prior) {
  return logMarginalLikelihood(behaviorStats(data, z, k, prior), prior);
}

}  // namespace

double annealInvTemperature(long s, const AnnealSchedule& schedule) {
  if (schedule.mode == AnnealSchedule::Mode::Off) return 1.0;
  if (schedule.burnIterations <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(s) / static_cast<double>(schedule.burnIterations));
}

TransitionWeights sampleEta(const std::vector<int>& z_i, const std::vector<int>& active,
                            double gamma, double kappa, Rng& rng) {
  const int K = static_cast<int>(active.size());
  if (K == 0) throw ContractError("sampleEta: empty active set");
  const std::vector<int> zLocal = toLocalLabels(z_i, active);
  const TransitionCounts counts = countTransitions(zLocal, K);
  TransitionWeights w;
  w.activeIndex = active;
  w.eta.resize(K + 1, K);
  for (int j = 0; j <= K; ++j) {
    std::vector<double> conc(K);
    for (int k = 0; k < K; ++k)
      conc[k] = gamma + counts.n(j, k) + ((j < K && j == k) ? kappa : 0.0);
    const std::vector<double> pi = rng.dirichlet(conc);
    const double scaleShape = K * gamma + ((j < K) ? kappa : 0.0);
    const double C = rng.gammaDraw(scaleShape);
    // floor against underflow to exact zero when gamma is very small
    for (int k = 0; k < K; ++k) w.eta(j, k) = std::max(C * pi[k], 1e-300);
  }
  return w;
}

AuxiliaryVars sampleAuxiliary(const SamplerState& st, const Dataset& data, Rng& rng) {
  const int N = st.F.N();
  const int K = st.F.K();
  AuxiliaryVars aux;
  aux.thetas.resize(K);
  for (int k = 0; k < K; ++k) {
    const BehaviorSuffStats stats = behaviorStats(data, st.z, k, st.hypers.mniw);
    aux.thetas[k] = samplePosteriorTheta(st.hypers.mniw, stats, rng);
  }
  aux.etas.resize(N);
  std::vector<int> allFeatures(K);
  for (int k = 0; k < K; ++k) allFeatures[k] = k;
  for (int i = 0; i < N; ++i) {
    TransitionWeights full;
    full.activeIndex = allFeatures;
    full.eta.resize(K + 1, K);
    for (int j = 0; j <= K; ++j)
      for (int k = 0; k < K; ++k)
        full.eta(j, k) = rng.gammaDraw(st.hypers.gamma + ((j < K && j == k) ? st.hypers.kappa : 0.0));
    const std::vector<int> active = st.F.activeSet(i);
    const TransitionWeights act = sampleEta(st.z[i], active, st.hypers.gamma, st.hypers.kappa, rng);
    const int Ka = act.K();
    for (int a = 0; a <= Ka; ++a) {
      const int ja = (a < Ka) ? active[a] : K;  // initial pseudo-row maps to row K
      for (int b = 0; b < Ka; ++b) full.eta(ja, active[b]) = act.eta(a, b);
    }
    aux.etas[i] = std::move(full);
  }
  aux.emissions.resize(N);
  for (int i = 0; i < N; ++i) aux.emissions[i] = emissionLogTable(data[i], aux.thetas);
  return aux;
}

void sampleSharedFeatures(SamplerState& st, const Dataset& data, const AuxiliaryVars& aux,
                          Rng& rng, MoveCounters* counters) {
  (void)data;
  const int N = st.F.N();
  const int K = st.F.K();
  const double denom = st.hypers.c + N - 1.0;
  for (int i = 0; i < N; ++i) {
    std::vector<int> active = st.F.activeSet(i);
    double curLL = sequenceLogLik(selectColumns(aux.emissions[i], active),
                                  logRows(subsetWeights(aux.etas[i], active).eta, active));
    for (int k = 0; k < K; ++k) {
      const int mExcl = st.F.usageExcluding(i, k);
      if (mExcl == 0) continue;  // unique features belong to birth-death
      const bool cur = st.F.get(i, k);
      if (counters) ++counters->flipProposed;
      if (cur && active.size() == 1) continue;  // row must stay nonempty
      std::vector<int> prop = active;
      if (cur) {
        prop.erase(std::lower_bound(prop.begin(), prop.end(), k));
      } else {
        prop.insert(std::lower_bound(prop.begin(), prop.end(), k), k);
      }
      const double propLL = sequenceLogLik(selectColumns(aux.emissions[i], prop),
                                           logRows(subsetWeights(aux.etas[i], prop).eta, prop));
      const double logPriorOdds = cur ? std::log(denom - mExcl) - std::log(mExcl)
                                      : std::log(mExcl) - std::log(denom - mExcl);
      const double logRho = logPriorOdds + propLL - curLL;
      if (std::log(rng.uniform()) < logRho) {
        st.F.set(i, k, !cur);
        active = std::move(prop);
        curLL = propLL;
        if (counters) ++counters->flipAccepted;
      }
    }
  }
}

void blockResampleAllZ(SamplerState& st, const Dataset& data, const AuxiliaryVars& aux, Rng& rng) {
  const int N = st.F.N();
  for (int i = 0; i < N; ++i) {
    const std::vector<int> active = st.F.activeSet(i);
    const MatrixXd logE = selectColumns(aux.emissions[i], active);
    const MatrixXd logPi = logRows(subsetWeights(aux.etas[i], active).eta, active);
    (void)data;
    st.z[i] = toGlobalLabels(blockSampleZ(logE, logPi, rng), active);
  }
}

namespace {

// One random-walk MH step on log(x + eps); returns the possibly updated
// value and adapts the step toward a 0.3 acceptance rate during burn-in.
template <typename LogTarget>
double logScaleMH(double cur, double& step, bool adapting, const LogTarget& target, Rng& rng,
                  MoveCounters* counters, double eps = 0.0) {
  const double curLp = target(cur) + std::log(cur + eps);
  const double prop = std::exp(std::log(cur + eps) + step * rng.normal()) - eps;
  const double logRho =
      (prop > 0.0) ? target(prop) + std::log(prop + eps) - curLp : kNegInf;
  if (counters) ++counters->hyperProposed;
  bool accepted = false;
  if (std::log(rng.uniform()) < logRho) {
    accepted = true;
    if (counters) ++counters->hyperAccepted;
    cur = prop;
  }
  if (adapting) {
    step *= std::exp(0.05 * ((accepted ? 1.0 : 0.0) - 0.3));
    step = std::clamp(step, 1e-3, 10.0);
  }
  return cur;
}

}  // namespace

void sampleBPHypers(SamplerState& st, const HyperPriors& hp, AdaptState& adapt, bool adapting,
                    Rng& rng, MoveCounters* counters) {
  const FeatureMatrix& F = st.F;
  st.hypers.alpha = logScaleMH(
      st.hypers.alpha, adapt.stepAlpha, adapting,
      [&](double a) { return ibpLogProb(F, a, st.hypers.c) + logGammaPdf(a, hp.alphaShape, hp.alphaRate); },
      rng, counters);
  st.hypers.c = logScaleMH(
      st.hypers.c, adapt.stepC, adapting,
      [&](double c) { return ibpLogProb(F, st.hypers.alpha, c) + logGammaPdf(c, hp.cShape, hp.cRate); },
      rng, counters);
}

void sampleTransHypers(SamplerState& st, const AuxiliaryVars& aux, const HyperPriors& hp,
                       AdaptState& adapt, bool adapting, Rng& rng, MoveCounters* counters) {
  // sufficient summary of the instantiated eta entries: diagonal entries see
  // shape gamma + kappa, off-diagonal and initial-row entries see gamma
  double sumLogDiag = 0.0, sumLogOff = 0.0;
  long nDiag = 0, nOff = 0;
  for (const TransitionWeights& w : aux.etas) {
    const int K = w.K();
    for (int j = 0; j <= K; ++j)
      for (int k = 0; k < K; ++k) {
        const double lx = std::log(w.eta(j, k));
        if (j < K && j == k) {
          sumLogDiag += lx;
          ++nDiag;
        } else {
          sumLogOff += lx;
          ++nOff;
        }
      }
  }
  const auto etaTerm = [&](double gamma, double kappa) {
    return (gamma + kappa - 1.0) * sumLogDiag - nDiag * std::lgamma(gamma + kappa) +
           (gamma - 1.0) * sumLogOff - nOff * std::lgamma(gamma);
  };
  st.hypers.gamma = logScaleMH(
      st.hypers.gamma, adapt.stepGamma, adapting,
      [&](double g) { return etaTerm(g, st.hypers.kappa) + logGammaPdf(g, hp.gammaShape, hp.gammaRate); },
      rng, counters);
  st.hypers.kappa = logScaleMH(
      st.hypers.kappa, adapt.stepKappa, adapting,
      [&](double k) { return etaTerm(st.hypers.gamma, k) + logGammaPdf(k, hp.kappaShape, hp.kappaRate); },
      rng, counters, 1e-8);
}

namespace {

// Full (K+1) x K weight matrix extended by a newborn feature appended last:
// new feature row at index K, initial pseudo-row pushed to K+1.
TransitionWeights extendEtaFull(const TransitionWeights& full, const VectorXd& newRow,
                                const VectorXd& newCol) {
  const int K = full.K();
  TransitionWeights out;
  out.eta.resize(K + 2, K + 1);
  out.eta.topLeftCorner(K, K) = full.eta.topRows(K);
  out.eta.block(K + 1, 0, 1, K) = full.eta.row(K);  // initial pseudo-row
  for (int k = 0; k < K; ++k) out.eta(K, k) = newRow(k);
  for (int j = 0; j < K; ++j) out.eta(j, K) = newCol(j);
  out.eta(K, K) = newCol(K);
  out.eta(K + 1, K) = newCol(K + 1);
  out.activeIndex.resize(K + 1);
  for (int k = 0; k <= K; ++k) out.activeIndex[k] = k;
  return out;
}

// Full weight matrix with feature kd removed (its row and column dropped).
TransitionWeights removeEtaFeature(const TransitionWeights& full, int kd) {
  const int K = full.K();
  TransitionWeights out;
  out.eta.resize(K, K - 1);
  for (int j = 0, jo = 0; j <= K; ++j) {
    if (j == kd) continue;
    for (int k = 0, ko = 0; k < K; ++k) {
      if (k == kd) continue;
      out.eta(jo, ko) = full.eta(j, k);
      ++ko;
    }
    ++jo;
  }
  out.activeIndex.resize(K - 1);
  for (int k = 0; k < K - 1; ++k) out.activeIndex[k] = k;
  return out;
}

}  // namespace

BirthDeathResult birthDeathMove(SamplerState& st, AuxiliaryVars& aux, const Dataset& data, int seq,
                                double invTemp, const WindowProposalConfig& cfg, Rng& rng,
                                MoveCounters* counters, double debugBias,
                                const BirthDeathForce* force) {
  const int N = st.F.N();
  const int K = st.F.K();
  const SequenceData& y = data[seq];
  const int Teff = y.effLen();
  const std::vector<int> active = st.F.activeSet(seq);
  const int Ki = static_cast<int>(active.size());
  const std::vector<int> uniq = st.F.uniqueFeatures(seq);
  const int nUnique = static_cast<int>(uniq.size());
  const ModelHypers& h = st.hypers;

  BirthDeathResult res;
  res.proposedF = st.F;

  // move kind and, for a death, the doomed feature
  double logQfFwd = 0.0;
  int deathFeature = -1;
  if (force != nullptr) {
    res.isBirth = force->isBirth;
    deathFeature = force->deathFeature;
    if (res.isBirth) {
      logQfFwd = (nUnique == 0) ? 0.0 : std::log(0.5);
    } else {
      logQfFwd = std::log(0.5) - std::log(static_cast<double>(nUnique));
    }
  } else {
    if (nUnique == 0) {
      res.isBirth = true;
      logQfFwd = 0.0;
    } else if (rng.uniform() < 0.5) {
      res.isBirth = true;
      logQfFwd = std::log(0.5);
    } else {
      res.isBirth = false;
      deathFeature = uniq[rng.uniformInt(nUnique)];
      logQfFwd = std::log(0.5) - std::log(static_cast<double>(nUnique));
    }
  }

  if (counters && force == nullptr) {
    if (res.isBirth)
      ++counters->birthProposed;
    else
      ++counters->deathProposed;
  }

  // shared window: its uniform law is common to the move and its reversal, so
  // its density cancels and is left out of the Hastings factor
  int winLen, winStart;
  if (force != nullptr) {
    winLen = force->winLen;
    winStart = force->winStart;
  } else {
    const int lmax = std::min(cfg.maxLen, Teff);
    const int lmin = std::min(cfg.minLen, Teff);
    winLen = lmin + rng.uniformInt(lmax - lmin + 1);
    winStart = rng.uniformInt(Teff - winLen + 1);
  }
  res.winLen = winLen;
  res.winStart = winStart;

  // window-posterior law for the newborn behavior parameters
  BehaviorSuffStats winStats(h.mniw);
  for (int t = winStart; t < winStart + winLen; ++t) winStats.add(y.obs(t), y.lag(t));
  const MNIWPosterior winPost = posteriorParams(h.mniw, winStats);
  MNIWPrior winLaw;
  winLaw.n0 = winPost.dof;
  winLaw.S0 = winPost.scale;
  winLaw.M = winPost.meanA;
  winLaw.L = winPost.colPrecision;

  if (!res.isBirth && Ki == 1) {
    // removing the only feature would empty the row
    res.feature = deathFeature;
    res.logJointRatio = kNegInf;
    res.logQForward = logQfFwd;
    res.logQReverse = kNegInf;
    res.accepted = false;
    return res;
  }

  // collapsed sequence likelihood under the instantiated parameters
  const auto seqLL = [&](const MatrixXd& emis, const TransitionWeights& eta,
                         const std::vector<int>& act) {
    return sequenceLogLik(selectColumns(emis, act),
                          logRows(subsetWeights(eta, act).eta, act));
  };
  const double curLL = seqLL(aux.emissions[seq], aux.etas[seq], active);
  const double curIbp = ibpMarkedLogProb(st.F, h.alpha, h.c);

  if (res.isBirth) {
    res.feature = K;
    res.proposedF.appendColumn();
    res.proposedF.set(seq, K, true);

    // newborn behavior from the window posterior; its transition weights from
    // the prior (those densities cancel against the target and are omitted)
    if (force != nullptr) {
      res.thetaNew = force->thetaNew;
      res.etaNewRow = force->etaNewRow;
      res.etaNewCol = force->etaNewCol;
    } else {
      res.thetaNew = samplePosteriorTheta(h.mniw, winStats, rng);
      res.etaNewRow.resize(K);
      for (int k = 0; k < K; ++k) res.etaNewRow(k) = rng.gammaDraw(h.gamma);
      res.etaNewCol.resize(K + 2);
      for (int j = 0; j < K + 2; ++j)
        res.etaNewCol(j) = rng.gammaDraw(h.gamma + ((j == K) ? h.kappa : 0.0));
    }

    const TransitionWeights etaExt = extendEtaFull(aux.etas[seq], res.etaNewRow, res.etaNewCol);
    MatrixXd emisExt(Teff, K + 1);
    emisExt.leftCols(K) = aux.emissions[seq];
    emisExt.col(K) = emissionLogTable(y, {res.thetaNew}).col(0);
    std::vector<int> activeStar = active;
    activeStar.push_back(K);
    const double propLL = seqLL(emisExt, etaExt, activeStar);

    res.logJointRatio = ibpMarkedLogProb(res.proposedF, h.alpha, h.c) - curIbp +
                        logMNIWPdf(h.mniw, res.thetaNew) + propLL - curLL;
    res.logQForward = logQfFwd + logMNIWPdf(winLaw, res.thetaNew);
    // reverse: a death that picks the newborn among the now nUnique+1 unique
    // features (death is never the forced branch there)
    res.logQReverse = std::log(0.5) - std::log(static_cast<double>(nUnique + 1));

    if (force != nullptr) return res;
    const double logRho =
        res.logJointRatio + invTemp * (res.logQReverse - res.logQForward) + std::log(debugBias);
    if (std::log(rng.uniform()) < logRho) {
      res.accepted = true;
      st.F = res.proposedF;
      aux.thetas.push_back(res.thetaNew);
      for (int i = 0; i < N; ++i) {
        if (i == seq) {
          aux.etas[i] = etaExt;
          aux.emissions[i] = std::move(emisExt);
        } else {
          // other sequences never own the newborn; their new weight entries
          // are fresh prior draws
          VectorXd row(K), col(K + 2);
          for (int k = 0; k < K; ++k) row(k) = rng.gammaDraw(h.gamma);
          for (int j = 0; j < K + 2; ++j)
            col(j) = rng.gammaDraw(h.gamma + ((j == K) ? h.kappa : 0.0));
          aux.etas[i] = extendEtaFull(aux.etas[i], row, col);
          MatrixXd e(data[i].effLen(), K + 1);
          e.leftCols(K) = aux.emissions[i];
          e.col(K) = emissionLogTable(data[i], {res.thetaNew}).col(0);
          aux.emissions[i] = std::move(e);
        }
      }
      if (counters) ++counters->birthAccepted;
    }
    return res;
  }

  // death of a unique feature kd
  const int kd = deathFeature;
  res.feature = kd;
  res.proposedF.removeColumn(kd);
  std::vector<int> activeMinus;
  for (int k : active)
    if (k != kd) activeMinus.push_back(k);
  const double propLL = seqLL(aux.emissions[seq], aux.etas[seq], activeMinus);
  const BehaviorParams& thetaDead = aux.thetas[kd];

  res.logJointRatio = ibpMarkedLogProb(res.proposedF, h.alpha, h.c) - curIbp -
                      logMNIWPdf(h.mniw, thetaDead) + propLL - curLL;
  res.logQForward = logQfFwd;
  // reverse: a birth from the reduced state proposing exactly thetaDead
  const double logQfRev = (nUnique - 1 == 0) ? 0.0 : std::log(0.5);
  res.logQReverse = logQfRev + logMNIWPdf(winLaw, thetaDead);

  if (force != nullptr) return res;
  const double logRho =
      res.logJointRatio + invTemp * (res.logQReverse - res.logQForward) + std::log(debugBias);
  if (std::log(rng.uniform()) < logRho) {
    res.accepted = true;
    st.F = res.proposedF;
    aux.thetas.erase(aux.thetas.begin() + kd);
    for (int i = 0; i < N; ++i) {
      aux.etas[i] = removeEtaFeature(aux.etas[i], kd);
      MatrixXd e(data[i].effLen(), K - 1);
      if (kd > 0) e.leftCols(kd) = aux.emissions[i].leftCols(kd);
      if (kd < K - 1) e.rightCols(K - 1 - kd) = aux.emissions[i].rightCols(K - 1 - kd);
      aux.emissions[i] = std::move(e);
    }
    // st.z is stale from here on; the caller redraws every z after the sweep
    if (counters) ++counters->deathAccepted;
  }
  return res;
}

namespace {

// Anchor feature selection q_k: k_i uniform over anchor i's active set, then
// k_j by marginal-likelihood ratio weights with the doubled same-feature
// shortcut.  Samples when forcedKi/forcedKj are null, else evaluates.
struct QkResult {
  int ki = -1, kj = -1;
  double logProb = 0.0;
};

QkResult selectFeatures(const Dataset& data, const FeatureMatrix& F, const StateSequenceSet& z,
                        const MNIWPrior& prior, int i, int j, Rng* rng, const int* forcedKi,
                        const int* forcedKj) {
  QkResult res;
  const std::vector<int> activeI = F.activeSet(i);
  const std::vector<int> activeJ = F.activeSet(j);
  if (forcedKi != nullptr) {
    res.ki = *forcedKi;
  } else {
    res.ki = activeI[rng->uniformInt(static_cast<int>(activeI.size()))];
  }
  res.logProb = -std::log(static_cast<double>(activeI.size()));

  const double logMi = featureLogML(data, z, res.ki, prior);
  std::vector<double> lw(activeJ.size(), kNegInf);
  std::vector<double> others;
  int selfPos = -1;
  for (std::size_t a = 0; a < activeJ.size(); ++a) {
    const int k = activeJ[a];
    if (k == res.ki) {
      selfPos = static_cast<int>(a);
      continue;
    }
    lw[a] = pooledLogML(data, z, res.ki, k, prior) - logMi - featureLogML(data, z, k, prior);
    others.push_back(lw[a]);
  }
  if (selfPos >= 0) {
    lw[selfPos] = others.empty() ? 0.0 : std::log(2.0) + logSumExp(others);
    if (others.empty()) {
      // anchor j owns only k_i: the same-feature choice is certain
      res.kj = res.ki;
      return res;
    }
  }
  const double logZ = logSumExp(lw);
  if (forcedKj != nullptr) {
    res.kj = *forcedKj;
    const auto it = std::find(activeJ.begin(), activeJ.end(), res.kj);
    if (it == activeJ.end()) throw ContractError("selectFeatures: forced k_j not active");
    res.logProb += lw[static_cast<std::size_t>(it - activeJ.begin())] - logZ;
    return res;
  }
  const double u = std::log(rng->uniform()) + logZ;
  double cum = kNegInf;
  std::size_t pick = activeJ.size() - 1;
  for (std::size_t a = 0; a < activeJ.size(); ++a) {
    cum = logSumExp({cum, lw[a]});
    if (u < cum) {
      pick = a;
      break;
    }
  }
  res.kj = activeJ[pick];
  res.logProb += lw[pick] - logZ;
  return res;
}

// Sequential allocation of a split of feature km anchored at (i, j): the new
// feature pair lands at (km's column, appended last).  Nonanchor owners are
// visited in `perm`; anchors are finalized last.  Returns the accumulated log
// proposal density; with targets given, evaluates instead of sampling.
double runSplit(const Dataset& data, const ModelHypers& h, const FeatureMatrix& F0,
                const StateSequenceSet& z0, int i, int j, int km, const std::vector<int>& perm,
                Rng* rng, const FeatureMatrix* targetF, const StateSequenceSet* targetZ,
                FeatureMatrix& outF, StateSequenceSet& outZ) {
  const int K0 = F0.K();
  const int ka = km;
  const int kb = K0;
  outF = F0;
  outF.appendColumn();
  outZ = z0;

  outF.set(i, ka, true);
  outF.set(i, kb, false);
  outF.set(j, ka, false);
  outF.set(j, kb, true);
  for (int& lab : outZ[j])
    if (lab == km) lab = kb;

  BehaviorSuffStats statsA(h.mniw), statsB(h.mniw);
  addAssigned(statsA, data[i], z0[i], km);
  addAssigned(statsB, data[j], z0[j], km);

  std::vector<BehaviorParams> thetaHat(K0 + 1);
  for (int k = 0; k < K0; ++k)
    if (k != km) thetaHat[k] = posteriorMeanTheta(h.mniw, behaviorStats(data, z0, k, h.mniw));
  thetaHat[ka] = posteriorMeanTheta(h.mniw, statsA);
  thetaHat[kb] = posteriorMeanTheta(h.mniw, statsB);

  double logQ = 0.0;
  int mA = 1, mB = 1, nPrev = 2;

  const auto activeWith = [&](int seqIdx, bool a, bool b) {
    std::vector<int> act;
    for (int k : F0.activeSet(seqIdx))
      if (k != km) act.push_back(k);
    if (a) act.insert(std::lower_bound(act.begin(), act.end(), ka), ka);
    if (b) act.push_back(kb);  // kb is the largest id
    return act;
  };

  const auto drawZ = [&](int seqIdx, const std::vector<int>& act) {
    if (targetZ != nullptr) {
      logQ += proposeZSeq(data[seqIdx], thetaHat, act, h.gamma, h.kappa, nullptr,
                          &(*targetZ)[seqIdx], nullptr);
      outZ[seqIdx] = (*targetZ)[seqIdx];
    } else {
      std::vector<int> zNew;
      logQ += proposeZSeq(data[seqIdx], thetaHat, act, h.gamma, h.kappa, rng, nullptr, &zNew);
      outZ[seqIdx] = std::move(zNew);
    }
  };

  for (int ell : perm) {
    const double pa = mA / (h.c + nPrev);
    const double pb = mB / (h.c + nPrev);
    // feature-pair options [a b] excluding [0 0], prior times collapsed
    // sequence likelihood
    const bool optA[3] = {true, false, true};
    const bool optB[3] = {false, true, true};
    std::vector<double> lw(3);
    lw[0] = std::log(pa) + std::log1p(-pb);
    lw[1] = std::log1p(-pa) + std::log(pb);
    lw[2] = std::log(pa) + std::log(pb);
    std::vector<std::vector<int>> acts(3);
    for (int o = 0; o < 3; ++o) {
      acts[o] = activeWith(ell, optA[o], optB[o]);
      lw[o] += collapsedSeqLogLik(data[ell], thetaHat, acts[o], h.gamma, h.kappa);
    }
    const double logZ = logSumExp(lw);
    int choice;
    if (targetF != nullptr) {
      const bool ta = targetF->get(ell, ka);
      const bool tb = targetF->get(ell, kb);
      choice = ta ? (tb ? 2 : 0) : 1;
      if (!ta && !tb) throw ContractError("runSplit: target drops both split features");
    } else {
      const double u = rng->uniform();
      double cum = 0.0;
      choice = 2;
      for (int o = 0; o < 3; ++o) {
        cum += std::exp(lw[o] - logZ);
        if (u < cum) {
          choice = o;
          break;
        }
      }
    }
    logQ += lw[choice] - logZ;
    outF.set(ell, ka, optA[choice]);
    outF.set(ell, kb, optB[choice]);
    drawZ(ell, acts[choice]);

    mA += optA[choice] ? 1 : 0;
    mB += optB[choice] ? 1 : 0;
    ++nPrev;
    addAssigned(statsA, data[ell], outZ[ell], ka);
    addAssigned(statsB, data[ell], outZ[ell], kb);
    thetaHat[ka] = posteriorMeanTheta(h.mniw, statsA);
    thetaHat[kb] = posteriorMeanTheta(h.mniw, statsB);
  }

  // anchors last: i keeps ka, j keeps kb; the free slot weighted by collapsed
  // likelihood alone
  const auto finalizeAnchor = [&](int anchor, bool iAnchor, BehaviorSuffStats& seeded) {
    removeAssigned(seeded, data[anchor], z0[anchor], km);
    thetaHat[ka] = posteriorMeanTheta(h.mniw, statsA);
    thetaHat[kb] = posteriorMeanTheta(h.mniw, statsB);
    const bool optA2[2] = {iAnchor, true};
    const bool optB2[2] = {!iAnchor, true};
    std::vector<double> lw(2);
    std::vector<std::vector<int>> acts(2);
    for (int o = 0; o < 2; ++o) {
      acts[o] = activeWith(anchor, optA2[o], optB2[o]);
      lw[o] = collapsedSeqLogLik(data[anchor], thetaHat, acts[o], h.gamma, h.kappa);
    }
    const double logZ = logSumExp(lw);
    int choice;
    if (targetF != nullptr) {
      const bool both = targetF->get(anchor, ka) && targetF->get(anchor, kb);
      choice = both ? 1 : 0;
    } else {
      choice = (rng->uniform() < std::exp(lw[0] - logZ)) ? 0 : 1;
    }
    logQ += lw[choice] - logZ;
    outF.set(anchor, ka, optA2[choice]);
    outF.set(anchor, kb, optB2[choice]);
    drawZ(anchor, acts[choice]);
    addAssigned(statsA, data[anchor], outZ[anchor], ka);
    addAssigned(statsB, data[anchor], outZ[anchor], kb);
    thetaHat[ka] = posteriorMeanTheta(h.mniw, statsA);
    thetaHat[kb] = posteriorMeanTheta(h.mniw, statsB);
  };
  finalizeAnchor(i, true, statsA);
  finalizeAnchor(j, false, statsB);
  return logQ;
}

// Sequentially allocated merge of features (ka, kb) into ka's column (kb's
// column removed); mirrors runSplit's visit order and incremental estimates.
double runMerge(const Dataset& data, const ModelHypers& h, const FeatureMatrix& F0,
                const StateSequenceSet& z0, int i, int j, int ka, int kb,
                const std::vector<int>& perm, Rng* rng, const StateSequenceSet* targetZ,
                FeatureMatrix& outF, StateSequenceSet& outZ) {
  const int K0 = F0.K();
  const auto shift = [kb](int lab) { return (lab < kb) ? lab : lab - 1; };
  const int km = shift(ka);

  std::vector<int> members;
  for (int ell = 0; ell < F0.N(); ++ell)
    if (F0.get(ell, ka) || F0.get(ell, kb)) members.push_back(ell);

  outF = F0;
  for (int ell : members) outF.set(ell, ka, true);
  outF.removeColumn(kb);
  outZ = z0;
  for (auto& zi : outZ)
    for (int& lab : zi) lab = (lab == kb) ? km : shift(lab);

  BehaviorSuffStats statsM(h.mniw);
  for (int anchor : {i, j})
    for (int t = 0; t < data[anchor].effLen(); ++t)
      if (z0[anchor][t] == ka || z0[anchor][t] == kb)
        statsM.add(data[anchor].obs(t), data[anchor].lag(t));

  std::vector<BehaviorParams> thetaHat(K0 - 1);
  for (int k = 0; k < K0; ++k)
    if (k != ka && k != kb)
      thetaHat[shift(k)] = posteriorMeanTheta(h.mniw, behaviorStats(data, z0, k, h.mniw));
  thetaHat[km] = posteriorMeanTheta(h.mniw, statsM);

  double logQ = 0.0;
  const auto drawZ = [&](int seqIdx) {
    const std::vector<int> act = outF.activeSet(seqIdx);
    if (targetZ != nullptr) {
      logQ += proposeZSeq(data[seqIdx], thetaHat, act, h.gamma, h.kappa, nullptr,
                          &(*targetZ)[seqIdx], nullptr);
      outZ[seqIdx] = (*targetZ)[seqIdx];
    } else {
      std::vector<int> zNew;
      logQ += proposeZSeq(data[seqIdx], thetaHat, act, h.gamma, h.kappa, rng, nullptr, &zNew);
      outZ[seqIdx] = std::move(zNew);
    }
  };

  for (int ell : perm) {
    drawZ(ell);
    addAssigned(statsM, data[ell], outZ[ell], km);
    thetaHat[km] = posteriorMeanTheta(h.mniw, statsM);
  }
  for (int anchor : {i, j}) {
    for (int t = 0; t < data[anchor].effLen(); ++t)
      if (z0[anchor][t] == ka || z0[anchor][t] == kb)
        statsM.remove(data[anchor].obs(t), data[anchor].lag(t));
    thetaHat[km] = posteriorMeanTheta(h.mniw, statsM);
    drawZ(anchor);
    addAssigned(statsM, data[anchor], outZ[anchor], km);
    thetaHat[km] = posteriorMeanTheta(h.mniw, statsM);
  }
  return logQ;
}

}  // namespace

double anchorFeatureChoiceLogProb(const Dataset& data, const FeatureMatrix& F,
                                  const StateSequenceSet& z, const MNIWPrior& prior, int i, int j,
                                  int ki, int kj) {
  return selectFeatures(data, F, z, prior, i, j, nullptr, &ki, &kj).logProb;
}

SplitMergeResult splitMergeMove(SamplerState& st, const Dataset& data, double invTemp, Rng& rng,
                                MoveCounters* counters, const SplitMergeForce* force) {
  const int N = st.F.N();
  if (N < 2) throw ContractError("splitMergeMove: needs at least two sequences");
  const ModelHypers& h = st.hypers;
  SplitMergeResult res;

  if (force != nullptr) {
    res.anchorI = force->anchorI;
    res.anchorJ = force->anchorJ;
  } else {
    res.anchorI = rng.uniformInt(N);
    res.anchorJ = rng.uniformInt(N - 1);
    if (res.anchorJ >= res.anchorI) ++res.anchorJ;
  }

  QkResult qk;
  if (force != nullptr) {
    qk = selectFeatures(data, st.F, st.z, h.mniw, res.anchorI, res.anchorJ, nullptr, &force->ki,
                        &force->kj);
  } else {
    qk = selectFeatures(data, st.F, st.z, h.mniw, res.anchorI, res.anchorJ, &rng, nullptr, nullptr);
  }
  res.ki = qk.ki;
  res.kj = qk.kj;
  res.isSplit = (qk.ki == qk.kj);

  // visit order over nonanchor members, drawn before any state is touched
  std::vector<int> nonanchors;
  for (int ell = 0; ell < N; ++ell) {
    if (ell == res.anchorI || ell == res.anchorJ) continue;
    if (st.F.get(ell, res.ki) || st.F.get(ell, res.kj)) nonanchors.push_back(ell);
  }
  if (force != nullptr) {
    res.perm = force->perm;
  } else {
    res.perm = nonanchors;
    for (int a = static_cast<int>(res.perm.size()) - 1; a > 0; --a)
      std::swap(res.perm[a], res.perm[rng.uniformInt(a + 1)]);
  }

  if (counters && force == nullptr) {
    if (res.isSplit)
      ++counters->splitProposed;
    else
      ++counters->mergeProposed;
  }

  const double curJoint = jointLogProb(data, st.F, st.z, h);
  double logQzFwd, logQzRev, logQkRev;

  double logQkFwd = qk.logProb;
  if (res.isSplit) {
    res.km = res.ki;
    res.ka = res.ki;
    res.kb = st.F.K();
    logQzFwd = runSplit(data, h, st.F, st.z, res.anchorI, res.anchorJ, res.km, res.perm,
                        force ? nullptr : &rng, force ? &force->targetF : nullptr,
                        force ? &force->targetZ : nullptr, res.proposedF, res.proposedZ);
    const QkResult qkRev = selectFeatures(data, res.proposedF, res.proposedZ, h.mniw, res.anchorI,
                                          res.anchorJ, nullptr, &res.ka, &res.kb);
    logQkRev = qkRev.logProb;
    // reverse merge of (ka, kb) restores the original column layout exactly
    FeatureMatrix dumF;
    StateSequenceSet dumZ;
    logQzRev = runMerge(data, h, res.proposedF, res.proposedZ, res.anchorI, res.anchorJ, res.ka,
                        res.kb, res.perm, nullptr, &st.z, dumF, dumZ);
    // When both anchors own both children, the proposal can reach the same
    // state class along a second path with the children's roles swapped, and
    // the reverse merge can select the pair in either order.  Both sides of
    // the Hastings factor must sum over these paths.
    if (res.proposedF.get(res.anchorI, res.kb) && res.proposedF.get(res.anchorJ, res.ka)) {
      FeatureMatrix swapF = res.proposedF;
      for (int ell = 0; ell < N; ++ell) {
        swapF.set(ell, res.ka, res.proposedF.get(ell, res.kb));
        swapF.set(ell, res.kb, res.proposedF.get(ell, res.ka));
      }
      StateSequenceSet swapZ = res.proposedZ;
      for (auto& zi : swapZ)
        for (int& lab : zi)
          lab = (lab == res.ka) ? res.kb : ((lab == res.kb) ? res.ka : lab);
      if (!(swapF.raw() == res.proposedF.raw() && swapZ == res.proposedZ)) {
        FeatureMatrix dF2;
        StateSequenceSet dZ2;
        const double alt = runSplit(data, h, st.F, st.z, res.anchorI, res.anchorJ, res.km,
                                    res.perm, nullptr, &swapF, &swapZ, dF2, dZ2);
        logQzFwd = logSumExp({logQzFwd, alt});
      }
      // merge selecting (kb, ka): same allocation density by relabeling
      // symmetry, so only the selection term differs
      const QkResult qkRev2 = selectFeatures(data, res.proposedF, res.proposedZ, h.mniw,
                                             res.anchorI, res.anchorJ, nullptr, &res.kb, &res.ka);
      logQkRev = logSumExp({logQkRev, qkRev2.logProb});
    }
  } else {
    const int ki = res.ki, kj = res.kj;
    const auto shift = [kj](int lab) { return (lab < kj) ? lab : lab - 1; };
    res.km = shift(ki);
    logQzFwd = runMerge(data, h, st.F, st.z, res.anchorI, res.anchorJ, ki, kj, res.perm,
                        force ? nullptr : &rng, force ? &force->targetZ : nullptr, res.proposedF,
                        res.proposedZ);
    const QkResult qkRev = selectFeatures(data, res.proposedF, res.proposedZ, h.mniw, res.anchorI,
                                          res.anchorJ, nullptr, &res.km, &res.km);
    logQkRev = qkRev.logProb;
    // reverse split target: original ki lands at the merged column, original
    // kj at the appended last column
    const int K0 = st.F.K();
    FeatureMatrix targetF(N, K0);
    for (int ell = 0; ell < N; ++ell)
      for (int k = 0; k < K0; ++k) {
        if (!st.F.get(ell, k)) continue;
        targetF.set(ell, (k == kj) ? K0 - 1 : shift(k), true);
      }
    StateSequenceSet targetZ = st.z;
    for (auto& zi : targetZ)
      for (int& lab : zi) lab = (lab == kj) ? K0 - 1 : shift(lab);
    FeatureMatrix dumF;
    StateSequenceSet dumZ;
    logQzRev = runSplit(data, h, res.proposedF, res.proposedZ, res.anchorI, res.anchorJ, res.km,
                        res.perm, nullptr, &targetF, &targetZ, dumF, dumZ);
    // When both anchors own both merged features, the pair can be selected in
    // either order, and the reverse split can hand the two original columns
    // to the children in either role; sum the degenerate paths on both sides.
    if (st.F.get(res.anchorI, kj) && st.F.get(res.anchorJ, ki)) {
      const QkResult qk2 =
          selectFeatures(data, st.F, st.z, h.mniw, res.anchorI, res.anchorJ, nullptr, &kj, &ki);
      logQkFwd = logSumExp({logQkFwd, qk2.logProb});
      // role-swapped reverse split target: kj's column at the merged slot,
      // ki's column appended last
      FeatureMatrix targetF2(N, K0);
      for (int ell = 0; ell < N; ++ell)
        for (int k = 0; k < K0; ++k) {
          if (!st.F.get(ell, k)) continue;
          targetF2.set(ell, (k == ki) ? K0 - 1 : ((k == kj) ? res.km : shift(k)), true);
        }
      StateSequenceSet targetZ2 = st.z;
      for (auto& zi : targetZ2)
        for (int& lab : zi) lab = (lab == ki) ? K0 - 1 : ((lab == kj) ? res.km : shift(lab));
      if (!(targetF2.raw() == targetF.raw() && targetZ2 == targetZ)) {
        FeatureMatrix dF2;
        StateSequenceSet dZ2;
        const double alt = runSplit(data, h, res.proposedF, res.proposedZ, res.anchorI,
                                    res.anchorJ, res.km, res.perm, nullptr, &targetF2, &targetZ2,
                                    dF2, dZ2);
        logQzRev = logSumExp({logQzRev, alt});
      }
    }
  }

  res.logQForward = logQkFwd + logQzFwd;
  res.logQReverse = logQkRev + logQzRev;
  res.logJointRatio = jointLogProb(data, res.proposedF, res.proposedZ, h) - curJoint;
  if (force != nullptr) return res;

  const double logRho = res.logJointRatio + invTemp * (res.logQReverse - res.logQForward);
  if (std::log(rng.uniform()) < logRho) {
    res.accepted = true;
    st.F = res.proposedF;
    st.z = res.proposedZ;
    if (counters) {
      if (res.isSplit)
        ++counters->splitAccepted;
      else
        ++counters->mergeAccepted;
    }
  }
  return res;
}

Sampler::Sampler(Dataset data, SamplerConfig config, SamplerState init, Rng rng)
    : data_(std::move(data)), config_(std::move(config)), state_(std::move(init)), rng_(rng) {
  checkConsistency(data_, state_.F, state_.z);
  state_.hypers.validate();
}

SamplerState Sampler::initialState(const Dataset& data, const ModelHypers& hypers,
                                   std::uint64_t seed) {
  SamplerState st;
  const int N = static_cast<int>(data.size());
  st.F = FeatureMatrix(N, 1);
  for (int i = 0; i < N; ++i) st.F.set(i, 0, true);
  st.z.resize(N);
  for (int i = 0; i < N; ++i) st.z[i].assign(data[i].effLen(), 0);
  st.hypers = hypers;
  st.rngSeed = seed;
  return st;
}

IterationRecord Sampler::iterate() {
  const double invTemp = annealInvTemperature(state_.iteration, config_.anneal);
  state_.inverseTemperature = invTemp;
  const bool adapting = state_.iteration < config_.adaptIterations;

  const SamplerState snapshot = state_;
  try {
    // flips and birth-death act on (F, theta, eta) with z marginalized; every
    // z is redrawn afterwards, before any move that conditions on z again
    AuxiliaryVars aux = sampleAuxiliary(state_, data_, rng_);
    sampleSharedFeatures(state_, data_, aux, rng_, &counters_);
    for (int i = 0; i < static_cast<int>(data_.size()); ++i)
      birthDeathMove(state_, aux, data_, i, invTemp, config_.window, rng_, &counters_,
                     config_.debugAcceptanceBias);
    blockResampleAllZ(state_, data_, aux, rng_);
    if (config_.resampleHypers) {
      sampleBPHypers(state_, config_.hyperPriors, adapt_, adapting, rng_, &counters_);
      sampleTransHypers(state_, aux, config_.hyperPriors, adapt_, adapting, rng_, &counters_);
    }
    if (data_.size() >= 2)
      for (int s = 0; s < config_.splitMergePerIteration; ++s)
        splitMergeMove(state_, data_, invTemp, rng_, &counters_);
    compactFeatures(state_.F, state_.z);
  } catch (const NumericError&) {
    // degenerate statistics abort the iteration; the pre-iteration state is
    // restored and the event counted
    state_ = snapshot;
    state_.inverseTemperature = invTemp;
    ++counters_.degeneracyEvents;
  }
#ifndef NDEBUG
  checkConsistency(data_, state_.F, state_.z);
#endif

  IterationRecord rec;
  rec.iteration = state_.iteration;
  rec.jointLogProb = jointLogProb(data_, state_.F, state_.z, state_.hypers);
  rec.K = state_.F.K();
  rec.inverseTemperature = invTemp;
  rec.counters = counters_;
  ++state_.iteration;
  return rec;
}

}  // namespace bparhmm
