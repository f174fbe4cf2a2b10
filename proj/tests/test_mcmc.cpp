#include <cmath>

#include "bparhmm/mcmc.hpp"
#include "bparhmm/model.hpp"
#include "bparhmm/simulate.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bparhmm;

namespace {

// a sequence with no modeled steps: every state path has likelihood one, so
// feature flips are decided by the prior odds alone
SequenceData zeroLenSequence(const std::string& id, int d, int r) {
  SequenceData s;
  s.id = id;
  s.y = MatrixXd::Zero(r, d);
  s.ylagged = MatrixXd(0, r * d);
  s.r = r;
  s.d = d;
  return s;
}

double logGammaPdfRef(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

}  // namespace

TEST_CASE("annealing schedule") {
  AnnealSchedule off;
  CHECK(annealInvTemperature(0, off) == 1.0);
  CHECK(annealInvTemperature(1000, off) == 1.0);
  AnnealSchedule lin;
  lin.mode = AnnealSchedule::Mode::Linear;
  lin.burnIterations = 100;
  CHECK(annealInvTemperature(0, lin) == 0.0);
  CHECK(annealInvTemperature(50, lin) == doctest::Approx(0.5));
  CHECK(annealInvTemperature(100, lin) == 1.0);
  CHECK(annealInvTemperature(5000, lin) == 1.0);
}

TEST_CASE("transition weight draws have the posterior moments") {
  Rng rng(71);
  const std::vector<int> active{0, 1};
  const std::vector<int> z{0, 0, 1, 0};  // counts: init->0, 0->0, 0->1, 1->0
  const double gamma = 1.5, kappa = 2.0;
  MatrixXd acc = MatrixXd::Zero(3, 2);
  const int n = 40000;
  for (int s = 0; s < n; ++s) {
    const TransitionWeights w = sampleEta(z, active, gamma, kappa, rng);
    acc += w.eta;
  }
  acc /= n;
  // row 0: conc (gamma + 1 + kappa, gamma + 1), scale shape 2 gamma + kappa
  const double c00 = gamma + 1 + kappa, c01 = gamma + 1;
  const double scale0 = 2 * gamma + kappa;
  CHECK(acc(0, 0) == doctest::Approx(scale0 * c00 / (c00 + c01)).epsilon(0.03));
  CHECK(acc(0, 1) == doctest::Approx(scale0 * c01 / (c00 + c01)).epsilon(0.03));
  // row 1: conc (gamma + 1, gamma + kappa)
  const double c10 = gamma + 1, c11 = gamma + kappa;
  CHECK(acc(1, 0) == doctest::Approx(scale0 * c10 / (c10 + c11)).epsilon(0.03));
  // initial pseudo-row: no sticky bonus, conc (gamma + 1, gamma), scale 2 gamma
  const double ci0 = gamma + 1, ci1 = gamma;
  CHECK(acc(2, 0) == doctest::Approx(2 * gamma * ci0 / (ci0 + ci1)).epsilon(0.03));
  CHECK(acc(2, 1) == doctest::Approx(2 * gamma * ci1 / (ci0 + ci1)).epsilon(0.04));
}

TEST_CASE("auxiliary draws are deterministic and complete") {
  Rng rng(72);
  Dataset data;
  for (int i = 0; i < 3; ++i)
    data.push_back(testutil::randomSequence("s" + std::to_string(i), 10, 1, 1, rng));
  SamplerState st;
  st.F = testutil::randomValidF(3, 3, rng);
  st.z = testutil::randomZ(data, st.F, rng);
  st.hypers = testutil::randomHypers(1, 1, rng);

  Rng a(73), b(73);
  const AuxiliaryVars x = sampleAuxiliary(st, data, a);
  const AuxiliaryVars y = sampleAuxiliary(st, data, b);
  CHECK(x.thetas.size() == 3);
  CHECK(x.etas.size() == 3);
  CHECK(x.emissions.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(x.emissions[i].rows() == 9);
    CHECK(x.emissions[i].cols() == 3);
    CHECK(x.etas[i].eta == y.etas[i].eta);
    CHECK((x.etas[i].eta.array() > 0.0).all());
  }
  for (int k = 0; k < 3; ++k) CHECK(x.thetas[k].A == y.thetas[k].A);
}

TEST_CASE("shared flips accept at the prior odds when likelihoods cancel") {
  // N = 6 sequences with zero modeled steps; sequence 0 owns features {0, 1},
  // the rest own only feature 0.  The flip of (0, 0) has prior acceptance
  // (c + N - 1 - m) / m = 1/5 with c = 1 and m = 5.
  Dataset data;
  for (int i = 0; i < 6; ++i) data.push_back(zeroLenSequence("s" + std::to_string(i), 1, 1));
  SamplerState base;
  base.F = FeatureMatrix(6, 2);
  for (int i = 0; i < 6; ++i) base.F.set(i, 0, true);
  base.F.set(0, 1, true);
  base.z.assign(6, {});
  base.hypers.mniw = MNIWPrior::defaultFor(1, 1);

  Rng root(74);
  const int trials = 20000;
  int accepted = 0;
  for (int s = 0; s < trials; ++s) {
    SamplerState st = base;
    Rng rng = root.substream(1, s);
    const AuxiliaryVars aux = sampleAuxiliary(st, data, rng);
    sampleSharedFeatures(st, data, aux, rng);
    if (!st.F.get(0, 0)) ++accepted;
  }
  CHECK(accepted / double(trials) == doctest::Approx(0.2).epsilon(0.06));
}

TEST_CASE("block state resampling keeps ownership and sizes") {
  Rng rng(75);
  Dataset data;
  for (int i = 0; i < 3; ++i)
    data.push_back(testutil::randomSequence("s" + std::to_string(i), 12, 1, 1, rng));
  SamplerState st;
  st.F = testutil::randomValidF(3, 3, rng);
  st.z = testutil::randomZ(data, st.F, rng);
  st.hypers = testutil::randomHypers(1, 1, rng);
  for (int rep = 0; rep < 20; ++rep) {
    const AuxiliaryVars aux = sampleAuxiliary(st, data, rng);
    blockResampleAllZ(st, data, aux, rng);
    CHECK_NOTHROW(checkConsistency(data, st.F, st.z));
  }

  // a sequence owning one feature keeps a constant state sequence
  SamplerState single;
  single.F = FeatureMatrix(1, 1);
  single.F.set(0, 0, true);
  Dataset one{data[0]};
  single.z = {std::vector<int>(data[0].effLen(), 0)};
  single.hypers = st.hypers;
  const AuxiliaryVars aux = sampleAuxiliary(single, one, rng);
  blockResampleAllZ(single, one, aux, rng);
  for (int lab : single.z[0]) CHECK(lab == 0);
}

TEST_CASE("feature-process hyper moves target the conditional posterior") {
  Rng rng(76);
  const FeatureMatrix F = testutil::randomValidF(4, 3, rng);
  SamplerState st;
  st.F = F;
  st.hypers.mniw = MNIWPrior::defaultFor(1, 1);
  HyperPriors hp;
  AdaptState adapt;

  // grid reference for E[alpha], E[c] under
  // p(alpha, c | F) ~ Gamma(1,1)^2 * ibp likelihood
  const int G = 220;
  const double aHi = 12.0, cHi = 16.0;
  double Zs = 0.0, Ea = 0.0, Ec = 0.0;
  for (int ia = 0; ia < G; ++ia) {
    const double a = (ia + 0.5) * aHi / G;
    for (int ic = 0; ic < G; ++ic) {
      const double cc = (ic + 0.5) * cHi / G;
      const double w = std::exp(ibpLogProb(F, a, cc) + logGammaPdfRef(a, 1, 1) +
                                logGammaPdfRef(cc, 1, 1));
      Zs += w;
      Ea += w * a;
      Ec += w * cc;
    }
  }
  Ea /= Zs;
  Ec /= Zs;

  double accA = 0.0, accC = 0.0;
  const long burn = 3000, keep = 150000;
  for (long s = 0; s < burn + keep; ++s) {
    sampleBPHypers(st, hp, adapt, s < burn, rng);
    if (s >= burn) {
      accA += st.hypers.alpha;
      accC += st.hypers.c;
    }
  }
  CHECK(accA / keep == doctest::Approx(Ea).epsilon(0.06));
  CHECK(accC / keep == doctest::Approx(Ec).epsilon(0.08));
}

TEST_CASE("transition hyper moves target the conditional posterior") {
  Rng rng(77);
  // fixed instantiated weights drawn under known shapes
  const double gTrue = 1.2, kTrue = 0.8;
  AuxiliaryVars aux;
  for (int i = 0; i < 2; ++i) {
    TransitionWeights w;
    w.activeIndex = {0, 1, 2};
    w.eta.resize(4, 3);
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 3; ++k)
        w.eta(j, k) = rng.gammaDraw(gTrue + ((j < 3 && j == k) ? kTrue : 0.0));
    aux.etas.push_back(w);
  }
  double sumLogDiag = 0.0, sumLogOff = 0.0;
  long nDiag = 0, nOff = 0;
  for (const TransitionWeights& w : aux.etas)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 3; ++k) {
        if (j < 3 && j == k) {
          sumLogDiag += std::log(w.eta(j, k));
          ++nDiag;
        } else {
          sumLogOff += std::log(w.eta(j, k));
          ++nOff;
        }
      }
  const auto target = [&](double g, double k) {
    // Gamma(shape, 1) terms of the instantiated entries, shape-dependent parts
    return (g + k - 1.0) * sumLogDiag - nDiag * std::lgamma(g + k) + (g - 1.0) * sumLogOff -
           nOff * std::lgamma(g) + logGammaPdfRef(g, 1, 1) + logGammaPdfRef(k, 1, 1);
  };
  const int G = 220;
  const double gHi = 8.0, kHi = 8.0;
  double Zs = 0.0, Eg = 0.0, Ek = 0.0;
  for (int ig = 0; ig < G; ++ig) {
    const double g = (ig + 0.5) * gHi / G;
    for (int ik = 0; ik < G; ++ik) {
      const double k = (ik + 0.5) * kHi / G;
      const double w = std::exp(target(g, k));
      Zs += w;
      Eg += w * g;
      Ek += w * k;
    }
  }
  Eg /= Zs;
  Ek /= Zs;

  SamplerState st;
  st.hypers.mniw = MNIWPrior::defaultFor(1, 1);
  HyperPriors hp;
  AdaptState adapt;
  double accG = 0.0, accK = 0.0;
  const long burn = 3000, keep = 150000;
  for (long s = 0; s < burn + keep; ++s) {
    sampleTransHypers(st, aux, hp, adapt, s < burn, rng);
    if (s >= burn) {
      accG += st.hypers.gamma;
      accK += st.hypers.kappa;
    }
  }
  CHECK(accG / keep == doctest::Approx(Eg).epsilon(0.06));
  CHECK(accK / keep == doctest::Approx(Ek).epsilon(0.08));
}

namespace {

// Post-birth auxiliary tables built from the documented newborn layout: the
// new feature's weight row lands at index K and its column at index K, with
// the initial pseudo-row pushed to K+1.
AuxiliaryVars extendAux(const AuxiliaryVars& aux, const Dataset& data, int seq,
                        const BehaviorParams& theta, const VectorXd& newRow,
                        const VectorXd& newCol) {
  AuxiliaryVars out = aux;
  out.thetas.push_back(theta);
  const int K = static_cast<int>(aux.thetas.size());
  for (std::size_t i = 0; i < aux.etas.size(); ++i) {
    MatrixXd e(K + 2, K + 1);
    e.topLeftCorner(K, K) = aux.etas[i].eta.topRows(K);
    e.block(K + 1, 0, 1, K) = aux.etas[i].eta.row(K);
    for (int k = 0; k < K; ++k) e(K, k) = (static_cast<int>(i) == seq) ? newRow(k) : 1.0;
    for (int j = 0; j < K + 2; ++j) e(j, K) = (static_cast<int>(i) == seq) ? newCol(j) : 1.0;
    out.etas[i].eta = e;
    out.etas[i].activeIndex.push_back(K);
    MatrixXd emis(data[i].effLen(), K + 1);
    emis.leftCols(K) = aux.emissions[i];
    emis.col(K) = emissionLogTable(data[i], {theta}).col(0);
    out.emissions[i] = emis;
  }
  return out;
}

// Auxiliary tables with feature kd removed everywhere.
AuxiliaryVars shrinkAux(const AuxiliaryVars& aux, int kd) {
  AuxiliaryVars out = aux;
  const int K = static_cast<int>(aux.thetas.size());
  out.thetas.erase(out.thetas.begin() + kd);
  for (std::size_t i = 0; i < aux.etas.size(); ++i) {
    MatrixXd e(K, K - 1);
    for (int j = 0, jo = 0; j <= K; ++j) {
      if (j == kd) continue;
      for (int k = 0, ko = 0; k < K; ++k) {
        if (k == kd) continue;
        e(jo, ko++) = aux.etas[i].eta(j, k);
      }
      ++jo;
    }
    out.etas[i].eta = e;
    out.etas[i].activeIndex.resize(K - 1);
    for (int k = 0; k < K - 1; ++k) out.etas[i].activeIndex[k] = k;
    MatrixXd emis(aux.emissions[i].rows(), K - 1);
    if (kd > 0) emis.leftCols(kd) = aux.emissions[i].leftCols(kd);
    if (kd < K - 1) emis.rightCols(K - 1 - kd) = aux.emissions[i].rightCols(K - 1 - kd);
    out.emissions[i] = emis;
  }
  return out;
}

}  // namespace

TEST_CASE("birth and its replayed death mirror every Hastings term") {
  Rng rng(78);
  WindowProposalConfig window;
  window.minLen = 3;
  window.maxLen = 6;
  for (int rep = 0; rep < 60; ++rep) {
    Dataset data;
    const int N = 3;
    for (int i = 0; i < N; ++i)
      data.push_back(testutil::randomSequence("s" + std::to_string(i), 12, 1, 1, rng));
    SamplerState st0;
    st0.F = testutil::randomValidF(N, 2 + rep % 2, rng);
    st0.z = testutil::randomZ(data, st0.F, rng);
    st0.hypers = testutil::randomHypers(1, 1, rng);
    const int seq = rep % N;
    const int K0 = st0.F.K();
    const AuxiliaryVars aux = sampleAuxiliary(st0, data, rng);

    BirthDeathForce bf;
    bf.isBirth = true;
    bf.winLen = window.minLen + rng.uniformInt(window.maxLen - window.minLen + 1);
    bf.winStart = rng.uniformInt(data[seq].effLen() - bf.winLen + 1);
    BehaviorSuffStats ws(st0.hypers.mniw);
    for (int t = bf.winStart; t < bf.winStart + bf.winLen; ++t)
      ws.add(data[seq].obs(t), data[seq].lag(t));
    bf.thetaNew = samplePosteriorTheta(st0.hypers.mniw, ws, rng);
    bf.etaNewRow.resize(K0);
    for (int k = 0; k < K0; ++k) bf.etaNewRow(k) = rng.gammaDraw(st0.hypers.gamma);
    bf.etaNewCol.resize(K0 + 2);
    for (int j = 0; j < K0 + 2; ++j)
      bf.etaNewCol(j) = rng.gammaDraw(st0.hypers.gamma + ((j == K0) ? st0.hypers.kappa : 0.0));

    SamplerState scratch = st0;
    AuxiliaryVars auxScratch = aux;
    Rng dummy(0);
    const BirthDeathResult fwd =
        birthDeathMove(scratch, auxScratch, data, seq, 1.0, window, dummy, nullptr, 1.0, &bf);
    CHECK(fwd.proposedF.K() == K0 + 1);

    SamplerState st1 = st0;
    st1.F = fwd.proposedF;
    AuxiliaryVars aux1 = extendAux(aux, data, seq, bf.thetaNew, bf.etaNewRow, bf.etaNewCol);
    BirthDeathForce df;
    df.isBirth = false;
    df.deathFeature = K0;
    df.winStart = bf.winStart;
    df.winLen = bf.winLen;
    Rng dummy2(0);
    const BirthDeathResult rev =
        birthDeathMove(st1, aux1, data, seq, 1.0, window, dummy2, nullptr, 1.0, &df);

    CHECK(std::abs(fwd.logJointRatio + rev.logJointRatio) < 1e-9);
    CHECK(std::abs(fwd.logQForward - rev.logQReverse) < 1e-9);
    CHECK(std::abs(fwd.logQReverse - rev.logQForward) < 1e-9);
    CHECK(rev.proposedF.raw() == st0.F.raw());
  }
}

TEST_CASE("death and its replayed birth mirror every Hastings term") {
  Rng rng(85);
  WindowProposalConfig window;
  window.minLen = 3;
  window.maxLen = 6;
  for (int rep = 0; rep < 60; ++rep) {
    Dataset data;
    const int N = 3;
    for (int i = 0; i < N; ++i)
      data.push_back(testutil::randomSequence("s" + std::to_string(i), 12, 1, 1, rng));
    const int seq = rep % N;
    // feature 1 is unique to seq (placed mid-matrix so the reborn column
    // lands at a different index), features 0 and 2 are shared
    SamplerState st0;
    st0.F = FeatureMatrix(N, 3);
    for (int i = 0; i < N; ++i) st0.F.set(i, 0, true);
    st0.F.set(seq, 1, true);
    for (int i = 0; i < N; ++i)
      if (rng.uniform() < 0.5) st0.F.set(i, 2, true);
    st0.F.set((seq + 1) % N, 2, true);
    st0.z = testutil::randomZ(data, st0.F, rng);
    st0.hypers = testutil::randomHypers(1, 1, rng);
    const AuxiliaryVars aux = sampleAuxiliary(st0, data, rng);
    const int kd = 1;
    const int K0 = 3;

    BirthDeathForce df;
    df.isBirth = false;
    df.deathFeature = kd;
    df.winLen = window.minLen + rng.uniformInt(window.maxLen - window.minLen + 1);
    df.winStart = rng.uniformInt(data[seq].effLen() - df.winLen + 1);
    SamplerState scratch = st0;
    AuxiliaryVars auxScratch = aux;
    Rng dummy(0);
    const BirthDeathResult fwd =
        birthDeathMove(scratch, auxScratch, data, seq, 1.0, window, dummy, nullptr, 1.0, &df);
    CHECK(fwd.proposedF.K() == K0 - 1);

    SamplerState st1 = st0;
    st1.F = fwd.proposedF;
    AuxiliaryVars aux1 = shrinkAux(aux, kd);
    BirthDeathForce bf;
    bf.isBirth = true;
    bf.winStart = df.winStart;
    bf.winLen = df.winLen;
    bf.thetaNew = aux.thetas[kd];
    // the reborn feature is appended last: its weights are the dead column's
    // entries reindexed to the reduced layout
    bf.etaNewRow.resize(K0 - 1);
    bf.etaNewCol.resize(K0 + 1);
    {
      int ko = 0;
      for (int k = 0; k < K0; ++k)
        if (k != kd) bf.etaNewRow(ko++) = aux.etas[seq].eta(kd, k);
      int jo = 0;
      for (int j = 0; j < K0; ++j)
        if (j != kd) bf.etaNewCol(jo++) = aux.etas[seq].eta(j, kd);
      bf.etaNewCol(K0 - 1) = aux.etas[seq].eta(kd, kd);
      bf.etaNewCol(K0) = aux.etas[seq].eta(K0, kd);
    }
    Rng dummy2(0);
    const BirthDeathResult rev =
        birthDeathMove(st1, aux1, data, seq, 1.0, window, dummy2, nullptr, 1.0, &bf);

    CHECK(std::abs(fwd.logJointRatio + rev.logJointRatio) < 1e-9);
    CHECK(std::abs(fwd.logQForward - rev.logQReverse) < 1e-9);
    CHECK(std::abs(fwd.logQReverse - rev.logQForward) < 1e-9);
    // the reborn state is the original up to moving column kd to the end
    FeatureMatrix expect(N, K0);
    for (int i = 0; i < N; ++i) {
      int ko = 0;
      for (int k = 0; k < K0; ++k)
        if (k != kd) expect.set(i, ko++, st0.F.get(i, k));
      expect.set(i, K0 - 1, st0.F.get(i, kd));
    }
    CHECK(rev.proposedF.raw() == expect.raw());
  }
}

TEST_CASE("death of the only active feature is rejected outright") {
  Rng rng(79);
  Dataset data;
  data.push_back(testutil::randomSequence("a", 10, 1, 1, rng));
  data.push_back(testutil::randomSequence("b", 10, 1, 1, rng));
  SamplerState st;
  st.F = FeatureMatrix(2, 2);
  st.F.set(0, 0, true);  // unique to sequence 0, its only feature
  st.F.set(1, 1, true);
  st.z = {std::vector<int>(9, 0), std::vector<int>(9, 1)};
  st.hypers = testutil::randomHypers(1, 1, rng);
  AuxiliaryVars aux = sampleAuxiliary(st, data, rng);

  WindowProposalConfig window;
  window.minLen = 3;
  window.maxLen = 5;
  BirthDeathForce force;
  force.isBirth = false;
  force.deathFeature = 0;
  force.winStart = 0;
  force.winLen = 3;
  Rng dummy(0);
  const BirthDeathResult res =
      birthDeathMove(st, aux, data, 0, 1.0, window, dummy, nullptr, 1.0, &force);
  CHECK(!res.accepted);
  CHECK(std::isinf(res.logJointRatio));
  CHECK(res.logJointRatio < 0.0);
}

TEST_CASE("a sequence without unique features always proposes a birth") {
  Rng rng(80);
  Dataset data;
  for (int i = 0; i < 2; ++i)
    data.push_back(testutil::randomSequence("s" + std::to_string(i), 10, 1, 1, rng));
  SamplerState st;
  st.F = FeatureMatrix(2, 1);
  st.F.set(0, 0, true);
  st.F.set(1, 0, true);
  st.z = {std::vector<int>(9, 0), std::vector<int>(9, 0)};
  st.hypers = testutil::randomHypers(1, 1, rng);
  WindowProposalConfig window;
  window.minLen = 3;
  window.maxLen = 5;
  for (int rep = 0; rep < 50; ++rep) {
    SamplerState copy = st;
    AuxiliaryVars aux = sampleAuxiliary(copy, data, rng);
    const BirthDeathResult res = birthDeathMove(copy, aux, data, 0, 1.0, window, rng);
    CHECK(res.isBirth);
  }
}

TEST_CASE("anchor feature selection doubles the same-feature mass") {
  Rng rng(81);
  Dataset data;
  for (int i = 0; i < 2; ++i)
    data.push_back(testutil::randomSequence("s" + std::to_string(i), 10, 1, 1, rng));
  FeatureMatrix F(2, 2);
  F.set(0, 0, true);
  F.set(1, 0, true);
  F.set(1, 1, true);
  StateSequenceSet z = testutil::randomZ(data, F, rng);
  const MNIWPrior prior = MNIWPrior::defaultFor(1, 1);

  // anchor 0 owns only feature 0, anchor 1 owns {0, 1}: picking k_j = k_i
  // (the split branch) has probability exactly 2/3
  const double lpSame = anchorFeatureChoiceLogProb(data, F, z, prior, 0, 1, 0, 0);
  const double lpOther = anchorFeatureChoiceLogProb(data, F, z, prior, 0, 1, 0, 1);
  CHECK(std::exp(lpSame) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(std::exp(lpOther) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  // anchor j owning only k_i makes the same-feature choice certain
  FeatureMatrix F1(2, 2);
  F1.set(0, 0, true);
  F1.set(0, 1, true);
  F1.set(1, 0, true);
  StateSequenceSet z1 = testutil::randomZ(data, F1, rng);
  const double lp = anchorFeatureChoiceLogProb(data, F1, z1, prior, 0, 1, 0, 0);
  CHECK(std::exp(lp) == doctest::Approx(0.5).epsilon(1e-9));  // 1/|active(0)| * 1
}

TEST_CASE("split-merge forward and replayed reverse densities agree") {
  Rng rng(82);
  int splits = 0, merges = 0;
  for (int rep = 0; rep < 120; ++rep) {
    Dataset data;
    const int N = 4;
    for (int i = 0; i < N; ++i)
      data.push_back(testutil::randomSequence("s" + std::to_string(i), 9, 1, 1, rng));
    SamplerState st0;
    st0.F = testutil::randomValidF(N, 2 + rep % 2, rng);
    st0.z = testutil::randomZ(data, st0.F, rng);
    st0.hypers = testutil::randomHypers(1, 1, rng);
    const int K0 = st0.F.K();

    SamplerState scratch = st0;
    const SplitMergeResult fwd = splitMergeMove(scratch, data, 1.0, rng);
    (fwd.isSplit ? splits : merges) += 1;

    SamplerState prop = st0;
    prop.F = fwd.proposedF;
    prop.z = fwd.proposedZ;
    SplitMergeForce force;
    force.anchorI = fwd.anchorI;
    force.anchorJ = fwd.anchorJ;
    force.perm = fwd.perm;
    if (fwd.isSplit) {
      // complement: merge the split pair back together
      force.ki = fwd.ka;
      force.kj = fwd.kb;
      force.targetZ = st0.z;
    } else {
      // complement: split the merged column, original k_j reborn last
      force.ki = fwd.km;
      force.kj = fwd.km;
      const int kj = fwd.kj;
      const auto shift = [kj](int lab) { return (lab < kj) ? lab : lab - 1; };
      force.targetF = FeatureMatrix(N, K0);
      for (int i = 0; i < N; ++i)
        for (int k = 0; k < K0; ++k)
          if (st0.F.get(i, k)) force.targetF.set(i, (k == kj) ? K0 - 1 : shift(k), true);
      force.targetZ = st0.z;
      for (auto& zi : force.targetZ)
        for (int& lab : zi) lab = (lab == kj) ? K0 - 1 : shift(lab);
    }
    Rng dummy(0);
    const SplitMergeResult rev = splitMergeMove(prop, data, 1.0, dummy, nullptr, &force);

    CHECK(rev.isSplit == !fwd.isSplit);
    CHECK(std::abs(fwd.logQReverse - rev.logQForward) < 1e-9);
    CHECK(std::abs(fwd.logQForward - rev.logQReverse) < 1e-9);
    CHECK(std::abs(fwd.logJointRatio + rev.logJointRatio) < 1e-9);
    const double h = (fwd.logQReverse - fwd.logQForward) + (rev.logQReverse - rev.logQForward);
    CHECK(std::abs(h) < 1e-9);
    if (fwd.isSplit) {
      // merging the freshly split pair restores the original layout exactly
      CHECK(rev.proposedF.raw() == st0.F.raw());
      CHECK(rev.proposedZ == st0.z);
    }
  }
  CHECK(splits > 10);
  CHECK(merges > 10);
}

TEST_CASE("sampler runs are deterministic and preserve invariants") {
  Rng gen(83);
  ModelHypers h;
  h.mniw = MNIWPrior::defaultFor(1, 1);
  const SyntheticResult sim = generateSynthetic(h, 3, 40, 1, 1, gen);

  SamplerConfig cfg;
  cfg.window.minLen = 5;
  cfg.window.maxLen = 15;
  cfg.adaptIterations = 10;
  const SamplerState init = Sampler::initialState(sim.data, h, 42);
  CHECK(init.F.K() == 1);
  CHECK(init.F.valid());
  for (const auto& zi : init.z)
    for (int lab : zi) CHECK(lab == 0);

  Sampler a(sim.data, cfg, init, Rng(42));
  Sampler b(sim.data, cfg, init, Rng(42));
  for (int s = 0; s < 25; ++s) {
    const IterationRecord ra = a.iterate();
    const IterationRecord rb = b.iterate();
    CHECK(ra.jointLogProb == rb.jointLogProb);
    CHECK(ra.K == rb.K);
    CHECK(a.state().F.valid());
    CHECK_NOTHROW(checkConsistency(sim.data, a.state().F, a.state().z));
    CHECK(std::isfinite(ra.jointLogProb));
  }
  CHECK(a.state().F.raw() == b.state().F.raw());
  CHECK(a.state().z == b.state().z);
  CHECK(a.state().hypers.alpha == b.state().hypers.alpha);
  CHECK(a.counters().flipProposed == b.counters().flipProposed);
}

TEST_CASE("annealed iterations report the scheduled temperature") {
  Rng gen(84);
  ModelHypers h;
  h.mniw = MNIWPrior::defaultFor(1, 1);
  const SyntheticResult sim = generateSynthetic(h, 2, 25, 1, 1, gen);
  SamplerConfig cfg;
  cfg.anneal.mode = AnnealSchedule::Mode::Linear;
  cfg.anneal.burnIterations = 10;
  cfg.window.minLen = 4;
  cfg.window.maxLen = 8;
  Sampler s(sim.data, cfg, Sampler::initialState(sim.data, h, 7), Rng(7));
  for (int it = 0; it < 12; ++it) {
    const IterationRecord rec = s.iterate();
    CHECK(rec.inverseTemperature == doctest::Approx(std::min(1.0, it / 10.0)));
  }
}
