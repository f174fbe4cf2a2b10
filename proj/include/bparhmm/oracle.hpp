#ifndef BPARHMM_ORACLE_HPP
#define BPARHMM_ORACLE_HPP

#include <string>

#include "bparhmm/mcmc.hpp"
#include "bparhmm/types.hpp"

namespace bparhmm {

// log p(F, y) for a tiny instance by exhaustive enumeration over every joint
// state configuration.  Transition terms come from the sequential Polya-urn
// predictive and emission terms from one-step Student-t predictives with
// running posterior updates, independent of the closed-form gamma-function
// implementations they check.
// Refuses instances with K > 3 or more than 10 total modeled steps.
double bruteForceJointLogProb(const Dataset& data, const FeatureMatrix& F,
                              const ModelHypers& hypers);

// log p(y | pi, thetas) by explicit sum over all K^T paths.
double bruteForceSequenceLogLik(const MatrixXd& logE, const MatrixXd& logPi);

struct GewekeConfig {
  int N = 2;
  int T = 6;
  int d = 1;
  int r = 1;
  MNIWPrior mniw;  // defaults to MNIWPrior::defaultFor(d, r) when empty
  HyperPriors hyperPriors;
  SamplerConfig sampler;  // anneal off and adaptIterations 0 recommended
  long forwardDraws = 20000;
};

struct GewekeStat {
  std::string name;
  double forwardMean = 0.0, forwardSE = 0.0;
  double chainMean = 0.0, chainSE = 0.0;
  double z = 0.0;
};

struct GewekeReport {
  bool inconclusive = true;
  bool passed = false;
  double maxAbsZ = 0.0;
  std::vector<GewekeStat> stats;
};

// Joint-distribution sampler test: independent forward draws of
// (hypers, F, z, y) against a successive-conditional chain alternating the
// sampler kernel with data regeneration, compared on
// {K, sum m_k, mean self-transition count, alpha} via z-scores
// (batch-means standard errors on the chain side).
GewekeReport gewekeJointTest(const GewekeConfig& cfg, long iterations, Rng& rng);

}  // namespace bparhmm

#endif
