#ifndef BPARHMM_SIMULATE_HPP
#define BPARHMM_SIMULATE_HPP

#include "bparhmm/conjugacy.hpp"
#include "bparhmm/rng.hpp"
#include "bparhmm/types.hpp"

namespace bparhmm {

struct GroundTruth {
  FeatureMatrix trueF;
  StateSequenceSet trueZ;
  std::vector<BehaviorParams> trueThetas;
};

struct SyntheticResult {
  Dataset data;
  GroundTruth truth;
  long emptyRowRedraws = 0;
};

// One draw of the two-parameter IBP customer process (rows may be empty).
FeatureMatrix sampleIBP(double alpha, double c, int N, Rng& rng);

// Exact generative draw from the model: F via the IBP customer process with
// empty rows rejection-redrawn, thetas from the MNIW prior, transition rows
// from the sticky Dirichlet construction, then the Markov/VAR recursions.
// The first r observations per sequence are iid standard normal.
SyntheticResult generateSynthetic(const ModelHypers& hypers, int N, int T, int d, int r, Rng& rng);

// Synthetic draw with caller-provided behaviors and feature matrix, for
// recovery studies with well-separated dynamics.
SyntheticResult generateFromBehaviors(const ModelHypers& hypers, const FeatureMatrix& F,
                                      const std::vector<BehaviorParams>& thetas, int T, int r,
                                      Rng& rng);

}  // namespace bparhmm

#endif
