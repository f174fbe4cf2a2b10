#ifndef BPARHMM_MODEL_HPP
#define BPARHMM_MODEL_HPP

#include "bparhmm/conjugacy.hpp"
#include "bparhmm/types.hpp"

namespace bparhmm {

// Log probability of the binary matrix F under the two-parameter IBP
// (left-order-equivalence class); with c = 1 this reduces to the
// one-parameter IBP pmf.  Invariant to column reordering.
double ibpLogProb(const FeatureMatrix& F, double alpha, double c);

// Log prior of F in a state where every column carries its own continuous
// parameter mark (behavior parameters, state labels), so duplicate binary
// columns remain distinguishable: the class pmf above multiplied by the
// number of column orderings within each repeated pattern.  This is the
// prior term entering the sampler's joint target.
double ibpMarkedLogProb(const FeatureMatrix& F, double alpha, double c);

// Collapsed log p(z_i | f_i, gamma, kappa): Dirichlet-multinomial compound
// per transition row plus the initial pseudo-row (no kappa bonus there).
// `z_i` holds global labels; `active` is the ascending active set of f_i.
double transLogProbCollapsed(const std::vector<int>& z_i, const std::vector<int>& active,
                             double gamma, double kappa);

// Pooled sufficient statistics of all observations assigned to global
// feature k across sequences, prior-seeded.
BehaviorSuffStats behaviorStats(const Dataset& data, const StateSequenceSet& z, int k,
                                const MNIWPrior& prior);

// Collapsed joint log p(F | alpha, c) + sum_i log p(z_i | f_i, gamma, kappa)
// + sum_k log m(Y_k).
double jointLogProb(const Dataset& data, const FeatureMatrix& F, const StateSequenceSet& z,
                    const ModelHypers& hypers);

// Removes empty columns from F and relabels z; returns old->new column map
// (-1 for dropped columns).  Idempotent; never changes jointLogProb.
std::vector<int> compactFeatures(FeatureMatrix& F, StateSequenceSet& z);

}  // namespace bparhmm

#endif
