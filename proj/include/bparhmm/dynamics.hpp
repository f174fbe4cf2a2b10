#ifndef BPARHMM_DYNAMICS_HPP
#define BPARHMM_DYNAMICS_HPP

#include "bparhmm/conjugacy.hpp"
#include "bparhmm/rng.hpp"
#include "bparhmm/types.hpp"

namespace bparhmm {

// Unnormalized transition weights over a sequence's active features.
// Row j < K is the from-state row for local state j; row K is the
// initial-state pseudo-row.  activeIndex maps local column -> global id.
struct TransitionWeights {
  MatrixXd eta;                  // (K+1) x K, entries strictly positive
  std::vector<int> activeIndex;  // size K

  int K() const { return static_cast<int>(eta.cols()); }
  int localOf(int global) const;
};

struct TransitionCounts {
  Eigen::MatrixXi n;  // (K+1) x K, row K = initial pseudo-row
  int rowTotal(int j) const { return n.row(j).sum(); }
};

// Feature-constrained rows pi: each row of eta normalized to sum 1.
MatrixXd buildTransitionRows(const TransitionWeights& w);

// Restriction of weights over a superset of features to a target active set.
TransitionWeights subsetWeights(const TransitionWeights& full, const std::vector<int>& active);

double varLogLik(const VectorXd& y, const VectorXd& ylag, const BehaviorParams& theta);

// Per-step emission log-likelihood table [effLen x K] over all behaviors.
MatrixXd emissionLogTable(const SequenceData& seq, const std::vector<BehaviorParams>& thetas);

// Column subset of a full emission table matching an active set.
MatrixXd selectColumns(const MatrixXd& table, const std::vector<int>& cols);

// Backward messages in log domain, each time step normalized to its max
// entry; stored normalizers recover the exact likelihood.
struct BackwardMessages {
  MatrixXd logM;   // effLen x K; logM(t, k) up to the per-step constant
  VectorXd norms;  // per-step subtracted max
};
BackwardMessages backwardMessages(const MatrixXd& logE, const MatrixXd& logPi);

// log p(y | pi, thetas) by the forward recursion, including the initial
// pseudo-row; logE is the emission table over the same local indexing as pi.
double sequenceLogLik(const MatrixXd& logE, const MatrixXd& logPi);

// Exact joint draw of the local label sequence; if logDensity is non-null it
// receives the log proposal density of the drawn sequence.
std::vector<int> blockSampleZ(const MatrixXd& logE, const MatrixXd& logPi, Rng& rng,
                              double* logDensity = nullptr);

// Density of a given local label sequence under blockSampleZ's law.
double blockSampleLogDensity(const MatrixXd& logE, const MatrixXd& logPi,
                             const std::vector<int>& labels);

TransitionCounts countTransitions(const std::vector<int>& zLocal, int Ki);

// Label translation between global feature ids and active-set positions.
std::vector<int> toLocalLabels(const std::vector<int>& zGlobal, const std::vector<int>& active);
std::vector<int> toGlobalLabels(const std::vector<int>& zLocal, const std::vector<int>& active);

}  // namespace bparhmm

#endif
