#ifndef BPARHMM_MCMC_HPP
#define BPARHMM_MCMC_HPP

#include <optional>

#include "bparhmm/dynamics.hpp"
#include "bparhmm/model.hpp"
#include "bparhmm/rng.hpp"

namespace bparhmm {

struct AnnealSchedule {
  enum class Mode { Off, Linear };
  Mode mode = Mode::Off;
  long burnIterations = 0;
};

// off -> 1 always; linear -> min(1, s / B), exactly 1 for s >= B.
double annealInvTemperature(long s, const AnnealSchedule& schedule);

struct WindowProposalConfig {
  int minLen = 20;
  int maxLen = 100;
};

struct HyperPriors {
  double alphaShape = 1.0, alphaRate = 1.0;
  double cShape = 1.0, cRate = 1.0;
  double gammaShape = 1.0, gammaRate = 1.0;
  double kappaShape = 1.0, kappaRate = 1.0;
};

struct MoveCounters {
  long flipProposed = 0, flipAccepted = 0;
  long birthProposed = 0, birthAccepted = 0;
  long deathProposed = 0, deathAccepted = 0;
  long splitProposed = 0, splitAccepted = 0;
  long mergeProposed = 0, mergeAccepted = 0;
  long hyperProposed = 0, hyperAccepted = 0;
  long degeneracyEvents = 0;
};

// Random-walk step sizes on the log scale, adapted during burn-in only.
struct AdaptState {
  double stepAlpha = 0.5, stepC = 0.5, stepGamma = 0.5, stepKappa = 0.5;
};

struct SamplerConfig {
  HyperPriors hyperPriors;
  AnnealSchedule anneal;
  WindowProposalConfig window;
  int splitMergePerIteration = 1;
  bool resampleHypers = true;
  long adaptIterations = 500;
  // test fixture: multiplies the birth-death acceptance ratio
  double debugAcceptanceBias = 1.0;
};

// Auxiliary draws instantiated for steps 1-5 and discarded afterwards.
// etas are full over all instantiated features (active block from the exact
// posterior, remaining entries from the prior) so that feature flips can
// evaluate likelihoods under either ownership value.
struct AuxiliaryVars {
  std::vector<BehaviorParams> thetas;   // per feature
  std::vector<TransitionWeights> etas;  // per sequence, over all K features
  std::vector<MatrixXd> emissions;      // per sequence: effLen x K cache
};

// Posterior draw of a sequence's transition weights over its active set
// (normalized-row Dirichlet plus gamma scale; initial pseudo-row without the
// sticky bonus).
TransitionWeights sampleEta(const std::vector<int>& z_i, const std::vector<int>& active,
                            double gamma, double kappa, Rng& rng);

AuxiliaryVars sampleAuxiliary(const SamplerState& st, const Dataset& data, Rng& rng);

// MH flips of shared features (m_k^{-i} >= 1), sequential sweep; flips that
// would empty a row are rejected outright.
void sampleSharedFeatures(SamplerState& st, const Dataset& data, const AuxiliaryVars& aux,
                          Rng& rng, MoveCounters* counters = nullptr);

void blockResampleAllZ(SamplerState& st, const Dataset& data, const AuxiliaryVars& aux, Rng& rng);

void sampleBPHypers(SamplerState& st, const HyperPriors& hp, AdaptState& adapt, bool adapting,
                    Rng& rng, MoveCounters* counters = nullptr);

void sampleTransHypers(SamplerState& st, const AuxiliaryVars& aux, const HyperPriors& hp,
                       AdaptState& adapt, bool adapting, Rng& rng,
                       MoveCounters* counters = nullptr);

// Pins every random choice of a birth-death move, for replay accounting.
// For a birth the newborn behavior parameters and transition-weight entries
// are part of the proposal and must be pinned too.
struct BirthDeathForce {
  bool isBirth = true;
  int deathFeature = -1;  // global column to remove (death only)
  int winStart = 0, winLen = 1;
  BehaviorParams thetaNew;  // birth only
  VectorXd etaNewRow;       // birth only: K weights, newborn row -> existing
  VectorXd etaNewCol;       // birth only: K+2 weights into the newborn column
                            // (rows 0..K-1 existing, K newborn self, K+1 initial)
};

struct BirthDeathResult {
  bool isBirth = true;
  int feature = -1;  // column born (proposed indexing) or killed (source indexing)
  int winStart = 0, winLen = 1;
  double logJointRatio = 0.0;  // feature prior + behavior prior + sequence likelihood
  double logQForward = 0.0;    // move kind + newborn parameter density
  double logQReverse = 0.0;    // complementary move densities
  bool accepted = false;
  BehaviorParams thetaNew;  // birth: realized newborn draws
  VectorXd etaNewRow, etaNewCol;
  FeatureMatrix proposedF;
};

// Data-driven birth-death proposal for one sequence with the state sequences
// marginalized out; operates on (F, theta, eta) and keeps `aux` consistent
// with F, so all z must be redrawn after a sweep.  With `force` set the move
// is evaluated (not sampled) and never applied.
BirthDeathResult birthDeathMove(SamplerState& st, AuxiliaryVars& aux, const Dataset& data, int seq,
                                double invTemp, const WindowProposalConfig& cfg, Rng& rng,
                                MoveCounters* counters = nullptr, double debugBias = 1.0,
                                const BirthDeathForce* force = nullptr);

struct SplitMergeForce {
  int anchorI = 0, anchorJ = 1;
  int ki = 0, kj = 0;            // selected features in the source state
  std::vector<int> perm;         // nonanchor visit order (sequence ids)
  FeatureMatrix targetF;
  StateSequenceSet targetZ;
};

struct SplitMergeResult {
  bool isSplit = false;
  bool accepted = false;
  int anchorI = -1, anchorJ = -1, ki = -1, kj = -1;
  int ka = -1, kb = -1, km = -1;  // columns in the proposed state
  std::vector<int> perm;
  double logJointRatio = 0.0;
  double logQForward = 0.0;  // q_{split|merge} + q_k of the realized proposal
  double logQReverse = 0.0;  // replayed complementary move + reverse q_k
  FeatureMatrix proposedF;
  StateSequenceSet proposedZ;
};

// Density of selecting anchor features (k_i, k_j): k_i uniform over anchor
// i's active set, k_j by marginal-likelihood ratio weights with the doubled
// same-feature shortcut.
double anchorFeatureChoiceLogProb(const Dataset& data, const FeatureMatrix& F,
                                  const StateSequenceSet& z, const MNIWPrior& prior, int i, int j,
                                  int ki, int kj);

// Sequentially allocated split-merge proposal over the active set.  With
// `force` set the move is evaluated (not sampled) and never applied.
SplitMergeResult splitMergeMove(SamplerState& st, const Dataset& data, double invTemp, Rng& rng,
                                MoveCounters* counters = nullptr,
                                const SplitMergeForce* force = nullptr);

struct IterationRecord {
  long iteration = 0;
  double jointLogProb = 0.0;
  int K = 0;
  double inverseTemperature = 1.0;
  MoveCounters counters;  // cumulative
};

// Seven-move sampler cycling auxiliary draws, shared-feature flips, block z
// updates, hyperparameter moves, per-sequence birth-death, and split-merge.
class Sampler {
public:
  Sampler(Dataset data, SamplerConfig config, SamplerState init, Rng rng);

  // single shared feature owned by everyone, z constant
  static SamplerState initialState(const Dataset& data, const ModelHypers& hypers,
                                   std::uint64_t seed);

  IterationRecord iterate();

  const SamplerState& state() const { return state_; }
  SamplerState& mutableState() { return state_; }
  const MoveCounters& counters() const { return counters_; }
  MoveCounters& mutableCounters() { return counters_; }
  const SamplerConfig& config() const { return config_; }
  const Dataset& data() const { return data_; }
  void setData(Dataset d) { data_ = std::move(d); }
  Rng& rng() { return rng_; }
  AdaptState& adapt() { return adapt_; }

private:
  Dataset data_;
  SamplerConfig config_;
  SamplerState state_;
  Rng rng_;
  MoveCounters counters_;
  AdaptState adapt_;
};

}  // namespace bparhmm

#endif
