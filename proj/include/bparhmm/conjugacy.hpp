#ifndef BPARHMM_CONJUGACY_HPP
#define BPARHMM_CONJUGACY_HPP

#include <optional>

#include "bparhmm/rng.hpp"
#include "bparhmm/types.hpp"

namespace bparhmm {

// VAR parameters for one behavior.
struct BehaviorParams {
  MatrixXd A;      // d x (r*d)
  MatrixXd Sigma;  // d x d SPD
};

// Pooled VAR sufficient statistics for one behavior, prior-seeded so that an
// empty set of observations reproduces the prior (Syy = M L M^T, Syly = M L,
// Slyly = L, count = 0).  Cholesky factors of Slyly and of the Schur
// complement plus S0 are cached lazily and invalidated on update.
class BehaviorSuffStats {
public:
  BehaviorSuffStats() = default;
  explicit BehaviorSuffStats(const MNIWPrior& prior);

  void add(const VectorXd& y, const VectorXd& ylag);
  void remove(const VectorXd& y, const VectorXd& ylag);

  int count() const { return count_; }
  const MatrixXd& Syy() const { return Syy_; }
  const MatrixXd& Syly() const { return Syly_; }
  const MatrixXd& Slyly() const { return Slyly_; }

  // Schur complement Syy - Syly Slyly^{-1} Syly^T
  MatrixXd schur() const;

  friend double logMarginalLikelihood(const BehaviorSuffStats& stats, const MNIWPrior& prior);

  // number of times the SPD jitter floor had to be applied (degeneracy events)
  static long jitterEvents();

private:
  const Eigen::LLT<MatrixXd>& lltSlyly() const;
  void invalidate() { lltCache_.reset(); }

  MatrixXd Syy_, Syly_, Slyly_;
  int count_ = 0;
  mutable std::optional<Eigen::LLT<MatrixXd>> lltCache_;
};

// MNIW posterior parameter set (display after the pooled-statistics update).
struct MNIWPosterior {
  MatrixXd meanA;         // Syly * Slyly^{-1}
  MatrixXd colPrecision;  // Slyly
  double dof = 0.0;       // count + n0
  MatrixXd scale;         // schur + S0
};

double logMvGamma(int d, double a);

double logMarginalLikelihood(const BehaviorSuffStats& stats, const MNIWPrior& prior);

MNIWPosterior posteriorParams(const MNIWPrior& prior, const BehaviorSuffStats& stats);

BehaviorParams samplePosteriorTheta(const MNIWPrior& prior, const BehaviorSuffStats& stats, Rng& rng);

// A = meanA, Sigma = scale / (dof - d - 1); falls back to the IW mode
// scale / (dof + d + 1) when the mean does not exist (dof <= d + 1).
BehaviorParams posteriorMeanTheta(const MNIWPrior& prior, const BehaviorSuffStats& stats);

// Log density of (A, Sigma) under the MNIW law p: Sigma ~ IW(n0, S0) and
// A | Sigma ~ MN(M, Sigma, L^{-1}).  Matches samplePosteriorTheta's law when
// p carries the posterior parameters.
double logMNIWPdf(const MNIWPrior& p, const BehaviorParams& theta);

// Sigma ~ IW(dof, scale) via Bartlett decomposition.
MatrixXd sampleInverseWishart(double dof, const MatrixXd& scale, Rng& rng);

// X ~ MN(mean, rowCov, colPrecision^{-1})
MatrixXd sampleMatrixNormal(const MatrixXd& mean, const MatrixXd& rowCov,
                            const MatrixXd& colPrecision, Rng& rng);

}  // namespace bparhmm

#endif
