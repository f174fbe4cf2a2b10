#ifndef BPARHMM_TYPES_HPP
#define BPARHMM_TYPES_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace bparhmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Contract violation: inconsistent inputs (bad labels, mismatched shapes).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Numeric degeneracy: a matrix that should be SPD failed to factorize.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One observed multivariate sequence plus its lagged design rows.
// Row t of `ylagged` stacks [y_{t+r-1}; ...; y_t], i.e. the r most recent
// observations preceding effective step t (most recent first).  Effective
// step t corresponds to observation row r+t of `y`.
struct SequenceData {
  std::string id;
  MatrixXd y;        // T x d
  MatrixXd ylagged;  // (T - r) x (r*d)
  int r = 1;
  int d = 1;

  int T() const { return static_cast<int>(y.rows()); }
  int effLen() const { return static_cast<int>(y.rows()) - r; }

  // observation vector at effective step t (0-based)
  VectorXd obs(int t) const { return y.row(r + t).transpose(); }
  VectorXd lag(int t) const { return ylagged.row(t).transpose(); }

  static SequenceData fromObservations(std::string id, const MatrixXd& y, int r);
};

using Dataset = std::vector<SequenceData>;

// Binary ownership matrix F (N sequences x K instantiated behaviors).
class FeatureMatrix {
public:
  FeatureMatrix() = default;
  FeatureMatrix(int n, int k) : f_(Eigen::MatrixXi::Zero(n, k)) {}

  int N() const { return static_cast<int>(f_.rows()); }
  int K() const { return static_cast<int>(f_.cols()); }

  bool get(int i, int k) const { return f_(i, k) != 0; }
  void set(int i, int k, bool v) { f_(i, k) = v ? 1 : 0; }

  int usage(int k) const { return f_.col(k).sum(); }
  int rowCount(int i) const { return f_.row(i).sum(); }

  // global indices of features owned by sequence i, ascending
  std::vector<int> activeSet(int i) const;
  // features owned only by sequence i (m_k == 1 and f_ik == 1)
  std::vector<int> uniqueFeatures(int i) const;
  // number of features used by at least one sequence other than i
  int usageExcluding(int i, int k) const { return usage(k) - (get(i, k) ? 1 : 0); }

  void appendColumn();
  void removeColumn(int k);

  Eigen::MatrixXi& raw() { return f_; }
  const Eigen::MatrixXi& raw() const { return f_; }

  // every row and column nonempty
  bool valid() const;

private:
  Eigen::MatrixXi f_;
};

// Per-sequence discrete label sequences over effective steps; labels are
// 0-based global feature indices.
using StateSequenceSet = std::vector<std::vector<int>>;

// Matrix-normal inverse-Wishart prior on a behavior's VAR parameters.
// L is the column *precision*: A | Sigma ~ MN(M, Sigma, L^{-1}).
struct MNIWPrior {
  double n0 = 0.0;  // degrees of freedom, > d - 1
  MatrixXd S0;      // d x d SPD scale
  MatrixXd M;       // d x (r*d) mean dynamic matrix
  MatrixXd L;       // (r*d) x (r*d) SPD column precision

  int d() const { return static_cast<int>(S0.rows()); }
  int m() const { return static_cast<int>(L.rows()); }

  void validate() const;
  static MNIWPrior defaultFor(int d, int r);
};

struct ModelHypers {
  double alpha = 1.0;  // IBP mass
  double c = 1.0;      // IBP concentration
  double gamma = 1.0;  // transition base weight
  double kappa = 1.0;  // sticky self-transition bonus
  MNIWPrior mniw;

  void validate() const;
};

// Core propagated sampler state.
struct SamplerState {
  FeatureMatrix F;
  StateSequenceSet z;
  ModelHypers hypers;
  long iteration = 0;
  double inverseTemperature = 1.0;
  std::uint64_t rngSeed = 0;
};

// Throws ContractError unless z respects F's ownership and sizes match data.
void checkConsistency(const Dataset& data, const FeatureMatrix& F, const StateSequenceSet& z);

}  // namespace bparhmm

#endif
