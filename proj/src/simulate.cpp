#include "bparhmm/simulate.hpp"

#include <cmath>

#include "bparhmm/dynamics.hpp"
#include "bparhmm/model.hpp"

namespace bparhmm {

FeatureMatrix sampleIBP(double alpha, double c, int N, Rng& rng) {
  if (!(alpha > 0.0) || !(c > 0.0) || N < 1)
    throw ContractError("sampleIBP: invalid parameters");
  std::vector<std::vector<int>> cols;  // ownership indicator per column
  std::vector<int> counts;
  for (int i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (rng.uniform() < counts[k] / (c + i)) {
        cols[k].push_back(i);
        ++counts[k];
      }
    }
    const int fresh = rng.poisson(alpha * c / (c + i));
    for (int j = 0; j < fresh; ++j) {
      cols.push_back({i});
      counts.push_back(1);
    }
  }
  FeatureMatrix F(N, static_cast<int>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k)
    for (int i : cols[k]) F.set(i, static_cast<int>(k), true);
  return F;
}

namespace {

// Sticky feature-constrained transition rows for one sequence.
TransitionWeights drawPriorWeights(const std::vector<int>& active, double gamma, double kappa,
                                   Rng& rng) {
  const int K = static_cast<int>(active.size());
  TransitionWeights w;
  w.activeIndex = active;
  w.eta.resize(K + 1, K);
  for (int j = 0; j <= K; ++j)
    for (int k = 0; k < K; ++k) {
      const double shape = gamma + ((j == k) ? kappa : 0.0);  // initial row: no bonus
      w.eta(j, k) = rng.gammaDraw(shape);
    }
  return w;
}

void simulateSequences(const ModelHypers& hypers, const FeatureMatrix& F,
                       const std::vector<BehaviorParams>& thetas, int T, int d, int r, Rng& rng,
                       SyntheticResult& out) {
  const int N = F.N();
  out.truth.trueF = F;
  out.truth.trueThetas = thetas;
  out.truth.trueZ.resize(N);
  out.data.clear();
  for (int i = 0; i < N; ++i) {
    const std::vector<int> active = F.activeSet(i);
    const TransitionWeights w = drawPriorWeights(active, hypers.gamma, hypers.kappa, rng);
    const MatrixXd pi = buildTransitionRows(w);
    const int K = static_cast<int>(active.size());

    MatrixXd y(T, d);
    for (int t = 0; t < r; ++t)
      for (int j = 0; j < d; ++j) y(t, j) = rng.normal();

    std::vector<int>& z = out.truth.trueZ[i];
    z.resize(T - r);
    int prevLocal = K;  // initial pseudo-row
    for (int t = r; t < T; ++t) {
      const double u = rng.uniform();
      double cum = 0.0;
      int local = K - 1;
      for (int k = 0; k < K; ++k) {
        cum += pi(prevLocal, k);
        if (u < cum) {
          local = k;
          break;
        }
      }
      z[t - r] = active[local];
      prevLocal = local;

      VectorXd ylag(r * d);
      for (int l = 1; l <= r; ++l) ylag.segment((l - 1) * d, d) = y.row(t - l).transpose();
      const BehaviorParams& th = thetas[active[local]];
      Eigen::LLT<MatrixXd> llt(th.Sigma);
      VectorXd noise(d);
      for (int j = 0; j < d; ++j) noise(j) = rng.normal();
      y.row(t) = (th.A * ylag + llt.matrixL() * noise).transpose();
    }
    out.data.push_back(SequenceData::fromObservations("seq" + std::to_string(i), y, r));
  }
}

}  // namespace

SyntheticResult generateSynthetic(const ModelHypers& hypers, int N, int T, int d, int r, Rng& rng) {
  hypers.validate();
  if (T <= r) throw ContractError("generateSynthetic: T must exceed r");
  SyntheticResult out;

  FeatureMatrix F = sampleIBP(hypers.alpha, hypers.c, N, rng);
  // rejection on empty rows only, keeping column structure for other rows
  for (int i = 0; i < N; ++i) {
    while (F.rowCount(i) == 0) {
      ++out.emptyRowRedraws;
      for (int k = 0; k < F.K(); ++k) {
        const int mExcl = F.usageExcluding(i, k);
        F.set(i, k, mExcl > 0 && rng.uniform() < mExcl / (hypers.c + N - 1));
      }
      const int fresh = rng.poisson(hypers.alpha * hypers.c / (hypers.c + N - 1));
      for (int j = 0; j < fresh; ++j) {
        F.appendColumn();
        F.set(i, F.K() - 1, true);
      }
    }
  }
  // drop columns that lost all owners during redraw
  StateSequenceSet dummy(N);
  compactFeatures(F, dummy);

  std::vector<BehaviorParams> thetas(F.K());
  for (int k = 0; k < F.K(); ++k) {
    BehaviorSuffStats empty(hypers.mniw);
    thetas[k] = samplePosteriorTheta(hypers.mniw, empty, rng);  // prior draw
  }
  simulateSequences(hypers, F, thetas, T, d, r, rng, out);
  return out;
}

SyntheticResult generateFromBehaviors(const ModelHypers& hypers, const FeatureMatrix& F,
                                      const std::vector<BehaviorParams>& thetas, int T, int r,
                                      Rng& rng) {
  if (static_cast<int>(thetas.size()) != F.K())
    throw ContractError("generateFromBehaviors: theta count mismatch");
  if (!F.valid()) throw ContractError("generateFromBehaviors: invalid feature matrix");
  SyntheticResult out;
  const int d = static_cast<int>(thetas.empty() ? 1 : thetas[0].Sigma.rows());
  simulateSequences(hypers, F, thetas, T, d, r, rng, out);
  return out;
}

}  // namespace bparhmm
