#ifndef BPARHMM_TESTS_HELPERS_HPP
#define BPARHMM_TESTS_HELPERS_HPP

#include <string>
#include <vector>

#include "bparhmm/rng.hpp"
#include "bparhmm/types.hpp"

namespace testutil {

using namespace bparhmm;

inline MatrixXd randomMatrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline SequenceData randomSequence(const std::string& id, int T, int d, int r, Rng& rng) {
  return SequenceData::fromObservations(id, randomMatrix(T, d, rng), r);
}

// Random binary matrix with every row and column nonempty.
inline FeatureMatrix randomValidF(int N, int K, Rng& rng) {
  FeatureMatrix F(N, K);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < K; ++k) F.set(i, k, rng.uniform() < 0.5);
  for (int i = 0; i < N; ++i)
    if (F.rowCount(i) == 0) F.set(i, rng.uniformInt(K), true);
  for (int k = 0; k < K; ++k)
    if (F.usage(k) == 0) F.set(rng.uniformInt(N), k, true);
  return F;
}

inline StateSequenceSet randomZ(const Dataset& data, const FeatureMatrix& F, Rng& rng) {
  StateSequenceSet z(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::vector<int> active = F.activeSet(static_cast<int>(i));
    z[i].resize(data[i].effLen());
    for (int& lab : z[i]) lab = active[rng.uniformInt(static_cast<int>(active.size()))];
  }
  return z;
}

inline ModelHypers randomHypers(int d, int r, Rng& rng) {
  ModelHypers h;
  h.alpha = 0.5 + rng.uniform();
  h.c = 0.5 + rng.uniform();
  h.gamma = 0.5 + rng.uniform();
  h.kappa = rng.uniform() * 2.0;
  h.mniw = MNIWPrior::defaultFor(d, r);
  return h;
}

}  // namespace testutil

#endif
