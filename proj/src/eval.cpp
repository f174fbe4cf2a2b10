#include "bparhmm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace bparhmm {

namespace {

// Shortest-augmenting-path assignment for n <= m (rows <= cols), 0-indexed.
// Returns row -> col.
std::vector<int> solveRect(const MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, INF);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = INF;
      int j1 = -1;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> rowToCol(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) rowToCol[p[j] - 1] = j - 1;
  return rowToCol;
}

}  // namespace

std::vector<int> hungarianAlign(const MatrixXd& cost) {
  if (!cost.allFinite()) throw ContractError("hungarianAlign: costs must be finite");
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n == 0 || m == 0) return std::vector<int>(n, -1);
  if (n <= m) return solveRect(cost);
  // more rows than columns: solve the transpose, leave extra rows unassigned
  std::vector<int> colToRow = solveRect(cost.transpose());
  std::vector<int> rowToCol(n, -1);
  for (int j = 0; j < m; ++j)
    if (colToRow[j] >= 0) rowToCol[colToRow[j]] = j;
  return rowToCol;
}

AlignmentResult normalizedHamming(const StateSequenceSet& zEst, const StateSequenceSet& zTrue) {
  if (zEst.size() != zTrue.size())
    throw ContractError("normalizedHamming: sequence count mismatch");
  long total = 0;
  std::set<int> estLabels, trueLabels;
  for (std::size_t i = 0; i < zEst.size(); ++i) {
    if (zEst[i].size() != zTrue[i].size())
      throw ContractError("normalizedHamming: length mismatch in sequence " + std::to_string(i));
    total += static_cast<long>(zEst[i].size());
    for (int l : zEst[i]) estLabels.insert(l);
    for (int l : zTrue[i]) trueLabels.insert(l);
  }
  if (total == 0) return {};

  std::vector<int> eIdx(estLabels.begin(), estLabels.end());
  std::vector<int> tIdx(trueLabels.begin(), trueLabels.end());
  std::map<int, int> eLoc, tLoc;
  for (std::size_t j = 0; j < eIdx.size(); ++j) eLoc[eIdx[j]] = static_cast<int>(j);
  for (std::size_t j = 0; j < tIdx.size(); ++j) tLoc[tIdx[j]] = static_cast<int>(j);

  // maximize matches == minimize negated co-occurrence counts
  MatrixXd cost = MatrixXd::Zero(static_cast<int>(eIdx.size()), static_cast<int>(tIdx.size()));
  for (std::size_t i = 0; i < zEst.size(); ++i)
    for (std::size_t t = 0; t < zEst[i].size(); ++t)
      cost(eLoc[zEst[i][t]], tLoc[zTrue[i][t]]) -= 1.0;

  const std::vector<int> assign = hungarianAlign(cost);
  AlignmentResult res;
  double matched = 0.0;
  for (std::size_t e = 0; e < assign.size(); ++e) {
    if (assign[e] < 0) continue;
    res.mapping[eIdx[e]] = tIdx[assign[e]];
    matched -= cost(static_cast<int>(e), assign[e]);
  }
  res.normalizedHamming = 1.0 - matched / static_cast<double>(total);
  return res;
}

}  // namespace bparhmm
