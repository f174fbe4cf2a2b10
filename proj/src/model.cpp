#include "bparhmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bparhmm {

double ibpMarkedLogProb(const FeatureMatrix& F, double alpha, double c) {
  if (!(alpha > 0.0) || !(c > 0.0))
    throw ContractError("ibpMarkedLogProb: alpha and c must be positive");
  const int N = F.N();
  const int K = F.K();

  double lp = K * std::log(alpha * c);

  double rate = 0.0;
  for (int i = 1; i <= N; ++i) rate += c / (c + i - 1);
  lp -= alpha * rate;

  for (int k = 0; k < K; ++k) {
    const int m = F.usage(k);
    if (m == 0) throw ContractError("ibpMarkedLogProb: empty column");
    lp += std::lgamma(static_cast<double>(m)) + std::lgamma(N - m + c) - std::lgamma(N + c);
  }
  return lp;
}

double ibpLogProb(const FeatureMatrix& F, double alpha, double c) {
  double lp = ibpMarkedLogProb(F, alpha, c);

  // identical column histories collapse onto one equivalence class
  const int N = F.N();
  std::map<std::vector<int>, int> histCounts;
  for (int k = 0; k < F.K(); ++k) {
    std::vector<int> h(N);
    for (int i = 0; i < N; ++i) h[i] = F.get(i, k) ? 1 : 0;
    ++histCounts[h];
  }
  for (const auto& [h, cnt] : histCounts) lp -= std::lgamma(cnt + 1.0);
  return lp;
}

double transLogProbCollapsed(const std::vector<int>& z_i, const std::vector<int>& active,
                             double gamma, double kappa) {
  const int Ki = static_cast<int>(active.size());
  if (Ki == 0) throw ContractError("transLogProbCollapsed: empty active set");

  // global label -> local index
  std::map<int, int> local;
  for (int j = 0; j < Ki; ++j) local[active[j]] = j;

  // rows 0..Ki-1 are from-states, row Ki is the initial pseudo-row
  std::vector<std::vector<int>> n(Ki + 1, std::vector<int>(Ki, 0));
  int prev = -1;
  for (int lab : z_i) {
    auto it = local.find(lab);
    if (it == local.end())
      throw ContractError("transLogProbCollapsed: label outside active set");
    const int cur = it->second;
    if (prev < 0)
      ++n[Ki][cur];
    else
      ++n[prev][cur];
    prev = cur;
  }

  double lp = 0.0;
  for (int j = 0; j <= Ki; ++j) {
    int rowTotal = 0;
    for (int k = 0; k < Ki; ++k) rowTotal += n[j][k];
    if (rowTotal == 0) continue;
    double concTotal = 0.0;
    for (int k = 0; k < Ki; ++k) {
      const double a = gamma + ((j == k) ? kappa : 0.0);  // j == Ki never matches
      concTotal += a;
      lp += std::lgamma(a + n[j][k]) - std::lgamma(a);
    }
    lp += std::lgamma(concTotal) - std::lgamma(concTotal + rowTotal);
  }
  return lp;
}

BehaviorSuffStats behaviorStats(const Dataset& data, const StateSequenceSet& z, int k,
                                const MNIWPrior& prior) {
  BehaviorSuffStats stats(prior);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& seq = data[i];
    for (int t = 0; t < seq.effLen(); ++t)
      if (z[i][t] == k) stats.add(seq.obs(t), seq.lag(t));
  }
  return stats;
}

double jointLogProb(const Dataset& data, const FeatureMatrix& F, const StateSequenceSet& z,
                    const ModelHypers& hypers) {
  checkConsistency(data, F, z);
  double lp = ibpMarkedLogProb(F, hypers.alpha, hypers.c);
  for (int i = 0; i < F.N(); ++i)
    lp += transLogProbCollapsed(z[i], F.activeSet(i), hypers.gamma, hypers.kappa);
  for (int k = 0; k < F.K(); ++k) {
    try {
      lp += logMarginalLikelihood(behaviorStats(data, z, k, hypers.mniw), hypers.mniw);
    } catch (const NumericError& e) {
      throw NumericError("jointLogProb: degenerate statistics for behavior " +
                         std::to_string(k) + ": " + e.what());
    }
  }
  return lp;
}

std::vector<int> compactFeatures(FeatureMatrix& F, StateSequenceSet& z) {
  const int K = F.K();
  std::vector<int> map(K, -1);
  int next = 0;
  for (int k = 0; k < K; ++k)
    if (F.usage(k) > 0) map[k] = next++;
  if (next == K) return map;  // nothing to do

  FeatureMatrix nf(F.N(), next);
  for (int i = 0; i < F.N(); ++i)
    for (int k = 0; k < K; ++k)
      if (map[k] >= 0) nf.set(i, map[k], F.get(i, k));
  F = nf;
  for (auto& zi : z)
    for (auto& lab : zi) {
      if (lab >= 0 && lab < K && map[lab] >= 0)
        lab = map[lab];
      else
        throw ContractError("compactFeatures: z references a dropped column");
    }
  return map;
}

}  // namespace bparhmm
