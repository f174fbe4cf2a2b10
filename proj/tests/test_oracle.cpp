#include <cmath>
#include <limits>

#include "bparhmm/model.hpp"
#include "bparhmm/oracle.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bparhmm;

namespace {

// logsumexp of the closed-form joint over every admissible z configuration
double enumeratedJoint(const Dataset& data, const FeatureMatrix& F, const ModelHypers& h) {
  const int N = F.N();
  std::vector<std::vector<int>> actives(N);
  std::vector<int> lens(N);
  long total = 1;
  for (int i = 0; i < N; ++i) {
    actives[i] = F.activeSet(i);
    lens[i] = data[i].effLen();
    for (int t = 0; t < lens[i]; ++t) total *= static_cast<long>(actives[i].size());
  }
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  StateSequenceSet z(N);
  for (int i = 0; i < N; ++i) z[i].resize(lens[i]);
  for (long code = 0; code < total; ++code) {
    long c = code;
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < lens[i]; ++t) {
        const long K = static_cast<long>(actives[i].size());
        z[i][t] = actives[i][c % K];
        c /= K;
      }
    const double lp = jointLogProb(data, F, z, h);
    terms.push_back(lp);
    best = std::max(best, lp);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

}  // namespace

TEST_CASE("oracle refuses instances beyond its enumeration budget") {
  Rng rng(91);
  Dataset data;
  data.push_back(testutil::randomSequence("a", 13, 1, 1, rng));  // 12 modeled steps
  FeatureMatrix F(1, 1);
  F.set(0, 0, true);
  ModelHypers h = testutil::randomHypers(1, 1, rng);
  CHECK_THROWS_AS(bruteForceJointLogProb(data, F, h), ContractError);

  Dataset small;
  small.push_back(testutil::randomSequence("a", 5, 1, 1, rng));
  FeatureMatrix wide = testutil::randomValidF(1, 4, rng);
  CHECK_THROWS_AS(bruteForceJointLogProb(small, wide, h), ContractError);
}

TEST_CASE("oracle equals the summed closed form on random tiny instances") {
  Rng rng(92);
  for (int rep = 0; rep < 10; ++rep) {
    const int N = 1 + rep % 2;
    const int d = 1 + rep % 2;
    Dataset data;
    for (int i = 0; i < N; ++i)
      data.push_back(testutil::randomSequence("s" + std::to_string(i), 4, d, 1, rng));
    const FeatureMatrix F = testutil::randomValidF(N, 1 + rep % 3, rng);
    ModelHypers h = testutil::randomHypers(d, 1, rng);
    const double oracle = bruteForceJointLogProb(data, F, h);
    const double closed = enumeratedJoint(data, F, h);
    CHECK(oracle == doctest::Approx(closed).epsilon(1e-8));
  }
}

TEST_CASE("oracle couples duplicated sequences through shared behaviors") {
  Rng rng(93);
  Dataset one;
  one.push_back(testutil::randomSequence("a", 5, 1, 1, rng));
  Dataset two{one[0], one[0]};
  two[1].id = "b";
  FeatureMatrix F1(1, 1);
  F1.set(0, 0, true);
  FeatureMatrix F2(2, 1);
  F2.set(0, 0, true);
  F2.set(1, 0, true);
  ModelHypers h = testutil::randomHypers(1, 1, rng);

  const double l1 = bruteForceJointLogProb(one, F1, h) - ibpLogProb(F1, h.alpha, h.c);
  const double l2 = bruteForceJointLogProb(two, F2, h) - ibpLogProb(F2, h.alpha, h.c);
  // pooled marginal likelihood does not factor over sequences
  CHECK(std::abs(l2 - 2.0 * l1) > 1e-6);
}

TEST_CASE("joint test with zero iterations is inconclusive") {
  GewekeConfig cfg;
  cfg.forwardDraws = 10;
  Rng rng(94);
  const GewekeReport rep = gewekeJointTest(cfg, 0, rng);
  CHECK(rep.inconclusive);
  CHECK(!rep.passed);
}

TEST_CASE("short joint test runs and reports all tracked statistics") {
  GewekeConfig cfg;
  cfg.forwardDraws = 400;
  cfg.sampler.adaptIterations = 0;
  Rng rng(95);
  const GewekeReport rep = gewekeJointTest(cfg, 600, rng);
  CHECK(!rep.inconclusive);
  CHECK(rep.stats.size() == 4);
  for (const GewekeStat& s : rep.stats) {
    CHECK(std::isfinite(s.z));
    CHECK(s.forwardSE > 0.0);
    CHECK(s.chainSE > 0.0);
  }
}
