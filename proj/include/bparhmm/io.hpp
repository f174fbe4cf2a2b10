#ifndef BPARHMM_IO_HPP
#define BPARHMM_IO_HPP

#include <iosfwd>
#include <string>

#include "bparhmm/mcmc.hpp"
#include "bparhmm/types.hpp"

namespace bparhmm {

// Configuration problems (bad keys, out-of-range values, missing paths).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input data problems (parse failures, NaN entries, ragged rows).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::vector<std::string> dataPaths;
  int r = 1;
  int downsampleWindow = 1;
  bool scaleDiff = true;

  // empirical-Bayes MNIW settings
  double s0Multiplier = 0.5;
  double lMultiplier = 1.0;
  double n0Offset = 2.0;  // n0 = d + n0Offset

  HyperPriors hyperPriors;
  double alphaInit = 1.0, cInit = 1.0, gammaInit = 1.0, kappaInit = 1.0;
  bool resampleHypers = true;

  std::string annealMode = "off";  // off | linear
  long annealBurn = 0;
  int splitMergePerIteration = 1;
  int windowMin = 20, windowMax = 100;

  long iterations = 1000;
  long thinning = 1;
  long checkpointEvery = 0;  // 0 = only at the end
  std::uint64_t seed = 0;
  std::string outputDir = ".";
  bool traceWalltime = false;  // off keeps traces bitwise deterministic

  void validate() const;  // throws ConfigError
  SamplerConfig samplerConfig() const;
};

// Flat key=value text; '#' starts a comment; unknown keys are errors.
RunConfig parseConfigFile(const std::string& path);

// Numeric CSV, rows = time steps, columns = dimensions; a non-numeric first
// line is treated as a header.  Errors name file and 1-based line.
MatrixXd loadCsvMatrix(const std::string& path);

// One file per sequence; dimensions must agree across files.
Dataset loadSequences(const std::vector<std::string>& paths, int r);

// Each output frame is the mean of `window` consecutive frames; a trailing
// partial block is dropped.
MatrixXd blockAverageDownsample(const MatrixXd& series, int window);

// Divides each dimension by the pooled population standard deviation of
// first differences across all series (in place); returns the scales.
VectorXd scaleFirstDifference(std::vector<MatrixXd>& series);

MNIWPrior empiricalBayesMNIW(const std::vector<MatrixXd>& series, int r, double s0Multiplier,
                             double lMultiplier, double n0Offset);

// One self-describing JSON line per iteration; wall-clock only on request.
std::string traceRecordLine(const IterationRecord& rec, bool includeWalltime,
                            double wallSeconds);

// Per-sequence (time index, label) CSVs plus the feature matrix as CSV.
void exportSegmentation(const std::string& dir, const Dataset& data, const SamplerState& state);

struct Checkpoint {
  int formatVersion = 1;
  SamplerState state;
  std::string rngState;
  AdaptState adapt;
  MoveCounters counters;
  std::uint64_t configHash = 0;
};

void saveCheckpoint(const std::string& path, const Checkpoint& cp);
Checkpoint loadCheckpoint(const std::string& path);

std::uint64_t fnvHash(const std::string& s);

}  // namespace bparhmm

#endif
