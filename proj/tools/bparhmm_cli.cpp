// Command-line driver: preprocessing, synthetic generation, fitting with
// checkpoint/resume, segmentation evaluation, and a quick oracle self-check.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bparhmm/eval.hpp"
#include "bparhmm/io.hpp"
#include "bparhmm/mcmc.hpp"
#include "bparhmm/model.hpp"
#include "bparhmm/oracle.hpp"
#include "bparhmm/simulate.hpp"

namespace fs = std::filesystem;
using namespace bparhmm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void writeCsv(const std::string& path, const MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << "\n";
  }
}

void writeLabels(const std::string& path, const std::vector<int>& z, int r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "time,label\n";
  for (std::size_t t = 0; t < z.size(); ++t) out << (r + static_cast<int>(t)) << "," << z[t] << "\n";
}

std::vector<int> readLabels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<int> labels;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    const std::string tok = (comma == std::string::npos) ? line : line.substr(comma + 1);
    try {
      labels.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      if (lineNo == 1) continue;  // header
      throw DataError(path + ":" + std::to_string(lineNo) + ": bad label");
    }
  }
  if (labels.empty()) throw DataError(path + ": no labels");
  return labels;
}

std::string canonicalConfigString(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& p : c.dataPaths) os << "data=" << p << "\n";
  os << "r=" << c.r << "\ndownsample_window=" << c.downsampleWindow
     << "\nscale_first_difference=" << c.scaleDiff << "\ns0_multiplier=" << c.s0Multiplier
     << "\nl_multiplier=" << c.lMultiplier << "\nn0_offset=" << c.n0Offset
     << "\nalpha_init=" << c.alphaInit << "\nc_init=" << c.cInit << "\ngamma_init=" << c.gammaInit
     << "\nkappa_init=" << c.kappaInit << "\nresample_hypers=" << c.resampleHypers
     << "\nanneal_mode=" << c.annealMode << "\nanneal_burn=" << c.annealBurn
     << "\nsplit_merge_per_iteration=" << c.splitMergePerIteration
     << "\nwindow_min=" << c.windowMin << "\nwindow_max=" << c.windowMax
     << "\nthinning=" << c.thinning << "\nseed=" << c.seed << "\n";
  // iterations, checkpoint cadence, and walltime tracing are run-control
  // knobs, not part of the statistical configuration; a resume may change
  // them (typically to extend the horizon)
  return os.str();
}

std::vector<MatrixXd> loadAndPreprocess(const RunConfig& cfg, VectorXd* scalesOut) {
  std::vector<MatrixXd> series;
  for (const std::string& p : cfg.dataPaths) {
    MatrixXd y = loadCsvMatrix(p);
    if (cfg.downsampleWindow > 1) y = blockAverageDownsample(y, cfg.downsampleWindow);
    series.push_back(std::move(y));
  }
  if (cfg.scaleDiff) {
    const VectorXd scales = scaleFirstDifference(series);
    if (scalesOut) *scalesOut = scales;
  } else if (scalesOut) {
    *scalesOut = VectorXd::Ones(series[0].cols());
  }
  return series;
}

Dataset toDataset(const RunConfig& cfg, const std::vector<MatrixXd>& series) {
  Dataset data;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::string id = fs::path(cfg.dataPaths[i]).stem().string();
    if (series[i].rows() <= cfg.r)
      throw DataError(cfg.dataPaths[i] + ": too short after preprocessing for lag order " +
                      std::to_string(cfg.r));
    data.push_back(SequenceData::fromObservations(id, series[i], cfg.r));
  }
  return data;
}

void runFitLoop(Sampler& sampler, const RunConfig& cfg, std::uint64_t configHash,
                std::ofstream& trace) {
  const fs::path outDir(cfg.outputDir);
  SamplerState best = sampler.state();
  double bestJoint = jointLogProb(sampler.data(), best.F, best.z, best.hypers);
  const auto start = std::chrono::steady_clock::now();

  const auto checkpointNow = [&]() {
    Checkpoint cp;
    cp.state = sampler.state();
    cp.rngState = sampler.rng().serialize();
    cp.adapt = sampler.adapt();
    cp.counters = sampler.counters();
    cp.configHash = configHash;
    saveCheckpoint((outDir / "checkpoint.json").string(), cp);
  };

  while (sampler.state().iteration < cfg.iterations) {
    const IterationRecord rec = sampler.iterate();
    if ((rec.iteration + 1) % cfg.thinning == 0) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      trace << traceRecordLine(rec, cfg.traceWalltime, wall) << "\n";
    }
    if (rec.jointLogProb > bestJoint) {
      bestJoint = rec.jointLogProb;
      best = sampler.state();
    }
    if (cfg.checkpointEvery > 0 && sampler.state().iteration % cfg.checkpointEvery == 0)
      checkpointNow();
  }
  trace.flush();
  checkpointNow();
  exportSegmentation((outDir / "segmentation").string(), sampler.data(), best);
  exportSegmentation((outDir / "segmentation_last").string(), sampler.data(), sampler.state());
  std::cout << "best jointLogProb " << bestJoint << " with K=" << best.F.K() << "\n";
}

int runOracleCheck() {
  Rng rng(7);
  double maxErr = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const int N = 1 + rng.uniformInt(2);
    const int K = 1 + rng.uniformInt(2);
    const int d = 1 + rng.uniformInt(2);
    ModelHypers h;
    h.alpha = 1.0 + rng.uniform();
    h.c = 0.5 + rng.uniform();
    h.gamma = 0.5 + rng.uniform();
    h.kappa = rng.uniform();
    h.mniw = MNIWPrior::defaultFor(d, 1);
    FeatureMatrix F(N, K);
    for (int i = 0; i < N; ++i) F.set(i, rng.uniformInt(K), true);
    for (int k = 0; k < K; ++k)
      if (F.usage(k) == 0) F.set(rng.uniformInt(N), k, true);
    Dataset data;
    StateSequenceSet z(N);
    const int T = 1 + 4 / N;
    for (int i = 0; i < N; ++i) {
      MatrixXd y(T + 1, d);
      for (int t = 0; t <= T; ++t)
        for (int j = 0; j < d; ++j) y(t, j) = rng.normal();
      data.push_back(SequenceData::fromObservations("o" + std::to_string(i), y, 1));
    }
    const double oracle = bruteForceJointLogProb(data, F, h);
    // exhaustive logsumexp of the closed form over all configurations
    std::vector<std::vector<int>> active(N);
    for (int i = 0; i < N; ++i) {
      active[i] = F.activeSet(i);
      z[i].assign(data[i].effLen(), active[i][0]);
    }
    double acc = -std::numeric_limits<double>::infinity();
    std::vector<int> odo(static_cast<std::size_t>(N * T), 0);
    while (true) {
      std::size_t pos = 0;
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) z[i][t] = active[i][odo[pos++] % active[i].size()];
      bool valid = true;
      std::size_t pos2 = 0;
      for (int i = 0; i < N && valid; ++i)
        for (int t = 0; t < T; ++t)
          if (odo[pos2++] >= static_cast<int>(active[i].size())) valid = false;
      if (valid) {
        const double lp = jointLogProb(data, F, z, h);
        const double mx = std::max(acc, lp);
        acc = mx + std::log(std::exp(acc - mx) + std::exp(lp - mx));
      }
      std::size_t carry = 0;
      while (carry < odo.size()) {
        if (++odo[carry] < K) break;
        odo[carry] = 0;
        ++carry;
      }
      if (carry == odo.size()) break;
    }
    maxErr = std::max(maxErr, std::abs(acc - oracle));
  }
  std::cout << "oracle-check max |delta| = " << maxErr << "\n";
  if (maxErr < 1e-8) {
    std::cout << "oracle-check PASS\n";
    return kExitOk;
  }
  std::cout << "oracle-check FAIL\n";
  return kExitFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint segmentation of multiple time series with shared autoregressive behaviors"};
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Downsample and rescale raw CSV series");
  std::vector<std::string> preData;
  std::string preOut = "preprocessed";
  int preWindow = 1;
  bool preNoScale = false;
  std::vector<int> preColumns;
  pre->add_option("--data", preData, "input CSV files")->required()->expected(-1);
  pre->add_option("--window", preWindow, "block-average window");
  pre->add_flag("--no-scale", preNoScale, "skip first-difference rescaling");
  pre->add_option("--columns", preColumns, "1-based column selection");
  pre->add_option("--output", preOut, "output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Draw a synthetic dataset from the generative model");
  std::uint64_t simSeed = 0;
  int simN = 3, simT = 200, simD = 2, simR = 1;
  double simAlpha = 2.0, simC = 1.0, simGamma = 1.0, simKappa = 10.0;
  std::string simOut = "synthetic";
  sim->add_option("--seed", simSeed, "RNG seed")->required();
  sim->add_option("--n", simN, "number of sequences");
  sim->add_option("--t", simT, "length per sequence");
  sim->add_option("--d", simD, "observation dimension");
  sim->add_option("--r", simR, "autoregressive order");
  sim->add_option("--alpha", simAlpha, "feature mass");
  sim->add_option("--c", simC, "feature concentration");
  sim->add_option("--gamma", simGamma, "transition base weight");
  sim->add_option("--kappa", simKappa, "self-transition bonus");
  sim->add_option("--output", simOut, "output directory");

  // fit / resume share most options
  RunConfig cfg;
  std::string configPath, checkpointPath;
  bool seedSet = false;
  const auto addFitOptions = [&](CLI::App* cmd, bool needSeed) {
    cmd->add_option("--config", configPath, "key=value config file");
    cmd->add_option("--data", cfg.dataPaths, "input CSV files")->expected(-1);
    cmd->add_option("--r", cfg.r, "autoregressive order");
    cmd->add_option("--downsample-window", cfg.downsampleWindow, "block-average window");
    cmd->add_option("--iterations", cfg.iterations, "total iterations");
    cmd->add_option("--thinning", cfg.thinning, "trace thinning");
    cmd->add_option("--anneal-mode", cfg.annealMode, "off|linear");
    cmd->add_option("--anneal-burn", cfg.annealBurn, "annealing horizon");
    cmd->add_option("--split-merge", cfg.splitMergePerIteration, "split-merge moves per iteration");
    cmd->add_option("--window-min", cfg.windowMin, "birth window minimum length");
    cmd->add_option("--window-max", cfg.windowMax, "birth window maximum length");
    cmd->add_option("--checkpoint-every", cfg.checkpointEvery, "checkpoint interval");
    cmd->add_option("--output", cfg.outputDir, "output directory");
    cmd->add_flag("--trace-walltime", cfg.traceWalltime, "include wall clock in trace records");
    auto* s = cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { cfg.seed = v; seedSet = true; }, "RNG seed");
    if (needSeed) s->required();
  };
  auto* fit = app.add_subcommand("fit", "Run the sampler on a dataset");
  addFitOptions(fit, true);
  auto* res = app.add_subcommand("resume", "Continue a fit from a checkpoint");
  addFitOptions(res, false);
  res->add_option("--checkpoint", checkpointPath, "checkpoint file")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Normalized Hamming distance of a segmentation");
  std::vector<std::string> evEst, evTruth;
  ev->add_option("--est", evEst, "estimated label CSVs")->required()->expected(-1);
  ev->add_option("--truth", evTruth, "true label CSVs")->required()->expected(-1);

  auto* oc = app.add_subcommand("oracle-check", "Quick enumeration self-check");
  (void)oc;

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      fs::create_directories(preOut);
      std::vector<MatrixXd> series;
      for (const std::string& p : preData) {
        MatrixXd y = loadCsvMatrix(p);
        if (!preColumns.empty()) {
          MatrixXd sel(y.rows(), static_cast<int>(preColumns.size()));
          for (std::size_t j = 0; j < preColumns.size(); ++j) {
            if (preColumns[j] < 1 || preColumns[j] > y.cols())
              throw ConfigError("column " + std::to_string(preColumns[j]) + " out of range");
            sel.col(static_cast<int>(j)) = y.col(preColumns[j] - 1);
          }
          y = std::move(sel);
        }
        if (preWindow > 1) y = blockAverageDownsample(y, preWindow);
        series.push_back(std::move(y));
      }
      VectorXd scales = VectorXd::Ones(series[0].cols());
      if (!preNoScale) scales = scaleFirstDifference(series);
      for (std::size_t i = 0; i < series.size(); ++i) {
        const std::string stem = fs::path(preData[i]).stem().string();
        writeCsv((fs::path(preOut) / (stem + ".csv")).string(), series[i]);
      }
      writeCsv((fs::path(preOut) / "scales.csv").string(), scales.transpose());
      std::cout << "wrote " << series.size() << " series to " << preOut << "\n";
      return kExitOk;
    }

    if (sim->parsed()) {
      if (simN < 1 || simT <= simR || simD < 1 || simR < 1)
        throw ConfigError("invalid simulation shape");
      fs::create_directories(simOut);
      ModelHypers h;
      h.alpha = simAlpha;
      h.c = simC;
      h.gamma = simGamma;
      h.kappa = simKappa;
      h.mniw = MNIWPrior::defaultFor(simD, simR);
      Rng rng(simSeed);
      const SyntheticResult r = generateSynthetic(h, simN, simT, simD, simR, rng);
      for (std::size_t i = 0; i < r.data.size(); ++i) {
        writeCsv((fs::path(simOut) / ("seq" + std::to_string(i) + ".csv")).string(), r.data[i].y);
        writeLabels((fs::path(simOut) / ("seq" + std::to_string(i) + "_truth.csv")).string(),
                    r.truth.trueZ[i], simR);
      }
      SamplerState truthState;
      truthState.F = r.truth.trueF;
      truthState.z = r.truth.trueZ;
      std::ofstream fout(fs::path(simOut) / "true_feature_matrix.csv");
      for (int i = 0; i < r.truth.trueF.N(); ++i) {
        for (int k = 0; k < r.truth.trueF.K(); ++k)
          fout << (k ? "," : "") << (r.truth.trueF.get(i, k) ? 1 : 0);
        fout << "\n";
      }
      std::cout << "simulated N=" << simN << " sequences with K=" << r.truth.trueF.K()
                << " behaviors\n";
      return kExitOk;
    }

    if (fit->parsed() || res->parsed()) {
      if (!configPath.empty()) {
        RunConfig fromFile = parseConfigFile(configPath);
        // command-line flags override file values where given
        RunConfig flags = cfg;
        cfg = fromFile;
        if (!flags.dataPaths.empty()) cfg.dataPaths = flags.dataPaths;
        if (fit->count("--r") || res->count("--r")) cfg.r = flags.r;
        if (fit->count("--downsample-window") || res->count("--downsample-window"))
          cfg.downsampleWindow = flags.downsampleWindow;
        if (fit->count("--iterations") || res->count("--iterations"))
          cfg.iterations = flags.iterations;
        if (fit->count("--thinning") || res->count("--thinning")) cfg.thinning = flags.thinning;
        if (fit->count("--anneal-mode") || res->count("--anneal-mode"))
          cfg.annealMode = flags.annealMode;
        if (fit->count("--anneal-burn") || res->count("--anneal-burn"))
          cfg.annealBurn = flags.annealBurn;
        if (fit->count("--split-merge") || res->count("--split-merge"))
          cfg.splitMergePerIteration = flags.splitMergePerIteration;
        if (fit->count("--window-min") || res->count("--window-min"))
          cfg.windowMin = flags.windowMin;
        if (fit->count("--window-max") || res->count("--window-max"))
          cfg.windowMax = flags.windowMax;
        if (fit->count("--checkpoint-every") || res->count("--checkpoint-every"))
          cfg.checkpointEvery = flags.checkpointEvery;
        if (fit->count("--output") || res->count("--output")) cfg.outputDir = flags.outputDir;
        if (fit->count("--trace-walltime") || res->count("--trace-walltime"))
          cfg.traceWalltime = flags.traceWalltime;
        if (seedSet) cfg.seed = flags.seed;
      }
      cfg.validate();
      if (cfg.dataPaths.empty()) throw ConfigError("no data files given");
      fs::create_directories(cfg.outputDir);

      const std::vector<MatrixXd> series = loadAndPreprocess(cfg, nullptr);
      const Dataset data = toDataset(cfg, series);
      const int d = data[0].d;
      ModelHypers hypers;
      hypers.alpha = cfg.alphaInit;
      hypers.c = cfg.cInit;
      hypers.gamma = cfg.gammaInit;
      hypers.kappa = cfg.kappaInit;
      hypers.mniw = empiricalBayesMNIW(series, cfg.r, cfg.s0Multiplier, cfg.lMultiplier,
                                       cfg.n0Offset);
      (void)d;
      const std::uint64_t configHash = fnvHash(canonicalConfigString(cfg));

      if (fit->parsed()) {
        SamplerState init = Sampler::initialState(data, hypers, cfg.seed);
        Sampler sampler(data, cfg.samplerConfig(), init, Rng(cfg.seed));
        std::ofstream trace(fs::path(cfg.outputDir) / "trace.jsonl",
                            std::ios::binary | std::ios::trunc);
        if (!trace) throw DataError("cannot write trace in " + cfg.outputDir);
        runFitLoop(sampler, cfg, configHash, trace);
      } else {
        const Checkpoint cp = loadCheckpoint(checkpointPath);
        if (cp.configHash != configHash)
          throw ConfigError("checkpoint was produced under a different configuration");
        Sampler sampler(data, cfg.samplerConfig(), cp.state, Rng(cp.state.rngSeed));
        sampler.rng().deserialize(cp.rngState);
        sampler.adapt() = cp.adapt;
        sampler.mutableCounters() = cp.counters;
        std::ofstream trace(fs::path(cfg.outputDir) / "trace.jsonl",
                            std::ios::binary | std::ios::app);
        if (!trace) throw DataError("cannot write trace in " + cfg.outputDir);
        runFitLoop(sampler, cfg, configHash, trace);
      }
      return kExitOk;
    }

    if (ev->parsed()) {
      if (evEst.size() != evTruth.size())
        throw ConfigError("--est and --truth need the same number of files");
      StateSequenceSet zEst, zTrue;
      for (std::size_t i = 0; i < evEst.size(); ++i) {
        zEst.push_back(readLabels(evEst[i]));
        zTrue.push_back(readLabels(evTruth[i]));
        if (zEst.back().size() != zTrue.back().size())
          throw DataError("length mismatch between " + evEst[i] + " and " + evTruth[i]);
      }
      const AlignmentResult r = normalizedHamming(zEst, zTrue);
      std::cout << "normalized Hamming distance: " << r.normalizedHamming << "\n";
      return kExitOk;
    }

    if (oc->parsed()) return runOracleCheck();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric degeneracy: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitOk;
}
