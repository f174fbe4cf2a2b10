#include "bparhmm/io.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bparhmm {

namespace {

using nlohmann::json;

bool parseDouble(const std::string& tok, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(tok, &used);
    while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
    return used == tok.size();
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<std::string> splitCsvLine(const std::string& line) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      toks.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  toks.push_back(cur);
  // trim whitespace on each token
  for (std::string& t : toks) {
    std::size_t a = 0, b = t.size();
    while (a < b && std::isspace(static_cast<unsigned char>(t[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(t[b - 1]))) --b;
    t = t.substr(a, b - a);
  }
  return toks;
}

json hypersToJson(const ModelHypers& h) {
  const auto mat = [](const MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return json{{"alpha", h.alpha},
              {"c", h.c},
              {"gamma", h.gamma},
              {"kappa", h.kappa},
              {"mniw", json{{"n0", h.mniw.n0},
                            {"S0", mat(h.mniw.S0)},
                            {"M", mat(h.mniw.M)},
                            {"L", mat(h.mniw.L)}}}};
}

MatrixXd jsonToMat(const json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows > 0 ? static_cast<int>(j[0].size()) : 0;
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < cols; ++k) m(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  return m;
}

ModelHypers jsonToHypers(const json& j) {
  ModelHypers h;
  h.alpha = j.at("alpha").get<double>();
  h.c = j.at("c").get<double>();
  h.gamma = j.at("gamma").get<double>();
  h.kappa = j.at("kappa").get<double>();
  const json& m = j.at("mniw");
  h.mniw.n0 = m.at("n0").get<double>();
  h.mniw.S0 = jsonToMat(m.at("S0"));
  h.mniw.M = jsonToMat(m.at("M"));
  h.mniw.L = jsonToMat(m.at("L"));
  return h;
}

}  // namespace

void RunConfig::validate() const {
  if (dataPaths.empty()) throw ConfigError("at least one data path is required");
  for (const std::string& p : dataPaths)
    if (!std::filesystem::exists(p)) throw ConfigError("data path does not exist: " + p);
  if (r < 1) throw ConfigError("r must be >= 1");
  if (downsampleWindow < 1) throw ConfigError("downsample_window must be >= 1");
  if (!(s0Multiplier > 0.0) || !(lMultiplier > 0.0))
    throw ConfigError("MNIW multipliers must be positive");
  if (annealMode != "off" && annealMode != "linear")
    throw ConfigError("anneal_mode must be 'off' or 'linear'");
  if (annealBurn < 0) throw ConfigError("anneal_burn must be >= 0");
  if (splitMergePerIteration < 0) throw ConfigError("split_merge_per_iteration must be >= 0");
  if (windowMin < 1 || windowMax < windowMin)
    throw ConfigError("window bounds must satisfy 1 <= min <= max");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (thinning < 1) throw ConfigError("thinning must be >= 1");
  if (checkpointEvery < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(alphaInit > 0.0) || !(cInit > 0.0) || !(gammaInit > 0.0) || !(kappaInit > 0.0))
    throw ConfigError("initial hyperparameters must be positive");
}

SamplerConfig RunConfig::samplerConfig() const {
  SamplerConfig sc;
  sc.hyperPriors = hyperPriors;
  sc.anneal.mode =
      (annealMode == "linear") ? AnnealSchedule::Mode::Linear : AnnealSchedule::Mode::Off;
  sc.anneal.burnIterations = annealBurn;
  sc.window.minLen = windowMin;
  sc.window.maxLen = windowMax;
  sc.splitMergePerIteration = splitMergePerIteration;
  sc.resampleHypers = resampleHypers;
  return sc;
}

RunConfig parseConfigFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::size_t a = 0, b = line.size();
    while (a < b && std::isspace(static_cast<unsigned char>(line[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(line[b - 1]))) --b;
    if (a == b) continue;
    line = line.substr(a, b - a);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineNo) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
    std::size_t v0 = 0;
    while (v0 < val.size() && std::isspace(static_cast<unsigned char>(val[v0]))) ++v0;
    val = val.substr(v0);

    const auto num = [&](const char* name) {
      double d = 0.0;
      if (!parseDouble(val, d))
        throw ConfigError(path + ":" + std::to_string(lineNo) + ": bad numeric value for " + name);
      return d;
    };
    const auto flag = [&](const char* name) {
      if (val == "true" || val == "1") return true;
      if (val == "false" || val == "0") return false;
      throw ConfigError(path + ":" + std::to_string(lineNo) + ": bad boolean value for " + name);
    };

    if (key == "data") {
      for (const std::string& tok : splitCsvLine(val))
        if (!tok.empty()) cfg.dataPaths.push_back(tok);
    } else if (key == "r") {
      cfg.r = static_cast<int>(num("r"));
    } else if (key == "downsample_window") {
      cfg.downsampleWindow = static_cast<int>(num(key.c_str()));
    } else if (key == "scale_first_difference") {
      cfg.scaleDiff = flag(key.c_str());
    } else if (key == "s0_multiplier") {
      cfg.s0Multiplier = num(key.c_str());
    } else if (key == "l_multiplier") {
      cfg.lMultiplier = num(key.c_str());
    } else if (key == "n0_offset") {
      cfg.n0Offset = num(key.c_str());
    } else if (key == "alpha_init") {
      cfg.alphaInit = num(key.c_str());
    } else if (key == "c_init") {
      cfg.cInit = num(key.c_str());
    } else if (key == "gamma_init") {
      cfg.gammaInit = num(key.c_str());
    } else if (key == "kappa_init") {
      cfg.kappaInit = num(key.c_str());
    } else if (key == "resample_hypers") {
      cfg.resampleHypers = flag(key.c_str());
    } else if (key == "alpha_prior_shape") {
      cfg.hyperPriors.alphaShape = num(key.c_str());
    } else if (key == "alpha_prior_rate") {
      cfg.hyperPriors.alphaRate = num(key.c_str());
    } else if (key == "c_prior_shape") {
      cfg.hyperPriors.cShape = num(key.c_str());
    } else if (key == "c_prior_rate") {
      cfg.hyperPriors.cRate = num(key.c_str());
    } else if (key == "gamma_prior_shape") {
      cfg.hyperPriors.gammaShape = num(key.c_str());
    } else if (key == "gamma_prior_rate") {
      cfg.hyperPriors.gammaRate = num(key.c_str());
    } else if (key == "kappa_prior_shape") {
      cfg.hyperPriors.kappaShape = num(key.c_str());
    } else if (key == "kappa_prior_rate") {
      cfg.hyperPriors.kappaRate = num(key.c_str());
    } else if (key == "anneal_mode") {
      cfg.annealMode = val;
    } else if (key == "anneal_burn") {
      cfg.annealBurn = static_cast<long>(num(key.c_str()));
    } else if (key == "split_merge_per_iteration") {
      cfg.splitMergePerIteration = static_cast<int>(num(key.c_str()));
    } else if (key == "window_min") {
      cfg.windowMin = static_cast<int>(num(key.c_str()));
    } else if (key == "window_max") {
      cfg.windowMax = static_cast<int>(num(key.c_str()));
    } else if (key == "iterations") {
      cfg.iterations = static_cast<long>(num(key.c_str()));
    } else if (key == "thinning") {
      cfg.thinning = static_cast<long>(num(key.c_str()));
    } else if (key == "checkpoint_every") {
      cfg.checkpointEvery = static_cast<long>(num(key.c_str()));
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(num(key.c_str()));
    } else if (key == "output_dir") {
      cfg.outputDir = val;
    } else if (key == "trace_walltime") {
      cfg.traceWalltime = flag(key.c_str());
    } else {
      throw ConfigError(path + ":" + std::to_string(lineNo) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

MatrixXd loadCsvMatrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineNo = 0;
  int cols = -1;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char ch : line)
      if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
    if (blank) continue;
    const std::vector<std::string> toks = splitCsvLine(line);
    std::vector<double> vals(toks.size());
    bool numeric = true;
    for (std::size_t j = 0; j < toks.size(); ++j)
      if (!parseDouble(toks[j], vals[j])) numeric = false;
    if (!numeric) {
      if (first) {
        first = false;  // header row
        continue;
      }
      throw DataError(path + ":" + std::to_string(lineNo) + ": non-numeric entry");
    }
    first = false;
    for (std::size_t j = 0; j < vals.size(); ++j)
      if (!std::isfinite(vals[j]))
        throw DataError(path + ":" + std::to_string(lineNo) + ": non-finite entry in column " +
                        std::to_string(j + 1));
    if (cols < 0) cols = static_cast<int>(vals.size());
    if (static_cast<int>(vals.size()) != cols)
      throw DataError(path + ":" + std::to_string(lineNo) + ": ragged row (expected " +
                      std::to_string(cols) + " columns, got " + std::to_string(vals.size()) + ")");
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError(path + ": no numeric rows");
  MatrixXd m(static_cast<int>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < cols; ++j) m(static_cast<int>(i), j) = rows[i][static_cast<std::size_t>(j)];
  return m;
}

Dataset loadSequences(const std::vector<std::string>& paths, int r) {
  if (paths.empty()) throw DataError("no data files given");
  Dataset data;
  int d = -1;
  for (const std::string& p : paths) {
    const MatrixXd y = loadCsvMatrix(p);
    if (d < 0) d = static_cast<int>(y.cols());
    if (static_cast<int>(y.cols()) != d)
      throw DataError(p + ": dimension mismatch (expected " + std::to_string(d) + " columns, got " +
                      std::to_string(y.cols()) + ")");
    if (y.rows() <= r)
      throw DataError(p + ": needs more than " + std::to_string(r) + " rows for lag order " +
                      std::to_string(r));
    data.push_back(SequenceData::fromObservations(std::filesystem::path(p).stem().string(), y, r));
  }
  return data;
}

MatrixXd blockAverageDownsample(const MatrixXd& series, int window) {
  if (window < 1) throw DataError("downsample window must be >= 1");
  if (window > series.rows())
    throw DataError("downsample window exceeds series length " + std::to_string(series.rows()));
  const int outRows = static_cast<int>(series.rows()) / window;
  MatrixXd out(outRows, series.cols());
  for (int b = 0; b < outRows; ++b)
    out.row(b) = series.middleRows(b * window, window).colwise().mean();
  return out;
}

VectorXd scaleFirstDifference(std::vector<MatrixXd>& series) {
  if (series.empty()) throw DataError("no series to scale");
  const int d = static_cast<int>(series[0].cols());
  VectorXd sumSq = VectorXd::Zero(d);
  long n = 0;
  for (const MatrixXd& y : series) {
    for (int t = 1; t < y.rows(); ++t) {
      const VectorXd diff = (y.row(t) - y.row(t - 1)).transpose();
      sumSq += diff.cwiseProduct(diff);
      ++n;
    }
  }
  if (n == 0) throw DataError("series too short for first differences");
  VectorXd scales(d);
  for (int j = 0; j < d; ++j) {
    const double var = sumSq(j) / static_cast<double>(n);  // population convention
    if (!(var > 0.0)) throw DataError("constant dimension " + std::to_string(j + 1));
    scales(j) = std::sqrt(var);
  }
  for (MatrixXd& y : series)
    for (int j = 0; j < d; ++j) y.col(j) /= scales(j);
  return scales;
}

MNIWPrior empiricalBayesMNIW(const std::vector<MatrixXd>& series, int r, double s0Multiplier,
                             double lMultiplier, double n0Offset) {
  if (series.empty()) throw DataError("empirical Bayes needs data");
  const int d = static_cast<int>(series[0].cols());
  VectorXd mean = VectorXd::Zero(d);
  long n = 0;
  for (const MatrixXd& y : series)
    for (int t = 1; t < y.rows(); ++t) {
      mean += (y.row(t) - y.row(t - 1)).transpose();
      ++n;
    }
  if (n == 0) throw DataError("series too short for first differences");
  mean /= static_cast<double>(n);
  MatrixXd cov = MatrixXd::Zero(d, d);
  for (const MatrixXd& y : series)
    for (int t = 1; t < y.rows(); ++t) {
      const VectorXd diff = (y.row(t) - y.row(t - 1)).transpose() - mean;
      cov += diff * diff.transpose();
    }
  cov /= static_cast<double>(n);

  MNIWPrior prior;
  prior.n0 = d + n0Offset;
  prior.S0 = s0Multiplier * cov;
  prior.M = MatrixXd::Zero(d, r * d);
  prior.L = lMultiplier * MatrixXd::Identity(r * d, r * d);
  prior.validate();
  return prior;
}

std::string traceRecordLine(const IterationRecord& rec, bool includeWalltime, double wallSeconds) {
  json j;
  j["iteration"] = rec.iteration;
  j["jointLogProb"] = rec.jointLogProb;
  j["K"] = rec.K;
  j["inverseTemperature"] = rec.inverseTemperature;
  j["flipAccepted"] = rec.counters.flipAccepted;
  j["birthAccepted"] = rec.counters.birthAccepted;
  j["deathAccepted"] = rec.counters.deathAccepted;
  j["splitAccepted"] = rec.counters.splitAccepted;
  j["mergeAccepted"] = rec.counters.mergeAccepted;
  j["hyperAccepted"] = rec.counters.hyperAccepted;
  j["degeneracyEvents"] = rec.counters.degeneracyEvents;
  if (includeWalltime) j["wallClockSec"] = wallSeconds;
  return j.dump();
}

void exportSegmentation(const std::string& dir, const Dataset& data, const SamplerState& state) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const fs::path p = fs::path(dir) / (data[i].id + "_labels.csv");
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    out << "time,label\n";
    for (std::size_t t = 0; t < state.z[i].size(); ++t)
      out << (data[i].r + static_cast<int>(t)) << "," << state.z[i][t] << "\n";
  }
  const fs::path fp = fs::path(dir) / "feature_matrix.csv";
  std::ofstream out(fp);
  if (!out) throw DataError("cannot write " + fp.string());
  for (int i = 0; i < state.F.N(); ++i) {
    for (int k = 0; k < state.F.K(); ++k) out << (k ? "," : "") << (state.F.get(i, k) ? 1 : 0);
    out << "\n";
  }
}

void saveCheckpoint(const std::string& path, const Checkpoint& cp) {
  json j;
  j["formatVersion"] = cp.formatVersion;
  j["configHash"] = cp.configHash;
  j["rngState"] = cp.rngState;
  json st;
  st["iteration"] = cp.state.iteration;
  st["inverseTemperature"] = cp.state.inverseTemperature;
  st["rngSeed"] = cp.state.rngSeed;
  st["hypers"] = hypersToJson(cp.state.hypers);
  json F = json::array();
  for (int i = 0; i < cp.state.F.N(); ++i) {
    json row = json::array();
    for (int k = 0; k < cp.state.F.K(); ++k) row.push_back(cp.state.F.get(i, k) ? 1 : 0);
    F.push_back(std::move(row));
  }
  st["F"] = std::move(F);
  st["z"] = cp.state.z;
  j["state"] = std::move(st);
  j["adapt"] = json{{"stepAlpha", cp.adapt.stepAlpha},
                    {"stepC", cp.adapt.stepC},
                    {"stepGamma", cp.adapt.stepGamma},
                    {"stepKappa", cp.adapt.stepKappa}};
  j["counters"] = json{{"flipProposed", cp.counters.flipProposed},
                       {"flipAccepted", cp.counters.flipAccepted},
                       {"birthProposed", cp.counters.birthProposed},
                       {"birthAccepted", cp.counters.birthAccepted},
                       {"deathProposed", cp.counters.deathProposed},
                       {"deathAccepted", cp.counters.deathAccepted},
                       {"splitProposed", cp.counters.splitProposed},
                       {"splitAccepted", cp.counters.splitAccepted},
                       {"mergeProposed", cp.counters.mergeProposed},
                       {"mergeAccepted", cp.counters.mergeAccepted},
                       {"hyperProposed", cp.counters.hyperProposed},
                       {"hyperAccepted", cp.counters.hyperAccepted},
                       {"degeneracyEvents", cp.counters.degeneracyEvents}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

Checkpoint loadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("checkpoint parse failure in " + path + ": " + e.what());
  }
  Checkpoint cp;
  cp.formatVersion = j.at("formatVersion").get<int>();
  cp.configHash = j.at("configHash").get<std::uint64_t>();
  cp.rngState = j.at("rngState").get<std::string>();
  const json& st = j.at("state");
  cp.state.iteration = st.at("iteration").get<long>();
  cp.state.inverseTemperature = st.at("inverseTemperature").get<double>();
  cp.state.rngSeed = st.at("rngSeed").get<std::uint64_t>();
  cp.state.hypers = jsonToHypers(st.at("hypers"));
  const json& F = st.at("F");
  const int N = static_cast<int>(F.size());
  const int K = N > 0 ? static_cast<int>(F[0].size()) : 0;
  cp.state.F = FeatureMatrix(N, K);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < K; ++k)
      cp.state.F.set(i, k, F[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<int>() != 0);
  cp.state.z = st.at("z").get<StateSequenceSet>();
  const json& ad = j.at("adapt");
  cp.adapt.stepAlpha = ad.at("stepAlpha").get<double>();
  cp.adapt.stepC = ad.at("stepC").get<double>();
  cp.adapt.stepGamma = ad.at("stepGamma").get<double>();
  cp.adapt.stepKappa = ad.at("stepKappa").get<double>();
  const json& ct = j.at("counters");
  cp.counters.flipProposed = ct.at("flipProposed").get<long>();
  cp.counters.flipAccepted = ct.at("flipAccepted").get<long>();
  cp.counters.birthProposed = ct.at("birthProposed").get<long>();
  cp.counters.birthAccepted = ct.at("birthAccepted").get<long>();
  cp.counters.deathProposed = ct.at("deathProposed").get<long>();
  cp.counters.deathAccepted = ct.at("deathAccepted").get<long>();
  cp.counters.splitProposed = ct.at("splitProposed").get<long>();
  cp.counters.splitAccepted = ct.at("splitAccepted").get<long>();
  cp.counters.mergeProposed = ct.at("mergeProposed").get<long>();
  cp.counters.mergeAccepted = ct.at("mergeAccepted").get<long>();
  cp.counters.hyperProposed = ct.at("hyperProposed").get<long>();
  cp.counters.hyperAccepted = ct.at("hyperAccepted").get<long>();
  cp.counters.degeneracyEvents = ct.at("degeneracyEvents").get<long>();
  return cp;
}

std::uint64_t fnvHash(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace bparhmm
