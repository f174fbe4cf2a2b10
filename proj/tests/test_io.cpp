#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bparhmm/io.hpp"
#include "bparhmm/simulate.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace bparhmm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("bparhmm_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void writeFile(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

std::string readFile(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config parsing accepts known keys and rejects unknown ones") {
  TempDir tmp;
  const std::string cfgPath = tmp.file("run.cfg");
  writeFile(cfgPath,
            "# comment line\n"
            "data = a.csv, b.csv\n"
            "r = 2\n"
            "downsample_window = 12\n"
            "scale_first_difference = false\n"
            "alpha_init = 2.5\n"
            "anneal_mode = linear\n"
            "anneal_burn = 250\n"
            "iterations = 500  # trailing comment\n"
            "seed = 77\n"
            "output_dir = out\n");
  const RunConfig cfg = parseConfigFile(cfgPath);
  CHECK(cfg.dataPaths == std::vector<std::string>{"a.csv", "b.csv"});
  CHECK(cfg.r == 2);
  CHECK(cfg.downsampleWindow == 12);
  CHECK(!cfg.scaleDiff);
  CHECK(cfg.alphaInit == 2.5);
  CHECK(cfg.annealMode == "linear");
  CHECK(cfg.annealBurn == 250);
  CHECK(cfg.iterations == 500);
  CHECK(cfg.seed == 77);
  CHECK(cfg.outputDir == "out");

  writeFile(cfgPath, "not_a_key = 1\n");
  CHECK_THROWS_AS(parseConfigFile(cfgPath), ConfigError);
  writeFile(cfgPath, "iterations = banana\n");
  CHECK_THROWS_AS(parseConfigFile(cfgPath), ConfigError);
  CHECK_THROWS_AS(parseConfigFile(tmp.file("missing.cfg")), ConfigError);
}

TEST_CASE("config validation catches out-of-range values") {
  TempDir tmp;
  writeFile(tmp.file("a.csv"), "1.0\n2.0\n");
  RunConfig cfg;
  cfg.dataPaths = {tmp.file("a.csv")};
  CHECK_NOTHROW(cfg.validate());
  RunConfig missing = cfg;
  missing.dataPaths = {tmp.file("absent.csv")};
  CHECK_THROWS_AS(missing.validate(), ConfigError);
  RunConfig bad = cfg;
  bad.r = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.annealMode = "cosine";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.windowMin = 50;
  bad.windowMax = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.dataPaths.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("csv loading handles headers and flags malformed input") {
  TempDir tmp;
  const std::string p = tmp.file("m.csv");
  writeFile(p, "x,y\n1.0,2.0\n3.0,4.0\n");
  MatrixXd m = loadCsvMatrix(p);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(m(1, 1) == 4.0);

  writeFile(p, "1.0,2.0\n3.0,4.0\n");
  m = loadCsvMatrix(p);
  CHECK(m.rows() == 2);

  writeFile(p, "1.0,2.0\n3.0\n");
  try {
    loadCsvMatrix(p);
    FAIL("expected DataError for ragged row");
  } catch (const DataError& e) {
    // message points at the offending line
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  writeFile(p, "1.0,nan\n");
  CHECK_THROWS_AS(loadCsvMatrix(p), DataError);
  writeFile(p, "1.0,abc\n");
  CHECK_THROWS_AS(loadCsvMatrix(p), DataError);
  CHECK_THROWS_AS(loadCsvMatrix(tmp.file("missing.csv")), DataError);
}

TEST_CASE("sequence loading enforces matching dimensions") {
  TempDir tmp;
  writeFile(tmp.file("a.csv"), "1,2\n3,4\n5,6\n7,8\n");
  writeFile(tmp.file("b.csv"), "1\n2\n3\n");
  CHECK_THROWS_AS(loadSequences({tmp.file("a.csv"), tmp.file("b.csv")}, 1), DataError);
  const Dataset data = loadSequences({tmp.file("a.csv")}, 1);
  CHECK(data.size() == 1);
  CHECK(data[0].d == 2);
  CHECK(data[0].effLen() == 3);
}

TEST_CASE("block averaging drops the trailing partial block") {
  MatrixXd m(5, 1);
  m << 1, 2, 3, 4, 5;
  const MatrixXd out = blockAverageDownsample(m, 2);
  CHECK(out.rows() == 2);
  CHECK(out(0, 0) == doctest::Approx(1.5));
  CHECK(out(1, 0) == doctest::Approx(3.5));
  CHECK(blockAverageDownsample(m, 1) == m);
}

TEST_CASE("first-difference scaling uses the pooled population deviation") {
  MatrixXd a(3, 1);
  a << 0, 2, 0;  // diffs +2, -2 -> population variance 4
  std::vector<MatrixXd> series{a};
  const VectorXd scales = scaleFirstDifference(series);
  CHECK(scales(0) == doctest::Approx(2.0));
  CHECK(series[0](1, 0) == doctest::Approx(1.0));

  // after scaling, the pooled variance of the diffs is one
  std::vector<MatrixXd> again = series;
  const VectorXd rescale = scaleFirstDifference(again);
  CHECK(rescale(0) == doctest::Approx(1.0));
}

TEST_CASE("empirical prior is well formed and tracks the data scale") {
  Rng rng(101);
  std::vector<MatrixXd> series{testutil::randomMatrix(200, 2, rng)};
  const MNIWPrior p = empiricalBayesMNIW(series, 1, 0.5, 1.0, 2.0);
  CHECK_NOTHROW(p.validate());
  CHECK(p.n0 == doctest::Approx(4.0));
  CHECK(p.d() == 2);
  CHECK(p.m() == 2);
  // iid standard normal input: diff variance about 2, S0 about the half of it
  CHECK(p.S0(0, 0) == doctest::Approx(1.0).epsilon(0.25));
}

TEST_CASE("trace lines are self-describing and walltime is opt-in") {
  IterationRecord rec;
  rec.iteration = 7;
  rec.jointLogProb = -12.5;
  rec.K = 3;
  rec.inverseTemperature = 0.5;
  rec.counters.flipAccepted = 4;
  const std::string line = traceRecordLine(rec, false, 1.25);
  CHECK(line.find("\"iteration\":7") != std::string::npos);
  CHECK(line.find("\"K\":3") != std::string::npos);
  CHECK(line.find("jointLogProb") != std::string::npos);
  CHECK(line.find("wallClockSec") == std::string::npos);
  CHECK(line.find('\n') == std::string::npos);
  const std::string withWall = traceRecordLine(rec, true, 1.25);
  CHECK(withWall.find("wallClockSec") != std::string::npos);
}

TEST_CASE("checkpoints round-trip bitwise") {
  Rng rng(102);
  Checkpoint cp;
  cp.state.F = testutil::randomValidF(3, 2, rng);
  cp.state.z = {{0, 1, 0}, {1, 1}, {0}};
  cp.state.hypers = testutil::randomHypers(1, 1, rng);
  cp.state.iteration = 123;
  cp.rngState = Rng(55).serialize();
  cp.adapt.stepAlpha = 0.77;
  cp.counters.birthAccepted = 9;
  cp.configHash = fnvHash("some config");

  TempDir tmp;
  const std::string p = tmp.file("cp.json");
  saveCheckpoint(p, cp);
  const Checkpoint back = loadCheckpoint(p);
  CHECK(back.formatVersion == cp.formatVersion);
  CHECK(back.state.F.raw() == cp.state.F.raw());
  CHECK(back.state.z == cp.state.z);
  CHECK(back.state.hypers.alpha == cp.state.hypers.alpha);
  CHECK(back.state.hypers.mniw.S0 == cp.state.hypers.mniw.S0);
  CHECK(back.state.iteration == 123);
  CHECK(back.rngState == cp.rngState);
  CHECK(back.adapt.stepAlpha == 0.77);
  CHECK(back.counters.birthAccepted == 9);
  CHECK(back.configHash == cp.configHash);

  // saving the loaded checkpoint reproduces the file byte for byte
  const std::string p2 = tmp.file("cp2.json");
  saveCheckpoint(p2, back);
  CHECK(readFile(p) == readFile(p2));
}

TEST_CASE("segmentation export lists every modeled step") {
  Rng rng(103);
  ModelHypers h;
  h.mniw = MNIWPrior::defaultFor(1, 1);
  const SyntheticResult sim = generateSynthetic(h, 2, 15, 1, 1, rng);
  SamplerState st;
  st.F = sim.truth.trueF;
  st.z = sim.truth.trueZ;
  st.hypers = h;

  TempDir tmp;
  exportSegmentation(tmp.path.string(), sim.data, st);
  for (int i = 0; i < 2; ++i) {
    std::ifstream in(tmp.file("seq" + std::to_string(i) + "_labels.csv"));
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header.find("label") != std::string::npos);
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    CHECK(rows == sim.data[i].effLen());
  }
  CHECK(fs::exists(tmp.file("feature_matrix.csv")));
}

TEST_CASE("hash is stable and collision-sensitive") {
  CHECK(fnvHash("abc") == fnvHash("abc"));
  CHECK(fnvHash("abc") != fnvHash("abd"));
  CHECK(fnvHash("") != fnvHash(" "));
}
