#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "lcgp/io.hpp"
#include "lcgp/predict.hpp"
#include "lcgp/vb.hpp"

using namespace lcgp;
using testing::randn;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lcgp_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("sample CSV round-trips exactly") {
  const fs::path dir = scratch_dir("csv");
  std::mt19937_64 rng(1);
  const MatrixXd x = randn(4, 2, rng), y = randn(3, 4, rng);
  write_sample_csv(dir / "a.csv", x, y, {"Cd", "Ni", "Zn"});
  const SampleTable t = read_sample_csv(dir / "a.csv");
  CHECK(t.x == x);
  CHECK(t.y == y);
  CHECK(t.channel_names == std::vector<std::string>{"Cd", "Ni", "Zn"});
}

TEST_CASE("CSV parse errors carry file and line") {
  const fs::path dir = scratch_dir("bad");
  write_text(dir / "bad.csv", "x,a,b\n0,1,2\n1,abc,3\n");
  const std::string msg = error_of([&] { read_sample_csv(dir / "bad.csv"); });
  CHECK(msg.find("bad.csv:3") != std::string::npos);
  CHECK(msg.find("abc") != std::string::npos);

  write_text(dir / "short.csv", "x,a,b\n0,1,2\n1,3\n");
  CHECK(error_of([&] { read_sample_csv(dir / "short.csv"); }).find("short.csv:3") != std::string::npos);
  write_text(dir / "noinput.csv", "a,b\n1,2\n");
  CHECK_THROWS_AS(read_sample_csv(dir / "noinput.csv"), ParseError);
  write_text(dir / "empty.csv", "");
  CHECK_THROWS_AS(read_sample_csv(dir / "empty.csv"), ParseError);
  CHECK_THROWS_AS(read_sample_csv(dir / "missing.csv"), ParseError);
}

TEST_CASE("datasets require a shared grid and channel names") {
  const fs::path dir = scratch_dir("grid");
  write_text(dir / "a.csv", "x,u,v\n0,1,2\n1,3,4\n");
  write_text(dir / "b.csv", "x,u,v\n0,5,6\n1,7,8\n");
  write_text(dir / "c.csv", "x,u,v\n0,5,6\n2,7,8\n");
  write_text(dir / "d.csv", "x,u,w\n0,5,6\n1,7,8\n");
  write_text(dir / "e.csv", "x,u,v\n0,5,6\n");
  const Dataset d = read_dataset({dir / "a.csv", dir / "b.csv"});
  CHECK(d.n_samples() == 2);
  CHECK(d.y[1](1, 0) == 6.0);
  CHECK(error_of([&] { read_dataset({dir / "a.csv", dir / "c.csv"}); }).find("grid") != std::string::npos);
  CHECK(error_of([&] { read_dataset({dir / "a.csv", dir / "d.csv"}); }).find("channel") != std::string::npos);
  CHECK(error_of([&] { read_dataset({dir / "a.csv", dir / "e.csv"}); }).find("input points") != std::string::npos);
  CHECK_THROWS_AS(read_dataset({}), std::invalid_argument);
}

TEST_CASE("labels by index or file stem") {
  const fs::path dir = scratch_dir("labels");
  const std::vector<fs::path> samples{dir / "s0.csv", dir / "s1.csv", dir / "s2.csv"};
  write_text(dir / "l.csv", "sample,label\ns1,-1\n0,1\ns2,1\n");
  const VectorXd r = read_labels(dir / "l.csv", samples);
  CHECK(r == Eigen::Vector3d(1, -1, 1));
  write_labels(dir / "out.csv", r);
  CHECK(read_labels(dir / "out.csv", samples) == r);
  write_text(dir / "bad.csv", "0,1\n1,0\n2,1\n");
  CHECK(error_of([&] { read_labels(dir / "bad.csv", samples); }).find("bad.csv:2") != std::string::npos);
  write_text(dir / "partial.csv", "0,1\n");
  CHECK(error_of([&] { read_labels(dir / "partial.csv", samples); }).find("sample 1") != std::string::npos);
}

TEST_CASE("Jura loader reads GSLIB and CSV layouts") {
  const fs::path dir = scratch_dir("jura");
  write_text(dir / "prediction.dat",
             "Jura prediction data\n11\nXloc\nYloc\nLanduse\nRock\nCd\nCo\nCr\nCu\nNi\nPb\nZn\n"
             "2.386 3.077 3 3 1.740 9.32 38.32 25.72 21.32 77.36 92.56\n"
             "2.544 1.972 2 2 1.335 10.00 40.20 24.76 29.72 77.88 73.56\n");
  const Dataset g = read_jura(dir / "prediction.dat");
  CHECK(g.n_inputs() == 2);
  CHECK(g.channel_names == std::vector<std::string>{"Cd", "Ni", "Zn"});
  CHECK(g.x(1, 0) == 2.544);
  CHECK(g.y[0](1, 0) == 21.32);
  CHECK(g.y[0](2, 1) == 73.56);

  write_text(dir / "jura.csv", "\"Xloc\",\"Yloc\",\"Landuse\",\"Rock\",\"Cd\",\"Co\",\"Cr\",\"Cu\",\"Ni\",\"Pb\",\"Zn\"\n"
                               "2.386,3.077,3,3,1.740,9.32,38.32,25.72,21.32,77.36,92.56\n");
  const Dataset c = read_jura(dir / "jura.csv");
  CHECK(c.y[0](0, 0) == 1.740);

  write_text(dir / "broken.dat", "title\n3\nXloc\nYloc\nCd\n1 2 3\n");
  CHECK(error_of([&] { read_jura(dir / "broken.dat"); }).find("Ni") != std::string::npos);
}

TEST_CASE("matrix CSV round-trips") {
  const fs::path dir = scratch_dir("matrix");
  std::mt19937_64 rng(2);
  const MatrixXd m = randn(3, 4, rng);
  write_matrix_csv(dir / "m.csv", m, {"a", "b", "c", "d"});
  CHECK(read_matrix_csv(dir / "m.csv") == m);
  write_matrix_csv(dir / "n.csv", m);
  CHECK(read_matrix_csv(dir / "n.csv", false) == m);
}

TEST_CASE("model archive round-trips predictions exactly") {
  const fs::path dir = scratch_dir("model");
  std::mt19937_64 rng(3);
  for (bool classify : {false, true}) {
    Dataset d;
    d.x = randn(6, 2, rng);
    for (int s = 0; s < 4; ++s) d.y.push_back(randn(3, 6, rng) + MatrixXd::Constant(3, 6, 5.0));
    d.labels = Eigen::Vector4d(1, -1, 1, -1);
    HyperParams h;
    h.lengthscales = {0.5, 1.5};
    FitConfig cfg;
    cfg.q = 2;
    cfg.max_iters = 5;
    cfg.classification = classify;
    cfg.map_inputs = true;
    const FittedModel m = fit(d, h, cfg);
    save_model(dir / "m.lcgp", m);
    const FittedModel back = load_model(dir / "m.lcgp");

    CHECK(back.dims.N == m.dims.N);
    CHECK(back.config.map_inputs);
    CHECK(back.config.classification == classify);
    CHECK(back.trace.size() == m.trace.size());
    CHECK(back.converged == m.converged);
    const MatrixXd xs = randn(4, 2, rng);
    CHECK((predict_outputs(back, xs, Index(1)) - predict_outputs(m, xs, Index(1))).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((predict_latent(back, xs).cov - predict_latent(m, xs).cov).cwiseAbs().maxCoeff() <= 1e-12);
    if (classify) {
      const MatrixXd y = randn(3, 6, rng);
      CHECK(std::abs(predict_label(back, y) - predict_label(m, y)) <= 1e-12);
    }
  }
}

TEST_CASE("corrupted archives are rejected") {
  const fs::path dir = scratch_dir("corrupt");
  write_text(dir / "junk.lcgp", "not a model");
  CHECK_THROWS_AS(load_model(dir / "junk.lcgp"), ParseError);
  CHECK_THROWS_AS(load_model(dir / "absent.lcgp"), ParseError);

  Dataset d;
  d.x = MatrixXd(3, 1);
  d.x << 0, 1, 2;
  d.y = {MatrixXd(1, 3)};
  d.y[0] << 1, 2, 4;
  FitConfig cfg;
  cfg.q = 1;
  cfg.max_iters = 2;
  save_model(dir / "ok.lcgp", fit(d, HyperParams{}, cfg));
  const auto size = fs::file_size(dir / "ok.lcgp");
  fs::resize_file(dir / "ok.lcgp", size / 2);
  CHECK(error_of([&] { load_model(dir / "ok.lcgp"); }).find("truncated") != std::string::npos);
}

TEST_CASE("run configuration round-trips through its text form") {
  RunConfig c;
  c.command = "fit";
  c.data = {"a.csv", "dir with space/b.csv", "quote\"d.csv"};
  c.labels = "l.csv";
  c.validation = {"v.csv"};
  c.q = 3;
  c.nu = 4;
  c.lu = 0.123456789012345;
  c.lb = 2.0;
  c.lz = 1e-3;
  c.classify = true;
  c.seed = 99;
  c.max_iters = 17;
  c.tol = 1e-9;
  c.out = "results";
  c.model = "m.lcgp";
  c.preset = "toy";
  c.format = "json";
  c.samples = 7;
  c.points = 30;
  c.map_inputs = true;
  CHECK(RunConfig::from_text(c.to_text()) == c);
  CHECK(RunConfig::from_text(RunConfig{}.to_text()) == RunConfig{});

  const RunConfig partial = RunConfig::from_text("# comment\nq = 5\ndata = one.csv\nclassify = true\n");
  CHECK(partial.q == 5);
  CHECK(partial.data == std::vector<std::string>{"one.csv"});
  CHECK(partial.classify);
  CHECK(error_of([] { RunConfig::from_text("q=2\nbogus=1\n"); }).find("line 2") != std::string::npos);
  CHECK(error_of([] { RunConfig::from_text("q=two\n"); }).find("line 1") != std::string::npos);
}
