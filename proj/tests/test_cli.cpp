#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "lcgp/io.hpp"

using namespace lcgp;

namespace {

const fs::path kCli = LCGP_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli.string() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path workdir() {
  const fs::path dir = fs::temp_directory_path() / "lcgp_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("command line end to end") {
  const fs::path dir = workdir();
  const std::string d = dir.string();

  SUBCASE("switch preset emits a three-channel CSV over [-1, 1]") {
    CHECK(run("simulate --preset switch --seed 1 --out " + d + "/sw") == 0);
    const SampleTable t = read_sample_csv(dir / "sw" / "sample_0.csv");
    CHECK(t.y.rows() == 3);
    CHECK(t.x(0) == -1.0);
    CHECK(t.x(t.x.rows() - 1) == 1.0);
    CHECK(fs::exists(dir / "sw" / "truth.csv"));
  }

  SUBCASE("toy preset writes every sample and the truth") {
    CHECK(run("simulate --preset toy --q 3 --samples 10 --points 12 --out " + d + "/toy") == 0);
    for (int s = 0; s < 10; ++s) CHECK(fs::exists(dir / "toy" / ("sample_" + std::to_string(s) + ".csv")));
    CHECK(read_matrix_csv(dir / "toy" / "sigma_true.csv").rows() == 3);
  }

  SUBCASE("resample preset requires a model") {
    CHECK(run("simulate --preset resample --out " + d + "/rs") == 2);
  }

  SUBCASE("empty dataset is a usage error") {
    CHECK(run("fit --out " + d + "/fit") == 2);
    std::ofstream(dir / "empty.csv") << "";
    CHECK(run("fit --data " + d + "/empty.csv --out " + d + "/fit") == 2);
  }

  SUBCASE("unknown flags and bad values are usage errors") {
    CHECK(run("fit --nonsense") == 2);
    CHECK(run("fit --q -1") == 2);
    CHECK(run("") == 2);
  }

  SUBCASE("same seed twice gives byte-identical traces; iteration cap exits 4") {
    REQUIRE(run("simulate --preset toy --q 2 --samples 3 --points 10 --out " + d + "/t") == 0);
    const std::string data = d + "/t/sample_0.csv " + d + "/t/sample_1.csv " + d + "/t/sample_2.csv";
    CHECK(run("fit --data " + data + " --q 2 --max-iters 4 --seed 5 --out " + d + "/a") == 4);
    CHECK(run("fit --data " + data + " --q 2 --max-iters 4 --seed 5 --out " + d + "/b") == 4);
    CHECK(slurp(dir / "a" / "trace.csv") == slurp(dir / "b" / "trace.csv"));
    CHECK(!slurp(dir / "a" / "trace.csv").empty());
    CHECK(fs::exists(dir / "a" / "model.lcgp"));

    CHECK(run("fit --data " + data + " --q 2 --max-iters 500 --tol 1e-2 --out " + d + "/c") == 0);

    CHECK(run("predict --model " + d + "/a/model.lcgp --data " + d + "/t/sample_0.csv --out " + d + "/p") == 0);
    CHECK(read_sample_csv(dir / "p" / "predictions.csv").y.rows() == 2);

    CHECK(run("evaluate --model " + d + "/a/model.lcgp --truth " + d + "/t/sigma_true.csv --lu 0.5 --out " + d + "/e") == 0);
    CHECK(slurp(dir / "e" / "metrics.json").find("recovery_score") != std::string::npos);

    // Flags override the config file.
    std::ofstream(dir / "run.cfg") << "q = 2\nmax-iters = 50\ndata = [\"" << d << "/t/sample_0.csv\"]\n";
    CHECK(run("fit --config " + d + "/run.cfg --max-iters 2 --out " + d + "/cfg") == 4);
    const RunConfig saved = RunConfig::from_text(slurp(dir / "cfg" / "config.txt"));
    CHECK(saved.max_iters == 2);
    CHECK(saved.data.size() == 1);
  }

  SUBCASE("evaluate reports identical predictions as zero error and combines p-values") {
    REQUIRE(run("simulate --preset switch --out " + d + "/s") == 0);
    CHECK(run("evaluate --data " + d + "/s/truth.csv --truth " + d + "/s/truth.csv --pvalues 0.05 0.05 --out " + d + "/ev") == 0);
    const std::string json = slurp(dir / "ev" / "metrics.json");
    CHECK(json.find("\"mae\": 0.0") != std::string::npos);
    CHECK(json.find("\"mse\": 0.0") != std::string::npos);
    CHECK(json.find("\"fisher_p\": 0.0174786") != std::string::npos);
  }

  SUBCASE("gradcheck passes") {
    CHECK(run("gradcheck --samples 5") == 0);
  }
}
