#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "critmass/io.hpp"
#include "critmass/profiles.hpp"
#include "doctest.h"

using namespace critmass;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "critmass_cli_test";

int cli(const std::string& args) {
  fs::create_directories(kDir);
  const std::string cmd = std::string(CRITMASS_CLI) + " --out " + kDir.string() + " " + args + " > /dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Json manifest(const std::string& prefix) { return read_json((kDir / (prefix + "_manifest.json")).string()); }

}  // namespace

TEST_CASE("profile: sidecar identity and the closed form at mu = 0") {
  REQUIRE(cli("profile --mu 0.01 --prefix p1") == 0);
  const auto side = read_json((kDir / "p1.json").string());
  CHECK(side["identity_residual"].get<double>() <= 1e-6);
  CHECK(manifest("p1")["status"] == "pass");

  REQUIRE(cli("profile --mu 0 --prefix p0") == 0);
  const auto cols = read_csv((kDir / "p0.csv").string());
  REQUIRE(cols[0].name == "r");
  double err = 0;
  for (std::size_t i = 0; i < cols[0].values.size(); ++i) err = std::max(err, std::abs(cols[1].values[i] - phi_Q(cols[0].values[i])));
  CHECK(err < 1e-8);

  REQUIRE(cli("profile --mu 0.1 --rmax 40 --prefix p2") == 0);
  const auto m = manifest("p2");
  CHECK(m["checks"][1]["name"] == "profile_ordering");
  CHECK(m["checks"][1]["pass"] == true);
}

TEST_CASE("exit codes and failure records") {
  CHECK(cli("profile --mu 2") == 1);
  CHECK(cli("nonsense") == 1);
  CHECK(cli("modulate --prefix nothing") == 1);
  CHECK(manifest("nothing")["failure"].get<std::string>().find("InvalidArgument") != std::string::npos);
  // an assertion failure exits 5 and records which check failed
  CHECK(cli("sweep --task mass-expansion --mu 1e-4,1e-3,1e-2 --prefix mx") == 5);
  const auto m = manifest("mx");
  CHECK(m["status"] == "fail");
  CHECK(m["checks"][0]["name"] == "mass_expansion_slope");
  // a step failure (dt floor) exits 3
  CHECK(cli("simulate --preset supercritical --mass-factor 1.1 --dt-max 1 --dt-initial 0.5 --dt-min 0.01 --max-peak-change 1e-6 --prefix stepfail") == 3);
}

TEST_CASE("spectrum assertions") {
  CHECK(cli("spectrum --mu 1e-2 --mode 0 --constraints mass --prefix s0") == 0);
  CHECK(cli("spectrum --mu 1e-2 --mode 0 --constraints full --prefix s1") == 0);
  CHECK(manifest("s1")["checks"][0]["value"].get<double>() > 2.0);
  CHECK(cli("spectrum --mu 1e-2 --mode 1 --prefix s2") == 0);
}

TEST_CASE("simulate: blowup certificate and steady state") {
  REQUIRE(cli("simulate --preset supercritical --mass-factor 1.1 --prefix sup") == 0);
  const auto m = manifest("sup");
  CHECK(m["resolved"]["t_max_bound"].get<double>() > 0);
  CHECK(m["checks"][0]["pass"] == true);
  REQUIRE(cli("simulate --preset subcritical --mass 12.566 --prefix sub") == 0);
  CHECK(manifest("sub")["checks"][0]["name"] == "steady_state_reached");
}

TEST_CASE("config precedence: flags over file over defaults") {
  const auto cfg = kDir / "cfg.json";
  std::ofstream(cfg) << R"({"profile": {"mu": 0.05, "tol": 1e-9}})";
  REQUIRE(cli("profile --config " + cfg.string() + " --prefix c1") == 0);
  CHECK(read_json((kDir / "c1.json").string())["mu"].get<double>() == 0.05);
  REQUIRE(cli("profile --config " + cfg.string() + " --mu 0.02 --prefix c2") == 0);
  CHECK(read_json((kDir / "c2.json").string())["mu"].get<double>() == 0.02);
  CHECK(manifest("c2")["tolerances"]["rtol"].get<double>() == 1e-9);
  CHECK(manifest("c2")["config"]["profile"]["growth"] == "1.02");
}

TEST_CASE("determinism and manifest replay") {
  REQUIRE(cli("sweep --task hardy --threads 3 --prefix h1") == 0);
  REQUIRE(cli("sweep --task hardy --threads 1 --prefix h2") == 0);
  CHECK(slurp(kDir / "h1.csv") == slurp(kDir / "h2.csv"));
  CHECK(slurp(kDir / "h1.json") == slurp(kDir / "h2.json"));

  REQUIRE(cli("profile --mu 0.03 --growth 1.01 --prefix r1") == 0);
  fs::copy_file(kDir / "r1_manifest.json", kDir / "replay.json", fs::copy_options::overwrite_existing);
  REQUIRE(cli("profile --config " + (kDir / "replay.json").string() + " --prefix r2") == 0);
  CHECK(slurp(kDir / "r1.csv") == slurp(kDir / "r2.csv"));
  CHECK(slurp(kDir / "r1.json") == slurp(kDir / "r2.json"));
}
