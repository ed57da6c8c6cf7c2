#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = ATTNLIMITS_CLI;
const fs::path kWork = ATTNLIMITS_WORKDIR;
const std::string kFixtures = ATTNLIMITS_FIXTURES;

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run(const std::string& args) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = "'" + kCli + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("generate is byte-identical across runs") {
    const auto a = run("generate --language dyck2 --p 0.5 --count 10 --seed 7");
    const auto b = run("generate --language dyck2 --p 0.5 --count 10 --seed 7");
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(lines(a.out) == 10);
    const auto c = run("generate --language dyck2 --p 0.5 --count 10 --seed 8");
    CHECK(c.out != a.out);
  }

  TEST_CASE("manifest on stderr without an output file") {
    const auto r = run("generate --language parity --count 2 --seed 3");
    REQUIRE(r.code == 0);
    const auto pos = r.err.find("manifest ");
    REQUIRE(pos != std::string::npos);
    const auto m = json::parse(r.err.substr(pos + 9));
    CHECK(m["subcommand"] == "generate");
    CHECK(m["seed"] == 3);
    CHECK(m["exit_code"] == 0);
    CHECK(m["outputs"]["stdout"]["bytes"] == r.out.size());
  }

  TEST_CASE("restrict on a soft model exits 2") {
    const auto r = run("restrict --model '" + kFixtures + "/soft_l1_h1_dot.json' --n 16");
    CHECK(r.code == 2);
    CHECK(r.err.find("hard attention required") != std::string::npos);
  }

  TEST_CASE("perturb writes one row per length and a manifest") {
    const fs::path csv = kWork / "decay.csv";
    fs::remove(csv);
    fs::remove(kWork / "decay.csv.manifest.json");
    const auto r = run("perturb --model '" + kFixtures + "/soft_l1_h1_dot.json' --n-grid 8:64:x2 --trials 1 --seed 2 --out '" +
                       csv.string() + "'");
    REQUIRE(r.code == 0);
    const std::string body = slurp(csv);
    CHECK(lines(body) == 1 + 4);
    for (const char* n : {"\n8,", "\n16,", "\n32,", "\n64,"}) CHECK(body.find(n) != std::string::npos);
    const auto m = json::parse(slurp(kWork / "decay.csv.manifest.json"));
    CHECK(m["subcommand"] == "perturb");
    CHECK(m["status"] == "ok");
    CHECK(m["outputs"].contains(csv.string()));
    CHECK(m["outputs"][csv.string()]["bytes"] == body.size());
    CHECK(m["inputs"].size() == 1);
  }

  TEST_CASE("explicit manifest path") {
    const fs::path mp = kWork / "explicit.json";
    fs::remove(mp);
    const auto r = run("construct --which parity 4 --verify-upto 4 --out '" + (kWork / "par.json").string() +
                       "' --manifest '" + mp.string() + "'");
    REQUIRE(r.code == 0);
    const auto m = json::parse(slurp(mp));
    CHECK(m["subcommand"] == "construct");
    CHECK(fs::exists(kWork / "par.json"));
    const auto f = run("forward --model '" + (kWork / "par.json").string() + "' --word 0110");
    REQUIRE(f.code == 0);
    CHECK(json::parse(f.out)["accepts"].get<bool>());
  }

  TEST_CASE("unknown flags exit 2 with usage") {
    const auto r = run("generate --bogus 1");
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(r.out.empty());
    const auto none = run("");
    CHECK(none.code == 2);
  }

  TEST_CASE("bad values map to exit 2") {
    CHECK(run("generate --language parity --p 2").code == 2);
    CHECK(run("forward --model /nonexistent.json --word 01").code == 2);
    CHECK(run("perturb --model '" + kFixtures + "/soft_l1_h1_dot.json' --n-grid 8:x").code == 2);
  }

  TEST_CASE("evaluate prints a report") {
    const auto r = run("evaluate --model '" + kFixtures + "/soft_l1_h1_dot.json' --n 16 --samples 200 --seed 1");
    REQUIRE(r.code == 0);
    const auto j = json::parse(r.out);
    CHECK(j["reports"].size() == 1);
    CHECK(j["reports"][0]["n"] == 16);
  }
}
