#include <doctest.h>

#include <cmath>
#include <cstring>
#include <json.hpp>
#include <string>

#include "attnlimits/attnlimits.h"

using nlohmann::json;

namespace {

const std::string kFixtures = ATTNLIMITS_FIXTURES;

// Takes ownership of a library string.
std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out(s);
  al_string_free(s);
  return out;
}

struct Model {
  al_model* m = nullptr;
  ~Model() { al_model_free(m); }
};

}  // namespace

TEST_SUITE("capi") {
  TEST_CASE("status names and exit codes") {
    CHECK(std::string(al_status_name(AL_OK)) == "ok");
    CHECK(al_exit_code(AL_OK) == 0);
    CHECK(al_exit_code(AL_E_NUMERIC) == 3);
    CHECK(al_exit_code(AL_E_REDUCTION) == 4);
    for (al_status s : {AL_E_INPUT, AL_E_CONFIG, AL_E_SCHEMA, AL_E_VERSION, AL_E_UNSUPPORTED, AL_E_IO, AL_E_INTERNAL})
      CHECK(al_exit_code(s) == 2);
    CHECK(std::strlen(al_version()) > 0);
  }

  TEST_CASE("errors carry a message") {
    Model m;
    CHECK(al_model_load("/nonexistent.json", &m.m) == AL_E_IO);
    CHECK(m.m == nullptr);
    CHECK(std::string(al_last_error()).find("/nonexistent.json") != std::string::npos);
    CHECK(al_model_from_json("{\"format\":", &m.m) == AL_E_SCHEMA);
    CHECK(al_model_load(nullptr, &m.m) == AL_E_INPUT);
    char* out = nullptr;
    CHECK(al_generate("klingon", "process", 0.5, 1, 8, 1, &out) == AL_E_INPUT);
    CHECK(al_generate("parity", "process", 1.5, 1, 8, 1, &out) == AL_E_CONFIG);
    CHECK(out == nullptr);
  }

  TEST_CASE("version mismatch") {
    Model m;
    REQUIRE(al_model_load((kFixtures + "/soft_l1_h1_dot.json").c_str(), &m.m) == AL_OK);
    char* text = nullptr;
    REQUIRE(al_model_to_json(m.m, &text) == AL_OK);
    auto j = json::parse(take(text));
    j["version"] = 99;
    Model bad;
    CHECK(al_model_from_json(j.dump().c_str(), &bad.m) == AL_E_VERSION);
  }

  TEST_CASE("forward output") {
    Model m;
    REQUIRE(al_model_load((kFixtures + "/toy_two_position.json").c_str(), &m.m) == AL_OK);
    char* out = nullptr;
    REQUIRE(al_forward(m.m, "1", 1, &out) == AL_OK);
    const auto j = json::parse(take(out));
    CHECK(j["label_probability"].get<double>() == doctest::Approx(0.8118562749129378).epsilon(1e-12));
    CHECK(j["accepts"].get<bool>());
    CHECK(j["layers"].size() == 1);
    CHECK(j["activations"].size() == 2);
    REQUIRE(al_forward(m.m, "1", 0, &out) == AL_OK);
    CHECK_FALSE(json::parse(take(out)).contains("layers"));
    CHECK(al_forward(m.m, "2", 0, &out) == AL_E_INPUT);
  }

  TEST_CASE("model info and random models") {
    Model m;
    REQUIRE(al_random_model(R"({"num_layers":2,"num_heads":2,"weighting":"hard"})", "dyck2", 4, 1.0, &m.m) == AL_OK);
    char* out = nullptr;
    REQUIRE(al_model_info(m.m, &out) == AL_OK);
    const auto j = json::parse(take(out));
    CHECK(j["config"]["num_layers"] == 2);
    CHECK(j["config"]["weighting"] == "hard");
    CHECK(j["vocabulary"] == "()[]$");
    Model bad;
    CHECK(al_random_model(R"({"layers":2})", "dyck2", 4, 1.0, &bad.m) == AL_E_INPUT);
    CHECK(al_random_model("not json", "dyck2", 4, 1.0, &bad.m) != AL_OK);
  }

  TEST_CASE("construct and verify") {
    Model m;
    char* report = nullptr;
    REQUIRE(al_construct("parity", 6, 6, 2, &m.m, &report) == AL_OK);
    const auto j = json::parse(take(report));
    CHECK(j["failures"].empty());
    CHECK(j["checked"] == 127);
    REQUIRE(al_verify_sampled(m.m, "parity", 6, 50, 3, 1, &report) == AL_OK);
    CHECK(json::parse(take(report))["failures"].empty());
    Model none;
    CHECK(al_construct("parity", 0, 4, 1, &none.m, &report) == AL_E_CONFIG);
  }

  TEST_CASE("generate is deterministic") {
    char* a = nullptr;
    char* b = nullptr;
    REQUIRE(al_generate("dyck2", "process", 0.5, 10, 64, 7, &a) == AL_OK);
    REQUIRE(al_generate("dyck2", "process", 0.5, 10, 64, 7, &b) == AL_OK);
    const std::string sa = take(a), sb = take(b);
    CHECK(sa == sb);
    CHECK(std::count(sa.begin(), sa.end(), '\n') == 10);
    const auto first = json::parse(sa.substr(0, sa.find('\n')));
    CHECK(first["label"].get<bool>());
    CHECK(first["language"] == "dyck2");
  }

  TEST_CASE("restriction requires hard attention") {
    Model soft;
    REQUIRE(al_model_load((kFixtures + "/soft_l1_h1_dot.json").c_str(), &soft.m) == AL_OK);
    char* report = nullptr;
    CHECK(al_restrict(soft.m, 16, 0, nullptr, nullptr, 1, 1, &report) == AL_E_UNSUPPORTED);
    CHECK(std::string(al_last_error()).find("hard attention required") != std::string::npos);
    CHECK(al_exit_code(AL_E_UNSUPPORTED) == 2);
  }

  TEST_CASE("restriction report") {
    Model m;
    REQUIRE(al_random_model(R"({"num_layers":1,"num_heads":1,"weighting":"hard"})", "parity", 1234, 1.0, &m.m) ==
            AL_OK);
    char* report = nullptr;
    REQUIRE(al_restrict(m.m, 16, 0, "k=2", nullptr, 5, 2, &report) == AL_OK);
    const auto j = json::parse(take(report));
    CHECK(j["n"] == 16);
    CHECK(j["reductions"].size() == 1);
    CHECK(j["counterexample"]["found"].get<bool>());
    CHECK(j["counterexample"]["member_a"] != j["counterexample"]["member_b"]);
    CHECK(j["counterexample"]["decision_a"] == j["counterexample"]["decision_b"]);
    CHECK(al_restrict(m.m, 16, 0, "k=2,bogus=1", nullptr, 5, 2, &report) == AL_E_INPUT);
  }

  TEST_CASE("perturb and evaluate") {
    Model m;
    REQUIRE(al_model_load((kFixtures + "/soft_l1_h1_dot.json").c_str(), &m.m) == AL_OK);
    char* csv = nullptr;
    char* summary = nullptr;
    REQUIRE(al_perturb(m.m, "8:32:x2", 2, 1, 2, &csv, &summary) == AL_OK);
    const std::string c = take(csv);
    CHECK(c.rfind("n,max_delta,analytic_bound,slope_running\n", 0) == 0);
    CHECK(std::count(c.begin(), c.end(), '\n') == 4);
    const auto s = json::parse(take(summary));
    CHECK(s["rows"].size() == 3);
    CHECK(std::isfinite(s["slope"].get<double>()));

    char* report = nullptr;
    REQUIRE(al_evaluate(m.m, "parity", 0.5, "16,32", 500, 3, 2, &report, &csv) == AL_OK);
    const auto e = json::parse(take(report));
    take(csv);
    CHECK(e["reports"].size() == 2);
    CHECK(e["reports"][0]["optimal_ce_closed_form"].get<double>() == doctest::Approx(0.8664).epsilon(1e-4));
    CHECK(e["pair_tv"]["n"] == 32);
    CHECK(al_perturb(m.m, "8:x", 2, 1, 1, &csv, &summary) == AL_E_INPUT);
  }
}
