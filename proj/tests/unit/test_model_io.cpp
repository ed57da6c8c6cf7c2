#include <doctest.h>

#include <filesystem>
#include <json.hpp>

#include "attnlimits/constructions.hpp"
#include "attnlimits/model_io.hpp"
#include "unit/fixtures.hpp"

namespace tf = attnlimits::tf;
using attnlimits::ErrorKind;

namespace {

ErrorKind load_error(const std::string& text) {
  try {
    tf::model_from_json(text);
  } catch (const attnlimits::Error& e) {
    return e.kind();
  }
  FAIL("model loaded");
  return ErrorKind::io;
}

bool bit_equal(const attnlimits::Mat& a, const attnlimits::Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || (a.array() == b.array()).all());
}

}  // namespace

TEST_SUITE("model_io") {
  TEST_CASE("save then load is bit-identical") {
    std::vector<tf::Model> models = fixtures::all_soft();
    models.push_back(attnlimits::constructions::build_anbn(64));
    models.push_back(attnlimits::constructions::build_parity_bounded(8));
    models.push_back(fixtures::hard_model(2, attnlimits::langs::Language::dyck2, 4));
    const auto dir = std::filesystem::temp_directory_path() / "attnlimits_model_io";
    std::filesystem::create_directories(dir);
    for (const auto& m : models) {
      const std::string path = (dir / "m.json").string();
      tf::save_model(m, path);
      const auto back = tf::load_model(path);
      CHECK(tf::model_to_json(back) == tf::model_to_json(m));
      CHECK(bit_equal(back.params.token_embeddings, m.params.token_embeddings));
      for (std::size_t l = 0; l < m.params.layers.size(); ++l) {
        CHECK(bit_equal(back.params.layers[l].ffn.w1, m.params.layers[l].ffn.w1));
        for (std::size_t h = 0; h < m.params.layers[l].heads.size(); ++h)
          CHECK(bit_equal(back.params.layers[l].heads[h].query, m.params.layers[l].heads[h].query));
      }
      const std::string w = "0110";
      if (m.params.vocabulary.contains('0'))
        CHECK((tf::forward(back, w).output.array() == tf::forward(m, w).output.array()).all());
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("truncated files are schema errors") {
    const std::string text = tf::model_to_json(fixtures::soft("soft_l1_h1_dot"));
    CHECK(load_error(text.substr(0, text.size() / 2)) == ErrorKind::schema);
    CHECK(load_error("") == ErrorKind::schema);
    CHECK(load_error("{}") == ErrorKind::schema);
  }

  TEST_CASE("structural mistakes are schema errors") {
    auto j = nlohmann::json::parse(tf::model_to_json(fixtures::soft("soft_l1_h1_dot")));
    auto bad = j;
    bad["token_embeddings"]["data"].erase(0);
    CHECK(load_error(bad.dump()) == ErrorKind::schema);
    bad = j;
    bad.erase("layers");
    CHECK(load_error(bad.dump()) == ErrorKind::schema);
    bad = j;
    bad["token_embeddings"]["shape"][1] = 5;
    CHECK(load_error(bad.dump()) == ErrorKind::schema);
    bad = j;
    bad["vocabulary"]["symbols"][0] = "ab";
    CHECK(load_error(bad.dump()) == ErrorKind::schema);
  }

  TEST_CASE("unknown versions are version errors") {
    auto j = nlohmann::json::parse(tf::model_to_json(fixtures::soft("soft_l1_h1_dot")));
    j["version"] = tf::kModelFormatVersion + 1;
    CHECK(load_error(j.dump()) == ErrorKind::version);
  }

  TEST_CASE("missing files are io errors") {
    try {
      tf::load_model("/nonexistent/model.json");
      FAIL("loaded");
    } catch (const attnlimits::Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}
