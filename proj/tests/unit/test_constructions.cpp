#include <doctest.h>

#include "attnlimits/constructions.hpp"
#include "unit/oracles.hpp"

namespace tf = attnlimits::tf;
namespace cons = attnlimits::constructions;
using attnlimits::langs::Language;

namespace {

bool model_accepts(const tf::Model& m, const std::string& w) {
  return tf::accepts(tf::predict_label(m, tf::forward(m, w, tf::TraceDetail::final_only)));
}

std::size_t disagreements(const tf::Model& m, Language lang, const std::string& symbols, std::size_t upto) {
  std::size_t bad = 0;
  for (std::size_t n = 0; n <= upto; ++n)
    for (const auto& w : oracle::all_words(symbols, n)) bad += model_accepts(m, w) != oracle::member(lang, w);
  return bad;
}

}  // namespace

TEST_SUITE("constructions") {
  TEST_CASE("1* is hard attention and exact on all short words") {
    const auto m = cons::build_ones_star();
    CHECK(m.config.weighting == tf::Weighting::hard);
    CHECK(m.config.num_layers == 1);
    CHECK(disagreements(m, Language::ones_star, "01", 12) == 0);
    // one zero anywhere in a long word
    std::string w(300, '1');
    CHECK(model_accepts(m, w));
    w[157] = '0';
    CHECK_FALSE(model_accepts(m, w));
  }

  TEST_CASE("a^n b^n is hard attention and exact on all short words") {
    const auto m = cons::build_anbn(256);
    CHECK(m.config.weighting == tf::Weighting::hard);
    CHECK(disagreements(m, Language::anbn, "ab", 12) == 0);
    CHECK(model_accepts(m, std::string(100, 'a') + std::string(100, 'b')));
    CHECK_FALSE(model_accepts(m, std::string(100, 'a') + std::string(99, 'b')));
    CHECK_FALSE(model_accepts(m, std::string(99, 'a') + "ba" + std::string(99, 'b')));
    CHECK_THROWS_AS(tf::forward(m, std::string(300, 'a')), attnlimits::Error);
  }

  TEST_CASE("bounded parity is soft attention and exact up to N") {
    for (int N : {1, 4, 9, 12}) {
      const auto m = cons::build_parity_bounded(N);
      CHECK(m.config.weighting == tf::Weighting::soft);
      CHECK(disagreements(m, Language::parity, "01", static_cast<std::size_t>(N)) == 0);
    }
    CHECK_THROWS_AS(cons::build_parity_bounded(0), attnlimits::Error);
    CHECK_THROWS_AS(cons::build_parity_bounded(cons::kParityMaxN + 1), attnlimits::Error);
  }

  TEST_CASE("bounded parity grows with N") {
    std::size_t prev = 0;
    for (int N : {4, 8, 16, 32}) {
      const auto count = tf::parameter_count(cons::build_parity_bounded(N));
      CHECK(count > prev);
      prev = count;
    }
  }

  TEST_CASE("build reports") {
    const auto r = cons::build("parity", 6, 6);
    CHECK(r.failures.empty());
    CHECK(r.verified_upto == 6);
    CHECK(r.checked == 127);  // 2^0 + ... + 2^6
    CHECK(r.parameter_count == tf::parameter_count(r.model));
    const auto a = cons::build("anbn", 0, 10, 2);
    CHECK(a.failures.empty());
    CHECK(a.checked == 2047);
    CHECK_THROWS_AS(cons::build("dyck", 0, 2), attnlimits::Error);
  }

  TEST_CASE("verification finds a broken model") {
    auto r = cons::build("ones_star", 0, 0);
    r.model.params.label_head.weight *= -1.0;
    r.model.params.label_head.bias *= -1.0;
    cons::verify_exhaustive(r, Language::ones_star, 4);
    CHECK_FALSE(r.failures.empty());
  }

  TEST_CASE("sampled verification on long words") {
    auto r = cons::build("anbn", 0, 0);
    cons::verify_sampled(r, Language::anbn, 1000, 200, 3, 2);
    CHECK(r.failures.empty());
    CHECK(r.sampled_upto == 1000);
    CHECK(cons::sampled_accuracy(r.model, Language::anbn, 64, 100, 4) == 1.0);
  }
}
