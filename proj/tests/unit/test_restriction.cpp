#include <doctest.h>

#include <set>

#include "attnlimits/restriction.hpp"
#include "unit/fixtures.hpp"
#include "unit/oracles.hpp"

namespace tf = attnlimits::tf;
namespace rs = attnlimits::restriction;
using attnlimits::ErrorKind;
using attnlimits::langs::Language;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const attnlimits::Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::io;
}

std::vector<int> random_word(std::size_t n, std::size_t base, attnlimits::Rng& rng) {
  std::vector<int> w(n);
  for (auto& x : w) x = static_cast<int>(rng() % base);
  return w;
}

// Brute-force dependency: position p matters when some completion changes
// its decision after p alone is changed.
std::vector<std::size_t> brute_dependencies(const rs::Evaluator& f, const rs::Restriction& rho, std::size_t base) {
  const auto free_pos = rho.free_positions();
  std::vector<std::size_t> out;
  std::size_t total = 1;
  for (std::size_t k = 0; k < free_pos.size(); ++k) total *= base;
  for (std::size_t p : free_pos) {
    bool dep = false;
    for (std::size_t idx = 0; idx < total && !dep; ++idx) {
      std::vector<int> w(rho.length(), 0);
      for (std::size_t q = 0; q < w.size(); ++q)
        if (!rho.is_free(q)) w[q] = rho.assignment[q];
      std::size_t rest = idx;
      for (std::size_t q : free_pos) {
        w[q] = static_cast<int>(rest % base);
        rest /= base;
      }
      const bool d = f(w);
      for (std::size_t s = 0; s < base && !dep; ++s) {
        auto v = w;
        v[p] = static_cast<int>(s);
        dep = f(v) != d;
      }
    }
    if (dep) out.push_back(p);
  }
  return out;
}

std::size_t violated_pairs(const rs::CTransformer& ct, const rs::Restriction& rho, int k) {
  std::size_t bad = 0;
  for (const auto& st : rs::pair_census(ct, rho, k)) bad += !st.satisfied;
  return bad;
}

}  // namespace

TEST_SUITE("restriction") {
  TEST_CASE("restriction strings and refinement") {
    const std::vector<char> syms = {'0', '1'};
    const auto r = rs::parse_restriction("*1*0", syms);
    CHECK(r.assignment == std::vector<int>{rs::kFree, 1, rs::kFree, 0});
    CHECK(r.to_string(syms) == "*1*0");
    CHECK(r.free_count() == 2);
    CHECK(r.free_positions() == std::vector<std::size_t>{0, 2});
    CHECK(r.refined_by(rs::parse_restriction("01*0", syms)));
    CHECK_FALSE(r.refined_by(rs::parse_restriction("00*0", syms)));
    CHECK_FALSE(r.refined_by(rs::parse_restriction("***0", syms)));
    CHECK(rs::restrict_word(r, {1, 0, 1, 1}) == std::vector<int>{1, 1, 1, 0});
    CHECK(kind_of([&] { rs::parse_restriction("*2", syms); }) == ErrorKind::input);
  }

  TEST_CASE("stage parameters") {
    const auto p = rs::parse_stage_params("k=3,eta=0.2,q=0.4,delta=0.25");
    CHECK(p.k == 3);
    CHECK(p.eta == 0.2);
    CHECK(p.q == 0.4);
    CHECK(p.delta == 0.25);
    CHECK(rs::parse_stage_params(rs::to_string(p)).k == 3);
    const auto d = rs::parse_stage_params("");
    CHECK(d.k == 2);
    CHECK(kind_of([] { rs::parse_stage_params("k=2,zeta=1"); }) == ErrorKind::input);
    CHECK(kind_of([] { rs::parse_stage_params("k=two"); }) == ErrorKind::input);
    CHECK(kind_of([] { rs::parse_stage_params("eta=0.7"); }) == ErrorKind::config);
    CHECK(kind_of([] { rs::parse_stage_params("q=0.9,delta=0.5"); }) == ErrorKind::config);
    CHECK(kind_of([] { rs::parse_stage_params("k=0"); }) == ErrorKind::config);
  }

  TEST_CASE("soft models are rejected") {
    const auto soft = fixtures::soft("soft_l1_h1_dot");
    CHECK(kind_of([&] { rs::lift(soft, 8); }) == ErrorKind::unsupported);
    CHECK(kind_of([&] { rs::random_ctransformer(soft, 8, 2, 1); }) == ErrorKind::unsupported);
    auto tied = fixtures::hard_model(1, Language::parity, 3);
    tied.config.hard_tie_epsilon = 1e-9;
    CHECK(kind_of([&] { rs::lift(tied, 8); }) == ErrorKind::unsupported);
  }

  TEST_CASE("a lifted model decides like the model") {
    attnlimits::Rng rng(12);
    for (int heads : {1, 2}) {
      const auto m = fixtures::hard_model(heads, Language::parity, 40 + heads);
      const auto ct = rs::lift(m, 10);
      CHECK(ct.max_fan_in() == 1);
      for (int t = 0; t < 50; ++t) {
        const auto w = random_word(10, 2, rng);
        std::string s;
        for (int x : w) s.push_back(ct.word_symbols[static_cast<std::size_t>(x)]);
        CHECK(rs::label_probability(ct, w) == tf::predict_label(m, tf::forward(m, s)));
      }
    }
  }

  TEST_CASE("random c-transformers read themselves and one other position") {
    const auto m = fixtures::hard_model(1, Language::parity, 5);
    const auto ct = rs::random_ctransformer(m, 12, 2, 9);
    for (std::size_t j = 0; j < 12; ++j) {
      REQUIRE(ct.inputs[j].size() == 2);
      CHECK(ct.inputs[j][0] == static_cast<int>(j));
      CHECK(ct.inputs[j][1] != static_cast<int>(j));
      CHECK(ct.tables[j].size() == 4);
    }
    CHECK(ct.inputs[12].empty());
    CHECK(kind_of([&] { rs::random_ctransformer(m, 12, 3, 9); }) == ErrorKind::config);
  }

  TEST_CASE("stage postconditions") {
    rs::StageParams params;
    for (const auto& hc : fixtures::hard_cases(Language::parity, {16, 24})) {
      CAPTURE(hc.name);
      const auto& ct = hc.ct;
      const auto rho0 = rs::Restriction::all_free(ct.n);

      // stage 1: refinement and bounded fan-out
      const auto rho1 = rs::stage1(ct, rho0, params);
      CHECK(rho0.refined_by(rho1));
      const std::size_t bound1 = rs::stage1_bound(ct, rho0, params);
      const auto fo = rs::fan_out(ct, rho1);
      for (std::size_t p = 0; p < ct.n; ++p)
        if (rho1.is_free(p)) CHECK(fo[p] <= bound1);

      // stage 2: no position is k-depended on by too many unsatisfied pairs
      const auto s2 = rs::stage2(ct, rho1, params);
      CHECK(rho1.refined_by(s2.rho));
      CHECK(s2.bound == (std::size_t{1} << ct.c) * static_cast<std::size_t>(params.k) * ct.layers[0].heads.size());
      if (!s2.trivially_satisfied) {
        std::vector<std::size_t> dependents(ct.positions(), 0);
        for (const auto& st : rs::pair_census(ct, s2.rho, params.k))
          if (!st.satisfied)
            for (int j : st.selected) ++dependents[static_cast<std::size_t>(j)];
        for (std::size_t d : dependents) CHECK(d <= s2.bound);
      }

      // stage 3: every pair satisfied, X0 avoided
      const auto rep = rs::depth_reduce_with_retries(ct, rho0, params, hc.seed);
      CHECK(rep.rho1.refined_by(rep.rho2));
      CHECK(rep.rho2.refined_by(rep.rho3));
      if (!rep.stage2.trivially_satisfied) {
        CHECK(violated_pairs(ct, rep.rho3, rep.params.k) == 0);
        const auto free2 = rep.rho2.free_positions();
        std::size_t newly_fixed = 0;
        for (std::size_t p : free2) newly_fixed += !rep.rho3.is_free(p);
        CHECK(static_cast<double>(newly_fixed) <=
              (1.0 + rep.params.delta) * rep.params.q * static_cast<double>(free2.size()));
      }
      CHECK(rep.c_prime <= rs::kMaxTableReads);
      CHECK(rep.reduced.layers.size() == ct.layers.size() - 1);
    }
  }

  TEST_CASE("the reduced model agrees with the original on restricted inputs") {
    rs::StageParams params;
    for (const auto& hc : fixtures::hard_cases(Language::parity, {16})) {
      CAPTURE(hc.name);
      const auto rep = rs::depth_reduce_with_retries(hc.ct, rs::Restriction::all_free(hc.ct.n), params, hc.seed);
      const auto free_pos = rep.rho3.free_positions();
      attnlimits::Rng rng(hc.seed);
      for (int t = 0; t < 300; ++t) {
        auto w = rs::restrict_word(rep.rho3, random_word(hc.ct.n, 2, rng));
        REQUIRE(rs::accepts(rep.reduced, w) == rs::accepts(hc.ct, w));
      }
      // Reads of the final position come from free positions only.
      for (int r : rep.reduced.inputs[hc.ct.n]) CHECK(rep.rho3.is_free(static_cast<std::size_t>(r)));
    }
  }

  TEST_CASE("dependency sets against brute force") {
    const std::vector<char> syms = {'0', '1'};
    // x0 xor x2 on free positions, fixed x1
    const rs::Evaluator f = [](const std::vector<int>& w) { return (w[0] ^ w[2]) == 1; };
    const auto rho = rs::parse_restriction("*1**", syms);
    CHECK(rs::dependency_set(f, rho, 2).depends_on == brute_dependencies(f, rho, 2));
    CHECK(rs::dependency_set(f, rho, 2).depends_on == std::vector<std::size_t>{0, 2});
    CHECK(rs::dependency_set(f, rho, 2, 3).checked_contexts == 8);

    for (const auto& hc : fixtures::hard_cases(Language::parity, {16})) {
      CAPTURE(hc.name);
      auto rho2 = rs::Restriction::all_free(hc.ct.n);
      for (std::size_t p = 0; p < hc.ct.n; p += 2) rho2.assignment[p] = static_cast<int>(p / 2 % 2);
      const auto ev = rs::apply_restriction(hc.ct, rho2);
      const auto got = rs::dependency_set(ev, rho2, 2, 2);
      CHECK(got.exhaustive);
      CHECK(got.depends_on == brute_dependencies(ev, rho2, 2));
      const auto sampled = rs::dependency_sample(ev, rho2, 2, 64, 1, 2);
      for (std::size_t p : sampled.depends_on)
        CHECK(std::find(got.depends_on.begin(), got.depends_on.end(), p) != got.depends_on.end());
    }
    CHECK(kind_of([&] { rs::dependency_set(f, rs::Restriction::all_free(23), 2); }) == ErrorKind::input);
  }

  TEST_CASE("equivalence check counts mismatches") {
    const std::vector<char> syms = {'0', '1'};
    const rs::Evaluator a = [](const std::vector<int>& w) { return w[0] == 1; };
    const rs::Evaluator b = [](const std::vector<int>& w) { return w[0] == 1 && w[1] == 1; };
    const auto rep = rs::check_equivalence(a, b, rs::parse_restriction("**", syms), 2, 10, 0, 0);
    CHECK(rep.exhaustive);
    CHECK(rep.checked == 4);
    CHECK(rep.mismatches == 1);
    CHECK(rs::check_equivalence(a, b, rs::parse_restriction("*1", syms), 2, 10, 0, 0).mismatches == 0);
  }

  TEST_CASE("the 1DYCK pre-restriction fixes a fifth at each end") {
    const auto m = fixtures::hard_model(1, Language::dyck1, 2);
    const auto ct = rs::lift(m, 20);
    const auto r = rs::dyck_prerestriction(ct);
    CHECK(r.to_string(ct.word_symbols) == "((((************))))");
  }

  TEST_CASE("a counterexample pair for PARITY") {
    const auto m = fixtures::hard_model(1, Language::parity, 1234);
    const auto ct = rs::lift(m, 16);
    const auto rep = rs::demonstrate_failure(ct, Language::parity, {}, 5);
    REQUIRE(rep.pair.found);
    const auto& cx = rep.pair;
    CHECK(oracle::parity(cx.word_a) != oracle::parity(cx.word_b));
    CHECK(cx.member_a == oracle::parity(cx.word_a));
    CHECK(cx.member_b == oracle::parity(cx.word_b));
    CHECK(rs::accepts(ct, fixtures::to_symbols(ct, cx.word_a)) == rs::accepts(ct, fixtures::to_symbols(ct, cx.word_b)));
    std::size_t diff = 0;
    for (std::size_t k = 0; k < cx.word_a.size(); ++k) diff += cx.word_a[k] != cx.word_b[k];
    CHECK(diff == 1);
  }
}
