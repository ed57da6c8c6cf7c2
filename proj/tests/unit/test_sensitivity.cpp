#include <doctest.h>

#include <cmath>

#include "attnlimits/sensitivity.hpp"
#include "unit/fixtures.hpp"
#include "unit/oracles.hpp"

namespace tf = attnlimits::tf;
namespace sens = attnlimits::sensitivity;
using attnlimits::ErrorKind;
using attnlimits::Mat;
using attnlimits::Vec;

namespace {

std::string random_bits(std::size_t n, attnlimits::Rng& rng) {
  std::string w;
  for (std::size_t k = 0; k < n; ++k) w.push_back(rng() % 2 ? '1' : '0');
  return w;
}

char other(char c) { return c == '0' ? '1' : '0'; }

}  // namespace

TEST_SUITE("sensitivity") {
  TEST_CASE("spectral norm agrees with the SVD") {
    attnlimits::Rng rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < 40; ++t) {
      const int r = 1 + static_cast<int>(rng() % 9), c = 1 + static_cast<int>(rng() % 9);
      Mat a(r, c);
      for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = g(rng);
      const double want = oracle::svd_norm(a);
      CHECK(sens::spectral_norm(a) == doctest::Approx(want).epsilon(1e-6));
    }
    for (const auto& m : fixtures::all_soft())
      for (const auto& layer : m.params.layers) {
        CHECK(sens::spectral_norm(layer.ffn.w1) == doctest::Approx(oracle::svd_norm(layer.ffn.w1)).epsilon(1e-6));
        CHECK(sens::spectral_norm(layer.ffn.w2) == doctest::Approx(oracle::svd_norm(layer.ffn.w2)).epsilon(1e-6));
      }
    CHECK(sens::spectral_norm(Mat::Zero(3, 2)) == 0.0);
    Mat bad = Mat::Identity(2, 2);
    bad(0, 1) = std::nan("");
    try {
      sens::spectral_norm(bad);
      FAIL("no error");
    } catch (const attnlimits::Error& e) {
      CHECK(e.kind() == ErrorKind::numeric);
    }
  }

  TEST_CASE("incremental flips match full forward passes") {
    attnlimits::Rng rng(5);
    for (const auto& name : fixtures::soft_names()) {
      CAPTURE(name);
      const auto m = fixtures::soft(name);
      for (std::size_t n : {1, 7, 20}) {
        const auto w = random_bits(n, rng);
        const sens::FlipEvaluator fe(m, w);
        CHECK(fe.length() == n);
        CHECK((fe.base_output() - tf::forward(m, w).output).norm() <= 1e-12);
        for (std::size_t i = 0; i < n; ++i) {
          auto v = w;
          v[i] = other(v[i]);
          const Vec full = tf::forward(m, v).output;
          CHECK((fe.flipped_output(i, v[i]) - full).norm() <= 1e-10 * (1.0 + full.norm()));
        }
      }
    }
  }

  TEST_CASE("perturb_pair per layer and position") {
    const auto m = fixtures::soft("soft_l2_h2_dot_concat");
    const std::string w = "0110101101";
    const auto d = sens::perturb_pair(m, w, 3, '1');
    REQUIRE(d.size() == 3);
    REQUIRE(d[0].size() == w.size() + 1);
    for (std::size_t j = 0; j < d[0].size(); ++j) {
      if (j == 3) {
        const Vec e0 = m.params.token_embeddings.row(m.params.vocabulary.index_of('0')).transpose();
        const Vec e1 = m.params.token_embeddings.row(m.params.vocabulary.index_of('1')).transpose();
        // concat: the token half differs, the positional half does not
        CHECK(d[0][j] == doctest::Approx((e0 - e1).norm()).epsilon(1e-12));
      } else {
        CHECK(d[0][j] == 0.0);
      }
    }
    auto v = w;
    v[3] = '1';
    const Vec a = tf::forward(m, w).output, b = tf::forward(m, v).output;
    CHECK(d[2].back() == doctest::Approx((a - b).norm()).epsilon(1e-12));
    CHECK(d[2].back() > 0.0);
  }

  TEST_CASE("the certified bound dominates measured influence") {
    attnlimits::Rng rng(9);
    for (const auto& name : fixtures::soft_names()) {
      CAPTURE(name);
      const auto m = fixtures::soft(name);
      for (std::size_t n : {4, 16, 64}) {
        const auto b = sens::analytic_bound(m, n);
        REQUIRE(b.perturbed.size() == m.params.layers.size() + 1);
        CHECK(b.D == doctest::Approx(sens::embedding_difference(m)));
        for (int t = 0; t < 3; ++t) {
          const auto w = random_bits(n, rng);
          const std::size_t i = rng() % n;
          const auto d = sens::perturb_pair(m, w, i, other(w[i]));
          for (std::size_t k = 0; k < d.size(); ++k)
            for (std::size_t j = 0; j < d[k].size(); ++j) {
              const double bound = j == i ? b.perturbed[k] : b.other[k];
              CHECK(d[k][j] <= bound * (1.0 + 1e-9));
              CHECK(d[k][j] <= 2.0 * b.F_k[k] * (1.0 + 1e-9));
            }
        }
      }
    }
    CHECK_THROWS_AS(sens::analytic_bound(fixtures::hard_model(1, attnlimits::langs::Language::parity, 1), 8),
                    attnlimits::Error);
  }

  TEST_CASE("activation norm bounds hold") {
    attnlimits::Rng rng(10);
    for (const auto& m : fixtures::all_soft()) {
      const auto b = sens::analytic_bound(m, 32);
      const auto trace = tf::forward(m, random_bits(32, rng), tf::TraceDetail::activations);
      for (std::size_t k = 0; k < trace.activations.size(); ++k)
        for (Eigen::Index j = 0; j < trace.activations[k].cols(); ++j)
          CHECK(trace.activations[k].col(j).norm() <= b.F_k[k] * (1.0 + 1e-12));
    }
  }

  TEST_CASE("grid parsing") {
    CHECK(sens::parse_grid("16:128:x2") == std::vector<std::size_t>{16, 32, 64, 128});
    CHECK(sens::parse_grid("16:64:+16") == std::vector<std::size_t>{16, 32, 48, 64});
    CHECK(sens::parse_grid("3,5,9") == std::vector<std::size_t>{3, 5, 9});
    CHECK(sens::parse_grid("16:100:x2") == std::vector<std::size_t>{16, 32, 64});
    for (const char* bad : {"", "16:64", "16:64:y2", "a,b", "0,4", "16:64:x1"})
      CHECK_THROWS_AS(sens::parse_grid(bad), attnlimits::Error);
  }

  TEST_CASE("log-log slope") {
    std::vector<double> x, y;
    for (double v : {2.0, 4.0, 8.0, 16.0}) {
      x.push_back(v);
      y.push_back(3.0 * std::pow(v, -1.5));
    }
    CHECK(sens::loglog_slope(x, y) == doctest::Approx(-1.5).epsilon(1e-12));
    y[0] = 0.0;  // skipped
    CHECK(sens::loglog_slope(x, y) == doctest::Approx(-1.5).epsilon(1e-12));
  }

  TEST_CASE("decay sweep is reproducible and thread independent") {
    const auto m = fixtures::soft("soft_l1_h1_dot");
    const auto a = sens::decay_sweep(m, {8, 16, 32}, 2, 4, 1);
    const auto b = sens::decay_sweep(m, {8, 16, 32}, 2, 4, 3);
    CHECK(a.max_delta == b.max_delta);
    REQUIRE(a.max_delta.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a.max_delta[k] <= a.analytic_bound[k]);
    CHECK(std::isnan(a.slope_running[0]));
    CHECK(a.slope_running.back() == doctest::Approx(a.slope));
    const auto csv = sens::decay_csv(a);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  }

  TEST_CASE("softmax TV bound covers random perturbations") {
    attnlimits::Rng rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (const auto& m : fixtures::all_soft()) {
      const auto& head = m.params.next_head;
      for (double r : {1e-3, 0.05, 0.5}) {
        const double bound = sens::softmax_tv_bound(head, r);
        for (int t = 0; t < 50; ++t) {
          Vec y(head.weight.cols()), dy(head.weight.cols());
          for (Eigen::Index k = 0; k < y.size(); ++k) {
            y(k) = g(rng);
            dy(k) = g(rng);
          }
          dy *= r / dy.norm();
          auto p = [&](const Vec& v) {
            const Vec l = head.weight * v + head.bias;
            return tf::softmax(std::vector<double>(l.data(), l.data() + l.size()));
          };
          const auto pa = p(y), pb = p(y + dy);
          double tv = 0;
          for (std::size_t k = 0; k < pa.size(); ++k) tv += std::abs(pa[k] - pb[k]);
          CHECK(0.5 * tv <= bound * (1.0 + 1e-12));
        }
      }
    }
  }
}
