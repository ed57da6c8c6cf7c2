#include "attnlimits/constructions.hpp"

#include <algorithm>
#include <mutex>

namespace attnlimits::constructions {




namespace {

tf::Model blank(const tf::ModelConfig& cfg, langs::Alphabet vocab) {
  tf::Model m;
  m.config = cfg;
  m.params.vocabulary = std::move(vocab);
  const Eigen::Index w = cfg.width();
  const auto v = static_cast<Eigen::Index>(m.params.vocabulary.size());
  m.params.token_embeddings = Mat::Zero(v, cfg.model_dim);
  for (int l = 0; l < cfg.num_layers; ++l) {
    tf::LayerParams layer;
    for (int h = 0; h < cfg.num_heads; ++h)
      layer.heads.push_back({Mat::Zero(cfg.key_dim, w), Mat::Zero(cfg.key_dim, w), Vec()});
    layer.ffn = {Mat::Zero(cfg.ff_hidden_dim, w * (1 + cfg.num_heads)), Vec::Zero(cfg.ff_hidden_dim),
                 Mat::Zero(w, cfg.ff_hidden_dim), Vec::Zero(w)};
    m.params.layers.push_back(std::move(layer));
  }
  m.params.label_head = {Mat::Zero(2, w), Vec::Zero(2)};
  m.params.next_head = {Mat::Zero(v, w), Vec::Zero(v)};
  return m;
}

// Label logit for class 1 is beta * (0.5 - y[dim]); class 0 logit is 0.
void reject_if_positive(tf::Model& m, int dim, double beta) {
  m.params.label_head.weight(1, dim) = -beta;
  m.params.label_head.bias(1) = 0.5 * beta;
}

}  // namespace

tf::Model build_ones_star() {
  tf::ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = 1;
  cfg.model_dim = 3;
  cfg.ff_hidden_dim = 1;
  cfg.key_dim = 1;
  cfg.weighting = tf::Weighting::hard;
  cfg.combine = tf::Combine::concat;
  cfg.positional = {tf::PositionalKind::custom, 0, "index_one", 10000.0};
  tf::Model m = blank(cfg, langs::alphabet_for(langs::Language::ones_star));
  // dims: 0 is_zero, 1 is_one, 2 is_eos | 3 position, 4 constant, 5 zero-flag
  m.params.token_embeddings << 1, 0, 0,  //
      0, 1, 0,                           //
      0, 0, 1;
  auto& layer = m.params.layers[0];
  layer.heads[0].query(0, 4) = 1.0;  // score(i, j) = is_zero(j)
  layer.heads[0].key(0, 0) = 1.0;
  layer.ffn.w1(0, 6 + 0) = 1.0;  // attended is_zero
  layer.ffn.w2(5, 0) = 1.0;
  reject_if_positive(m, 5, 20.0);
  return m;
}

tf::Model build_anbn(std::size_t capacity) {
  tf::ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 1;
  cfg.model_dim = 5;
  cfg.ff_hidden_dim = 4;
  cfg.key_dim = 1;
  cfg.weighting = tf::Weighting::hard;
  cfg.combine = tf::Combine::concat;
  cfg.positional = {tf::PositionalKind::custom, capacity, "index_one_parity", 10000.0};
  tf::Model m = blank(cfg, langs::alphabet_for(langs::Language::anbn));
  // dims: 0 is_a, 1 is_b, 2 is_eos, 3 unused, 4 violation flag V
  //       5 position j, 6 constant, 7 j mod 2, 8 rejection D, 9 unused
  m.params.token_embeddings << 1, 0, 0, 0, 0,  //
      0, 1, 0, 0, 0,                           //
      0, 0, 1, 0, 0;
  const int w = cfg.width();
  const double big = 2.0 * static_cast<double>(capacity) + 2.0;

  // Layer 1: attend to the largest position (the end marker, at T = n + 1),
  // then flag b at 2j <= T - 1 and a at 2j >= T.
  auto& l1 = m.params.layers[0];
  l1.heads[0].query(0, 6) = 1.0;
  l1.heads[0].key(0, 5) = 1.0;
  const int t_in = w + 5;  // attended position = T
  auto& w1 = l1.ffn.w1;
  auto& b1 = l1.ffn.b1;
  w1(0, t_in) = 1; w1(0, 5) = -2; w1(0, 1) = big; b1(0) = -big;
  w1(1, t_in) = 1; w1(1, 5) = -2; w1(1, 1) = big; b1(1) = -big - 1;
  w1(2, t_in) = -1; w1(2, 5) = 2; w1(2, 0) = big; b1(2) = -big + 1;
  w1(3, t_in) = -1; w1(3, 5) = 2; w1(3, 0) = big; b1(3) = -big;
  l1.ffn.w2(4, 0) = 1; l1.ffn.w2(4, 1) = -1; l1.ffn.w2(4, 2) = 1; l1.ffn.w2(4, 3) = -1;

  // Layer 2: attend to the first flagged position; reject if it is flagged
  // or if T is even (odd word length).
  auto& l2 = m.params.layers[1];
  l2.heads[0].query(0, 6) = 1.0;
  l2.heads[0].key(0, 4) = 1.0;
  l2.ffn.w1(0, w + 4) = 1.0;
  l2.ffn.w1(1, 7) = -1.0;
  l2.ffn.b1(1) = 1.0;
  l2.ffn.w2(8, 0) = 1.0;
  l2.ffn.w2(8, 1) = 1.0;
  reject_if_positive(m, 8, 20.0);
  return m;
}

tf::Model build_parity_bounded(int N) {
  if (N < 1 || N > kParityMaxN)
    fail(ErrorKind::config, "parity length bound must lie in [1, " + std::to_string(kParityMaxN) + "]");
  tf::ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.model_dim = 3;
  cfg.ff_hidden_dim = N + 1;
  cfg.key_dim = 1;
  cfg.weighting = tf::Weighting::soft;
  cfg.combine = tf::Combine::add;
  cfg.positional = {tf::PositionalKind::custom, 0, "none", 10000.0};
  tf::Model m = blank(cfg, langs::alphabet_for(langs::Language::parity));
  // dims: 0 is_one, 1 is_eos, 2 comb output. Both heads are uniform, so
  // head 1 yields m = c / T and head 2 yields u = 1 / T.
  m.params.token_embeddings << 0, 0, 0,  //
      1, 0, 0,                           //
      0, 1, 0;
  const int w = cfg.width();
  const int m_in = w + 0;
  const int u_in = 2 * w + 1;
  auto& ffn = m.params.layers[0].ffn;
  // Comb over c: g(c) = 1 + sum_t s_t relu(c - t) is +1 at even and -1 at
  // odd integers in [0, N]; scaled by u it stays exact in the hidden units.
  ffn.w1(0, u_in) = 1.0;
  ffn.w2(2, 0) = 1.0;
  for (int t = 0; t < N; ++t) {
    ffn.w1(t + 1, m_in) = 1.0;
    ffn.w1(t + 1, u_in) = -static_cast<double>(t);
    ffn.w2(2, t + 1) = t == 0 ? -2.0 : (t % 2 == 1 ? 4.0 : -4.0);
  }
  const double beta = 100.0 * (N + 1);
  m.params.label_head.weight(1, 2) = beta;
  return m;
}

namespace {

std::string word_from_index(const std::vector<char>& syms, std::size_t len, std::size_t index) {
  std::string w(len, syms[0]);
  const std::size_t base = syms.size();
  for (std::size_t i = 0; i < len; ++i) {
    w[len - 1 - i] = syms[index % base];
    index /= base;
  }
  return w;
}

bool model_accepts(const tf::Model& model, const std::string& word) {
  const auto trace = tf::forward(model, word, tf::TraceDetail::final_only);
  return tf::accepts(tf::predict_label(model, trace));
}

std::string member_of_length(langs::Language lang, std::size_t n, Rng& rng, bool& exists) {
  exists = true;
  switch (lang) {
    case langs::Language::ones_star: return std::string(n, '1');
    case langs::Language::anbn:
      if (n % 2 == 1) {
        exists = false;
        return {};
      }
      return std::string(n / 2, 'a') + std::string(n / 2, 'b');
    case langs::Language::parity: {
      std::string w(n, '0');
      int ones = 0;
      for (auto& c : w)
        if (uniform01(rng) < 0.5) {
          c = '1';
          ++ones;
        }
      if (ones % 2 == 1) w[0] = w[0] == '1' ? '0' : '1';
      return w;
    }
    case langs::Language::dyck1:
    case langs::Language::dyck2: {
      if (n % 2 == 1) {
        exists = false;
        return {};
      }
      return std::string(n / 2, '(') + std::string(n / 2, ')');
    }
  }
  exists = false;
  return {};
}

}  // namespace

void verify_exhaustive(ConstructionReport& report, langs::Language lang, std::size_t upto, unsigned threads) {
  const auto syms = report.model.params.vocabulary.word_symbols();
  std::mutex mu;
  for (std::size_t len = 0; len <= upto; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= syms.size();
    parallel_for(total, threads, [&](std::size_t idx) {
      const std::string w = word_from_index(syms, len, idx);
      if (model_accepts(report.model, w) != langs::is_member(lang, w)) {
        std::lock_guard<std::mutex> lock(mu);
        report.failures.push_back(w);
      }
    });
    report.checked += total;
  }
  report.verified_upto = std::max(report.verified_upto, upto);
}

void verify_sampled(ConstructionReport& report, langs::Language lang, std::size_t n, std::size_t count,
                    std::uint64_t seed, unsigned threads) {
  const auto syms = report.model.params.vocabulary.word_symbols();
  std::vector<std::string> words(count);
  Rng rng(seed);
  for (std::size_t s = 0; s < count; ++s) {
    const int kind = s % 4;
    bool exists = false;
    std::string w = kind == 0 ? std::string() : member_of_length(lang, n, rng, exists);
    if (!exists) {
      w.assign(n, syms[0]);
      for (auto& c : w) c = syms[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(syms.size()))];
    } else if (kind >= 2 && n > 0) {
      const auto pos = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
      auto& c = w[pos];
      const auto cur = static_cast<std::size_t>(std::find(syms.begin(), syms.end(), c) - syms.begin());
      c = syms[(cur + 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(syms.size() - 1))) %
               syms.size()];
    }
    words[s] = std::move(w);
  }
  std::vector<char> wrong(count, 0);
  parallel_for(count, threads, [&](std::size_t s) {
    wrong[s] = model_accepts(report.model, words[s]) != langs::is_member(lang, words[s]);
  });
  for (std::size_t s = 0; s < count; ++s)
    if (wrong[s]) report.failures.push_back(words[s]);
  report.checked += count;
  report.sampled_upto = std::max(report.sampled_upto, n);
}

double sampled_accuracy(const tf::Model& model, langs::Language lang, std::size_t n, std::size_t count,
                        std::uint64_t seed, unsigned threads) {
  const auto syms = model.params.vocabulary.word_symbols();
  std::vector<char> right(count, 0);
  parallel_for(count, threads, [&](std::size_t s) {
    Rng rng(derive_seed(seed, s));
    std::string w(n, syms[0]);
    for (auto& c : w) c = syms[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(syms.size()))];
    right[s] = model_accepts(model, w) == langs::is_member(lang, w);
  });
  std::size_t hits = 0;
  for (char r : right) hits += r != 0;
  return static_cast<double>(hits) / static_cast<double>(count);
}

ConstructionReport build(const std::string& which, int N, std::size_t verify_upto, unsigned threads) {
  ConstructionReport report;
  report.which = which;
  langs::Language lang;
  if (which == "ones_star") {
    report.model = build_ones_star();
    lang = langs::Language::ones_star;
  } else if (which == "anbn") {
    report.model = build_anbn();
    lang = langs::Language::anbn;
  } else if (which == "parity") {
    report.model = build_parity_bounded(N);
    report.N = N;
    lang = langs::Language::parity;
    verify_upto = std::min<std::size_t>(verify_upto, static_cast<std::size_t>(N));
  } else {
    fail(ErrorKind::input, "unknown construction '" + which + "' (expected ones_star, anbn or parity)");
  }
  report.parameter_count = tf::parameter_count(report.model);
  if (verify_upto > 0 || which != "parity") verify_exhaustive(report, lang, verify_upto, threads);
  return report;
}

}  // namespace attnlimits::constructions
