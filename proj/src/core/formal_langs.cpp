#include "attnlimits/formal_langs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace attnlimits::langs {

int Alphabet::index_of(char s) const {
  for (std::size_t i = 0; i < symbols.size(); ++i)
    if (symbols[i] == s) return static_cast<int>(i);
  return -1;
}

std::vector<char> Alphabet::word_symbols() const {
  std::vector<char> out;
  for (char s : symbols)
    if (s != eos) out.push_back(s);
  return out;
}

Language parse_language(std::string_view name) {
  if (name == "parity") return Language::parity;
  if (name == "dyck1") return Language::dyck1;
  if (name == "dyck2") return Language::dyck2;
  if (name == "ones_star") return Language::ones_star;
  if (name == "anbn") return Language::anbn;
  fail(ErrorKind::input, "unknown language '" + std::string(name) + "'");
}

std::string_view language_name(Language lang) {
  switch (lang) {
    case Language::parity: return "parity";
    case Language::dyck1: return "dyck1";
    case Language::dyck2: return "dyck2";
    case Language::ones_star: return "ones_star";
    case Language::anbn: return "anbn";
  }
  return "?";
}

Alphabet alphabet_for(Language lang) {
  switch (lang) {
    case Language::parity:
    case Language::ones_star: return {{'0', '1', kEos}, kEos};
    case Language::dyck1: return {{'(', ')', kEos}, kEos};
    case Language::dyck2: return {{'(', ')', '[', ']', kEos}, kEos};
    case Language::anbn: return {{'a', 'b', kEos}, kEos};
  }
  return {};
}

double NextSymbolDist::prob(char s) const {
  for (std::size_t i = 0; i < symbols.size(); ++i)
    if (symbols[i] == s) return probs[i];
  return 0.0;
}

double NextSymbolDist::total() const { return std::accumulate(probs.begin(), probs.end(), 0.0); }

double total_variation(const NextSymbolDist& a, const NextSymbolDist& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.symbols.size(); ++i) sum += std::abs(a.probs[i] - b.prob(a.symbols[i]));
  for (std::size_t i = 0; i < b.symbols.size(); ++i)
    if (std::find(a.symbols.begin(), a.symbols.end(), b.symbols[i]) == a.symbols.end()) sum += b.probs[i];
  return 0.5 * sum;
}

double entropy(const NextSymbolDist& d) {
  double h = 0.0;
  for (double q : d.probs)
    if (q > 0.0) h -= q * std::log(q);
  return h;
}

void check_probability(double p, const char* name) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::config, std::string(name) + " must lie in (0,1)");
}

namespace {

void require_symbols(std::string_view word, std::string_view allowed, const char* what) {
  for (char c : word)
    if (allowed.find(c) == std::string_view::npos)
      fail(ErrorKind::input, std::string("symbol '") + c + "' is not in the " + what + " alphabet");
}

char closer_for(char open) { return open == '(' ? ')' : ']'; }

// Pending closers after reading `prefix`; nullopt on underflow or mismatch.
std::optional<std::string> pending_closers(std::string_view prefix) {
  std::string stack;
  for (char c : prefix) {
    if (c == '(' || c == '[') {
      stack.push_back(closer_for(c));
    } else {
      if (stack.empty() || stack.back() != c) return std::nullopt;
      stack.pop_back();
    }
  }
  return stack;
}

}  // namespace

bool parity_member(std::string_view word) {
  require_symbols(word, "01", "parity");
  return std::count(word.begin(), word.end(), '1') % 2 == 0;
}

bool dyck_member(std::string_view word, int kinds) {
  if (kinds != 1 && kinds != 2) fail(ErrorKind::config, "dyck kinds must be 1 or 2");
  require_symbols(word, kinds == 1 ? "()" : "()[]", kinds == 1 ? "1dyck" : "2dyck");
  auto stack = pending_closers(word);
  return stack && stack->empty();
}

bool dyck1_member_by_counter(std::string_view word) {
  require_symbols(word, "()", "1dyck");
  long height = 0;
  for (char c : word) {
    height += c == '(' ? 1 : -1;
    if (height < 0) return false;
  }
  return height == 0;
}

bool ones_star_member(std::string_view word) {
  require_symbols(word, "01", "1*");
  return word.find('0') == std::string_view::npos;
}

bool anbn_member(std::string_view word) {
  require_symbols(word, "ab", "a^n b^n");
  const std::size_t n = word.size();
  if (n % 2 != 0) return false;
  for (std::size_t i = 0; i < n; ++i)
    if (word[i] != (i < n / 2 ? 'a' : 'b')) return false;
  return true;
}

bool is_member(Language lang, std::string_view word) {
  switch (lang) {
    case Language::parity: return parity_member(word);
    case Language::dyck1: return dyck_member(word, 1);
    case Language::dyck2: return dyck_member(word, 2);
    case Language::ones_star: return ones_star_member(word);
    case Language::anbn: return anbn_member(word);
  }
  return false;
}

NextSymbolDist parity_next_dist(std::string_view prefix, double p) {
  check_probability(p, "p");
  const bool even = parity_member(prefix);
  if (even) return {{'0', '1', kEos}, {(1.0 - p) / 2.0, (1.0 - p) / 2.0, p}};
  return {{'0', '1', kEos}, {0.5, 0.5, 0.0}};
}

NextSymbolDist dyck_next_dist(std::string_view prefix, double p, int kinds) {
  check_probability(p, "p");
  if (kinds != 1 && kinds != 2) fail(ErrorKind::config, "dyck kinds must be 1 or 2");
  require_symbols(prefix, kinds == 1 ? "()" : "()[]", kinds == 1 ? "1dyck" : "2dyck");
  auto stack = pending_closers(prefix);
  if (!stack) fail(ErrorKind::input, "'" + std::string(prefix) + "' is not a valid Dyck prefix");
  const char top = stack->empty() ? kEos : stack->back();
  if (kinds == 1) {
    NextSymbolDist d{{'(', ')', kEos}, {p, 0.0, 0.0}};
    d.probs[top == kEos ? 2 : 1] = 1.0 - p;
    return d;
  }
  NextSymbolDist d{{'(', ')', '[', ']', kEos}, {p / 2.0, 0.0, p / 2.0, 0.0, 0.0}};
  const int slot = top == ')' ? 1 : top == ']' ? 3 : 4;
  d.probs[slot] = 1.0 - p;
  return d;
}

NextSymbolDist next_dist(Language lang, std::string_view prefix, double p) {
  switch (lang) {
    case Language::parity: return parity_next_dist(prefix, p);
    case Language::dyck1: return dyck_next_dist(prefix, p, 1);
    case Language::dyck2: return dyck_next_dist(prefix, p, 2);
    default: fail(ErrorKind::unsupported, "no generative process for " + std::string(language_name(lang)));
  }
}

std::string sample_parity(double p, Rng& rng) {
  check_probability(p, "p");
  std::string word;
  bool even = true;
  for (;;) {
    double u = uniform01(rng);
    if (even) {
      if (u < p) return word;
      u = (u - p) / (1.0 - p);
    }
    const char bit = u < 0.5 ? '0' : '1';
    word.push_back(bit);
    if (bit == '1') even = !even;
  }
}

std::string sample_dyck(double p, Rng& rng, int kinds, std::size_t max_len) {
  check_probability(p, "p");
  enum Sym : char { S = 'S' };
  for (;;) {
    std::string word;
    std::string form{S};  // sentential form, leftmost symbol at the back
    bool too_long = false;
    while (!form.empty()) {
      const char top = form.back();
      form.pop_back();
      if (top != S) {
        word.push_back(top);
        continue;
      }
      const double u = uniform01(rng);
      if (u >= p) continue;  // S -> eps
      const bool round = kinds == 1 || u < p / 2.0;
      // S -> (S)S : emit the opener, then S, closer, S remain (leftmost last).
      form.push_back(S);
      form.push_back(round ? ')' : ']');
      form.push_back(S);
      word.push_back(round ? '(' : '[');
      if (word.size() > max_len) {
        too_long = true;
        break;
      }
    }
    if (!too_long) return word;
  }
}

std::string sample_parity(double p, std::uint64_t seed) {
  Rng rng(seed);
  return sample_parity(p, rng);
}

std::string sample_dyck(double p, std::uint64_t seed, int kinds) {
  Rng rng(seed);
  return sample_dyck(p, rng, kinds);
}

namespace {

void normalize_max(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (m > 0.0)
    for (double& x : v) x /= m;
}

}  // namespace

PrefixSampler::PrefixSampler(Language lang, double p, std::size_t n) : lang_(lang), p_(p), n_(n) {
  check_probability(p, "p");
  if (lang == Language::parity) {
    survival_.assign(n + 1, std::vector<double>(2, 1.0));
    for (std::size_t m = 1; m <= n; ++m) {
      const auto& prev = survival_[m - 1];
      const double both = prev[0] + prev[1];
      survival_[m] = {(1.0 - p) / 2.0 * both, 0.5 * both};
      normalize_max(survival_[m]);
    }
  } else if (lang == Language::dyck1 || lang == Language::dyck2) {
    kinds_ = lang == Language::dyck1 ? 1 : 2;
    survival_.assign(n + 1, std::vector<double>(n + 2, 1.0));
    for (std::size_t m = 1; m <= n; ++m) {
      const auto& prev = survival_[m - 1];
      auto& cur = survival_[m];
      for (std::size_t h = 0; h + 1 < cur.size(); ++h)
        cur[h] = p * prev[h + 1] + (h > 0 ? (1.0 - p) * prev[h - 1] : 0.0);
      cur.back() = 0.0;
      normalize_max(cur);
    }
  } else {
    fail(ErrorKind::unsupported, "no generative process for " + std::string(language_name(lang)));
  }
}

std::string PrefixSampler::sample(Rng& rng) const {
  std::string out;
  out.reserve(n_);
  if (lang_ == Language::parity) {
    int state = 0;  // 0 even, 1 odd
    for (std::size_t t = 0; t < n_; ++t) {
      const auto& w = survival_[n_ - t - 1];
      const double stay = (state == 0 ? (1.0 - p_) / 2.0 : 0.5) * w[state];
      const double flip = (state == 0 ? (1.0 - p_) / 2.0 : 0.5) * w[1 - state];
      if (uniform01(rng) * (stay + flip) < stay) {
        out.push_back('0');
      } else {
        out.push_back('1');
        state = 1 - state;
      }
    }
    return out;
  }
  std::string stack;
  for (std::size_t t = 0; t < n_; ++t) {
    const auto& w = survival_[n_ - t - 1];
    const std::size_t h = stack.size();
    const double up = p_ * w[h + 1];
    const double down = h > 0 ? (1.0 - p_) * w[h - 1] : 0.0;
    const double u = uniform01(rng) * (up + down);
    if (u < up) {
      const bool round = kinds_ == 1 || uniform01(rng) < 0.5;
      out.push_back(round ? '(' : '[');
      stack.push_back(round ? ')' : ']');
    } else {
      out.push_back(stack.back());
      stack.pop_back();
    }
  }
  return out;
}

double parity_even_probability(double p, std::size_t n) {
  check_probability(p, "p");
  double even = 1.0, odd = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double e = even * (1.0 - p) / 2.0 + odd / 2.0;
    const double o = even * (1.0 - p) / 2.0 + odd / 2.0;
    even = e / (e + o);
    odd = o / (e + o);
  }
  return even;
}

namespace {

// Unnormalized-then-rescaled forward law of heights after `steps` emissions.
std::vector<double> height_forward(double p, std::size_t steps) {
  std::vector<double> f(steps + 2, 0.0);
  f[0] = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> g(f.size(), 0.0);
    for (std::size_t h = 0; h + 1 < f.size(); ++h) {
      if (f[h] == 0.0) continue;
      g[h + 1] += f[h] * p;
      if (h > 0) g[h - 1] += f[h] * (1.0 - p);
    }
    const double total = std::accumulate(g.begin(), g.end(), 0.0);
    for (double& x : g) x /= total;
    f.swap(g);
  }
  return f;
}

}  // namespace

std::vector<double> dyck_height_distribution(double p, std::size_t n) {
  check_probability(p, "p");
  auto f = height_forward(p, n);
  f.resize(n + 1);
  return f;
}

double dyck_p0_exact(double p, std::size_t n) {
  check_probability(p, "p");
  if (n == 0) return 0.0;
  const auto f = height_forward(p, n - 1);
  double total = 0.0, closing_unbalanced = 0.0;
  for (std::size_t h = 0; h < f.size(); ++h) {
    total += f[h] * (p + (h > 0 ? 1.0 - p : 0.0));
    if (h >= 2) closing_unbalanced += f[h] * (1.0 - p);
  }
  return closing_unbalanced / total;
}

HeightChainStats height_chain_stats(double p, int truncation_height, std::size_t n_probe, std::size_t samples,
                                    std::uint64_t seed) {
  check_probability(p, "p");
  if (truncation_height < 16) fail(ErrorKind::config, "truncation_height must be >= 16");
  HeightChainStats stats;
  stats.p = p;
  stats.n_probe = n_probe;
  stats.samples = samples;
  stats.seed = seed;

  constexpr double kLeakageLimit = 1e-6;
  constexpr int kMaxTruncation = 1 << 14;
  int trunc = truncation_height;
  for (;;) {
    // Even-step chain is birth-death on heights 0,2,...: solve detailed balance.
    std::vector<double> pi(static_cast<std::size_t>(trunc) + 1);
    pi[0] = 1.0;
    for (int i = 0; i < trunc; ++i) {
      const double up = i == 0 ? p : p * p;
      const double down = (1.0 - p) * (1.0 - p);
      pi[i + 1] = pi[i] * up / down;
    }
    const double total = std::accumulate(pi.begin(), pi.end(), 0.0);
    for (double& x : pi) x /= total;
    stats.truncation_height = trunc;
    stats.leakage = pi.back();
    stats.stationary = std::move(pi);
    if (stats.leakage <= kLeakageLimit) break;
    if (trunc >= kMaxTruncation) {
      stats.warning = "truncation leakage " + std::to_string(stats.leakage) + " exceeds 1e-6 at height " +
                      std::to_string(2 * trunc) + "; the chain has no summable stationary law at this p";
      break;
    }
    trunc *= 2;
  }

  if (samples > 0) {
    PrefixSampler sampler(Language::dyck2, p, n_probe);
    Rng rng(seed);
    std::size_t hits = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      const std::string x = sampler.sample(rng);
      if (x.empty()) continue;
      const char last = x.back();
      const bool closing = last == ')' || last == ']';
      long height = 0;
      for (char c : x) height += (c == '(' || c == '[') ? 1 : -1;
      if (closing && height > 0) ++hits;
    }
    const double est = static_cast<double>(hits) / static_cast<double>(samples);
    stats.p0_lower = est;
    stats.p0_stderr = std::sqrt(est * (1.0 - est) / static_cast<double>(samples));
  }
  return stats;
}

UnigramEstimate unigram_dist(Language lang, double p, std::size_t symbol_budget, std::uint64_t seed) {
  check_probability(p, "p");
  const Alphabet alpha = alphabet_for(lang);
  if (lang != Language::parity && lang != Language::dyck2 && lang != Language::dyck1)
    fail(ErrorKind::unsupported, "unigram distribution needs a generative process");
  Rng rng(seed);
  const std::size_t k = alpha.size();
  std::vector<double> totals(k, 0.0), sq(k, 0.0), cross(k, 0.0);
  double len_sum = 0.0, len_sq = 0.0;
  std::size_t words = 0, symbols = 0;
  constexpr std::size_t kWordCap = 1u << 16;
  while (symbols < symbol_budget) {
    const std::string w = lang == Language::parity ? sample_parity(p, rng)
                                                   : sample_dyck(p, rng, lang == Language::dyck1 ? 1 : 2, kWordCap);
    std::vector<double> counts(k, 0.0);
    for (char c : w) counts[static_cast<std::size_t>(alpha.index_of(c))] += 1.0;
    counts[static_cast<std::size_t>(alpha.index_of(alpha.eos))] += 1.0;
    const double len = static_cast<double>(w.size() + 1);
    for (std::size_t i = 0; i < k; ++i) {
      totals[i] += counts[i];
      sq[i] += counts[i] * counts[i];
      cross[i] += counts[i] * len;
    }
    len_sum += len;
    len_sq += len * len;
    symbols += w.size() + 1;
    ++words;
  }
  UnigramEstimate est;
  est.seed = seed;
  est.symbols = symbols;
  est.dist.symbols = alpha.symbols;
  const double nw = static_cast<double>(words);
  const double mean_len = len_sum / nw;
  for (std::size_t i = 0; i < k; ++i) {
    const double f = totals[i] / len_sum;
    est.dist.probs.push_back(f);
    // Ratio-estimator variance: Var(c - f * len) / (N * mean_len^2).
    const double var = (sq[i] - 2.0 * f * cross[i] + f * f * len_sq) / nw;
    est.stderr_.push_back(std::sqrt(std::max(0.0, var) / nw) / mean_len);
  }
  return est;
}

NextSymbolDist unigram_dist_exact(Language lang, double p) {
  check_probability(p, "p");
  switch (lang) {
    case Language::parity: {
      // Expected length from the even state is 2(1-p)/p; eos once per word.
      const double bit = (1.0 - p) / (2.0 - p);
      return {{'0', '1', kEos}, {bit, bit, p / (2.0 - p)}};
    }
    case Language::dyck2:
    case Language::dyck1: {
      if (p >= 0.5) fail(ErrorKind::config, "Dyck unigram closed form needs p < 1/2");
      if (lang == Language::dyck1) return {{'(', ')', kEos}, {p, p, 1.0 - 2.0 * p}};
      return {{'(', ')', '[', ']', kEos}, {p / 2.0, p / 2.0, p / 2.0, p / 2.0, 1.0 - 2.0 * p}};
    }
    default: fail(ErrorKind::unsupported, "unigram distribution needs a generative process");
  }
}

std::vector<DatasetRecord> generate_dataset(Language lang, SampleMode mode, double p, std::size_t count,
                                            std::size_t max_len, std::uint64_t seed) {
  std::vector<DatasetRecord> out;
  out.reserve(count);
  const Alphabet alpha = alphabet_for(lang);
  const auto word_syms = alpha.word_symbols();
  if (mode == SampleMode::process) {
    if (lang != Language::parity && lang != Language::dyck1 && lang != Language::dyck2)
      fail(ErrorKind::config, std::string(language_name(lang)) + " has no generative process; use uniform mode");
    check_probability(p, "p");
  }
  for (std::size_t r = 0; r < count; ++r) {
    DatasetRecord rec;
    rec.language = lang;
    rec.seed = derive_seed(seed, static_cast<std::uint64_t>(r));
    Rng rng(rec.seed);
    if (mode == SampleMode::process) {
      do {
        rec.word = lang == Language::parity ? sample_parity(p, rng)
                                            : sample_dyck(p, rng, lang == Language::dyck1 ? 1 : 2, max_len);
      } while (rec.word.size() > max_len);
    } else {
      const std::size_t len = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(max_len + 1));
      for (std::size_t i = 0; i < len; ++i)
        rec.word.push_back(word_syms[static_cast<std::size_t>(uniform01(rng) * word_syms.size())]);
    }
    rec.label = is_member(lang, rec.word);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace attnlimits::langs
