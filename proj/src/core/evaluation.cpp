#include "attnlimits/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "attnlimits/sensitivity.hpp"

namespace attnlimits::evaluation {

langs::NextSymbolDist next_from_output(const tf::Model& model, const Vec& final_activation) {
  tf::ForwardTrace trace;
  trace.output = final_activation;
  return tf::predict_next(model, trace);
}

Predictor model_predictor(const tf::Model& model) {
  return [&model](const std::string& prefix) {
    return tf::predict_next(model, tf::forward(model, prefix, tf::TraceDetail::final_only));
  };
}

Predictor oracle_predictor(langs::Language lang, double p) {
  langs::check_probability(p, "p");
  return [lang, p](const std::string& prefix) { return langs::next_dist(lang, prefix, p); };
}

Predictor uniform_predictor(const langs::Alphabet& alphabet) {
  const langs::NextSymbolDist d{alphabet.symbols,
                                std::vector<double>(alphabet.size(), 1.0 / static_cast<double>(alphabet.size()))};
  return [d](const std::string&) { return d; };
}

namespace {

double loss(double prob, bool& capped) {
  if (!(prob > 0.0)) {
    capped = true;
    return kCeCap;
  }
  const double l = -std::log(prob);
  if (l > kCeCap) {
    capped = true;
    return kCeCap;
  }
  capped = false;
  return l;
}

struct MeanVar {
  double mean = 0.0, stderr_ = 0.0;
};

MeanVar summarize(const std::vector<double>& x) {
  MeanVar r;
  if (x.empty()) return r;
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += v;
  r.mean = s / n;
  double ss = 0.0;
  for (double v : x) ss += (v - r.mean) * (v - r.mean);
  r.stderr_ = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return r;
}

char bracket_class(char s) {
  if (s == '(' || s == '[') return 'o';
  if (s == ')' || s == ']') return 'c';
  return s;
}

void check_language(langs::Language lang) {
  if (lang != langs::Language::parity && lang != langs::Language::dyck2 && lang != langs::Language::dyck1)
    fail(ErrorKind::input, "cross-entropy evaluation supports parity, dyck1 and dyck2");
}

// Draws (prefix, next symbol) pairs: prefix from the conditioned prefix law,
// next symbol from the oracle continuation.
struct Draw {
  std::string prefix;
  char next = 0;
};

std::vector<Draw> draws(langs::Language lang, std::size_t n, double p, std::size_t samples, std::uint64_t seed,
                        unsigned threads) {
  const langs::PrefixSampler sampler(lang, p, n);
  std::vector<Draw> out(samples);
  parallel_for(samples, threads, [&](std::size_t s) {
    Rng rng(derive_seed(seed, s));
    out[s].prefix = sampler.sample(rng);
    const auto d = langs::next_dist(lang, out[s].prefix, p);
    const double u = uniform01(rng);
    double acc = 0.0;
    out[s].next = d.symbols.back();
    for (std::size_t k = 0; k < d.symbols.size(); ++k) {
      acc += d.probs[k];
      if (u < acc && d.probs[k] > 0.0) {
        out[s].next = d.symbols[k];
        break;
      }
    }
  });
  return out;
}

}  // namespace

double parity_optimal_ce(double p, std::size_t n) {
  const double even = langs::parity_even_probability(p, n);
  const langs::NextSymbolDist de = langs::parity_next_dist("", p);
  return even * langs::entropy(de) + (1.0 - even) * std::log(2.0);
}

CEReport model_ce(const Predictor& predictor, langs::Language lang, std::size_t n, std::size_t samples, double p,
                  std::uint64_t seed, unsigned threads) {
  check_language(lang);
  langs::check_probability(p, "p");
  if (samples == 0) fail(ErrorKind::input, "samples must be positive");
  CEReport r;
  r.language = lang;
  r.n = n;
  r.p = p;
  r.samples = samples;
  r.seed = seed;

  langs::NextSymbolDist uni;
  const bool exact_uni = lang == langs::Language::parity || p < 0.5;
  if (exact_uni) {
    uni = langs::unigram_dist_exact(lang, p);
    r.unigram_source = "exact";
  } else {
    uni = langs::unigram_dist(lang, p, 1000000, derive_seed(seed, "unigram")).dist;
    r.unigram_source = "monte-carlo";
  }

  const auto ds = draws(lang, n, p, samples, derive_seed(seed, "draws"), threads);
  std::vector<double> lm(samples), lo(samples), lu(samples), lg(samples), lc(samples), lt(samples);
  std::vector<char> capped(samples, 0);
  parallel_for(samples, threads, [&](std::size_t s) {
    const auto q = predictor(ds[s].prefix);
    const auto o = langs::next_dist(lang, ds[s].prefix, p);
    const char x = ds[s].next;
    bool cm = false, dummy = false;
    lm[s] = loss(q.prob(x), cm);
    lo[s] = loss(o.prob(x), dummy);
    lu[s] = loss(uni.prob(x), dummy);
    lg[s] = lm[s] - lo[s];
    capped[s] = cm;
    // Class / type split: -log q(x) = -log q(class) - log q(x | class).
    const char cls = bracket_class(x);
    double pc = 0.0;
    for (std::size_t k = 0; k < q.symbols.size(); ++k)
      if (bracket_class(q.symbols[k]) == cls) pc += q.probs[k];
    if (cm || !(pc > 0.0)) {
      lc[s] = lm[s];
      lt[s] = 0.0;
    } else {
      lc[s] = -std::log(pc);
      lt[s] = lm[s] - lc[s];
    }
  });
  const auto m = summarize(lm), o = summarize(lo), u = summarize(lu), g = summarize(lg);
  r.model_ce = m.mean;
  r.stderr_ = m.stderr_;
  r.optimal_ce = o.mean;
  r.optimal_stderr = o.stderr_;
  r.unigram_ce = u.mean;
  r.unigram_stderr = u.stderr_;
  r.gap = g.mean;
  r.gap_stderr = g.stderr_;
  r.class_ce = summarize(lc).mean;
  r.type_ce = summarize(lt).mean;
  r.capped = static_cast<std::size_t>(std::count(capped.begin(), capped.end(), 1));
  if (lang == langs::Language::parity) r.optimal_closed_form = parity_optimal_ce(p, n);
  return r;
}

OptimalCE optimal_ce(langs::Language lang, std::size_t n, double p, std::size_t samples, std::uint64_t seed,
                     unsigned threads) {
  check_language(lang);
  langs::check_probability(p, "p");
  if (samples == 0) fail(ErrorKind::input, "samples must be positive");
  const auto ds = draws(lang, n, p, samples, derive_seed(seed, "draws"), threads);
  std::vector<double> l(samples);
  parallel_for(samples, threads, [&](std::size_t s) {
    bool capped = false;
    l[s] = loss(langs::next_dist(lang, ds[s].prefix, p).prob(ds[s].next), capped);
  });
  const auto m = summarize(l);
  OptimalCE r;
  r.value = m.mean;
  r.stderr_ = m.stderr_;
  r.samples = samples;
  r.seed = seed;
  if (lang == langs::Language::parity) r.closed_form = parity_optimal_ce(p, n);
  return r;
}

double ce_gap_bound(double p, double p0) {
  langs::check_probability(p, "p");
  if (p0 < 0.0 || p0 > 1.0) fail(ErrorKind::config, "P0 must lie in [0, 1]");
  return p0 * (1.0 - p) * std::log(2.0);
}

double ce_gap_bound_bits(double p, double p0) { return ce_gap_bound(p, p0) / std::log(2.0); }

TVReport parity_pair_tv(const tf::Model& model, std::size_t n, std::size_t trials, std::uint64_t seed,
                        unsigned threads) {
  if (n == 0) fail(ErrorKind::input, "n must be positive");
  if (trials == 0) fail(ErrorKind::input, "trials must be positive");
  const auto syms = model.params.vocabulary.word_symbols();
  if (syms.size() != 2 || syms[0] != '0' || syms[1] != '1') fail(ErrorKind::input, "parity model needs symbols 0, 1");
  TVReport r;
  r.n = n;
  r.seed = seed;
  double sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    std::string word(n, '0');
    for (auto& c : word) c = uniform01(rng) < 0.5 ? '0' : '1';
    const sensitivity::FlipEvaluator fe(model, word);
    const auto base = next_from_output(model, fe.base_output());
    std::vector<double> tv(n);
    parallel_for(n, threads, [&](std::size_t i) {
      const auto flipped = next_from_output(model, fe.flipped_output(i, word[i] == '0' ? '1' : '0'));
      tv[i] = langs::total_variation(base, flipped);
    });
    for (double v : tv) {
      sum += v;
      r.max = std::max(r.max, v);
    }
    r.pairs += n;
  }
  r.mean = sum / static_cast<double>(r.pairs);
  return r;
}

std::string ce_csv(const std::vector<CEReport>& reports) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n,model_ce,optimal_ce,unigram_ce,gap,stderr,gap_stderr,samples,capped\n";
  for (const auto& r : reports)
    os << r.n << ',' << r.model_ce << ',' << r.optimal_ce << ',' << r.unigram_ce << ',' << r.gap << ',' << r.stderr_
       << ',' << r.gap_stderr << ',' << r.samples << ',' << r.capped << '\n';
  return os.str();
}

}  // namespace attnlimits::evaluation
