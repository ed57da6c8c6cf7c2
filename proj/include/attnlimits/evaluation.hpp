#pragma once

// Next-symbol cross-entropy of a predictor on conditioned length-n prefixes,
// compared with the exact oracle and with the unigram baseline.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attnlimits/formal_langs.hpp"
#include "attnlimits/transformer.hpp"

namespace attnlimits::evaluation {

inline constexpr double kCeCap = 50.0;  // nats charged for a zero-probability symbol

// Maps a prefix (no end marker) to a next-symbol distribution.
using Predictor = std::function<langs::NextSymbolDist(const std::string& prefix)>;

// Runs the model on prefix + end marker and reads the next-symbol head at the
// final position.
Predictor model_predictor(const tf::Model& model);
Predictor oracle_predictor(langs::Language lang, double p);
Predictor uniform_predictor(const langs::Alphabet& alphabet);

langs::NextSymbolDist next_from_output(const tf::Model& model, const Vec& final_activation);

struct CEReport {
  langs::Language language = langs::Language::parity;
  std::size_t n = 0;
  double p = 0.5;
  double model_ce = 0.0;
  double optimal_ce = 0.0;          // Monte Carlo, same samples as model_ce
  double optimal_closed_form = -1;  // parity only; -1 when unavailable
  double unigram_ce = 0.0;
  double gap = 0.0;
  double stderr_ = 0.0;             // of model_ce
  double optimal_stderr = 0.0;
  double gap_stderr = 0.0;
  double unigram_stderr = 0.0;
  // Bracket class (open / close / end) and bracket type split of model_ce.
  double class_ce = 0.0;
  double type_ce = 0.0;
  std::size_t samples = 0;
  std::size_t capped = 0;  // samples charged kCeCap
  std::uint64_t seed = 0;
  std::string unigram_source;  // "exact" or "monte-carlo"
};

CEReport model_ce(const Predictor& predictor, langs::Language lang, std::size_t n, std::size_t samples, double p,
                  std::uint64_t seed, unsigned threads = 1);

struct OptimalCE {
  double value = 0.0;
  double stderr_ = 0.0;
  double closed_form = -1.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

OptimalCE optimal_ce(langs::Language lang, std::size_t n, double p, std::size_t samples, std::uint64_t seed,
                     unsigned threads = 1);
double parity_optimal_ce(double p, std::size_t n);

// P0 (1 - p) log 2, in nats and in bits.
double ce_gap_bound(double p, double p0);
double ce_gap_bound_bits(double p, double p0);

struct TVReport {
  std::size_t n = 0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t pairs = 0;
  std::uint64_t seed = 0;
};

// TV between next-symbol predictions on random bit strings and the same
// strings with one bit (any position before the end marker) flipped. Every
// position of each of the `trials` words is flipped.
TVReport parity_pair_tv(const tf::Model& model, std::size_t n, std::size_t trials, std::uint64_t seed,
                        unsigned threads = 1);

std::string ce_csv(const std::vector<CEReport>& reports);

}  // namespace attnlimits::evaluation
