#pragma once

// Formal languages, their generative processes and exact next-symbol laws.
//
// Words are plain strings of single-character symbols. The end-of-sequence
// marker is '$' and never occurs inside a word.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attnlimits/common.hpp"

namespace attnlimits::langs {

inline constexpr char kEos = '$';

struct Alphabet {
  std::vector<char> symbols;  // includes eos
  char eos = kEos;

  int index_of(char s) const;  // -1 when absent
  bool contains(char s) const { return index_of(s) >= 0; }
  std::size_t size() const { return symbols.size(); }
  // Symbols a word position may hold (everything except eos).
  std::vector<char> word_symbols() const;
};

enum class Language { parity, dyck1, dyck2, ones_star, anbn };

Language parse_language(std::string_view name);
std::string_view language_name(Language lang);
Alphabet alphabet_for(Language lang);

// Probability assignment over an alphabet including the eos symbol.
struct NextSymbolDist {
  std::vector<char> symbols;
  std::vector<double> probs;

  double prob(char s) const;
  double total() const;
};

// Total-variation distance between two distributions over the same symbols.
double total_variation(const NextSymbolDist& a, const NextSymbolDist& b);
double entropy(const NextSymbolDist& d);

bool parity_member(std::string_view word);
bool dyck_member(std::string_view word, int kinds);
bool ones_star_member(std::string_view word);
bool anbn_member(std::string_view word);
bool is_member(Language lang, std::string_view word);

// Membership via the height counter (1DYCK only); independent of the stack.
bool dyck1_member_by_counter(std::string_view word);

NextSymbolDist parity_next_dist(std::string_view prefix, double p);
// Pending-closer stack argument over the grammar S -> (S)S | [S]S | eps.
// With kinds = 1 the grammar is S -> (S)S | eps and '(' carries all of p.
NextSymbolDist dyck_next_dist(std::string_view prefix, double p, int kinds = 2);
NextSymbolDist next_dist(Language lang, std::string_view prefix, double p);

// Generative processes. Dyck words are drawn by leftmost grammar expansion;
// draws longer than max_len are rejected and redrawn.
std::string sample_parity(double p, Rng& rng);
std::string sample_dyck(double p, Rng& rng, int kinds = 2, std::size_t max_len = 1u << 20);
std::string sample_parity(double p, std::uint64_t seed);
std::string sample_dyck(double p, std::uint64_t seed, int kinds = 2);

// Exact sampler for length-n prefixes of words drawn from the process,
// conditioned on the word having at least n symbols. Conditioning is done
// with backward survival weights, so no rejection is involved.
class PrefixSampler {
 public:
  PrefixSampler(Language lang, double p, std::size_t n);
  std::string sample(Rng& rng) const;
  std::size_t length() const { return n_; }

 private:
  Language lang_;
  double p_;
  std::size_t n_;
  int kinds_ = 2;
  // survival_[m][state], normalized per m; state = parity bit or height.
  std::vector<std::vector<double>> survival_;
};

// Probability that a conditioned length-n PARITY prefix has an even count.
double parity_even_probability(double p, std::size_t n);
// Exact law of the height of a conditioned length-n Dyck prefix.
std::vector<double> dyck_height_distribution(double p, std::size_t n);
// Exact P(prefix unbalanced and last symbol a closer) for conditioned prefixes.
double dyck_p0_exact(double p, std::size_t n);

struct HeightChainStats {
  double p = 0.5;
  int truncation_height = 16;  // states 0, 2, ..., 2 * truncation_height
  std::vector<double> stationary;  // stationary[i] = pi(height 2i)
  double leakage = 0.0;            // stationary mass on the truncation boundary
  std::string warning;
  std::size_t n_probe = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double p0_lower = 0.0;
  double p0_stderr = 0.0;
};

// Stationary law of the even-step height chain of the non-terminating
// pushdown process (at height 0 an opener is emitted with certainty), plus a
// Monte-Carlo estimate of P0 over conditioned prefixes of length n_probe.
HeightChainStats height_chain_stats(double p, int truncation_height, std::size_t n_probe,
                                    std::size_t samples, std::uint64_t seed);

struct UnigramEstimate {
  NextSymbolDist dist;
  std::vector<double> stderr_;
  std::size_t symbols = 0;
  std::uint64_t seed = 0;
};

// Long-run symbol frequencies (eos included once per word) from sampled words.
UnigramEstimate unigram_dist(Language lang, double p, std::size_t symbol_budget, std::uint64_t seed);
// Closed form; for Dyck it requires p < 1/2 (finite expected length).
NextSymbolDist unigram_dist_exact(Language lang, double p);

enum class SampleMode { process, uniform };

struct DatasetRecord {
  std::string word;
  Language language = Language::parity;
  bool label = false;
  std::uint64_t seed = 0;
};

// process: words from the generative process (parity, dyck1, dyck2), length <= max_len.
// uniform: length uniform in [0, max_len], symbols uniform, labelled by membership.
std::vector<DatasetRecord> generate_dataset(Language lang, SampleMode mode, double p, std::size_t count,
                                            std::size_t max_len, std::uint64_t seed);

void check_probability(double p, const char* name);

}  // namespace attnlimits::langs
