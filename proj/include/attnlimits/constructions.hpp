#pragma once

// Hand-built recognizers: 1* and a^n b^n with hard attention, and a
// soft-attention PARITY model that is exact up to a length bound N.

#include <cstdint>
#include <string>
#include <vector>

#include "attnlimits/formal_langs.hpp"
#include "attnlimits/transformer.hpp"

namespace attnlimits::constructions {

inline constexpr int kParityMaxN = 64;
inline constexpr std::size_t kAnbnCapacity = 1u << 16;

struct ConstructionReport {
  tf::Model model;
  std::string which;
  int N = 0;                       // parity only
  std::size_t verified_upto = 0;   // exhaustive over all words with n <= this
  std::size_t sampled_upto = 0;    // largest sampled length
  std::size_t checked = 0;         // words compared
  std::vector<std::string> failures;
  std::size_t parameter_count = 0;
};

tf::Model build_ones_star();
// Positions beyond `capacity` tokens are rejected by the positional scheme.
tf::Model build_anbn(std::size_t capacity = kAnbnCapacity);
tf::Model build_parity_bounded(int N);

// Compares model acceptance with membership on every word of length <= upto.
void verify_exhaustive(ConstructionReport& report, langs::Language lang, std::size_t upto, unsigned threads = 1);

// Sampled comparison at length n: a quarter of the words uniform, a quarter
// members (when the language has members of that length) and the rest
// members with one symbol changed.
void verify_sampled(ConstructionReport& report, langs::Language lang, std::size_t n, std::size_t count,
                    std::uint64_t seed, unsigned threads = 1);

// Fraction of uniformly random length-n words the model labels correctly.
double sampled_accuracy(const tf::Model& model, langs::Language lang, std::size_t n, std::size_t count,
                        std::uint64_t seed, unsigned threads = 1);

// "ones_star", "anbn" or "parity" (with N); verifies exhaustively up to verify_upto.
ConstructionReport build(const std::string& which, int N, std::size_t verify_upto, unsigned threads = 1);

}  // namespace attnlimits::constructions
