#pragma once

// Input restrictions, c-transformers and the three-stage depth reduction for
// hard-attention models, plus brute-force dependency verification and the
// PARITY / 1DYCK counterexample search built on top of it.
//
// Word positions are 0-based (0..n-1); the end-of-sequence token sits at
// position n and is never restricted. Symbols are indices into the word
// alphabet (the vocabulary without the end marker).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attnlimits/formal_langs.hpp"
#include "attnlimits/transformer.hpp"

namespace attnlimits::restriction {

inline constexpr int kFree = -1;

struct Restriction {
  std::vector<int> assignment;  // kFree or a word-symbol index, one per word position

  static Restriction all_free(std::size_t n) { return {std::vector<int>(n, kFree)}; }
  std::size_t length() const { return assignment.size(); }
  bool is_free(std::size_t pos) const { return assignment[pos] == kFree; }
  std::size_t free_count() const;
  std::vector<std::size_t> free_positions() const;
  // '*' for free positions.
  std::string to_string(const std::vector<char>& word_symbols) const;
  // True when every position fixed here is fixed to the same symbol in `later`.
  bool refined_by(const Restriction& later) const;
};

Restriction parse_restriction(std::string_view pattern, const std::vector<char>& word_symbols);

// Layer-0 activation at position j is tables[j][e], where e is the mixed-radix
// index (first input most significant) of the symbols at inputs[j]. Positions
// with an empty table are not materialized and may only be read when no
// attention layer remains.
struct CTransformer {
  tf::ModelConfig config;            // num_layers equals layers.size()
  langs::Alphabet vocabulary;
  std::vector<char> word_symbols;    // vocabulary minus the end marker
  std::size_t n = 0;                 // word length
  int c = 1;                         // max |inputs[j]|
  std::vector<std::vector<int>> inputs;  // n + 1 lists of word positions
  std::vector<std::vector<Vec>> tables;
  std::vector<tf::LayerParams> layers;
  tf::OutputHead label_head;

  std::size_t positions() const { return n + 1; }
  std::size_t entry_index(std::size_t pos, const std::vector<int>& word) const;
  const Vec& layer0(std::size_t pos, const std::vector<int>& word) const {
    return tables[pos][entry_index(pos, word)];
  }
  std::size_t max_fan_in() const;
};

CTransformer lift(const tf::Model& model, std::size_t n);

// Each word position reads itself and (c = 2) one other random position;
// table entries are Gaussian. The attention stack and heads come from `model`.
CTransformer random_ctransformer(const tf::Model& model, std::size_t n, int c, std::uint64_t seed);

double label_probability(const CTransformer& ct, const std::vector<int>& word);
bool accepts(const CTransformer& ct, const std::vector<int>& word);

std::vector<int> restrict_word(const Restriction& rho, std::vector<int> word);
// ct evaluated on `word` overwritten at the positions fixed by rho.
using Evaluator = std::function<bool(const std::vector<int>&)>;
Evaluator apply_restriction(const CTransformer& ct, const Restriction& rho);

struct StageParams {
  int k = 2;
  double eta = 0.1;
  double q = 0.5;
  double delta = 0.5;
  double C_target = 0.0;  // free fraction used by the stage-1 bound; 0 uses the actual fraction
  std::size_t max_resamples = 20000;
};

void check_stage_params(const StageParams& params);
StageParams parse_stage_params(std::string_view text);  // "k=2,eta=0.1,q=0.5,delta=0.5"
std::string to_string(const StageParams& params);

// Fan-out of every word position: number of layer-0 positions reading it.
std::vector<std::size_t> fan_out(const CTransformer& ct, const Restriction& rho);
std::size_t stage1_bound(const CTransformer& ct, const Restriction& rho, const StageParams& params);
Restriction stage1(const CTransformer& ct, const Restriction& rho, const StageParams& params);

// Maximum score of layer-1 head h at query position i with y_i = z, for each
// key position j. `pinned[j]` is true when that score is the same for every
// consistent assignment. `order` lists positions by descending maximum with
// ascending index on ties.
struct MaxAttention {
  std::vector<double> max_score;
  std::vector<char> pinned;
  std::vector<int> order;
};
MaxAttention max_attention_table(const CTransformer& ct, const Restriction& rho, int h, std::size_t i, const Vec& z);

// Realizable layer-0 values at position i under rho (distinct vectors).
std::vector<Vec> realizable_values(const CTransformer& ct, const Restriction& rho, std::size_t i);

struct PairStatus {
  std::size_t i = 0;
  int h = 0;
  int z = 0;                  // index into realizable_values(i)
  std::vector<int> selected;  // up to k positions with a private free input
  std::vector<int> walked;    // ordering prefix up to the guard or the k-th selection
  int guard = -1;             // first pinned position of the ordering, if reached
  bool satisfied = false;     // guard reached, or ordering exhausted
};

std::vector<PairStatus> pair_census(const CTransformer& ct, const Restriction& rho, int k);

struct Stage2Result {
  Restriction rho;
  bool trivially_satisfied = false;  // n <= c * k
  std::size_t fixings = 0;
  std::size_t pairs = 0;
  std::size_t satisfied = 0;
  std::size_t max_dependents = 0;  // max unsatisfied pairs k-depending on one position
  std::size_t bound = 0;           // 2^c * k * H
};
Stage2Result stage2(const CTransformer& ct, const Restriction& rho1, const StageParams& params);

struct Stage3Result {
  Restriction rho;
  bool success = false;
  std::size_t resamples = 0;
  std::size_t rounds = 0;
  std::size_t violated_pairs = 0;  // on failure
  bool violated_x0 = false;
  std::string census;
  std::uint64_t seed = 0;
};
Stage3Result stage3(const CTransformer& ct, const Restriction& rho2, const StageParams& params, std::uint64_t seed);

struct ReductionReport {
  CTransformer reduced;
  Restriction rho1, rho2, rho3;
  Stage2Result stage2;
  Stage3Result stage3;
  std::size_t c_prime = 0;        // max free reads of a new table
  std::size_t c_prime_full = 0;   // max reads counting fixed inputs
  std::size_t c_bound = 0;        // c * (2^c * k * H + 1)
  StageParams params;
};

// Maximum number of free positions a single new table may read.
inline constexpr std::size_t kMaxTableReads = 16;

ReductionReport depth_reduce(const CTransformer& ct, const Restriction& rho, const StageParams& params,
                             std::uint64_t seed);

// Defaults first, then k = 3, 4, 6 with the other parameters unchanged.
std::vector<StageParams> retry_schedule(const StageParams& base);
ReductionReport depth_reduce_with_retries(const CTransformer& ct, const Restriction& rho, const StageParams& base,
                                          std::uint64_t seed, std::size_t* attempts = nullptr);

struct DependencyReport {
  std::vector<std::size_t> depends_on;
  std::size_t checked_contexts = 0;
  bool exhaustive = false;
};

inline constexpr std::size_t kMaxExhaustiveFree = 22;

DependencyReport dependency_set(const Evaluator& evaluator, const Restriction& rho, std::size_t alphabet_size,
                                unsigned threads = 1);
// Sampling mode: `contexts` random consistent inputs, every free position flipped.
DependencyReport dependency_sample(const Evaluator& evaluator, const Restriction& rho, std::size_t alphabet_size,
                                   std::size_t contexts, std::uint64_t seed, unsigned threads = 1);

struct EquivalenceReport {
  std::size_t checked = 0;
  std::size_t mismatches = 0;
  bool exhaustive = false;
};
// Exhaustive when the free count allows it (<= max_exhaustive), else `samples` draws.
EquivalenceReport check_equivalence(const Evaluator& a, const Evaluator& b, const Restriction& rho,
                                    std::size_t alphabet_size, std::size_t max_exhaustive, std::size_t samples,
                                    std::uint64_t seed, unsigned threads = 1);

struct Counterexample {
  bool found = false;
  std::string language;
  std::string word_a, word_b;
  bool member_a = false, member_b = false;
  bool decision_a = false, decision_b = false;  // original model on each word
  std::size_t flipped_position = 0;             // parity only
  Restriction rho;
  std::vector<int> reads;  // positions the reduced model may depend on
  std::string note;
};

struct FailureReport {
  std::vector<ReductionReport> reductions;
  Restriction initial;
  DependencyReport dependency;
  Counterexample pair;
  std::size_t attempts = 0;
};

// Pre-restriction used for 1DYCK: first and last round(0.2 n) positions fixed
// to '(' and ')'.
Restriction dyck_prerestriction(const CTransformer& ct);

FailureReport demonstrate_failure(const CTransformer& ct, langs::Language lang, const StageParams& params,
                                  std::uint64_t seed, unsigned threads = 1);

}  // namespace attnlimits::restriction
