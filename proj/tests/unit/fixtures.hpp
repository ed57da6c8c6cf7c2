#pragma once

#include <string>
#include <vector>

#include "attnlimits/model_io.hpp"
#include "attnlimits/restriction.hpp"
#include "attnlimits/transformer.hpp"

#ifndef ATTNLIMITS_FIXTURES
#error "ATTNLIMITS_FIXTURES must point at tests/fixtures"
#endif

namespace fixtures {

namespace al = attnlimits;

inline const std::vector<std::string>& soft_names() {
  static const std::vector<std::string> names = {"soft_l1_h1_dot", "soft_l1_h2_add", "soft_l2_h1_dot",
                                                 "soft_l2_h2_dot_concat", "soft_l2_h2_add"};
  return names;
}

inline al::tf::Model soft(const std::string& name) {
  return al::tf::load_model(std::string(ATTNLIMITS_FIXTURES) + "/" + name + ".json");
}

inline std::vector<al::tf::Model> all_soft() {
  std::vector<al::tf::Model> out;
  for (const auto& n : soft_names()) out.push_back(soft(n));
  return out;
}

// Random one-layer hard-attention model.
inline al::tf::Model hard_model(int heads, al::langs::Language lang, std::uint64_t seed) {
  al::tf::ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = heads;
  cfg.model_dim = 4;
  cfg.key_dim = 4;
  cfg.ff_hidden_dim = 8;
  cfg.weighting = al::tf::Weighting::hard;
  return al::tf::random_model(cfg, al::langs::alphabet_for(lang), seed);
}

struct HardCase {
  std::size_t n;
  int heads;
  int c;
  std::uint64_t seed;
  al::restriction::CTransformer ct;
  std::string name;
};

// 24 cases: n in {16, 24, 32} x H in {1, 2} x c in {1, 2} x two seeds. c = 1
// lifts the model itself; c = 2 uses random layer-0 tables reading two positions.
inline std::vector<HardCase> hard_cases(al::langs::Language lang = al::langs::Language::parity,
                                        const std::vector<std::size_t>& lengths = {16, 24, 32}) {
  std::vector<HardCase> out;
  std::uint64_t seed = 1000;
  for (std::size_t n : lengths)
    for (int h : {1, 2})
      for (int c : {1, 2})
        for (int rep = 0; rep < 2; ++rep) {
          ++seed;
          const auto m = hard_model(h, lang, seed);
          auto ct = c == 1 ? al::restriction::lift(m, n) : al::restriction::random_ctransformer(m, n, 2, seed * 7);
          out.push_back({n, h, c, seed, std::move(ct),
                         "n=" + std::to_string(n) + " H=" + std::to_string(h) + " c=" + std::to_string(c) +
                             " seed=" + std::to_string(seed)});
        }
  return out;
}

inline std::vector<int> to_symbols(const al::restriction::CTransformer& ct, const std::string& w) {
  std::vector<int> out;
  for (char ch : w) {
    int idx = -1;
    for (std::size_t k = 0; k < ct.word_symbols.size(); ++k)
      if (ct.word_symbols[k] == ch) idx = static_cast<int>(k);
    out.push_back(idx);
  }
  return out;
}

}  // namespace fixtures
