#pragma once

// Reference implementations used by the tests. Nothing here calls into the
// library code it is compared against.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnlimits/transformer.hpp"

namespace oracle {

bool parity(const std::string& w);
bool dyck(const std::string& w, int kinds);
bool ones_star(const std::string& w);
bool anbn(const std::string& w);
bool member(attnlimits::langs::Language lang, const std::string& w);

// All words over `symbols` of length exactly n, in lexicographic order.
std::vector<std::string> all_words(const std::string& symbols, std::size_t n);

// Leftmost derivation of S -> (S)S | [S]S | eps (kinds = 2) that stops after
// `limit` emitted symbols. Returns the emitted prefix and whether the word
// ended within the limit.
struct Derivation {
  std::string text;
  bool complete = false;
};
Derivation derive_dyck(double p, int kinds, std::size_t limit, std::mt19937_64& rng);

// Forward DP over the PARITY process: probability that a length-n prefix is
// even, conditioned on the word having at least n symbols.
double parity_even_forward(double p, std::size_t n);

// Naive dense forward pass: every layer, every row, no shared kernels.
// Returns the final activation at the last position.
Eigen::VectorXd naive_forward(const attnlimits::tf::Model& model, const std::string& word);
double naive_label_probability(const attnlimits::tf::Model& model, const std::string& word);

// Largest singular value via Eigen's SVD.
double svd_norm(const Eigen::MatrixXd& a);

}  // namespace oracle
