#pragma once

// Single-symbol perturbation analysis for soft-attention models: measured
// influence of one flipped input on the activations, and analytic upper
// bounds on that influence.

#include <cstdint>
#include <string>
#include <vector>

#include "attnlimits/transformer.hpp"

namespace attnlimits::sensitivity {

// Largest singular value by power iteration on A^T A. Throws a numeric error
// when the relative change does not drop below `tol` within `max_iter` steps.
double spectral_norm(const Mat& a, double tol = 1e-9, std::size_t max_iter = 10000);

// 1 + ||W1|| ||W2||: skip path plus the ReLU branch.
double lipschitz_upper(const tf::FeedForward& ffn);

// Attention-score constant per head: dot product ||Q|| ||K|| / sqrt(key_dim),
// additive ||score|| * max(||Q||, ||K||).
double score_constant(const tf::ModelConfig& config, const tf::HeadParams& head);

struct BoundConstants {
  std::size_t n = 0;    // word length; T = n + 1 tokens
  double D = 0.0;       // layer-0 difference at the flipped position
  double F = 0.0;       // activation-norm bound (max over layers)
  double A = 0.0;       // attention-score bound (max over layers and heads)
  double C_fatt = 0.0;  // max score constant
  double L_fact = 0.0;  // max f^act Lipschitz constant
  double C = 0.0;       // 2 (1 + exp(2A) + L_fact)
  double attention_weight_bound = 0.0;  // exp(2A) / (exp(2A) + T - 1)

  // Index k = 0..L. F_k bounds every activation norm at layer k.
  std::vector<double> F_k;
  // Certified bounds on ||dy_j^(k)||: perturbed position and every other position.
  std::vector<double> perturbed;
  std::vector<double> other;
  // Constants of the inductive sketch: C^{2k} D and H^k C^{2k} D / n.
  std::vector<double> sketch_perturbed;
  std::vector<double> sketch_other;

  double final_bound() const { return other.back(); }
};

// Largest layer-0 difference over pairs of word symbols at one position.
double embedding_difference(const tf::Model& model);

// Requires soft attention. D < 0 selects embedding_difference(model).
BoundConstants analytic_bound(const tf::Model& model, std::size_t n, double D = -1.0);

// ||y_j^(k) - y'_j^(k)|| for k = 0..L (rows) and j = 1..T (columns).
std::vector<std::vector<double>> perturb_pair(const tf::Model& model, const std::string& word, std::size_t i,
                                              char replacement);

// Flip influence on the final activation y_T^(L) for every single-position
// change of a base word. Layer 1 is updated incrementally per flip, middle
// layers are recomputed, and the last layer is evaluated at T only.
class FlipEvaluator {
 public:
  FlipEvaluator(const tf::Model& model, const std::string& word);
  // Final activation after replacing word position i (0-based) by `symbol`.
  Vec flipped_output(std::size_t i, char symbol) const;
  const Vec& base_output() const { return base_output_; }
  std::size_t length() const { return tokens_.size() - 1; }

 private:
  const tf::Model& model_;
  std::vector<int> tokens_;
  Mat y0_;
  std::vector<tf::Projections> proj_;      // layer-1 projections per head
  std::vector<std::vector<double>> row_max_;  // [head][t]
  std::vector<std::vector<double>> row_sum_;
  std::vector<Mat> numerators_;            // [head] width x T
  Vec base_output_;

  Mat layer1_rows(std::size_t i, const Vec& yi_new, bool final_only) const;
};

// Ordinary least-squares slope of log(y) on log(x); points with y <= 0 are skipped.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct DecayCurve {
  std::vector<std::size_t> n_values;
  std::vector<double> max_delta;
  std::vector<double> analytic_bound;
  std::vector<double> slope_running;  // slope over the grid up to each n (NaN for the first)
  double slope = 0.0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
};

// For each n: max over `trials` random words and every flip i < n (all
// alternative symbols) of ||dy_T^(L)||.
DecayCurve decay_sweep(const tf::Model& model, const std::vector<std::size_t>& n_grid, std::size_t trials,
                       std::uint64_t seed, unsigned threads = 1);

// "16:1024:x2" (geometric) or "16:1024:+16" (arithmetic) or "16,32,64".
std::vector<std::size_t> parse_grid(std::string_view text);

std::string decay_csv(const DecayCurve& curve);

// Total-variation bound for softmax(W y + b) under ||dy|| <= r.
double softmax_tv_bound(const tf::OutputHead& head, double r);

}  // namespace attnlimits::sensitivity
