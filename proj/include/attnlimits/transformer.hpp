#pragma once

// Transformer semantics: embeddings, attention scoring, hard/soft weighting,
// head mixing and the position-wise feed-forward map with a skip path.
//
// Activations are stored column-wise: Mat(width, T) where T counts tokens,
// including the trailing end-of-sequence token.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnlimits/common.hpp"
#include "attnlimits/formal_langs.hpp"

namespace attnlimits::tf {

enum class AttentionKind { dot_product_scaled, additive };
enum class Weighting { hard, soft };
enum class Combine { add, concat };
enum class PositionalKind { sinusoidal, learned_table, custom };

struct PositionalScheme {
  PositionalKind kind = PositionalKind::sinusoidal;
  std::size_t max_len = 0;  // token capacity; 0 means unbounded
  std::string tag;          // custom: "none", "index_one", "index_one_parity"
  double base = 10000.0;    // sinusoidal
};

struct ModelConfig {
  int num_layers = 1;
  int num_heads = 1;
  int model_dim = 4;  // k: width of token and positional embeddings
  int ff_hidden_dim = 8;
  int key_dim = 4;    // rows of the query/key maps
  AttentionKind attention = AttentionKind::dot_product_scaled;
  Weighting weighting = Weighting::soft;
  Combine combine = Combine::add;
  PositionalScheme positional;
  // Hard argmax treats scores within eps * |max| of the max as ties (0: exact).
  double hard_tie_epsilon = 0.0;

  int width() const { return combine == Combine::concat ? 2 * model_dim : model_dim; }
};

// Scoring parameters of one head. Dot product: (Q y_i).(K y_j) / sqrt(key_dim).
// Additive: score . tanh(Q y_i + K y_j).
struct HeadParams {
  Mat query;  // key_dim x width
  Mat key;    // key_dim x width
  Vec score;  // key_dim, additive only
};

// y' = y + W2 relu(W1 [y; b_1; ...; b_H] + b1) + b2
struct FeedForward {
  Mat w1;  // ff_hidden x width*(1+H)
  Vec b1;
  Mat w2;  // width x ff_hidden
  Vec b2;
};

struct LayerParams {
  std::vector<HeadParams> heads;
  FeedForward ffn;
};

struct OutputHead {
  Mat weight;  // classes x width
  Vec bias;
};

struct ModelParams {
  langs::Alphabet vocabulary;
  Mat token_embeddings;  // |V| x model_dim
  Mat positional_table;  // max_len x model_dim, learned_table only
  std::vector<LayerParams> layers;
  OutputHead label_head;  // 2 x width; row 1 is "in the language"
  OutputHead next_head;   // |V| x width, rows follow vocabulary order
};

struct Model {
  ModelConfig config;
  ModelParams params;
};

struct LayerTrace {
  std::vector<Mat> scores;        // per head, T x T (row = query)
  std::vector<Mat> weights;       // per head, T x T
  std::vector<Mat> head_outputs;  // per head, width x T
};

enum class TraceDetail {
  full,         // activations, scores, weights and head outputs for every layer
  activations,  // activations only
  final_only,   // last layer evaluated at the final position only
};

struct ForwardTrace {
  std::vector<Mat> activations;  // layer 0..L (final_only: last entry missing)
  std::vector<LayerTrace> layers;
  Vec output;                    // y_T^{(L)}

  std::size_t length() const { return activations.empty() ? 0 : static_cast<std::size_t>(activations[0].cols()); }
};

// Checks dimensions and finiteness; throws schema errors.
void validate(const Model& model);

// Token ids for `word` followed by the end-of-sequence token.
std::vector<int> tokenize(const Model& model, std::string_view word);

Vec positional_embedding(const ModelConfig& config, const ModelParams& params, std::size_t position);
Vec layer0_vector(const Model& model, int token, std::size_t position);
Mat embed(const Model& model, std::span<const int> tokens);

// Attention weights for one score row. Soft: softmax. Hard: one-hot at the
// first maximal entry.
std::vector<double> attention_weights(std::span<const double> scores, Weighting weighting, double tie_epsilon = 0.0);
std::size_t hard_argmax(std::span<const double> scores, double tie_epsilon = 0.0);

// Per-position projections of one head (columns of key_dim).
struct Projections {
  Mat query;
  Mat key;
};
Projections project(const HeadParams& head, const Mat& activations);
Vec project_vector(const Mat& map, const Vec& y);
double score(const ModelConfig& config, const HeadParams& head, const double* query, const double* key);
double score_vectors(const ModelConfig& config, const HeadParams& head, const Vec& y_query, const Vec& y_key);

Vec feed_forward(const FeedForward& ffn, const Vec& y, std::span<const Vec> head_outputs);

// One attention layer. With `all_rows` false only the last column is computed
// and returned as a width x 1 matrix.
Mat run_layer(const ModelConfig& config, const LayerParams& layer, const Mat& y, bool all_rows, LayerTrace* trace,
              int layer_index);

// Row i of run_layer, computed without the other rows.
Vec layer_row(const ModelConfig& config, const LayerParams& layer, const Mat& y, std::size_t i);

ForwardTrace run_stack(const ModelConfig& config, std::span<const LayerParams> layers, Mat y0, TraceDetail detail);
ForwardTrace forward(const Model& model, std::span<const int> tokens, TraceDetail detail = TraceDetail::full);
ForwardTrace forward(const Model& model, std::string_view word, TraceDetail detail = TraceDetail::full);

std::vector<double> softmax(std::span<const double> logits);
double label_probability(const OutputHead& head, const Vec& final_activation);
double predict_label(const Model& model, const ForwardTrace& trace);
langs::NextSymbolDist predict_next(const Model& model, const ForwardTrace& trace);
bool accepts(double label_probability);  // threshold 0.5

// Gaussian weights; matrices scaled by scale / sqrt(fan_in).
Model random_model(const ModelConfig& config, const langs::Alphabet& vocabulary, std::uint64_t seed,
                   double scale = 1.0);

std::size_t parameter_count(const Model& model);

std::string_view to_string(AttentionKind k);
std::string_view to_string(Weighting w);
std::string_view to_string(Combine c);
std::string_view to_string(PositionalKind p);
AttentionKind parse_attention(std::string_view s);
Weighting parse_weighting(std::string_view s);
Combine parse_combine(std::string_view s);
PositionalKind parse_positional(std::string_view s);

}  // namespace attnlimits::tf
