#include "attnlimits/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace attnlimits::tf {

namespace {

// Fixed-order kernels; every code path that needs bit-identical results
// (lifting, table collapse) goes through these.
void matvec(const Mat& a, const double* x, double* out) {
  const Eigen::Index rows = a.rows(), cols = a.cols();
  for (Eigen::Index r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) acc += a(r, c) * x[c];
    out[r] = acc;
  }
}

bool all_finite(const Mat& m) { return m.allFinite(); }

void check_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols)
    fail(ErrorKind::schema, what + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  if (!all_finite(m)) fail(ErrorKind::schema, what + " contains non-finite entries");
}

void check_shape(const Vec& v, Eigen::Index rows, const std::string& what) {
  if (v.size() != rows)
    fail(ErrorKind::schema,
         what + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(rows));
  if (!v.allFinite()) fail(ErrorKind::schema, what + " contains non-finite entries");
}

}  // namespace

std::string_view to_string(AttentionKind k) { return k == AttentionKind::additive ? "additive" : "dot_product_scaled"; }
std::string_view to_string(Weighting w) { return w == Weighting::hard ? "hard" : "soft"; }
std::string_view to_string(Combine c) { return c == Combine::concat ? "concat" : "add"; }
std::string_view to_string(PositionalKind p) {
  switch (p) {
    case PositionalKind::sinusoidal: return "sinusoidal";
    case PositionalKind::learned_table: return "learned_table";
    case PositionalKind::custom: return "custom";
  }
  return "?";
}

AttentionKind parse_attention(std::string_view s) {
  if (s == "dot_product_scaled") return AttentionKind::dot_product_scaled;
  if (s == "additive") return AttentionKind::additive;
  fail(ErrorKind::schema, "unknown attention kind '" + std::string(s) + "'");
}
Weighting parse_weighting(std::string_view s) {
  if (s == "hard") return Weighting::hard;
  if (s == "soft") return Weighting::soft;
  fail(ErrorKind::schema, "unknown weighting '" + std::string(s) + "'");
}
Combine parse_combine(std::string_view s) {
  if (s == "add") return Combine::add;
  if (s == "concat") return Combine::concat;
  fail(ErrorKind::schema, "unknown combine rule '" + std::string(s) + "'");
}
PositionalKind parse_positional(std::string_view s) {
  if (s == "sinusoidal") return PositionalKind::sinusoidal;
  if (s == "learned_table") return PositionalKind::learned_table;
  if (s == "custom") return PositionalKind::custom;
  fail(ErrorKind::schema, "unknown positional scheme '" + std::string(s) + "'");
}

void validate(const Model& model) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  if (cfg.num_layers < 0 || cfg.num_heads < 1 || cfg.model_dim < 1 || cfg.ff_hidden_dim < 1 || cfg.key_dim < 1)
    fail(ErrorKind::schema, "model dimensions must be positive");
  if (p.vocabulary.symbols.empty() || !p.vocabulary.contains(p.vocabulary.eos))
    fail(ErrorKind::schema, "vocabulary must be non-empty and contain the eos symbol");
  const auto v = static_cast<Eigen::Index>(p.vocabulary.size());
  const Eigen::Index w = cfg.width();
  check_shape(p.token_embeddings, v, cfg.model_dim, "token_embeddings");
  if (cfg.positional.kind == PositionalKind::learned_table) {
    if (cfg.positional.max_len == 0) fail(ErrorKind::schema, "learned_table needs max_len > 0");
    check_shape(p.positional_table, static_cast<Eigen::Index>(cfg.positional.max_len), cfg.model_dim,
                "positional_table");
  }
  if (cfg.positional.kind == PositionalKind::custom) {
    const auto& tag = cfg.positional.tag;
    if (tag != "none" && tag != "index_one" && tag != "index_one_parity")
      fail(ErrorKind::schema, "unknown custom positional tag '" + tag + "'");
    if ((tag == "index_one" && cfg.model_dim < 2) || (tag == "index_one_parity" && cfg.model_dim < 3))
      fail(ErrorKind::schema, "model_dim too small for positional tag '" + tag + "'");
  }
  if (static_cast<int>(p.layers.size()) != cfg.num_layers)
    fail(ErrorKind::schema, "layer count does not match num_layers");
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    const std::string at = "layer " + std::to_string(l + 1);
    if (static_cast<int>(layer.heads.size()) != cfg.num_heads)
      fail(ErrorKind::schema, at + ": head count does not match num_heads");
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const std::string hat = at + " head " + std::to_string(h + 1);
      check_shape(layer.heads[h].query, cfg.key_dim, w, hat + " query");
      check_shape(layer.heads[h].key, cfg.key_dim, w, hat + " key");
      if (cfg.attention == AttentionKind::additive) check_shape(layer.heads[h].score, cfg.key_dim, hat + " score");
    }
    check_shape(layer.ffn.w1, cfg.ff_hidden_dim, w * (1 + cfg.num_heads), at + " ffn.w1");
    check_shape(layer.ffn.b1, cfg.ff_hidden_dim, at + " ffn.b1");
    check_shape(layer.ffn.w2, w, cfg.ff_hidden_dim, at + " ffn.w2");
    check_shape(layer.ffn.b2, w, at + " ffn.b2");
  }
  check_shape(p.label_head.weight, 2, w, "label_head.weight");
  check_shape(p.label_head.bias, 2, "label_head.bias");
  check_shape(p.next_head.weight, v, w, "next_head.weight");
  check_shape(p.next_head.bias, v, "next_head.bias");
}

std::vector<int> tokenize(const Model& model, std::string_view word) {
  const auto& vocab = model.params.vocabulary;
  std::vector<int> out;
  out.reserve(word.size() + 1);
  for (char c : word) {
    if (c == vocab.eos) fail(ErrorKind::input, "end-of-sequence symbol inside the word");
    const int id = vocab.index_of(c);
    if (id < 0) fail(ErrorKind::input, std::string("unknown token '") + c + "'");
    out.push_back(id);
  }
  out.push_back(vocab.index_of(vocab.eos));
  return out;
}

Vec positional_embedding(const ModelConfig& config, const ModelParams& params, std::size_t position) {
  const auto& scheme = config.positional;
  const int k = config.model_dim;
  if (scheme.max_len > 0 && position > scheme.max_len)
    fail(ErrorKind::input, "position " + std::to_string(position) + " exceeds positional capacity " +
                               std::to_string(scheme.max_len));
  Vec p = Vec::Zero(k);
  const double i = static_cast<double>(position);
  switch (scheme.kind) {
    case PositionalKind::sinusoidal:
      for (int d = 0; d < k; ++d) {
        const double freq = std::pow(scheme.base, static_cast<double>(d - d % 2) / static_cast<double>(k));
        p(d) = d % 2 == 0 ? std::sin(i / freq) : std::cos(i / freq);
      }
      break;
    case PositionalKind::learned_table:
      p = params.positional_table.row(static_cast<Eigen::Index>(position - 1)).transpose();
      break;
    case PositionalKind::custom:
      if (scheme.tag == "index_one" || scheme.tag == "index_one_parity") {
        p(0) = i;
        p(1) = 1.0;
        if (scheme.tag == "index_one_parity") p(2) = static_cast<double>(position % 2);
      }
      break;
  }
  return p;
}

Vec layer0_vector(const Model& model, int token, std::size_t position) {
  const auto& cfg = model.config;
  const Vec v = model.params.token_embeddings.row(token).transpose();
  const Vec p = positional_embedding(cfg, model.params, position);
  if (cfg.combine == Combine::add) return v + p;
  Vec out(cfg.width());
  out << v, p;
  return out;
}

Mat embed(const Model& model, std::span<const int> tokens) {
  const auto& vocab = model.params.vocabulary;
  if (tokens.empty() || tokens.back() != vocab.index_of(vocab.eos))
    fail(ErrorKind::input, "input must end with the end-of-sequence token");
  Mat y(model.config.width(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= static_cast<int>(vocab.size())) fail(ErrorKind::input, "unknown token id");
    y.col(static_cast<Eigen::Index>(i)) = layer0_vector(model, tokens[i], i + 1);
  }
  return y;
}

std::size_t hard_argmax(std::span<const double> scores, double tie_epsilon) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  if (tie_epsilon > 0.0) {
    const double cut = scores[best] - tie_epsilon * std::abs(scores[best]);
    for (std::size_t j = 0; j < best; ++j)
      if (scores[j] >= cut) return j;
  }
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - m);
    z += out[j];
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<double> attention_weights(std::span<const double> scores, Weighting weighting, double tie_epsilon) {
  if (weighting == Weighting::soft) return softmax(scores);
  std::vector<double> out(scores.size(), 0.0);
  if (!scores.empty()) out[hard_argmax(scores, tie_epsilon)] = 1.0;
  return out;
}

Vec project_vector(const Mat& map, const Vec& y) {
  Vec out(map.rows());
  matvec(map, y.data(), out.data());
  return out;
}

Projections project(const HeadParams& head, const Mat& activations) {
  Projections p{Mat(head.query.rows(), activations.cols()), Mat(head.key.rows(), activations.cols())};
  for (Eigen::Index i = 0; i < activations.cols(); ++i) {
    matvec(head.query, activations.col(i).data(), p.query.col(i).data());
    matvec(head.key, activations.col(i).data(), p.key.col(i).data());
  }
  return p;
}

double score(const ModelConfig& config, const HeadParams& head, const double* query, const double* key) {
  const int dk = config.key_dim;
  double acc = 0.0;
  if (config.attention == AttentionKind::dot_product_scaled) {
    for (int d = 0; d < dk; ++d) acc += query[d] * key[d];
    return acc / std::sqrt(static_cast<double>(dk));
  }
  for (int d = 0; d < dk; ++d) acc += head.score(d) * std::tanh(query[d] + key[d]);
  return acc;
}

double score_vectors(const ModelConfig& config, const HeadParams& head, const Vec& y_query, const Vec& y_key) {
  const Vec q = project_vector(head.query, y_query);
  const Vec k = project_vector(head.key, y_key);
  return score(config, head, q.data(), k.data());
}

Vec feed_forward(const FeedForward& ffn, const Vec& y, std::span<const Vec> head_outputs) {
  const Eigen::Index w = y.size();
  Vec x(w * static_cast<Eigen::Index>(1 + head_outputs.size()));
  x.head(w) = y;
  for (std::size_t h = 0; h < head_outputs.size(); ++h) x.segment(w * static_cast<Eigen::Index>(h + 1), w) = head_outputs[h];
  Vec hidden(ffn.w1.rows());
  matvec(ffn.w1, x.data(), hidden.data());
  for (Eigen::Index r = 0; r < hidden.size(); ++r) hidden(r) = std::max(0.0, hidden(r) + ffn.b1(r));
  Vec out(w);
  matvec(ffn.w2, hidden.data(), out.data());
  for (Eigen::Index r = 0; r < w; ++r) out(r) = y(r) + out(r) + ffn.b2(r);
  return out;
}

namespace {

Vec compute_row(const ModelConfig& config, const LayerParams& layer, const Mat& y, const std::vector<Projections>& proj,
                Eigen::Index i, std::vector<double>& row, std::vector<Vec>& b, LayerTrace* trace, int layer_index) {
  const Eigen::Index t_len = y.cols();
  for (std::size_t h = 0; h < layer.heads.size(); ++h) {
    const double* q = proj[h].query.col(i).data();
    for (Eigen::Index j = 0; j < t_len; ++j) row[j] = score(config, layer.heads[h], q, proj[h].key.col(j).data());
    if (config.weighting == Weighting::hard) {
      const std::size_t a = hard_argmax(row, config.hard_tie_epsilon);
      b[h] = y.col(static_cast<Eigen::Index>(a));
      if (trace) {
        trace->weights[h].row(i).setZero();
        trace->weights[h](i, static_cast<Eigen::Index>(a)) = 1.0;
      }
    } else {
      const auto wts = softmax(row);
      b[h].setZero();
      for (Eigen::Index j = 0; j < t_len; ++j) b[h] += wts[j] * y.col(j);
      if (trace)
        for (Eigen::Index j = 0; j < t_len; ++j) trace->weights[h](i, j) = wts[j];
    }
    if (trace) {
      for (Eigen::Index j = 0; j < t_len; ++j) trace->scores[h](i, j) = row[j];
      trace->head_outputs[h].col(i) = b[h];
    }
  }
  Vec next = feed_forward(layer.ffn, y.col(i), b);
  if (!next.allFinite())
    fail(ErrorKind::numeric, "non-finite activation at layer " + std::to_string(layer_index) + ", position " +
                                 std::to_string(i + 1));
  return next;
}

}  // namespace

Mat run_layer(const ModelConfig& config, const LayerParams& layer, const Mat& y, bool all_rows, LayerTrace* trace,
              int layer_index) {
  const Eigen::Index t_len = y.cols();
  const Eigen::Index w = y.rows();
  const std::size_t heads = layer.heads.size();
  std::vector<Projections> proj;
  proj.reserve(heads);
  for (const auto& head : layer.heads) proj.push_back(project(head, y));
  if (trace) {
    trace->scores.assign(heads, Mat(t_len, t_len));
    trace->weights.assign(heads, Mat(t_len, t_len));
    trace->head_outputs.assign(heads, Mat(w, t_len));
  }
  const Eigen::Index first = all_rows ? 0 : t_len - 1;
  Mat out(w, t_len - first);
  std::vector<double> row(static_cast<std::size_t>(t_len));
  std::vector<Vec> b(heads, Vec(w));
  for (Eigen::Index i = first; i < t_len; ++i)
    out.col(i - first) = compute_row(config, layer, y, proj, i, row, b, trace, layer_index);
  return out;
}

Vec layer_row(const ModelConfig& config, const LayerParams& layer, const Mat& y, std::size_t i) {
  std::vector<Projections> proj;
  proj.reserve(layer.heads.size());
  for (const auto& head : layer.heads) proj.push_back(project(head, y));
  std::vector<double> row(static_cast<std::size_t>(y.cols()));
  std::vector<Vec> b(layer.heads.size(), Vec(y.rows()));
  return compute_row(config, layer, y, proj, static_cast<Eigen::Index>(i), row, b, nullptr, 1);
}

ForwardTrace run_stack(const ModelConfig& config, std::span<const LayerParams> layers, Mat y0, TraceDetail detail) {
  ForwardTrace trace;
  if (!y0.allFinite()) fail(ErrorKind::numeric, "non-finite layer-0 activation");
  trace.activations.push_back(std::move(y0));
  const std::size_t count = layers.size();
  if (detail == TraceDetail::full) trace.layers.resize(count);
  for (std::size_t l = 0; l < count; ++l) {
    const bool last = l + 1 == count;
    const bool all_rows = !(last && detail == TraceDetail::final_only);
    LayerTrace* lt = detail == TraceDetail::full ? &trace.layers[l] : nullptr;
    Mat next = run_layer(config, layers[l], trace.activations.back(), all_rows, lt, static_cast<int>(l + 1));
    if (!all_rows) {
      trace.output = next.col(0);
      return trace;
    }
    trace.activations.push_back(std::move(next));
  }
  trace.output = trace.activations.back().col(trace.activations.back().cols() - 1);
  return trace;
}

ForwardTrace forward(const Model& model, std::span<const int> tokens, TraceDetail detail) {
  return run_stack(model.config, model.params.layers, embed(model, tokens), detail);
}

ForwardTrace forward(const Model& model, std::string_view word, TraceDetail detail) {
  const auto tokens = tokenize(model, word);
  return forward(model, tokens, detail);
}

double label_probability(const OutputHead& head, const Vec& final_activation) {
  double logits[2];
  matvec(head.weight, final_activation.data(), logits);
  logits[0] += head.bias(0);
  logits[1] += head.bias(1);
  return softmax(std::span<const double>(logits, 2))[1];
}

double predict_label(const Model& model, const ForwardTrace& trace) {
  return label_probability(model.params.label_head, trace.output);
}

langs::NextSymbolDist predict_next(const Model& model, const ForwardTrace& trace) {
  const auto& head = model.params.next_head;
  std::vector<double> logits(static_cast<std::size_t>(head.weight.rows()));
  matvec(head.weight, trace.output.data(), logits.data());
  for (std::size_t r = 0; r < logits.size(); ++r) logits[r] += head.bias(static_cast<Eigen::Index>(r));
  return {model.params.vocabulary.symbols, softmax(logits)};
}

bool accepts(double label_probability) { return label_probability >= 0.5; }

Model random_model(const ModelConfig& config, const langs::Alphabet& vocabulary, std::uint64_t seed, double scale) {
  Model m;
  m.config = config;
  m.params.vocabulary = vocabulary;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double s) {
    Mat out(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = s * normal(rng);
    return out;
  };
  auto gaussian_vec = [&](Eigen::Index rows, double s) -> Vec { return gaussian(rows, 1, s).col(0); };
  const Eigen::Index w = config.width();
  const auto v = static_cast<Eigen::Index>(vocabulary.size());
  m.params.token_embeddings = gaussian(v, config.model_dim, 1.0);
  if (config.positional.kind == PositionalKind::learned_table)
    m.params.positional_table = gaussian(static_cast<Eigen::Index>(config.positional.max_len), config.model_dim, 1.0);
  const double in_scale = scale / std::sqrt(static_cast<double>(w));
  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    for (int h = 0; h < config.num_heads; ++h) {
      HeadParams head;
      head.query = gaussian(config.key_dim, w, in_scale);
      head.key = gaussian(config.key_dim, w, in_scale);
      if (config.attention == AttentionKind::additive) head.score = gaussian_vec(config.key_dim, scale);
      layer.heads.push_back(std::move(head));
    }
    const Eigen::Index fan_in = w * (1 + config.num_heads);
    layer.ffn.w1 = gaussian(config.ff_hidden_dim, fan_in, scale / std::sqrt(static_cast<double>(fan_in)));
    layer.ffn.b1 = gaussian_vec(config.ff_hidden_dim, 0.1 * scale);
    layer.ffn.w2 = gaussian(w, config.ff_hidden_dim, scale / std::sqrt(static_cast<double>(config.ff_hidden_dim)));
    layer.ffn.b2 = gaussian_vec(w, 0.1 * scale);
    m.params.layers.push_back(std::move(layer));
  }
  m.params.label_head = {gaussian(2, w, in_scale), gaussian_vec(2, 0.1)};
  m.params.next_head = {gaussian(v, w, in_scale), gaussian_vec(v, 0.1)};
  return m;
}

std::size_t parameter_count(const Model& model) {
  const auto& p = model.params;
  std::size_t n = static_cast<std::size_t>(p.token_embeddings.size() + p.positional_table.size());
  for (const auto& layer : p.layers) {
    for (const auto& h : layer.heads) n += static_cast<std::size_t>(h.query.size() + h.key.size() + h.score.size());
    n += static_cast<std::size_t>(layer.ffn.w1.size() + layer.ffn.b1.size() + layer.ffn.w2.size() + layer.ffn.b2.size());
  }
  n += static_cast<std::size_t>(p.label_head.weight.size() + p.label_head.bias.size());
  n += static_cast<std::size_t>(p.next_head.weight.size() + p.next_head.bias.size());
  return n;
}

}  // namespace attnlimits::tf
