#include "attnlimits/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace attnlimits::tf {

using nlohmann::json;

namespace {

json matrix_json(const Mat& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

json vector_json(const Vec& v) {
  json data = json::array();
  for (Eigen::Index r = 0; r < v.size(); ++r) data.push_back(v(r));
  return {{"shape", {v.size()}}, {"data", std::move(data)}};
}

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) fail(ErrorKind::schema, where + ": missing field '" + key + "'");
  return obj.at(key);
}

double number(const json& v, const std::string& where) {
  if (!v.is_number()) fail(ErrorKind::schema, where + ": expected a number");
  return v.get<double>();
}

Mat matrix_from(const json& j, const std::string& where) {
  const json& shape = field(j, "shape", where);
  const json& data = field(j, "data", where);
  if (!shape.is_array() || shape.size() != 2 || !data.is_array())
    fail(ErrorKind::schema, where + ": expected a 2-d array");
  const auto rows = shape[0].get<Eigen::Index>();
  const auto cols = shape[1].get<Eigen::Index>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
    fail(ErrorKind::schema, where + ": data length does not match shape");
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number(data[k++], where);
  return m;
}

Vec vector_from(const json& j, const std::string& where) {
  const json& shape = field(j, "shape", where);
  const json& data = field(j, "data", where);
  if (!shape.is_array() || shape.size() != 1 || !data.is_array())
    fail(ErrorKind::schema, where + ": expected a 1-d array");
  const auto n = shape[0].get<Eigen::Index>();
  if (n < 0 || static_cast<std::size_t>(n) != data.size())
    fail(ErrorKind::schema, where + ": data length does not match shape");
  Vec v(n);
  for (Eigen::Index r = 0; r < n; ++r) v(r) = number(data[static_cast<std::size_t>(r)], where);
  return v;
}

json head_json(const OutputHead& h) { return {{"weight", matrix_json(h.weight)}, {"bias", vector_json(h.bias)}}; }

OutputHead head_from(const json& j, const std::string& where) {
  return {matrix_from(field(j, "weight", where), where + ".weight"), vector_from(field(j, "bias", where), where + ".bias")};
}

}  // namespace

std::string model_to_json(const Model& model) {
  validate(model);
  const auto& cfg = model.config;
  const auto& p = model.params;
  json config = {
      {"num_layers", cfg.num_layers},
      {"num_heads", cfg.num_heads},
      {"model_dim", cfg.model_dim},
      {"ff_hidden_dim", cfg.ff_hidden_dim},
      {"key_dim", cfg.key_dim},
      {"attention", std::string(to_string(cfg.attention))},
      {"weighting", std::string(to_string(cfg.weighting))},
      {"combine", std::string(to_string(cfg.combine))},
      {"positional",
       {{"kind", std::string(to_string(cfg.positional.kind))},
        {"max_len", cfg.positional.max_len},
        {"tag", cfg.positional.tag},
        {"base", cfg.positional.base}}},
      {"hard_tie_epsilon", cfg.hard_tie_epsilon},
  };
  json symbols = json::array();
  for (char s : p.vocabulary.symbols) symbols.push_back(std::string(1, s));
  json layers = json::array();
  for (const auto& layer : p.layers) {
    json heads = json::array();
    for (const auto& h : layer.heads) {
      json hj = {{"query", matrix_json(h.query)}, {"key", matrix_json(h.key)}};
      if (cfg.attention == AttentionKind::additive) hj["score"] = vector_json(h.score);
      heads.push_back(std::move(hj));
    }
    layers.push_back({{"heads", std::move(heads)},
                      {"ffn",
                       {{"w1", matrix_json(layer.ffn.w1)},
                        {"b1", vector_json(layer.ffn.b1)},
                        {"w2", matrix_json(layer.ffn.w2)},
                        {"b2", vector_json(layer.ffn.b2)}}}});
  }
  json doc = {
      {"format", "attnlimits-model"},
      {"version", kModelFormatVersion},
      {"config", std::move(config)},
      {"vocabulary", {{"symbols", std::move(symbols)}, {"eos", std::string(1, p.vocabulary.eos)}}},
      {"token_embeddings", matrix_json(p.token_embeddings)},
      {"layers", std::move(layers)},
      {"label_head", head_json(p.label_head)},
      {"next_head", head_json(p.next_head)},
  };
  if (cfg.positional.kind == PositionalKind::learned_table) doc["positional_table"] = matrix_json(p.positional_table);
  return doc.dump(1) + "\n";
}

Model model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::schema, std::string("model file is not valid JSON: ") + e.what());
  }
  Model m;
  try {
    if (!doc.is_object() || doc.value("format", "") != "attnlimits-model")
      fail(ErrorKind::schema, "not an attnlimits model file");
    const json& version = field(doc, "version", "model");
    if (!version.is_number_integer() || version.get<int>() != kModelFormatVersion)
      fail(ErrorKind::version, "model file version " + version.dump() + " is not supported (expected " +
                                   std::to_string(kModelFormatVersion) + ")");
    const json& c = field(doc, "config", "model");
    auto& cfg = m.config;
    cfg.num_layers = field(c, "num_layers", "config").get<int>();
    cfg.num_heads = field(c, "num_heads", "config").get<int>();
    cfg.model_dim = field(c, "model_dim", "config").get<int>();
    cfg.ff_hidden_dim = field(c, "ff_hidden_dim", "config").get<int>();
    cfg.key_dim = field(c, "key_dim", "config").get<int>();
    cfg.attention = parse_attention(field(c, "attention", "config").get<std::string>());
    cfg.weighting = parse_weighting(field(c, "weighting", "config").get<std::string>());
    cfg.combine = parse_combine(field(c, "combine", "config").get<std::string>());
    const json& pos = field(c, "positional", "config");
    cfg.positional.kind = parse_positional(field(pos, "kind", "positional").get<std::string>());
    cfg.positional.max_len = field(pos, "max_len", "positional").get<std::size_t>();
    cfg.positional.tag = field(pos, "tag", "positional").get<std::string>();
    cfg.positional.base = number(field(pos, "base", "positional"), "positional.base");
    cfg.hard_tie_epsilon = number(field(c, "hard_tie_epsilon", "config"), "config.hard_tie_epsilon");

    auto& p = m.params;
    const json& vocab = field(doc, "vocabulary", "model");
    for (const auto& s : field(vocab, "symbols", "vocabulary")) {
      const auto str = s.get<std::string>();
      if (str.size() != 1) fail(ErrorKind::schema, "vocabulary symbols must be single characters");
      p.vocabulary.symbols.push_back(str[0]);
    }
    const auto eos = field(vocab, "eos", "vocabulary").get<std::string>();
    if (eos.size() != 1) fail(ErrorKind::schema, "eos must be a single character");
    p.vocabulary.eos = eos[0];
    p.token_embeddings = matrix_from(field(doc, "token_embeddings", "model"), "token_embeddings");
    if (cfg.positional.kind == PositionalKind::learned_table)
      p.positional_table = matrix_from(field(doc, "positional_table", "model"), "positional_table");
    const json& layers = field(doc, "layers", "model");
    if (!layers.is_array()) fail(ErrorKind::schema, "layers must be an array");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string at = "layers[" + std::to_string(l) + "]";
      LayerParams layer;
      for (const auto& hj : field(layers[l], "heads", at)) {
        HeadParams h;
        h.query = matrix_from(field(hj, "query", at), at + ".query");
        h.key = matrix_from(field(hj, "key", at), at + ".key");
        if (cfg.attention == AttentionKind::additive) h.score = vector_from(field(hj, "score", at), at + ".score");
        layer.heads.push_back(std::move(h));
      }
      const json& f = field(layers[l], "ffn", at);
      layer.ffn.w1 = matrix_from(field(f, "w1", at), at + ".w1");
      layer.ffn.b1 = vector_from(field(f, "b1", at), at + ".b1");
      layer.ffn.w2 = matrix_from(field(f, "w2", at), at + ".w2");
      layer.ffn.b2 = vector_from(field(f, "b2", at), at + ".b2");
      p.layers.push_back(std::move(layer));
    }
    p.label_head = head_from(field(doc, "label_head", "model"), "label_head");
    p.next_head = head_from(field(doc, "next_head", "model"), "next_head");
  } catch (const json::exception& e) {
    fail(ErrorKind::schema, std::string("malformed model file: ") + e.what());
  }
  validate(m);
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  out << contents;
  if (!out) fail(ErrorKind::io, "write to '" + path + "' failed");
}

void save_model(const Model& model, const std::string& path) { write_file(path, model_to_json(model)); }

Model load_model(const std::string& path) { return model_from_json(read_file(path)); }

}  // namespace attnlimits::tf
