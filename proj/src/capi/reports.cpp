#include "reports.hpp"

#include <cmath>

namespace attnlimits::reports {

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vector(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

json matrix(const Mat& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vector(m.row(r).transpose()));
  return a;
}

json config(const tf::ModelConfig& cfg) {
  return {
      {"num_layers", cfg.num_layers},
      {"num_heads", cfg.num_heads},
      {"model_dim", cfg.model_dim},
      {"ff_hidden_dim", cfg.ff_hidden_dim},
      {"key_dim", cfg.key_dim},
      {"attention", std::string(tf::to_string(cfg.attention))},
      {"weighting", std::string(tf::to_string(cfg.weighting))},
      {"combine", std::string(tf::to_string(cfg.combine))},
      {"positional",
       {{"kind", std::string(tf::to_string(cfg.positional.kind))},
        {"max_len", cfg.positional.max_len},
        {"tag", cfg.positional.tag},
        {"base", cfg.positional.base}}},
      {"hard_tie_epsilon", cfg.hard_tie_epsilon},
  };
}

tf::ModelConfig config_from(const json& j, tf::ModelConfig cfg) {
  if (!j.is_object()) fail(ErrorKind::input, "model config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "num_layers") cfg.num_layers = v.get<int>();
      else if (key == "num_heads") cfg.num_heads = v.get<int>();
      else if (key == "model_dim") cfg.model_dim = v.get<int>();
      else if (key == "ff_hidden_dim") cfg.ff_hidden_dim = v.get<int>();
      else if (key == "key_dim") cfg.key_dim = v.get<int>();
      else if (key == "attention") cfg.attention = tf::parse_attention(v.get<std::string>());
      else if (key == "weighting") cfg.weighting = tf::parse_weighting(v.get<std::string>());
      else if (key == "combine") cfg.combine = tf::parse_combine(v.get<std::string>());
      else if (key == "hard_tie_epsilon") cfg.hard_tie_epsilon = v.get<double>();
      else if (key == "positional") {
        for (const auto& [pk, pv] : v.items()) {
          if (pk == "kind") cfg.positional.kind = tf::parse_positional(pv.get<std::string>());
          else if (pk == "max_len") cfg.positional.max_len = pv.get<std::size_t>();
          else if (pk == "tag") cfg.positional.tag = pv.get<std::string>();
          else if (pk == "base") cfg.positional.base = pv.get<double>();
          else fail(ErrorKind::input, "unknown positional key '" + pk + "'");
        }
      } else {
        fail(ErrorKind::input, "unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::input, std::string("bad model config: ") + e.what());
  }
  return cfg;
}

json model_info(const tf::Model& model) {
  std::string symbols(model.params.vocabulary.symbols.begin(), model.params.vocabulary.symbols.end());
  return {{"config", config(model.config)},
          {"vocabulary", symbols},
          {"parameter_count", tf::parameter_count(model)}};
}

json trace(const tf::Model& model, const std::string& word, const tf::ForwardTrace& t, bool full) {
  const double prob = tf::predict_label(model, t);
  json j = {{"word", word},
            {"length", word.size()},
            {"label_probability", number(prob)},
            {"accepts", tf::accepts(prob)},
            {"output", vector(t.output)}};
  const auto next = tf::predict_next(model, t);
  json nj = json::object();
  for (std::size_t k = 0; k < next.symbols.size(); ++k) nj[std::string(1, next.symbols[k])] = number(next.probs[k]);
  j["next_symbol"] = std::move(nj);
  if (full) {
    json acts = json::array();
    for (const auto& a : t.activations) acts.push_back(matrix(a.transpose()));  // [position][dim]
    j["activations"] = std::move(acts);
    json layers = json::array();
    for (const auto& l : t.layers) {
      json heads = json::array();
      for (std::size_t h = 0; h < l.scores.size(); ++h)
        heads.push_back({{"scores", matrix(l.scores[h])},
                         {"weights", matrix(l.weights[h])},
                         {"output", matrix(l.head_outputs[h].transpose())}});
      layers.push_back({{"heads", std::move(heads)}});
    }
    j["layers"] = std::move(layers);
  }
  return j;
}

json construction(const constructions::ConstructionReport& r) {
  return {{"which", r.which},
          {"N", r.N},
          {"verified_upto", r.verified_upto},
          {"sampled_upto", r.sampled_upto},
          {"checked", r.checked},
          {"failures", r.failures},
          {"parameter_count", r.parameter_count}};
}

json dataset_record(const langs::DatasetRecord& r) {
  return {{"word", r.word},
          {"language", std::string(langs::language_name(r.language))},
          {"label", r.label},
          {"length", r.word.size()},
          {"seed", r.seed}};
}

namespace {

json restriction(const restriction::Restriction& rho, const std::vector<char>& symbols) {
  return {{"pattern", rho.to_string(symbols)}, {"free", rho.free_count()}};
}

json reduction(const restriction::CTransformer& ct, const restriction::ReductionReport& r) {
  const auto& s = ct.word_symbols;
  return {{"params", restriction::to_string(r.params)},
          {"rho1", restriction(r.rho1, s)},
          {"rho2", restriction(r.rho2, s)},
          {"rho3", restriction(r.rho3, s)},
          {"stage2",
           {{"trivially_satisfied", r.stage2.trivially_satisfied},
            {"fixings", r.stage2.fixings},
            {"pairs", r.stage2.pairs},
            {"satisfied", r.stage2.satisfied},
            {"max_dependents", r.stage2.max_dependents},
            {"bound", r.stage2.bound}}},
          {"stage3",
           {{"success", r.stage3.success},
            {"resamples", r.stage3.resamples},
            {"rounds", r.stage3.rounds},
            {"violated_pairs", r.stage3.violated_pairs},
            {"violated_x0", r.stage3.violated_x0},
            {"census", r.stage3.census},
            {"seed", r.stage3.seed}}},
          {"layers_left", r.reduced.layers.size()},
          {"c_prime", r.c_prime},
          {"c_prime_full", r.c_prime_full},
          {"c_bound", r.c_bound}};
}

}  // namespace

json failure(const restriction::CTransformer& ct, const restriction::FailureReport& r) {
  json reds = json::array();
  for (const auto& x : r.reductions) reds.push_back(reduction(ct, x));
  const auto& p = r.pair;
  return {{"n", ct.n},
          {"c", ct.c},
          {"layers", ct.layers.size()},
          {"heads", ct.config.num_heads},
          {"attempts", r.attempts},
          {"initial", restriction(r.initial, ct.word_symbols)},
          {"reductions", std::move(reds)},
          {"dependency",
           {{"depends_on", r.dependency.depends_on},
            {"checked_contexts", r.dependency.checked_contexts},
            {"exhaustive", r.dependency.exhaustive}}},
          {"counterexample",
           {{"found", p.found},
            {"language", p.language},
            {"word_a", p.word_a},
            {"word_b", p.word_b},
            {"member_a", p.member_a},
            {"member_b", p.member_b},
            {"decision_a", p.decision_a},
            {"decision_b", p.decision_b},
            {"flipped_position", p.flipped_position},
            {"rho", restriction(p.rho, ct.word_symbols)},
            {"reads", p.reads},
            {"note", p.note}}}};
}

json decay(const sensitivity::DecayCurve& c, const sensitivity::BoundConstants& b) {
  json rows = json::array();
  for (std::size_t k = 0; k < c.n_values.size(); ++k)
    rows.push_back({{"n", c.n_values[k]},
                    {"max_delta", number(c.max_delta[k])},
                    {"analytic_bound", number(c.analytic_bound[k])},
                    {"slope_running", number(c.slope_running[k])}});
  json per_layer = json::array();
  for (std::size_t k = 0; k < b.other.size(); ++k)
    per_layer.push_back({{"layer", k},
                         {"F", number(b.F_k[k])},
                         {"perturbed", number(b.perturbed[k])},
                         {"other", number(b.other[k])},
                         {"sketch_perturbed", number(b.sketch_perturbed[k])},
                         {"sketch_other", number(b.sketch_other[k])}});
  return {{"slope", number(c.slope)},
          {"trials", c.trials},
          {"seed", c.seed},
          {"rows", std::move(rows)},
          {"constants_at_largest_n",
           {{"n", b.n},
            {"D", number(b.D)},
            {"F", number(b.F)},
            {"A", number(b.A)},
            {"C_fatt", number(b.C_fatt)},
            {"L_fact", number(b.L_fact)},
            {"C", number(b.C)},
            {"attention_weight_bound", number(b.attention_weight_bound)},
            {"layers", std::move(per_layer)}}}};
}

json ce(const evaluation::CEReport& r) {
  json j = {{"language", std::string(langs::language_name(r.language))},
            {"n", r.n},
            {"p", r.p},
            {"model_ce", number(r.model_ce)},
            {"model_ce_stderr", number(r.stderr_)},
            {"optimal_ce", number(r.optimal_ce)},
            {"optimal_ce_stderr", number(r.optimal_stderr)},
            {"unigram_ce", number(r.unigram_ce)},
            {"unigram_ce_stderr", number(r.unigram_stderr)},
            {"unigram_source", r.unigram_source},
            {"gap", number(r.gap)},
            {"gap_stderr", number(r.gap_stderr)},
            {"class_ce", number(r.class_ce)},
            {"type_ce", number(r.type_ce)},
            {"samples", r.samples},
            {"capped", r.capped},
            {"seed", r.seed},
            {"units", "nats"}};
  j["optimal_ce_closed_form"] = r.optimal_closed_form >= 0 ? number(r.optimal_closed_form) : json(nullptr);
  return j;
}

json height_chain(const langs::HeightChainStats& s) {
  return {{"p", s.p},
          {"truncation_height", s.truncation_height},
          {"leakage", number(s.leakage)},
          {"warning", s.warning},
          {"n_probe", s.n_probe},
          {"samples", s.samples},
          {"seed", s.seed},
          {"p0_lower", number(s.p0_lower)},
          {"p0_stderr", number(s.p0_stderr)}};
}

}  // namespace attnlimits::reports
