#include "attnlimits/attnlimits.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>
#include <string>

#include "attnlimits/model_io.hpp"
#include "reports.hpp"

using namespace attnlimits;
using reports::json;

struct al_model {
  tf::Model model;
};

namespace {

thread_local std::string g_last_error;

al_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::input: return AL_E_INPUT;
    case ErrorKind::config: return AL_E_CONFIG;
    case ErrorKind::schema: return AL_E_SCHEMA;
    case ErrorKind::version: return AL_E_VERSION;
    case ErrorKind::unsupported: return AL_E_UNSUPPORTED;
    case ErrorKind::numeric: return AL_E_NUMERIC;
    case ErrorKind::reduction: return AL_E_REDUCTION;
    case ErrorKind::io: return AL_E_IO;
  }
  return AL_E_INTERNAL;
}

template <class F>
al_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return AL_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return AL_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AL_E_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  if (!p) fail(ErrorKind::input, std::string(what) + " must not be null");
}

unsigned threads_or_default(unsigned t) { return t == 0 ? default_threads() : t; }

langs::Language infer_language(const tf::Model& m) {
  const auto syms = m.params.vocabulary.word_symbols();
  const std::string s(syms.begin(), syms.end());
  if (s == "01") return langs::Language::parity;
  if (s == "()") return langs::Language::dyck1;
  fail(ErrorKind::input, "cannot infer a language from vocabulary '" + s + "'; pass one explicitly");
}

}  // namespace

extern "C" {

const char* al_version(void) { return "1.0.0"; }

const char* al_last_error(void) { return g_last_error.c_str(); }

const char* al_status_name(al_status status) {
  switch (status) {
    case AL_OK: return "ok";
    case AL_E_INPUT: return "input error";
    case AL_E_CONFIG: return "config error";
    case AL_E_SCHEMA: return "schema error";
    case AL_E_VERSION: return "version error";
    case AL_E_UNSUPPORTED: return "unsupported";
    case AL_E_NUMERIC: return "numeric error";
    case AL_E_REDUCTION: return "reduction failure";
    case AL_E_IO: return "io error";
    case AL_E_INTERNAL: return "internal error";
  }
  return "unknown";
}

int al_exit_code(al_status status) {
  switch (status) {
    case AL_OK: return 0;
    case AL_E_NUMERIC: return 3;
    case AL_E_REDUCTION: return 4;
    default: return 2;
  }
}

void al_string_free(char* s) { std::free(s); }

al_status al_model_load(const char* path, al_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new al_model{tf::load_model(path)};
  });
}

al_status al_model_from_json(const char* text, al_model** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new al_model{tf::model_from_json(text)};
  });
}

al_status al_model_save(const al_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    tf::save_model(model->model, path);
  });
}

al_status al_model_to_json(const al_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = dup(tf::model_to_json(model->model));
  });
}

al_status al_model_info(const al_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = dup(reports::model_info(model->model).dump(2));
  });
}

void al_model_free(al_model* model) { delete model; }

al_status al_random_model(const char* config_json, const char* language, uint64_t seed, double scale,
                          al_model** out) {
  return guarded([&] {
    need(out, "out");
    need(language, "language");
    tf::ModelConfig cfg;
    if (config_json && *config_json) {
      json j;
      try {
        j = json::parse(config_json);
      } catch (const json::exception& e) {
        fail(ErrorKind::input, std::string("config is not valid JSON: ") + e.what());
      }
      cfg = reports::config_from(j);
    }
    const auto vocab = langs::alphabet_for(langs::parse_language(language));
    *out = new al_model{tf::random_model(cfg, vocab, seed, scale)};
  });
}

al_status al_construct(const char* which, int N, size_t verify_upto, unsigned threads, al_model** out,
                       char** report_json) {
  return guarded([&] {
    need(which, "which");
    need(out, "out");
    auto rep = constructions::build(which, N, verify_upto, threads_or_default(threads));
    if (report_json) *report_json = dup(reports::construction(rep).dump(2));
    *out = new al_model{std::move(rep.model)};
  });
}

al_status al_verify_sampled(const al_model* model, const char* language, size_t n, size_t count, uint64_t seed,
                            unsigned threads, char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(language, "language");
    need(report_json, "report_json");
    constructions::ConstructionReport rep;
    rep.which = language;
    rep.parameter_count = tf::parameter_count(model->model);
    rep.model = model->model;
    constructions::verify_sampled(rep, langs::parse_language(language), n, count, seed, threads_or_default(threads));
    auto j = reports::construction(rep);
    j["seed"] = seed;
    *report_json = dup(j.dump(2));
  });
}

al_status al_forward(const al_model* model, const char* word, int full_trace, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(word, "word");
    need(out_json, "out_json");
    const auto detail = full_trace ? tf::TraceDetail::full : tf::TraceDetail::final_only;
    const auto t = tf::forward(model->model, std::string_view(word), detail);
    *out_json = dup(reports::trace(model->model, word, t, full_trace != 0).dump(1));
  });
}

al_status al_generate(const char* language, const char* mode, double p, size_t count, size_t max_len,
                      uint64_t seed, char** out_jsonl) {
  return guarded([&] {
    need(language, "language");
    need(out_jsonl, "out_jsonl");
    const std::string m = mode ? mode : "process";
    langs::SampleMode sm;
    if (m == "process") sm = langs::SampleMode::process;
    else if (m == "uniform") sm = langs::SampleMode::uniform;
    else fail(ErrorKind::input, "mode must be process or uniform");
    const auto recs = langs::generate_dataset(langs::parse_language(language), sm, p, count, max_len, seed);
    std::string out;
    for (const auto& r : recs) out += reports::dataset_record(r).dump() + "\n";
    *out_jsonl = dup(out);
  });
}

al_status al_restrict(const al_model* model, size_t n, int c, const char* stage_params, const char* language,
                      uint64_t seed, unsigned threads, char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(report_json, "report_json");
    if (model->model.config.weighting != tf::Weighting::hard)
      fail(ErrorKind::unsupported, "hard attention required for restriction and depth reduction");
    const auto params = stage_params && *stage_params ? restriction::parse_stage_params(stage_params)
                                                      : restriction::StageParams{};
    const auto lang = language && *language ? langs::parse_language(language) : infer_language(model->model);
    const auto ct = c == 0 ? restriction::lift(model->model, n)
                           : restriction::random_ctransformer(model->model, n, c, derive_seed(seed, "tables"));
    const auto rep = restriction::demonstrate_failure(ct, lang, params, seed, threads_or_default(threads));
    auto j = reports::failure(ct, rep);
    j["seed"] = seed;
    j["stage_params"] = restriction::to_string(params);
    *report_json = dup(j.dump(2));
  });
}

al_status al_perturb(const al_model* model, const char* n_grid, size_t trials, uint64_t seed, unsigned threads,
                     char** csv, char** summary_json) {
  return guarded([&] {
    need(model, "model");
    need(n_grid, "n_grid");
    const auto grid = sensitivity::parse_grid(n_grid);
    const auto curve = sensitivity::decay_sweep(model->model, grid, trials, seed, threads_or_default(threads));
    if (csv) *csv = dup(sensitivity::decay_csv(curve));
    if (summary_json) {
      const auto b = sensitivity::analytic_bound(model->model, curve.n_values.back());
      *summary_json = dup(reports::decay(curve, b).dump(2));
    }
  });
}

al_status al_evaluate(const al_model* model, const char* language, double p, const char* n_grid, size_t samples,
                      uint64_t seed, unsigned threads, char** report_json, char** csv) {
  return guarded([&] {
    need(model, "model");
    need(language, "language");
    need(n_grid, "n_grid");
    const auto lang = langs::parse_language(language);
    const auto grid = sensitivity::parse_grid(n_grid);
    const unsigned t = threads_or_default(threads);
    const auto predictor = evaluation::model_predictor(model->model);
    std::vector<evaluation::CEReport> reps;
    json rows = json::array();
    for (std::size_t n : grid) {
      reps.push_back(evaluation::model_ce(predictor, lang, n, samples, p, derive_seed(seed, n), t));
      rows.push_back(reports::ce(reps.back()));
    }
    json j = {{"language", std::string(langs::language_name(lang))},
              {"p", p},
              {"seed", seed},
              {"samples", samples},
              {"reports", std::move(rows)}};
    if (lang == langs::Language::parity) {
      const auto tv = evaluation::parity_pair_tv(model->model, grid.back(), 4, derive_seed(seed, "tv"), t);
      j["pair_tv"] = {{"n", tv.n}, {"mean", tv.mean}, {"max", tv.max}, {"pairs", tv.pairs}, {"seed", tv.seed}};
    } else {
      const auto hc = langs::height_chain_stats(p, 16, grid.back(), 100000, derive_seed(seed, "height"));
      j["height_chain"] = reports::height_chain(hc);
      j["ce_gap_bound_nats"] = reports::number(evaluation::ce_gap_bound(p, hc.p0_lower));
      j["ce_gap_bound_bits"] = reports::number(evaluation::ce_gap_bound_bits(p, hc.p0_lower));
    }
    if (report_json) *report_json = dup(j.dump(2));
    if (csv) *csv = dup(evaluation::ce_csv(reps));
  });
}

}  // extern "C"
