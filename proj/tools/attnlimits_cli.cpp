// attnlimits command-line front end. Every subcommand goes through the C API
// and writes exactly one run manifest.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "attnlimits/attnlimits.h"
#include "manifest.hpp"

namespace {

struct Failure {
  int code;
  std::string message;
};

void check(al_status s) {
  if (s != AL_OK) throw Failure{al_exit_code(s), std::string(al_status_name(s)) + ": " + al_last_error()};
}

struct CString {
  char* p = nullptr;
  CString() = default;
  CString(const CString&) = delete;
  CString& operator=(const CString&) = delete;
  ~CString() { al_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

using ModelPtr = std::unique_ptr<al_model, void (*)(al_model*)>;

ModelPtr load(const std::string& path, RunManifest& m) {
  m.input_file(path);
  al_model* raw = nullptr;
  check(al_model_load(path.c_str(), &raw));
  return ModelPtr(raw, al_model_free);
}

void emit(const std::string& path, const std::string& contents, RunManifest& m) {
  m.output(path.empty() ? "stdout" : path, contents);
  if (path.empty()) {
    std::cout << contents;
    if (!contents.empty() && contents.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << contents)) throw Failure{2, "io error: cannot write '" + path + "'"};
}

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string manifest;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Base seed; every sub-seed is derived from it");
  sub->add_option("--threads", c.threads, "Worker threads (0: available parallelism)");
  sub->add_option("--manifest", c.manifest, "Run manifest path (default: <out>.manifest.json, else stderr)");
}

struct GenerateArgs {
  std::string language = "parity", mode = "process", out;
  double p = 0.5;
  std::size_t count = 10, max_len = 64;
};

struct ConstructArgs {
  std::vector<std::string> which;
  int N = 0;
  std::size_t verify_upto = 10;
  std::string out, report;
  std::size_t sample_n = 0, sample_count = 0;
};

struct ForwardArgs {
  std::string model, word, dump_trace;
};

struct RestrictArgs {
  std::string model, stage_params, language, out;
  std::size_t n = 16;
  int c = 0;
};

struct PerturbArgs {
  std::string model, grid = "16:1024:x2", out, summary;
  std::size_t trials = 4;
};

struct EvaluateArgs {
  std::string model, language = "parity", grid, out, csv;
  double p = 0.5;
  std::size_t n = 256, samples = 100000;
};

struct RandomArgs {
  std::string language = "parity", config, out;
  double scale = 1.0;
};

int run(const std::string& name, const Common& common, const std::string& out,
        const std::function<void(RunManifest&)>& body) {
  RunManifest m(name);
  m.seed(common.seed);
  m.param("threads", common.threads);
  int code = 0;
  std::string error;
  try {
    body(m);
  } catch (const Failure& f) {
    code = f.code;
    error = f.message;
  } catch (const std::exception& e) {
    code = 2;
    error = e.what();
  }
  if (!error.empty()) std::cerr << "attnlimits " << name << ": " << error << "\n";
  std::string path = common.manifest;
  if (path.empty() && !out.empty()) path = out + ".manifest.json";
  m.write(path, code, error);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expressivity limits of self-attention: constructions, restrictions, sensitivity, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(al_version()));

  Common common;
  GenerateArgs ga;
  ConstructArgs ca;
  ForwardArgs fa;
  RestrictArgs ra;
  PerturbArgs pa;
  EvaluateArgs ea;
  RandomArgs xa;

  auto* gen = app.add_subcommand("generate", "Emit a JSONL dataset of words");
  gen->add_option("--language", ga.language, "parity, dyck1, dyck2, ones_star or anbn");
  gen->add_option("--p", ga.p, "Termination / expansion probability");
  gen->add_option("--count", ga.count, "Number of words");
  gen->add_option("--max-len", ga.max_len, "Maximum word length");
  gen->add_option("--mode", ga.mode, "process or uniform")->check(CLI::IsMember({"process", "uniform"}));
  gen->add_option("--out", ga.out, "Output path (default stdout)");
  add_common(gen, common);

  auto* con = app.add_subcommand("construct", "Build a hand-constructed recognizer");
  con->add_option("--which", ca.which, "ones_star, anbn or parity N")->required()->expected(1, 2);
  con->add_option("--N", ca.N, "Length bound for parity");
  con->add_option("--verify-upto", ca.verify_upto, "Exhaustive verification length");
  con->add_option("--sample-n", ca.sample_n, "Additional sampled verification at this length");
  con->add_option("--sample-count", ca.sample_count, "Words for the sampled verification");
  con->add_option("--out", ca.out, "Model output path")->required();
  con->add_option("--report", ca.report, "Verification report path (default stdout)");
  add_common(con, common);

  auto* fwd = app.add_subcommand("forward", "Run a model on one word");
  fwd->add_option("--model", fa.model, "Model file")->required();
  fwd->add_option("--word", fa.word, "Input word (without end marker)")->required();
  fwd->add_option("--dump-trace", fa.dump_trace, "Write the full layer trace here");
  add_common(fwd, common);

  auto* res = app.add_subcommand("restrict", "Depth reduction and counterexample search (hard attention)");
  res->add_option("--model", ra.model, "Model file")->required();
  res->add_option("--n", ra.n, "Word length");
  res->add_option("--stage-params", ra.stage_params, "k=2,eta=0.1,q=0.5,delta=0.5[,C=..,max_resamples=..]");
  res->add_option("--c", ra.c, "0: lift the model; 1 or 2: random layer-0 tables reading c positions");
  res->add_option("--language", ra.language, "parity or dyck1 (default: from the vocabulary)");
  res->add_option("--out", ra.out, "Report path (default stdout)");
  add_common(res, common);

  auto* per = app.add_subcommand("perturb", "Single-flip influence sweep (soft attention)");
  per->add_option("--model", pa.model, "Model file")->required();
  per->add_option("--n-grid", pa.grid, "16:1024:x2, 16:256:+16 or 16,32,64");
  per->add_option("--trials", pa.trials, "Random base words per n");
  per->add_option("--out", pa.out, "CSV path (default stdout)");
  per->add_option("--summary", pa.summary, "JSON summary with the bound constants");
  add_common(per, common);

  auto* ev = app.add_subcommand("evaluate", "Next-symbol cross-entropy against the exact oracle");
  ev->add_option("--model", ea.model, "Model file")->required();
  ev->add_option("--language", ea.language, "parity, dyck1 or dyck2");
  ev->add_option("--p", ea.p, "Process parameter");
  auto* n_opt = ev->add_option("--n", ea.n, "Prefix length");
  ev->add_option("--n-grid", ea.grid, "Prefix lengths for a CE-vs-n curve")->excludes(n_opt);
  ev->add_option("--samples", ea.samples, "Prefixes per length");
  ev->add_option("--out", ea.out, "Report path (default stdout)");
  ev->add_option("--csv", ea.csv, "CE-vs-n CSV path");
  add_common(ev, common);

  auto* rnd = app.add_subcommand("random-model", "Write a randomly initialized model");
  rnd->add_option("--language", xa.language, "Vocabulary source language");
  rnd->add_option("--config", xa.config, "JSON object with config overrides");
  rnd->add_option("--scale", xa.scale, "Weight scale");
  rnd->add_option("--out", xa.out, "Model output path")->required();
  add_common(rnd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << (failing == &app ? app.help() : failing->help("attnlimits"));
    return 2;
  }

  if (gen->parsed()) {
    return run("generate", common, ga.out, [&](RunManifest& m) {
      m.param("language", ga.language);
      m.param("p", ga.p);
      m.param("count", ga.count);
      m.param("max_len", ga.max_len);
      m.param("mode", ga.mode);
      CString s;
      check(al_generate(ga.language.c_str(), ga.mode.c_str(), ga.p, ga.count, ga.max_len, common.seed, &s.p));
      emit(ga.out, s.str(), m);
    });
  }

  if (con->parsed()) {
    return run("construct", common, ca.out, [&](RunManifest& m) {
      const std::string which = ca.which.at(0);
      int N = ca.N;
      if (ca.which.size() == 2) {
        try {
          N = std::stoi(ca.which[1]);
        } catch (const std::exception&) {
          throw Failure{2, "input error: parity length bound must be an integer"};
        }
      }
      m.param("which", which);
      m.param("N", N);
      m.param("verify_upto", ca.verify_upto);
      m.param("sample_n", ca.sample_n);
      m.param("sample_count", ca.sample_count);
      al_model* raw = nullptr;
      CString report;
      check(al_construct(which.c_str(), N, ca.verify_upto, common.threads, &raw, &report.p));
      ModelPtr model(raw, al_model_free);
      std::string rep = report.str();
      if (ca.sample_n > 0 && ca.sample_count > 0) {
        CString sampled;
        check(al_verify_sampled(model.get(), which.c_str(), ca.sample_n, ca.sample_count, common.seed,
                                common.threads, &sampled.p));
        auto j = nlohmann::json::parse(rep);
        j["sampled"] = nlohmann::json::parse(sampled.str());
        rep = j.dump(2);
      }
      check(al_model_save(model.get(), ca.out.c_str()));
      CString text;
      check(al_model_to_json(model.get(), &text.p));
      m.output(ca.out, text.str());
      emit(ca.report, rep, m);
    });
  }

  if (fwd->parsed()) {
    return run("forward", common, fa.dump_trace, [&](RunManifest& m) {
      m.param("model", fa.model);
      m.param("word", fa.word);
      m.param("dump_trace", fa.dump_trace);
      auto model = load(fa.model, m);
      CString summary;
      check(al_forward(model.get(), fa.word.c_str(), 0, &summary.p));
      if (!fa.dump_trace.empty()) {
        CString full;
        check(al_forward(model.get(), fa.word.c_str(), 1, &full.p));
        emit(fa.dump_trace, full.str(), m);
      }
      emit("", summary.str(), m);
    });
  }

  if (res->parsed()) {
    return run("restrict", common, ra.out, [&](RunManifest& m) {
      m.param("model", ra.model);
      m.param("n", ra.n);
      m.param("stage_params", ra.stage_params);
      m.param("c", ra.c);
      m.param("language", ra.language);
      auto model = load(ra.model, m);
      CString s;
      check(al_restrict(model.get(), ra.n, ra.c, ra.stage_params.c_str(), ra.language.c_str(), common.seed,
                        common.threads, &s.p));
      emit(ra.out, s.str(), m);
    });
  }

  if (per->parsed()) {
    return run("perturb", common, pa.out, [&](RunManifest& m) {
      m.param("model", pa.model);
      m.param("n_grid", pa.grid);
      m.param("trials", pa.trials);
      auto model = load(pa.model, m);
      CString csv, summary;
      check(al_perturb(model.get(), pa.grid.c_str(), pa.trials, common.seed, common.threads, &csv.p,
                       pa.summary.empty() ? nullptr : &summary.p));
      if (!pa.summary.empty()) emit(pa.summary, summary.str(), m);
      emit(pa.out, csv.str(), m);
    });
  }

  if (ev->parsed()) {
    return run("evaluate", common, ea.out, [&](RunManifest& m) {
      const std::string grid = ea.grid.empty() ? std::to_string(ea.n) : ea.grid;
      m.param("model", ea.model);
      m.param("language", ea.language);
      m.param("p", ea.p);
      m.param("n_grid", grid);
      m.param("samples", ea.samples);
      auto model = load(ea.model, m);
      CString report, csv;
      check(al_evaluate(model.get(), ea.language.c_str(), ea.p, grid.c_str(), ea.samples, common.seed,
                        common.threads, &report.p, &csv.p));
      if (!ea.csv.empty()) emit(ea.csv, csv.str(), m);
      emit(ea.out, report.str(), m);
    });
  }

  if (rnd->parsed()) {
    return run("random-model", common, xa.out, [&](RunManifest& m) {
      m.param("language", xa.language);
      m.param("config", xa.config);
      m.param("scale", xa.scale);
      al_model* raw = nullptr;
      check(al_random_model(xa.config.c_str(), xa.language.c_str(), common.seed, xa.scale, &raw));
      ModelPtr model(raw, al_model_free);
      check(al_model_save(model.get(), xa.out.c_str()));
      CString text;
      check(al_model_to_json(model.get(), &text.p));
      m.output(xa.out, text.str());
    });
  }
  return 2;
}
