#include "attnlimits/restriction.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace attnlimits::restriction {

// ---------------------------------------------------------------------------
// Restriction

std::size_t Restriction::free_count() const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), kFree));
}

std::vector<std::size_t> Restriction::free_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == kFree) out.push_back(i);
  return out;
}

std::string Restriction::to_string(const std::vector<char>& word_symbols) const {
  std::string s;
  s.reserve(assignment.size());
  for (int a : assignment) s.push_back(a == kFree ? '*' : word_symbols[static_cast<std::size_t>(a)]);
  return s;
}

bool Restriction::refined_by(const Restriction& later) const {
  if (later.length() != length()) return false;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] != kFree && later.assignment[i] != assignment[i]) return false;
  return true;
}

Restriction parse_restriction(std::string_view pattern, const std::vector<char>& word_symbols) {
  Restriction r;
  for (char ch : pattern) {
    if (ch == '*') {
      r.assignment.push_back(kFree);
      continue;
    }
    const auto it = std::find(word_symbols.begin(), word_symbols.end(), ch);
    if (it == word_symbols.end()) fail(ErrorKind::input, std::string("restriction symbol '") + ch + "' not in alphabet");
    r.assignment.push_back(static_cast<int>(it - word_symbols.begin()));
  }
  return r;
}

std::vector<int> restrict_word(const Restriction& rho, std::vector<int> word) {
  if (word.size() != rho.length()) fail(ErrorKind::input, "restriction length does not match the word length");
  for (std::size_t i = 0; i < word.size(); ++i)
    if (rho.assignment[i] != kFree) word[i] = rho.assignment[i];
  return word;
}

// ---------------------------------------------------------------------------
// c-transformers

std::size_t CTransformer::entry_index(std::size_t pos, const std::vector<int>& word) const {
  std::size_t e = 0;
  const std::size_t base = word_symbols.size();
  for (int in : inputs[pos]) e = e * base + static_cast<std::size_t>(word[static_cast<std::size_t>(in)]);
  return e;
}

std::size_t CTransformer::max_fan_in() const {
  std::size_t m = 0;
  for (const auto& in : inputs) m = std::max(m, in.size());
  return m;
}

namespace {

void require_hard(const tf::ModelConfig& cfg) {
  if (cfg.weighting != tf::Weighting::hard)
    fail(ErrorKind::unsupported, "hard attention required for restriction and depth reduction");
  if (cfg.hard_tie_epsilon != 0.0)
    fail(ErrorKind::unsupported, "depth reduction requires exact hard-attention ties (tie epsilon 0)");
}

CTransformer skeleton(const tf::Model& model, std::size_t n) {
  require_hard(model.config);
  tf::validate(model);
  if (n == 0) fail(ErrorKind::input, "word length must be positive");
  CTransformer ct;
  ct.config = model.config;
  ct.vocabulary = model.params.vocabulary;
  ct.word_symbols = ct.vocabulary.word_symbols();
  ct.n = n;
  ct.layers = model.params.layers;
  ct.label_head = model.params.label_head;
  ct.inputs.assign(n + 1, {});
  ct.tables.assign(n + 1, {});
  ct.tables[n] = {tf::layer0_vector(model, ct.vocabulary.index_of(ct.vocabulary.eos), n + 1)};
  return ct;
}

}  // namespace

CTransformer lift(const tf::Model& model, std::size_t n) {
  CTransformer ct = skeleton(model, n);
  ct.c = 1;
  for (std::size_t j = 0; j < n; ++j) {
    ct.inputs[j] = {static_cast<int>(j)};
    for (char s : ct.word_symbols) ct.tables[j].push_back(tf::layer0_vector(model, ct.vocabulary.index_of(s), j + 1));
  }
  return ct;
}

CTransformer random_ctransformer(const tf::Model& model, std::size_t n, int c, std::uint64_t seed) {
  if (c < 1 || c > 2) fail(ErrorKind::config, "random c-transformers support c in {1, 2}");
  CTransformer ct = skeleton(model, n);
  ct.c = c;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index w = ct.config.width();
  const std::size_t base = ct.word_symbols.size();
  for (std::size_t j = 0; j < n; ++j) {
    ct.inputs[j] = {static_cast<int>(j)};
    if (c == 2 && n > 1) {
      auto other = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - 1));
      if (other >= j) ++other;
      ct.inputs[j].push_back(static_cast<int>(other));
    }
    std::size_t entries = 1;
    for (std::size_t t = 0; t < ct.inputs[j].size(); ++t) entries *= base;
    for (std::size_t e = 0; e < entries; ++e) {
      Vec v(w);
      for (Eigen::Index d = 0; d < w; ++d) v(d) = normal(rng);
      ct.tables[j].push_back(std::move(v));
    }
  }
  return ct;
}

namespace {

void check_word(const CTransformer& ct, const std::vector<int>& word) {
  if (word.size() != ct.n) fail(ErrorKind::input, "word length does not match the c-transformer length");
  for (int s : word)
    if (s < 0 || static_cast<std::size_t>(s) >= ct.word_symbols.size()) fail(ErrorKind::input, "symbol out of range");
}

}  // namespace

double label_probability(const CTransformer& ct, const std::vector<int>& word) {
  check_word(ct, word);
  if (ct.layers.empty()) return tf::label_probability(ct.label_head, ct.layer0(ct.n, word));
  Mat y0(ct.config.width(), static_cast<Eigen::Index>(ct.positions()));
  for (std::size_t j = 0; j < ct.positions(); ++j) {
    if (ct.tables[j].empty()) fail(ErrorKind::input, "layer-0 table not materialized at a read position");
    y0.col(static_cast<Eigen::Index>(j)) = ct.layer0(j, word);
  }
  const auto trace = tf::run_stack(ct.config, ct.layers, std::move(y0), tf::TraceDetail::final_only);
  return tf::label_probability(ct.label_head, trace.output);
}

bool accepts(const CTransformer& ct, const std::vector<int>& word) { return tf::accepts(label_probability(ct, word)); }

Evaluator apply_restriction(const CTransformer& ct, const Restriction& rho) {
  if (rho.length() != ct.n) fail(ErrorKind::input, "restriction length does not match the evaluation length");
  return [&ct, rho](const std::vector<int>& word) { return accepts(ct, restrict_word(rho, word)); };
}

// ---------------------------------------------------------------------------
// Stage parameters

void check_stage_params(const StageParams& p) {
  if (p.k < 1) fail(ErrorKind::config, "k must be at least 1");
  if (!(p.eta > 0.0 && p.eta < 0.5)) fail(ErrorKind::config, "eta must lie in (0, 1/2)");
  if (!(p.q > 0.0 && p.q < 1.0)) fail(ErrorKind::config, "q must lie in (0, 1)");
  if (!(p.delta > 0.0)) fail(ErrorKind::config, "delta must be positive");
  if (!((1.0 + p.delta) * p.q < 1.0)) fail(ErrorKind::config, "(1 + delta) * q must be below 1");
  if (p.C_target < 0.0 || p.C_target >= 1.0) fail(ErrorKind::config, "C_target must lie in [0, 1)");
  if (p.max_resamples == 0) fail(ErrorKind::config, "max_resamples must be positive");
}

StageParams parse_stage_params(std::string_view text) {
  StageParams p;
  std::string s(text);
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) fail(ErrorKind::input, "stage parameter '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "k") {
        p.k = std::stoi(val, &used);
      } else if (key == "eta") {
        p.eta = std::stod(val, &used);
      } else if (key == "q") {
        p.q = std::stod(val, &used);
      } else if (key == "delta") {
        p.delta = std::stod(val, &used);
      } else if (key == "C" || key == "C_target") {
        p.C_target = std::stod(val, &used);
      } else if (key == "max_resamples") {
        p.max_resamples = static_cast<std::size_t>(std::stoull(val, &used));
      } else {
        fail(ErrorKind::input, "unknown stage parameter '" + key + "'");
      }
      if (used != val.size()) throw std::invalid_argument(val);
    } catch (const std::logic_error&) {
      fail(ErrorKind::input, "bad value for stage parameter '" + key + "'");
    }
  }
  check_stage_params(p);
  return p;
}

std::string to_string(const StageParams& p) {
  std::ostringstream os;
  os << "k=" << p.k << ",eta=" << p.eta << ",q=" << p.q << ",delta=" << p.delta;
  if (p.C_target > 0.0) os << ",C=" << p.C_target;
  os << ",max_resamples=" << p.max_resamples;
  return os.str();
}

// ---------------------------------------------------------------------------
// Stage 1

std::vector<std::size_t> fan_out(const CTransformer& ct, const Restriction& rho) {
  std::vector<std::size_t> out(ct.n, 0);
  for (const auto& in : ct.inputs)
    for (int p : in)
      if (rho.is_free(static_cast<std::size_t>(p))) ++out[static_cast<std::size_t>(p)];
  return out;
}

std::size_t stage1_bound(const CTransformer& ct, const Restriction& rho, const StageParams& params) {
  const double frac = params.C_target > 0.0 ? params.C_target
                                            : static_cast<double>(rho.free_count()) / static_cast<double>(ct.n);
  if (frac <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(static_cast<double>(ct.c) / (params.eta * frac) - 1e-12));
}

Restriction stage1(const CTransformer& ct, const Restriction& rho, const StageParams& params) {
  check_stage_params(params);
  if (rho.length() != ct.n) fail(ErrorKind::input, "restriction length does not match the c-transformer");
  const std::size_t bound = stage1_bound(ct, rho, params);
  const auto fo = fan_out(ct, rho);
  Restriction out = rho;
  for (std::size_t p = 0; p < ct.n; ++p)
    if (out.is_free(p) && fo[p] > bound) out.assignment[p] = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Max-attention analysis

namespace {

// Per-position view of the layer-0 tables under a restriction.
struct PositionView {
  std::vector<int> free_in;                  // free inputs
  std::vector<std::vector<int>> assigns;     // symbols for free_in
  std::vector<std::size_t> entries;          // table entry per assignment
};

struct ValueGroup {
  Vec value;
  std::vector<std::size_t> assigns;  // indices into PositionView::assigns
};

class Analysis {
 public:
  Analysis(const CTransformer& ct, const Restriction& rho) : ct_(ct) {
    if (rho.length() != ct.n) fail(ErrorKind::input, "restriction length does not match the c-transformer");
    if (ct.layers.empty()) fail(ErrorKind::input, "no attention layer left to analyse");
    const std::size_t t_len = ct.positions();
    const std::size_t base = ct.word_symbols.size();
    views_.resize(t_len);
    groups_.resize(t_len);
    std::vector<int> word(ct.n, 0);
    for (std::size_t p = 0; p < ct.n; ++p)
      if (!rho.is_free(p)) word[p] = rho.assignment[p];
    const auto& heads = ct.layers[0].heads;
    qproj_.assign(heads.size(), std::vector<std::vector<Vec>>(t_len));
    kproj_.assign(heads.size(), std::vector<std::vector<Vec>>(t_len));
    for (std::size_t j = 0; j < t_len; ++j) {
      if (ct.tables[j].empty()) fail(ErrorKind::input, "layer-0 table missing at an attended position");
      auto& v = views_[j];
      for (int in : ct.inputs[j])
        if (rho.is_free(static_cast<std::size_t>(in)) &&
            std::find(v.free_in.begin(), v.free_in.end(), in) == v.free_in.end())
          v.free_in.push_back(in);
      std::size_t combos = 1;
      for (std::size_t t = 0; t < v.free_in.size(); ++t) combos *= base;
      std::vector<int> local = word;
      for (std::size_t a = 0; a < combos; ++a) {
        std::vector<int> syms(v.free_in.size());
        std::size_t rest = a;
        for (std::size_t t = v.free_in.size(); t-- > 0;) {
          syms[t] = static_cast<int>(rest % base);
          rest /= base;
          local[static_cast<std::size_t>(v.free_in[t])] = syms[t];
        }
        v.assigns.push_back(std::move(syms));
        v.entries.push_back(ct.entry_index(j, local));
      }
      for (std::size_t a = 0; a < v.entries.size(); ++a) {
        const Vec& val = ct.tables[j][v.entries[a]];
        auto it = std::find_if(groups_[j].begin(), groups_[j].end(),
                               [&](const ValueGroup& g) { return g.value == val; });
        if (it == groups_[j].end()) {
          groups_[j].push_back({val, {a}});
        } else {
          it->assigns.push_back(a);
        }
      }
      for (std::size_t h = 0; h < heads.size(); ++h) {
        for (std::size_t e : v.entries) {
          qproj_[h][j].push_back(tf::project_vector(heads[h].query, ct.tables[j][e]));
          kproj_[h][j].push_back(tf::project_vector(heads[h].key, ct.tables[j][e]));
        }
      }
    }
  }

  const PositionView& view(std::size_t j) const { return views_[j]; }
  const std::vector<ValueGroup>& groups(std::size_t i) const { return groups_[i]; }

  MaxAttention max_attention(int h, std::size_t i, std::size_t g) const {
    const std::size_t t_len = ct_.positions();
    const auto& head = ct_.layers[0].heads[static_cast<std::size_t>(h)];
    const auto& gi = groups_[i][g];
    const auto& vi = views_[i];
    const Vec& q = qproj_[h][i][gi.assigns.front()];
    MaxAttention out;
    out.max_score.assign(t_len, 0.0);
    out.pinned.assign(t_len, 1);
    for (std::size_t j = 0; j < t_len; ++j) {
      if (j == i) {
        const Vec& k = kproj_[h][i][gi.assigns.front()];
        out.max_score[j] = tf::score(ct_.config, head, q.data(), k.data());
        continue;
      }
      const auto& vj = views_[j];
      // Shared free inputs must agree with one of the assignments giving z.
      std::vector<std::pair<std::size_t, std::size_t>> shared;  // (index in vi, index in vj)
      for (std::size_t a = 0; a < vi.free_in.size(); ++a)
        for (std::size_t b = 0; b < vj.free_in.size(); ++b)
          if (vi.free_in[a] == vj.free_in[b]) shared.emplace_back(a, b);
      bool any = false;
      double mx = 0.0, mn = 0.0;
      for (std::size_t b = 0; b < vj.assigns.size(); ++b) {
        bool ok = shared.empty();
        for (std::size_t ia = 0; !ok && ia < gi.assigns.size(); ++ia) {
          const auto& asg = vi.assigns[gi.assigns[ia]];
          ok = std::all_of(shared.begin(), shared.end(),
                           [&](const auto& s) { return asg[s.first] == vj.assigns[b][s.second]; });
        }
        if (!ok) continue;
        const Vec& k = kproj_[h][j][b];
        const double s = tf::score(ct_.config, head, q.data(), k.data());
        if (!any) {
          mx = mn = s;
          any = true;
        } else {
          mx = std::max(mx, s);
          mn = std::min(mn, s);
        }
      }
      out.max_score[j] = mx;
      out.pinned[j] = mx == mn;
    }
    out.order.resize(t_len);
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](int a, int b) { return out.max_score[static_cast<std::size_t>(a)] >
                                                out.max_score[static_cast<std::size_t>(b)]; });
    return out;
  }

  PairStatus walk(int h, std::size_t i, std::size_t g, int k) const {
    const MaxAttention m = max_attention(h, i, g);
    PairStatus st;
    st.i = i;
    st.h = h;
    st.z = static_cast<int>(g);
    std::set<int> used;
    for (int j : m.order) {
      st.walked.push_back(j);
      if (m.pinned[static_cast<std::size_t>(j)]) {
        st.guard = j;
        st.satisfied = true;
        return st;
      }
      const auto& fj = views_[static_cast<std::size_t>(j)].free_in;
      const bool priv = std::any_of(fj.begin(), fj.end(), [&](int f) { return !used.count(f); });
      if (priv) {
        st.selected.push_back(j);
        used.insert(fj.begin(), fj.end());
        if (static_cast<int>(st.selected.size()) == k) return st;
      }
    }
    st.satisfied = true;
    return st;
  }

  std::vector<PairStatus> census(int k) const {
    std::vector<PairStatus> out;
    const int heads = static_cast<int>(ct_.layers[0].heads.size());
    for (std::size_t i = 0; i < ct_.positions(); ++i)
      for (int h = 0; h < heads; ++h)
        for (std::size_t g = 0; g < groups_[i].size(); ++g) out.push_back(walk(h, i, g, k));
    return out;
  }

 private:
  const CTransformer& ct_;
  std::vector<PositionView> views_;
  std::vector<std::vector<ValueGroup>> groups_;
  std::vector<std::vector<std::vector<Vec>>> qproj_, kproj_;  // [head][position][assignment]
};

std::size_t pow_size(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace

std::vector<Vec> realizable_values(const CTransformer& ct, const Restriction& rho, std::size_t i) {
  require_hard(ct.config);
  Analysis an(ct, rho);
  std::vector<Vec> out;
  for (const auto& g : an.groups(i)) out.push_back(g.value);
  return out;
}

MaxAttention max_attention_table(const CTransformer& ct, const Restriction& rho, int h, std::size_t i, const Vec& z) {
  require_hard(ct.config);
  if (i >= ct.positions()) fail(ErrorKind::input, "query position out of range");
  if (h < 0 || h >= static_cast<int>(ct.layers.at(0).heads.size())) fail(ErrorKind::input, "head out of range");
  Analysis an(ct, rho);
  const auto& groups = an.groups(i);
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (groups[g].value == z) return an.max_attention(h, i, g);
  fail(ErrorKind::input, "value z is not realizable at this position under the restriction");
}

std::vector<PairStatus> pair_census(const CTransformer& ct, const Restriction& rho, int k) {
  require_hard(ct.config);
  return Analysis(ct, rho).census(k);
}

// ---------------------------------------------------------------------------
// Stage 2

Stage2Result stage2(const CTransformer& ct, const Restriction& rho1, const StageParams& params) {
  check_stage_params(params);
  require_hard(ct.config);
  Stage2Result res;
  res.rho = rho1;
  const std::size_t heads = ct.layers.at(0).heads.size();
  res.bound = pow_size(2, static_cast<std::size_t>(ct.c)) * static_cast<std::size_t>(params.k) * heads;
  if (ct.n <= static_cast<std::size_t>(ct.c) * static_cast<std::size_t>(params.k)) {
    res.trivially_satisfied = true;
    return res;
  }
  const std::size_t base = ct.word_symbols.size();
  for (;;) {
    Analysis an(ct, res.rho);
    const auto census = an.census(params.k);
    std::vector<std::size_t> dependents(ct.positions(), 0);
    res.pairs = census.size();
    res.satisfied = 0;
    for (const auto& st : census) {
      if (st.satisfied) {
        ++res.satisfied;
        continue;
      }
      for (int j : st.selected) ++dependents[static_cast<std::size_t>(j)];
    }
    const auto top = std::max_element(dependents.begin(), dependents.end());
    res.max_dependents = *top;
    if (*top <= res.bound) break;
    const auto j = static_cast<std::size_t>(top - dependents.begin());
    const auto& free_in = an.view(j).free_in;
    // Pigeonhole step: fix the inputs of j to the assignment leaving the most
    // pairs satisfied.
    Restriction best;
    std::size_t best_sat = 0;
    bool have = false;
    for (std::size_t a = 0; a < pow_size(base, free_in.size()); ++a) {
      Restriction cand = res.rho;
      std::size_t rest = a;
      for (std::size_t t = free_in.size(); t-- > 0;) {
        cand.assignment[static_cast<std::size_t>(free_in[t])] = static_cast<int>(rest % base);
        rest /= base;
      }
      const auto cc = pair_census(ct, cand, params.k);
      const auto sat = static_cast<std::size_t>(std::count_if(cc.begin(), cc.end(), [](const PairStatus& s) {
        return s.satisfied;
      }));
      if (!have || sat > best_sat) {
        best = std::move(cand);
        best_sat = sat;
        have = true;
      }
    }
    res.rho = std::move(best);
    ++res.fixings;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Stage 3: Moser-Tardos resampling

Stage3Result stage3(const CTransformer& ct, const Restriction& rho2, const StageParams& params, std::uint64_t seed) {
  check_stage_params(params);
  require_hard(ct.config);
  Stage3Result res;
  res.seed = seed;
  Rng rng(seed);
  const std::size_t base = ct.word_symbols.size();
  const auto free2 = rho2.free_positions();
  const double x0_limit = (1.0 + params.delta) * params.q * static_cast<double>(free2.size());

  // Event variables: rho2-free inputs of the positions each pair inspected
  // under rho2 (its selection and walked prefix).
  std::map<std::tuple<std::size_t, int, std::vector<double>>, std::vector<int>> base_vars;
  {
    Analysis an(ct, rho2);
    for (const auto& st : an.census(params.k)) {
      std::set<int> vars;
      for (int j : st.walked)
        for (int f : an.view(static_cast<std::size_t>(j)).free_in) vars.insert(f);
      const Vec& z = an.groups(st.i)[static_cast<std::size_t>(st.z)].value;
      base_vars[{st.i, st.h, std::vector<double>(z.data(), z.data() + z.size())}] =
          std::vector<int>(vars.begin(), vars.end());
    }
  }

  auto draw = [&](std::size_t pos, Restriction& r) {
    if (uniform01(rng) < params.q) {
      r.assignment[pos] = static_cast<int>(uniform01(rng) * static_cast<double>(base));
    } else {
      r.assignment[pos] = kFree;
    }
  };
  Restriction cur = rho2;
  for (std::size_t p : free2) draw(p, cur);

  for (;;) {
    ++res.rounds;
    const std::size_t fixed = free2.size() - [&] {
      std::size_t f = 0;
      for (std::size_t p : free2) f += cur.is_free(p);
      return f;
    }();
    const bool x0 = static_cast<double>(fixed) > x0_limit;
    Analysis an(ct, cur);
    std::vector<std::vector<int>> violated;
    for (const auto& st : an.census(params.k)) {
      if (st.satisfied) continue;
      const Vec& z = an.groups(st.i)[static_cast<std::size_t>(st.z)].value;
      std::set<int> vars;
      auto it = base_vars.find({st.i, st.h, std::vector<double>(z.data(), z.data() + z.size())});
      if (it != base_vars.end()) vars.insert(it->second.begin(), it->second.end());
      for (int j : st.walked)
        for (int in : ct.inputs[static_cast<std::size_t>(j)])
          if (rho2.is_free(static_cast<std::size_t>(in))) vars.insert(in);
      violated.emplace_back(vars.begin(), vars.end());
    }
    if (!x0 && violated.empty()) {
      res.rho = cur;
      res.success = true;
      return res;
    }
    if (res.resamples >= params.max_resamples) {
      res.rho = cur;
      res.violated_pairs = violated.size();
      res.violated_x0 = x0;
      std::ostringstream os;
      os << "resample budget " << params.max_resamples << " exhausted after " << res.rounds
         << " rounds; violated events: X0=" << (x0 ? "yes" : "no") << ", unsatisfied head/value pairs="
         << violated.size();
      res.census = os.str();
      return res;
    }
    bool resample_all = x0;
    for (const auto& vars : violated)
      if (vars.empty()) resample_all = true;
    if (resample_all) {
      for (std::size_t p : free2) draw(p, cur);
      ++res.resamples;
      continue;
    }
    // Resample a maximal set of violated events with disjoint variables.
    std::set<int> touched;
    for (const auto& vars : violated) {
      if (std::any_of(vars.begin(), vars.end(), [&](int v) { return touched.count(v) > 0; })) continue;
      for (int v : vars) {
        touched.insert(v);
        draw(static_cast<std::size_t>(v), cur);
      }
      ++res.resamples;
    }
  }
}

// ---------------------------------------------------------------------------
// Depth reduction

ReductionReport depth_reduce(const CTransformer& ct, const Restriction& rho, const StageParams& params,
                             std::uint64_t seed) {
  check_stage_params(params);
  require_hard(ct.config);
  if (ct.layers.empty()) fail(ErrorKind::input, "c-transformer has no attention layer to remove");
  ReductionReport rep;
  rep.params = params;
  const std::size_t heads = ct.layers[0].heads.size();
  rep.c_bound = static_cast<std::size_t>(ct.c) *
                (pow_size(2, static_cast<std::size_t>(ct.c)) * static_cast<std::size_t>(params.k) * heads + 1);
  rep.rho1 = stage1(ct, rho, params);
  rep.stage2 = stage2(ct, rep.rho1, params);
  rep.rho2 = rep.stage2.rho;
  if (rep.stage2.trivially_satisfied) {
    rep.stage3.rho = rep.rho2;
    rep.stage3.success = true;
    rep.stage3.seed = seed;
  } else {
    rep.stage3 = stage3(ct, rep.rho2, params, seed);
    if (!rep.stage3.success) fail(ErrorKind::reduction, "stage 3 failed: " + rep.stage3.census);
  }
  rep.rho3 = rep.stage3.rho;
  const Restriction& r3 = rep.rho3;

  Analysis an(ct, r3);
  const auto census = an.census(params.k);
  std::vector<std::set<int>> reads(ct.positions());
  std::vector<std::set<int>> reads_full(ct.positions());
  for (std::size_t i = 0; i < ct.positions(); ++i) {
    for (int f : an.view(i).free_in) reads[i].insert(f);
    reads_full[i].insert(ct.inputs[i].begin(), ct.inputs[i].end());
  }
  if (rep.stage2.trivially_satisfied) {
    const auto fp = r3.free_positions();
    for (auto& r : reads) r.insert(fp.begin(), fp.end());
    for (auto& r : reads_full)
      for (std::size_t p = 0; p < ct.n; ++p) r.insert(static_cast<int>(p));
  } else {
    for (const auto& st : census) {
      if (!st.satisfied) fail(ErrorKind::reduction, "unsatisfied head/value pair after stage 3");
      for (int j : st.walked) {
        for (int f : an.view(static_cast<std::size_t>(j)).free_in) reads[st.i].insert(f);
        for (int in : ct.inputs[static_cast<std::size_t>(j)]) reads_full[st.i].insert(in);
      }
    }
  }

  CTransformer out;
  out.config = ct.config;
  out.config.num_layers = ct.config.num_layers - 1;
  out.vocabulary = ct.vocabulary;
  out.word_symbols = ct.word_symbols;
  out.n = ct.n;
  out.layers.assign(ct.layers.begin() + 1, ct.layers.end());
  out.label_head = ct.label_head;
  out.inputs.assign(ct.positions(), {});
  out.tables.assign(ct.positions(), {});
  const std::size_t base = ct.word_symbols.size();
  const bool only_final = out.layers.empty();
  std::vector<int> word(ct.n, 0);
  for (std::size_t p = 0; p < ct.n; ++p)
    if (!r3.is_free(p)) word[p] = r3.assignment[p];
  Mat y0(ct.config.width(), static_cast<Eigen::Index>(ct.positions()));
  for (std::size_t i = 0; i < ct.positions(); ++i) {
    if (only_final && i != ct.n) continue;
    rep.c_prime = std::max(rep.c_prime, reads[i].size());
    rep.c_prime_full = std::max(rep.c_prime_full, reads_full[i].size());
    if (reads[i].size() > kMaxTableReads)
      fail(ErrorKind::reduction, "new layer-0 table at position " + std::to_string(i + 1) + " would read " +
                                     std::to_string(reads[i].size()) + " free inputs (limit " +
                                     std::to_string(kMaxTableReads) + ")");
    out.inputs[i].assign(reads[i].begin(), reads[i].end());
    const std::size_t entries = pow_size(base, out.inputs[i].size());
    out.tables[i].reserve(entries);
    std::vector<int> local = word;
    for (std::size_t e = 0; e < entries; ++e) {
      std::size_t rest = e;
      for (std::size_t t = out.inputs[i].size(); t-- > 0;) {
        local[static_cast<std::size_t>(out.inputs[i][t])] = static_cast<int>(rest % base);
        rest /= base;
      }
      for (std::size_t j = 0; j < ct.positions(); ++j) y0.col(static_cast<Eigen::Index>(j)) = ct.layer0(j, local);
      out.tables[i].push_back(tf::layer_row(ct.config, ct.layers[0], y0, i));
    }
  }
  out.c = static_cast<int>(std::max<std::size_t>(1, rep.c_prime));
  rep.reduced = std::move(out);
  return rep;
}

std::vector<StageParams> retry_schedule(const StageParams& base) {
  std::vector<StageParams> out{base};
  for (int k : {3, 4, 6}) {
    if (k <= base.k) continue;
    StageParams p = base;
    p.k = k;
    out.push_back(p);
  }
  return out;
}

ReductionReport depth_reduce_with_retries(const CTransformer& ct, const Restriction& rho, const StageParams& base,
                                          std::uint64_t seed, std::size_t* attempts) {
  const auto schedule = retry_schedule(base);
  std::string last;
  for (std::size_t a = 0; a < schedule.size(); ++a) {
    if (attempts) *attempts = a + 1;
    try {
      return depth_reduce(ct, rho, schedule[a], derive_seed(seed, a));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::reduction) throw;
      last = e.what();
    }
  }
  fail(ErrorKind::reduction, "depth reduction failed for every retry setting; last: " + last);
}

// ---------------------------------------------------------------------------
// Dependency and equivalence checks

namespace {

std::vector<int> word_for(const Restriction& rho, const std::vector<std::size_t>& free_pos, std::size_t base,
                          std::size_t index) {
  std::vector<int> word(rho.length(), 0);
  for (std::size_t p = 0; p < word.size(); ++p)
    if (!rho.is_free(p)) word[p] = rho.assignment[p];
  for (std::size_t t = free_pos.size(); t-- > 0;) {
    word[free_pos[t]] = static_cast<int>(index % base);
    index /= base;
  }
  return word;
}

}  // namespace

DependencyReport dependency_set(const Evaluator& evaluator, const Restriction& rho, std::size_t alphabet_size,
                                unsigned threads) {
  const auto free_pos = rho.free_positions();
  if (free_pos.size() > kMaxExhaustiveFree)
    fail(ErrorKind::input, "exhaustive dependency search allows at most " + std::to_string(kMaxExhaustiveFree) +
                               " free positions (got " + std::to_string(free_pos.size()) + ")");
  const std::size_t base = alphabet_size;
  const std::size_t total = pow_size(base, free_pos.size());
  std::vector<char> decision(total);
  parallel_for(total, threads, [&](std::size_t idx) { decision[idx] = evaluator(word_for(rho, free_pos, base, idx)); });
  DependencyReport rep;
  rep.exhaustive = true;
  rep.checked_contexts = total;
  std::size_t weight = 1;
  for (std::size_t t = free_pos.size(); t-- > 0;) {
    bool dep = false;
    for (std::size_t idx = 0; idx < total && !dep; ++idx) {
      const std::size_t digit = (idx / weight) % base;
      for (std::size_t d = digit + 1; d < base && !dep; ++d) dep = decision[idx] != decision[idx + (d - digit) * weight];
    }
    if (dep) rep.depends_on.push_back(free_pos[t]);
    weight *= base;
  }
  std::sort(rep.depends_on.begin(), rep.depends_on.end());
  return rep;
}

DependencyReport dependency_sample(const Evaluator& evaluator, const Restriction& rho, std::size_t alphabet_size,
                                   std::size_t contexts, std::uint64_t seed, unsigned threads) {
  const auto free_pos = rho.free_positions();
  std::vector<std::vector<char>> hit(contexts, std::vector<char>(free_pos.size(), 0));
  parallel_for(contexts, threads, [&](std::size_t c) {
    Rng rng(derive_seed(seed, c));
    std::vector<int> word = restrict_word(rho, std::vector<int>(rho.length(), 0));
    for (std::size_t p : free_pos) word[p] = static_cast<int>(uniform01(rng) * static_cast<double>(alphabet_size));
    const bool d0 = evaluator(word);
    for (std::size_t t = 0; t < free_pos.size(); ++t) {
      const int keep = word[free_pos[t]];
      for (std::size_t s = 0; s < alphabet_size && !hit[c][t]; ++s) {
        if (static_cast<int>(s) == keep) continue;
        word[free_pos[t]] = static_cast<int>(s);
        hit[c][t] = evaluator(word) != d0;
      }
      word[free_pos[t]] = keep;
    }
  });
  DependencyReport rep;
  rep.checked_contexts = contexts;
  for (std::size_t t = 0; t < free_pos.size(); ++t)
    for (std::size_t c = 0; c < contexts; ++c)
      if (hit[c][t]) {
        rep.depends_on.push_back(free_pos[t]);
        break;
      }
  return rep;
}

EquivalenceReport check_equivalence(const Evaluator& a, const Evaluator& b, const Restriction& rho,
                                    std::size_t alphabet_size, std::size_t max_exhaustive, std::size_t samples,
                                    std::uint64_t seed, unsigned threads) {
  const auto free_pos = rho.free_positions();
  EquivalenceReport rep;
  std::vector<char> bad;
  if (free_pos.size() <= max_exhaustive) {
    const std::size_t total = pow_size(alphabet_size, free_pos.size());
    bad.assign(total, 0);
    parallel_for(total, threads, [&](std::size_t idx) {
      const auto w = word_for(rho, free_pos, alphabet_size, idx);
      bad[idx] = a(w) != b(w);
    });
    rep.exhaustive = true;
  } else {
    bad.assign(samples, 0);
    parallel_for(samples, threads, [&](std::size_t s) {
      Rng rng(derive_seed(seed, s));
      std::vector<int> w = restrict_word(rho, std::vector<int>(rho.length(), 0));
      for (std::size_t p : free_pos) w[p] = static_cast<int>(uniform01(rng) * static_cast<double>(alphabet_size));
      bad[s] = a(w) != b(w);
    });
  }
  rep.checked = bad.size();
  rep.mismatches = static_cast<std::size_t>(std::count(bad.begin(), bad.end(), 1));
  return rep;
}

// ---------------------------------------------------------------------------
// Counterexamples

Restriction dyck_prerestriction(const CTransformer& ct) {
  const auto& syms = ct.word_symbols;
  const auto open = std::find(syms.begin(), syms.end(), '(');
  const auto close = std::find(syms.begin(), syms.end(), ')');
  if (open == syms.end() || close == syms.end()) fail(ErrorKind::input, "1DYCK needs '(' and ')' in the vocabulary");
  Restriction r = Restriction::all_free(ct.n);
  const auto m = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(ct.n)));
  for (std::size_t i = 0; i < m && i < ct.n; ++i) {
    r.assignment[i] = static_cast<int>(open - syms.begin());
    r.assignment[ct.n - 1 - i] = static_cast<int>(close - syms.begin());
  }
  return r;
}

namespace {

std::string to_word(const CTransformer& ct, const std::vector<int>& w) {
  std::string s;
  for (int x : w) s.push_back(ct.word_symbols[static_cast<std::size_t>(x)]);
  return s;
}

}  // namespace

FailureReport demonstrate_failure(const CTransformer& ct, langs::Language lang, const StageParams& params,
                                  std::uint64_t seed, unsigned threads) {
  require_hard(ct.config);
  if (lang != langs::Language::parity && lang != langs::Language::dyck1)
    fail(ErrorKind::input, "counterexamples are searched for parity and dyck1 only");
  const std::size_t base = ct.word_symbols.size();
  FailureReport rep;
  rep.initial = lang == langs::Language::dyck1 ? dyck_prerestriction(ct) : Restriction::all_free(ct.n);
  if (lang == langs::Language::parity)
    for (char s : ct.word_symbols)
      if (s != '0' && s != '1') fail(ErrorKind::input, "parity needs the alphabet {0, 1}");
  constexpr std::size_t kAttempts = 8;
  std::string last_note;
  for (std::size_t attempt = 0; attempt < kAttempts; ++attempt) {
    rep.attempts = attempt + 1;
    rep.reductions.clear();
    const std::uint64_t aseed = derive_seed(seed, attempt);
    CTransformer cur = ct;
    Restriction rho = rep.initial;
    try {
      while (!cur.layers.empty()) {
        auto r = depth_reduce_with_retries(cur, rho, params, derive_seed(aseed, rep.reductions.size()));
        rho = r.rho3;
        cur = r.reduced;
        rep.reductions.push_back(std::move(r));
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::reduction) throw;
      last_note = e.what();
      continue;
    }
    const auto reads = cur.inputs[cur.n];
    const Evaluator reduced = [&cur](const std::vector<int>& w) { return accepts(cur, w); };
    if (rho.free_count() <= kMaxExhaustiveFree) {
      rep.dependency = dependency_set(reduced, rho, base, threads);
    } else {
      rep.dependency = dependency_sample(reduced, rho, base, 256, derive_seed(aseed, "dependency"), threads);
      rep.dependency.depends_on.assign(reads.begin(), reads.end());
    }
    std::set<std::size_t> dep(rep.dependency.depends_on.begin(), rep.dependency.depends_on.end());
    for (int r : reads) dep.insert(static_cast<std::size_t>(r));
    const Evaluator original = apply_restriction(ct, rho);
    const auto free_pos = rho.free_positions();
    Counterexample cx;
    cx.language = std::string(langs::language_name(lang));
    cx.rho = rho;
    cx.reads.assign(reads.begin(), reads.end());
    Rng rng(derive_seed(aseed, "context"));
    if (lang == langs::Language::parity) {
      std::vector<std::size_t> outside;
      for (std::size_t p : free_pos)
        if (!dep.count(p)) outside.push_back(p);
      if (outside.empty()) {
        last_note = "every free position is read by the reduced model";
        continue;
      }
      const std::size_t p = outside[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(outside.size()))];
      std::vector<int> a = restrict_word(rho, std::vector<int>(ct.n, 0));
      for (std::size_t f : free_pos) a[f] = static_cast<int>(uniform01(rng) * static_cast<double>(base));
      std::vector<int> b = a;
      b[p] = (b[p] + 1) % static_cast<int>(base);
      cx.flipped_position = p;
      cx.word_a = to_word(ct, a);
      cx.word_b = to_word(ct, b);
      cx.decision_a = original(a);
      cx.decision_b = original(b);
    } else {
      // Group completions by their projection on the read positions and look
      // for a group holding a balanced and an unbalanced word.
      std::vector<std::size_t> dep_free;
      for (std::size_t f : free_pos)
        if (dep.count(f)) dep_free.push_back(f);
      std::map<std::vector<int>, std::pair<std::vector<int>, std::vector<int>>> groups;
      const bool enumerate = free_pos.size() <= 20;
      const std::size_t total = enumerate ? pow_size(base, free_pos.size()) : 200000;
      bool done = false;
      for (std::size_t idx = 0; idx < total && !done; ++idx) {
        std::vector<int> w;
        if (enumerate) {
          w = word_for(rho, free_pos, base, idx);
        } else {
          w = restrict_word(rho, std::vector<int>(ct.n, 0));
          for (std::size_t f : free_pos) w[f] = static_cast<int>(uniform01(rng) * static_cast<double>(base));
        }
        std::vector<int> key;
        for (std::size_t f : dep_free) key.push_back(w[f]);
        auto& slot = groups[key];
        (langs::dyck_member(to_word(ct, w), 1) ? slot.first : slot.second) = w;
        if (!slot.first.empty() && !slot.second.empty()) {
          cx.word_a = to_word(ct, slot.first);
          cx.word_b = to_word(ct, slot.second);
          cx.decision_a = original(slot.first);
          cx.decision_b = original(slot.second);
          done = true;
        }
      }
      if (!done) {
        last_note = "no read-position pattern admits both balanced and unbalanced completions";
        continue;
      }
    }
    cx.member_a = langs::is_member(lang, cx.word_a);
    cx.member_b = langs::is_member(lang, cx.word_b);
    cx.found = cx.decision_a == cx.decision_b && cx.member_a != cx.member_b;
    if (!cx.found) cx.note = "decisions differ on the pair; reduced model disagrees with the restricted original";
    rep.pair = std::move(cx);
    return rep;
  }
  rep.pair.found = false;
  rep.pair.language = std::string(langs::language_name(lang));
  rep.pair.note = last_note;
  return rep;
}

}  // namespace attnlimits::restriction
