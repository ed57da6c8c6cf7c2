#include "attnlimits/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace attnlimits::sensitivity {

double spectral_norm(const Mat& a, double tol, std::size_t max_iter) {
  if (a.size() == 0) return 0.0;
  if (!a.allFinite()) fail(ErrorKind::numeric, "matrix has non-finite entries");
  const Mat g = a.transpose() * a;
  if (g.norm() == 0.0) return 0.0;
  // Deterministic start with no special alignment.
  Vec v(g.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.1 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Vec w = g * v;
    const double next = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    if (it > 0 && std::abs(next - lambda) <= tol * std::abs(next)) return std::sqrt(std::max(0.0, next));
    lambda = next;
  }
  fail(ErrorKind::numeric, "power iteration did not converge within " + std::to_string(max_iter) + " steps");
}

double lipschitz_upper(const tf::FeedForward& ffn) { return 1.0 + spectral_norm(ffn.w1) * spectral_norm(ffn.w2); }

double score_constant(const tf::ModelConfig& config, const tf::HeadParams& head) {
  const double q = spectral_norm(head.query);
  const double k = spectral_norm(head.key);
  if (config.attention == tf::AttentionKind::dot_product_scaled)
    return q * k / std::sqrt(static_cast<double>(config.key_dim));
  return head.score.norm() * std::max(q, k);
}

double embedding_difference(const tf::Model& model) {
  const auto& vocab = model.params.vocabulary;
  const auto syms = vocab.word_symbols();
  double d = 0.0;
  for (std::size_t a = 0; a < syms.size(); ++a)
    for (std::size_t b = a + 1; b < syms.size(); ++b) {
      const Vec va = model.params.token_embeddings.row(vocab.index_of(syms[a])).transpose();
      const Vec vb = model.params.token_embeddings.row(vocab.index_of(syms[b])).transpose();
      d = std::max(d, (va - vb).norm());
    }
  return d;
}

namespace {

void require_soft(const tf::Model& model) {
  if (model.config.weighting != tf::Weighting::soft)
    fail(ErrorKind::unsupported, "the perturbation bound applies to soft attention only");
}

// Bound on ||softmax(s') - softmax(s)||_1 when one logit moves anywhere in
// [-A, A] and the others move by at most tau.
double weight_shift(double w, double tau) { return std::min(2.0, 2.0 * w + std::expm1(2.0 * tau)); }

}  // namespace

BoundConstants analytic_bound(const tf::Model& model, std::size_t n, double D) {
  require_soft(model);
  tf::validate(model);
  const auto& cfg = model.config;
  const auto& vocab = model.params.vocabulary;
  BoundConstants b;
  b.n = n;
  b.D = D < 0.0 ? embedding_difference(model) : D;
  const std::size_t t_len = n + 1;
  const double heads = static_cast<double>(cfg.num_heads);

  double f0 = 0.0;
  for (std::size_t pos = 1; pos <= t_len; ++pos)
    for (std::size_t tok = 0; tok < vocab.size(); ++tok)
      f0 = std::max(f0, tf::layer0_vector(model, static_cast<int>(tok), pos).norm());
  b.F_k.push_back(f0);
  b.perturbed.push_back(b.D);
  b.other.push_back(0.0);
  b.F = f0;

  double delta = b.D, eps = 0.0;
  for (const auto& layer : model.params.layers) {
    const double f = b.F_k.back();
    const double n1 = spectral_norm(layer.ffn.w1);
    const double n2 = spectral_norm(layer.ffn.w2);
    const double lip = 1.0 + n1 * n2;
    b.L_fact = std::max(b.L_fact, lip);
    double a_max = 0.0, lam = 0.0;
    for (const auto& head : layer.heads) {
      const double cf = score_constant(cfg, head);
      b.C_fatt = std::max(b.C_fatt, cf);
      double a;
      if (cfg.attention == tf::AttentionKind::dot_product_scaled) {
        a = f * f * cf;
        lam = std::max(lam, cf * f);
      } else {
        a = std::min(2.0 * f * cf, head.score.norm() * std::sqrt(static_cast<double>(cfg.key_dim)));
        lam = std::max(lam, cf);
      }
      a_max = std::max(a_max, a);
    }
    b.A = std::max(b.A, a_max);
    const double e2a = std::exp(2.0 * a_max);
    const double w = std::isfinite(e2a) ? e2a / (e2a + static_cast<double>(t_len) - 1.0) : 1.0;
    b.attention_weight_bound = std::max(b.attention_weight_bound, w);

    const double f_next =
        f + n2 * (n1 * std::sqrt(1.0 + heads) * f + layer.ffn.b1.norm()) + layer.ffn.b2.norm();
    // Query at an unperturbed position: every key except the flipped one moves
    // by at most eps, the query by eps.
    const double db_other = w * delta + eps + f * weight_shift(w, lam * 2.0 * eps);
    const double db_self = w * delta + eps + f * weight_shift(w, lam * (delta + eps));
    eps = std::min(lip * (eps + heads * db_other), 2.0 * f_next);
    delta = std::min(lip * (delta + heads * db_self), 2.0 * f_next);
    b.F_k.push_back(f_next);
    b.F = std::max(b.F, f_next);
    b.perturbed.push_back(delta);
    b.other.push_back(eps);
  }
  b.C = 2.0 * (1.0 + std::exp(2.0 * b.A) + b.L_fact);
  for (std::size_t k = 0; k < b.F_k.size(); ++k) {
    const double c2k = std::pow(b.C, 2.0 * static_cast<double>(k));
    b.sketch_perturbed.push_back(c2k * b.D);
    b.sketch_other.push_back(k == 0 ? 0.0
                                    : std::pow(heads, static_cast<double>(k)) * c2k * b.D /
                                          static_cast<double>(std::max<std::size_t>(n, 1)));
  }
  return b;
}

std::vector<std::vector<double>> perturb_pair(const tf::Model& model, const std::string& word, std::size_t i,
                                              char replacement) {
  require_soft(model);
  if (i >= word.size()) fail(ErrorKind::input, "flip position must precede the end-of-sequence position");
  if (word[i] == replacement) fail(ErrorKind::input, "replacement must differ from the current symbol");
  std::string other = word;
  other[i] = replacement;
  const auto a = tf::forward(model, word, tf::TraceDetail::activations);
  const auto b = tf::forward(model, other, tf::TraceDetail::activations);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < a.activations.size(); ++k) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < a.activations[k].cols(); ++j)
      row.push_back((a.activations[k].col(j) - b.activations[k].col(j)).norm());
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------

FlipEvaluator::FlipEvaluator(const tf::Model& model, const std::string& word) : model_(model) {
  require_soft(model);
  tokens_ = tf::tokenize(model, word);
  y0_ = tf::embed(model, tokens_);
  base_output_ = tf::run_stack(model.config, model.params.layers, y0_, tf::TraceDetail::final_only).output;
  if (model.params.layers.empty()) return;
  const auto& layer = model.params.layers[0];
  const auto t_len = y0_.cols();
  const auto heads = layer.heads.size();
  row_max_.assign(heads, std::vector<double>(static_cast<std::size_t>(t_len)));
  row_sum_.assign(heads, std::vector<double>(static_cast<std::size_t>(t_len)));
  numerators_.assign(heads, Mat::Zero(y0_.rows(), t_len));
  std::vector<double> row(static_cast<std::size_t>(t_len));
  for (std::size_t h = 0; h < heads; ++h) {
    proj_.push_back(tf::project(layer.heads[h], y0_));
    for (Eigen::Index t = 0; t < t_len; ++t) {
      for (Eigen::Index j = 0; j < t_len; ++j)
        row[j] = tf::score(model.config, layer.heads[h], proj_[h].query.col(t).data(), proj_[h].key.col(j).data());
      const double m = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (Eigen::Index j = 0; j < t_len; ++j) {
        const double e = std::exp(row[j] - m);
        z += e;
        numerators_[h].col(t) += e * y0_.col(j);
      }
      row_max_[h][t] = m;
      row_sum_[h][t] = z;
    }
  }
}

Mat FlipEvaluator::layer1_rows(std::size_t i, const Vec& yi_new, bool final_only) const {
  const auto& cfg = model_.config;
  const auto& layer = model_.params.layers[0];
  const auto t_len = y0_.cols();
  const auto heads = layer.heads.size();
  const auto ii = static_cast<Eigen::Index>(i);
  std::vector<Vec> q_new(heads), k_new(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    q_new[h] = tf::project_vector(layer.heads[h].query, yi_new);
    k_new[h] = tf::project_vector(layer.heads[h].key, yi_new);
  }
  const Eigen::Index first = final_only ? t_len - 1 : 0;
  Mat out(y0_.rows(), t_len - first);
  std::vector<double> row(static_cast<std::size_t>(t_len));
  std::vector<Vec> b(heads, Vec(y0_.rows()));
  auto full_row = [&](std::size_t h, const double* q, Vec& dst) {
    for (Eigen::Index j = 0; j < t_len; ++j) {
      const double* k = j == ii ? k_new[h].data() : proj_[h].key.col(j).data();
      row[j] = tf::score(cfg, layer.heads[h], q, k);
    }
    const auto wts = tf::softmax(row);
    dst.setZero();
    for (Eigen::Index j = 0; j < t_len; ++j) dst += wts[j] * (j == ii ? yi_new : Vec(y0_.col(j)));
  };
  for (Eigen::Index t = first; t < t_len; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      if (t == ii) {
        full_row(h, q_new[h].data(), b[h]);
        continue;
      }
      const double* q = proj_[h].query.col(t).data();
      const double m = row_max_[h][t];
      const double z = row_sum_[h][t];
      const double e_old = std::exp(tf::score(cfg, layer.heads[h], q, proj_[h].key.col(ii).data()) - m);
      const double s_new = tf::score(cfg, layer.heads[h], q, k_new[h].data()) - m;
      if (s_new > 30.0 || e_old > 0.5 * z) {
        full_row(h, q, b[h]);
        continue;
      }
      const double e_new = std::exp(s_new);
      b[h] = (numerators_[h].col(t) - e_old * y0_.col(ii) + e_new * yi_new) / (z - e_old + e_new);
    }
    const Vec yt = t == ii ? yi_new : Vec(y0_.col(t));
    out.col(t - first) = tf::feed_forward(layer.ffn, yt, b);
    if (!out.col(t - first).allFinite()) fail(ErrorKind::numeric, "non-finite activation in flip evaluation");
  }
  return out;
}

Vec FlipEvaluator::flipped_output(std::size_t i, char symbol) const {
  if (i >= length()) fail(ErrorKind::input, "flip position must precede the end-of-sequence position");
  const auto& vocab = model_.params.vocabulary;
  const int tok = vocab.index_of(symbol);
  if (tok < 0 || symbol == vocab.eos) fail(ErrorKind::input, std::string("invalid replacement symbol '") + symbol + "'");
  const auto& layers = model_.params.layers;
  if (layers.empty()) return base_output_;
  const Vec yi_new = tf::layer0_vector(model_, tok, i + 1);
  if (layers.size() == 1) return layer1_rows(i, yi_new, true).col(0);
  Mat y = layer1_rows(i, yi_new, false);
  for (std::size_t l = 1; l + 1 < layers.size(); ++l)
    y = tf::run_layer(model_.config, layers[l], y, true, nullptr, static_cast<int>(l + 1));
  return tf::run_layer(model_.config, layers.back(), y, false, nullptr, static_cast<int>(layers.size())).col(0);
}

// ---------------------------------------------------------------------------

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t m = 0;
  for (std::size_t k = 0; k < x.size() && k < y.size(); ++k) {
    if (!(y[k] > 0.0) || !(x[k] > 0.0)) continue;
    const double lx = std::log(x[k]), ly = std::log(y[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++m;
  }
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  const double md = static_cast<double>(m);
  const double den = sxx - sx * sx / md;
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (sxy - sx * sy / md) / den;
}

DecayCurve decay_sweep(const tf::Model& model, const std::vector<std::size_t>& n_grid, std::size_t trials,
                       std::uint64_t seed, unsigned threads) {
  require_soft(model);
  if (n_grid.empty()) fail(ErrorKind::input, "empty length grid");
  if (!std::is_sorted(n_grid.begin(), n_grid.end()) || n_grid.front() < 1)
    fail(ErrorKind::input, "length grid must be ascending and positive");
  if (trials == 0) fail(ErrorKind::input, "trials must be positive");
  const auto syms = model.params.vocabulary.word_symbols();
  DecayCurve curve;
  curve.trials = trials;
  curve.seed = seed;
  std::vector<double> xs;
  for (std::size_t n : n_grid) {
    double best = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(derive_seed(derive_seed(seed, n), t));
      std::string word(n, syms[0]);
      for (auto& c : word) c = syms[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(syms.size()))];
      const FlipEvaluator fe(model, word);
      std::vector<double> per_pos(n, 0.0);
      parallel_for(n, threads, [&](std::size_t i) {
        for (char s : syms) {
          if (s == word[i]) continue;
          per_pos[i] = std::max(per_pos[i], (fe.flipped_output(i, s) - fe.base_output()).norm());
        }
      });
      best = std::max(best, *std::max_element(per_pos.begin(), per_pos.end()));
    }
    curve.n_values.push_back(n);
    curve.max_delta.push_back(best);
    curve.analytic_bound.push_back(analytic_bound(model, n).final_bound());
    xs.push_back(static_cast<double>(n));
    curve.slope_running.push_back(loglog_slope(xs, curve.max_delta));
  }
  curve.slope = curve.slope_running.back();
  return curve;
}

std::vector<std::size_t> parse_grid(std::string_view text) {
  std::vector<std::size_t> out;
  const std::string s(text);
  auto to_size = [&](const std::string& v) -> std::size_t {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != v.size() || v.empty() || x == 0) fail(ErrorKind::input, "bad grid value '" + v + "' in '" + s + "'");
    return static_cast<std::size_t>(x);
  };
  const auto c1 = s.find(':');
  if (c1 == std::string::npos) {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(item));
  } else {
    const auto c2 = s.find(':', c1 + 1);
    if (c2 == std::string::npos) fail(ErrorKind::input, "grid must look like start:stop:x2 or start:stop:+step");
    const std::size_t lo = to_size(s.substr(0, c1));
    const std::size_t hi = to_size(s.substr(c1 + 1, c2 - c1 - 1));
    const std::string step = s.substr(c2 + 1);
    if (step.size() < 2 || (step[0] != 'x' && step[0] != '+'))
      fail(ErrorKind::input, "grid step must be xF or +D");
    const std::size_t v = to_size(step.substr(1));
    if (step[0] == 'x' && v < 2) fail(ErrorKind::input, "geometric grid factor must be at least 2");
    for (std::size_t n = lo; n <= hi; n = step[0] == 'x' ? n * v : n + v) out.push_back(n);
  }
  if (out.empty() || !std::is_sorted(out.begin(), out.end()))
    fail(ErrorKind::input, "grid must be non-empty and ascending");
  return out;
}

std::string decay_csv(const DecayCurve& curve) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n,max_delta,analytic_bound,slope_running\n";
  for (std::size_t k = 0; k < curve.n_values.size(); ++k) {
    os << curve.n_values[k] << ',' << curve.max_delta[k] << ',' << curve.analytic_bound[k] << ',';
    if (std::isfinite(curve.slope_running[k])) os << curve.slope_running[k];
    os << '\n';
  }
  return os.str();
}

double softmax_tv_bound(const tf::OutputHead& head, double r) {
  // Logits move by at most tau = ||W|| r; probability ratios stay within e^{+-2 tau}.
  const double tau = spectral_norm(head.weight) * r;
  return std::min(1.0, 0.5 * std::expm1(2.0 * tau));
}

}  // namespace attnlimits::sensitivity
