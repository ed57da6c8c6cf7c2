#include "unit/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

using attnlimits::langs::Language;

bool parity(const std::string& w) { return std::count(w.begin(), w.end(), '1') % 2 == 0; }

bool dyck(const std::string& w, int kinds) {
  std::string stack;
  for (char c : w) {
    if (c == '(' || (kinds == 2 && c == '[')) {
      stack.push_back(c);
    } else if (c == ')' || (kinds == 2 && c == ']')) {
      const char want = c == ')' ? '(' : '[';
      if (stack.empty() || stack.back() != want) return false;
      stack.pop_back();
    } else {
      return false;
    }
  }
  return stack.empty();
}

bool ones_star(const std::string& w) { return w.find_first_not_of('1') == std::string::npos; }

bool anbn(const std::string& w) {
  const std::size_t k = w.size() / 2;
  return w.size() % 2 == 0 && w == std::string(k, 'a') + std::string(k, 'b');
}

bool member(Language lang, const std::string& w) {
  switch (lang) {
    case Language::parity: return parity(w);
    case Language::dyck1: return dyck(w, 1);
    case Language::dyck2: return dyck(w, 2);
    case Language::ones_star: return ones_star(w);
    case Language::anbn: return anbn(w);
  }
  throw std::logic_error("language");
}

std::vector<std::string> all_words(const std::string& symbols, std::size_t n) {
  std::vector<std::string> out{""};
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::string> next;
    next.reserve(out.size() * symbols.size());
    for (const auto& w : out)
      for (char s : symbols) next.push_back(w + s);
    out = std::move(next);
  }
  return out;
}

Derivation derive_dyck(double p, int kinds, std::size_t limit, std::mt19937_64& rng) {
  // Pending work, top at the back: 'S' nonterminal or a closer to emit.
  std::string work = "S";
  Derivation d;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (!work.empty()) {
    if (d.text.size() > limit) return d;
    const char top = work.back();
    work.pop_back();
    if (top != 'S') {
      d.text.push_back(top);
      continue;
    }
    const double x = u(rng);
    if (x >= p) continue;  // S -> eps
    const bool square = kinds == 2 && x >= p / 2;
    d.text.push_back(square ? '[' : '(');
    // (S)S: emit '(' then S, ')' and S remain in that order.
    work.push_back('S');
    work.push_back(square ? ']' : ')');
    work.push_back('S');
  }
  d.complete = true;
  return d;
}

double parity_even_forward(double p, std::size_t n) {
  // a = P(alive after n symbols, even), b = same for odd.
  double a = 1.0, b = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double na = a * (1.0 - p) / 2.0 + b * 0.5;
    const double nb = a * (1.0 - p) / 2.0 + b * 0.5;
    a = na;
    b = nb;
  }
  return a / (a + b);
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace tf = attnlimits::tf;

VectorXd softmax_row(const VectorXd& s) {
  const VectorXd e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Eigen::VectorXd naive_forward(const tf::Model& model, const std::string& word) {
  const auto& cfg = model.config;
  const auto& vocab = model.params.vocabulary;
  const std::size_t T = word.size() + 1;
  const int width = cfg.width();
  MatrixXd y(T, width);  // rows are positions here
  for (std::size_t t = 0; t < T; ++t) {
    const char c = t < word.size() ? word[t] : vocab.eos;
    y.row(static_cast<Eigen::Index>(t)) = tf::layer0_vector(model, vocab.index_of(c), t + 1).transpose();
  }
  for (const auto& layer : model.params.layers) {
    const std::size_t H = layer.heads.size();
    std::vector<MatrixXd> attended(H);
    for (std::size_t h = 0; h < H; ++h) {
      const auto& head = layer.heads[h];
      const MatrixXd Q = y * head.query.transpose();  // T x dk
      const MatrixXd K = y * head.key.transpose();
      MatrixXd S(T, T);
      if (cfg.attention == tf::AttentionKind::dot_product_scaled) {
        S = Q * K.transpose() / std::sqrt(static_cast<double>(cfg.key_dim));
      } else {
        for (std::size_t i = 0; i < T; ++i)
          for (std::size_t j = 0; j < T; ++j)
            S(i, j) = head.score.dot((Q.row(i) + K.row(j)).array().tanh().matrix().transpose());
      }
      MatrixXd W = MatrixXd::Zero(T, T);
      for (std::size_t i = 0; i < T; ++i) {
        if (cfg.weighting == tf::Weighting::soft) {
          W.row(i) = softmax_row(S.row(i).transpose()).transpose();
        } else {
          Eigen::Index best = 0;
          S.row(i).maxCoeff(&best);  // Eigen returns the first maximal index
          W(i, best) = 1.0;
        }
      }
      attended[h] = W * y;
    }
    MatrixXd next(T, width);
    for (std::size_t i = 0; i < T; ++i) {
      VectorXd x(width * (1 + H));
      x.head(width) = y.row(i).transpose();
      for (std::size_t h = 0; h < H; ++h) x.segment(width * (h + 1), width) = attended[h].row(i).transpose();
      const VectorXd hidden = (layer.ffn.w1 * x + layer.ffn.b1).cwiseMax(0.0);
      next.row(i) = (y.row(i).transpose() + layer.ffn.w2 * hidden + layer.ffn.b2).transpose();
    }
    y = next;
  }
  return y.row(static_cast<Eigen::Index>(T - 1)).transpose();
}

double naive_label_probability(const tf::Model& model, const std::string& word) {
  const auto& head = model.params.label_head;
  const VectorXd logits = head.weight * naive_forward(model, word) + head.bias;
  return softmax_row(logits)(1);
}

double svd_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

}  // namespace oracle
