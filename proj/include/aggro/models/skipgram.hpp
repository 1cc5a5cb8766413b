#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "aggro/corpus.hpp"
#include "aggro/features/word_index.hpp"
#include "aggro/hash.hpp"
#include "aggro/models/recurrent.hpp"
#include "aggro/random.hpp"

namespace aggro {

struct SkipGramConfig {
  std::size_t dim = 100;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

/// Loss for one (center, context, negatives) triple:
///   -log s(u_o . v_c) - sum_k log s(-u_k . v_c)
struct SkipGramGrad {
  double loss = 0;
  Vector d_center;
  Vector d_context;
  std::vector<Vector> d_negatives;
};

inline SkipGramGrad skipgram_loss(const Vector& center, const Vector& context, const std::vector<Vector>& negatives) {
  auto log_sigmoid = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  SkipGramGrad g;
  const double so = center.dot(context);
  g.loss = -log_sigmoid(so);
  const double eo = ad::detail::sigmoid(so) - 1.0;
  g.d_center = eo * context;
  g.d_context = eo * center;
  for (const auto& u : negatives) {
    const double sk = center.dot(u);
    g.loss -= log_sigmoid(-sk);
    const double ek = ad::detail::sigmoid(sk);
    g.d_center += ek * u;
    g.d_negatives.push_back(ek * center);
  }
  return g;
}

struct SkipGramModel {
  Vocabulary vocab;
  EmbeddingMatrix input;   // the word vectors
  EmbeddingMatrix output;  // context vectors

  /// s(u_b . v_a): how strongly `a` predicts `b` as a neighbour.
  double affinity(const std::string& a, const std::string& b) const {
    return ad::detail::sigmoid(input.row(vocab.id_of(a)).dot(output.row(vocab.id_of(b))));
  }
};

/// Seeded initial input vectors, uniform in +-0.5/dim, PAD and UNK rows zero.
inline EmbeddingMatrix skipgram_init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "skipgram.init"));
  EmbeddingMatrix e{Matrix::Zero(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim))};
  const double s = 0.5 / static_cast<double>(dim);
  for (Eigen::Index r = 2; r < e.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < e.weights.cols(); ++c) e.weights(r, c) = rng.uniform(-s, s);
  return e;
}

/// Negative-sampling skip-gram over a fixed vocabulary. Out-of-vocabulary tokens are skipped;
/// negatives come from unigram counts raised to 3/4.
inline SkipGramModel skipgram_train(const Corpus& corpus, const Vocabulary& vocab, const SkipGramConfig& cfg) {
  if (corpus.empty()) throw InputError("skip-gram needs a non-empty corpus");
  if (cfg.dim < 1 || cfg.window < 1 || cfg.negatives < 1) throw InputError("dim, window and negatives must be >= 1");
  const std::size_t real_words = vocab.size() - 2;
  if (real_words < cfg.negatives + 1) {
    throw InputError("vocabulary of " + std::to_string(real_words) + " words is too small for " +
                     std::to_string(cfg.negatives) + " negatives");
  }
  std::vector<std::vector<std::int32_t>> sentences;
  std::vector<double> counts(vocab.size(), 0.0);
  for (const auto& c : corpus) {
    std::vector<std::int32_t> ids;
    for (auto id : word_ids(c.text, vocab))
      if (id > 1) {
        ids.push_back(id);
        counts[static_cast<std::size_t>(id)] += 1;
      }
    if (ids.size() > 1) sentences.push_back(std::move(ids));
  }
  std::vector<double> cdf(vocab.size(), 0.0);
  double acc = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    acc += std::pow(counts[i], 0.75);
    cdf[i] = acc;
  }
  SkipGramModel m{vocab, skipgram_init(vocab.size(), cfg.dim, cfg.seed),
                  EmbeddingMatrix{Matrix::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(cfg.dim))}};
  if (acc <= 0) return m;
  Rng rng(derive_seed(cfg.seed, "skipgram.train"));
  auto draw = [&]() {
    const double u = rng.uniform() * acc;
    return static_cast<std::int32_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  };
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  auto& V = m.input.weights;
  auto& U = m.output.weights;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t si : order) {
      const auto& s = sentences[si];
      for (std::size_t c = 0; c < s.size(); ++c) {
        const std::size_t lo = c >= cfg.window ? c - cfg.window : 0;
        const std::size_t hi = std::min(s.size() - 1, c + cfg.window);
        for (std::size_t o = lo; o <= hi; ++o) {
          if (o == c) continue;
          std::vector<std::int32_t> neg;
          for (std::size_t tries = 0; neg.size() < cfg.negatives; ++tries) {
            const auto k = draw();
            if (k != s[o] || tries > 64 * cfg.negatives) neg.push_back(k);
          }
          std::vector<Vector> nv;
          for (auto k : neg) nv.push_back(U.row(k).transpose());
          const auto g = skipgram_loss(V.row(s[c]).transpose(), U.row(s[o]).transpose(), nv);
          V.row(s[c]) -= cfg.learning_rate * g.d_center.transpose();
          U.row(s[o]) -= cfg.learning_rate * g.d_context.transpose();
          for (std::size_t k = 0; k < neg.size(); ++k) U.row(neg[k]) -= cfg.learning_rate * g.d_negatives[k].transpose();
        }
      }
    }
  }
  return m;
}

inline SkipGramModel skipgram_train(const Corpus& corpus, std::size_t dim, std::size_t window, std::size_t negatives,
                                    std::size_t epochs, std::uint64_t seed) {
  const Vocabulary vocab = fit_vocabulary(corpus, std::numeric_limits<std::size_t>::max(), 1);
  return skipgram_train(corpus, vocab, SkipGramConfig{dim, window, negatives, epochs, 0.025, seed});
}

}  // namespace aggro
