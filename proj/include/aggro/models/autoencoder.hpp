#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "aggro/corpus.hpp"
#include "aggro/features/word_index.hpp"
#include "aggro/hash.hpp"
#include "aggro/models/layers.hpp"
#include "aggro/models/spec.hpp"

namespace aggro {

/// Sequence autoencoder: an LSTM encoder summarises the tokens, an LSTM decoder started from
/// that state regenerates them one position at a time.
struct LstmAutoencoder {
  Vocabulary vocab;
  ad::Parameter embedding;
  LstmLayer encoder;
  LstmLayer decoder;
  Linear output;

  LstmAutoencoder(Vocabulary v, std::size_t dim, std::size_t hidden, Rng& rng) : vocab(std::move(v)) {
    embedding = ad::Parameter("embedding", EmbeddingMatrix::random(vocab.size(), dim, rng).weights);
    encoder = LstmLayer("encoder", dim, hidden, rng);
    decoder = LstmLayer("decoder", dim, hidden, rng);
    output = Linear("reconstruct", hidden, vocab.size(), rng);
  }

  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out{&embedding};
    encoder.collect(out);
    decoder.collect(out);
    output.collect(out);
    return out;
  }

  /// Teacher-forced mean token cross-entropy.
  ad::Var loss(ad::Tape& t, const TokenizedBatch& batch) {
    const auto in = embed_steps(t, embedding, batch);
    const LstmRun enc = run_lstm(t, encoder, in);
    TokenizedBatch shifted = batch;
    for (std::size_t i = 0; i < batch.rows; ++i) {
      for (std::size_t j = batch.lengths[i]; j-- > 0;) shifted.id(i, j) = j ? batch.id(i, j - 1) : Vocabulary::kPad;
    }
    const auto dec_in = embed_steps(t, embedding, shifted);
    const auto vars = decoder.bind(t);
    LstmRun s = enc;
    std::vector<ad::Var> hs;
    std::vector<std::int32_t> targets;
    std::vector<double> weights;
    for (std::size_t k = 0; k < dec_in.steps.size(); ++k) {
      const auto keep = dec_in.keep(k);
      auto [h, c] = LstmLayer::step(vars, dec_in.steps[k], s.h, s.c, keep);
      s = {h, c};
      hs.push_back(h);
      for (std::size_t i = 0; i < batch.rows; ++i) {
        targets.push_back(batch.id(i, k));
        weights.push_back(keep[i] ? 1.0 : 0.0);
      }
    }
    if (hs.empty()) throw InputError("autoencoder batch has no tokens");
    return ad::cross_entropy(output(t, ad::concat_rows(hs)), targets, weights);
  }

  /// Greedy free-running reconstruction: fraction of positions regenerated exactly.
  double reconstruction_accuracy(const TokenizedBatch& batch) const {
    const LstmParams enc = encoder.params(), dec = decoder.params();
    const EmbeddingMatrix emb{embedding.value};
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < batch.rows; ++i) {
      LstmState s = LstmState::zeros(enc.hidden_size);
      for (std::size_t j = 0; j < batch.lengths[i]; ++j) s = lstm_step(emb.row(batch.id(i, j)), s, enc);
      Vector x = emb.row(Vocabulary::kPad);
      for (std::size_t j = 0; j < batch.lengths[i]; ++j) {
        s = lstm_step(x, s, dec);
        const Vector logits = output.weight.value * s.h + output.bias.value.row(0).transpose();
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < logits.size(); ++k)
          if (logits(k) > logits(best)) best = k;
        correct += best == batch.id(i, j);
        ++total;
        x = emb.row(static_cast<std::int32_t>(best));
      }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }

  double full_loss(const TokenizedBatch& batch, std::size_t batch_size) {
    double sum = 0, n = 0;
    for (std::size_t b = 0; b < batch.rows; b += batch_size) {
      const auto part = batch.slice(b, std::min(batch.rows, b + batch_size));
      std::size_t tokens = 0;
      for (auto l : part.lengths) tokens += l;
      if (!tokens) continue;
      ad::Tape t;
      sum += loss(t, part).value()(0, 0) * static_cast<double>(tokens);
      n += static_cast<double>(tokens);
    }
    return n ? sum / n : 0.0;
  }
};

struct AutoencoderResult {
  std::shared_ptr<LstmAutoencoder> model;
  std::vector<double> loss_curve;  // index 0 is the untrained loss
  double initial_accuracy = 0;
  double final_accuracy = 0;
};

inline AutoencoderResult autoencoder_pretrain(const Corpus& corpus, const ModelSpec& spec, std::uint64_t seed = 0,
                                              const Vocabulary* vocab = nullptr) {
  if (spec.kind != ModelKind::lstm_autoencoder) throw InputError("autoencoder_pretrain needs an lstm_autoencoder spec");
  if (corpus.empty()) throw InputError("autoencoder_pretrain needs a non-empty corpus");
  const auto& hp = spec.hp;
  Rng init(derive_seed(seed, "autoencoder.init"));
  auto ae = std::make_shared<LstmAutoencoder>(vocab ? *vocab : fit_vocabulary(corpus, hp.vocab_size, hp.min_frequency),
                                              hp.embedding_dim, hp.hidden_size, init);
  const TokenizedBatch data = encode_word_index(corpus, ae->vocab, hp.max_len);
  AutoencoderResult r;
  r.model = ae;
  r.initial_accuracy = ae->reconstruction_accuracy(data);
  r.loss_curve.push_back(ae->full_loss(data, hp.batch_size));
  ad::Adam opt(hp.ae_learning_rate, 0.9, 0.999, 1e-8, hp.clip_norm);
  Rng rng(derive_seed(seed, "autoencoder.order"));
  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), 0);
  auto params = ae->parameters();
  for (std::size_t epoch = 0; epoch < hp.ae_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t b = 0; b < order.size(); b += hp.batch_size) {
      const auto part = data.select({order.begin() + static_cast<std::ptrdiff_t>(b),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + hp.batch_size))});
      std::size_t tokens = 0;
      for (auto l : part.lengths) tokens += l;
      if (!tokens) continue;
      ad::Tape t;
      const ad::Var l = ae->loss(t, part);
      if (!std::isfinite(l.value()(0, 0))) {
        throw ComputeError("autoencoder loss became non-finite at epoch " + std::to_string(epoch));
      }
      for (auto* p : params) p->zero_grad();
      t.backward(l);
      opt.step(params);
    }
    const double epoch_loss = ae->full_loss(data, hp.batch_size);
    if (!std::isfinite(epoch_loss)) {
      throw ComputeError("autoencoder loss became non-finite at epoch " + std::to_string(epoch));
    }
    r.loss_curve.push_back(epoch_loss);
  }
  r.final_accuracy = ae->reconstruction_accuracy(data);
  return r;
}

}  // namespace aggro
