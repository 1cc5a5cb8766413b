#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "aggro/error.hpp"
#include "aggro/features/batch.hpp"
#include "aggro/models/autodiff.hpp"
#include "aggro/random.hpp"

namespace aggro {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Vocabulary-by-dimension table; row 0 (PAD) is zero.
struct EmbeddingMatrix {
  Matrix weights;

  std::size_t vocab_size() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }

  Vector row(std::int32_t id) const {
    if (id < 0 || id >= weights.rows()) throw InputError("token id outside embedding table");
    return weights.row(id).transpose();
  }

  static EmbeddingMatrix random(std::size_t vocab, std::size_t dim, Rng& rng, double scale = 0.1) {
    EmbeddingMatrix e{Matrix(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(dim))};
    for (Eigen::Index i = 0; i < e.weights.size(); ++i) e.weights(i) = rng.uniform(-scale, scale);
    if (vocab > 0) e.weights.row(0).setZero();
    return e;
  }
};

/// Gate weights act on the concatenation [h_{t-1}, x_t]: each W is hidden x (hidden + input).
struct LstmParams {
  Matrix W_f, W_i, W_c, W_o;
  Vector b_f, b_i, b_c, b_o;
  std::size_t hidden_size = 0;
  std::size_t input_size = 0;

  static LstmParams zeros(std::size_t hidden, std::size_t input) {
    const auto h = static_cast<Eigen::Index>(hidden), n = static_cast<Eigen::Index>(hidden + input);
    LstmParams p;
    p.W_f = p.W_i = p.W_c = p.W_o = Matrix::Zero(h, n);
    p.b_f = p.b_i = p.b_c = p.b_o = Vector::Zero(h);
    p.hidden_size = hidden;
    p.input_size = input;
    return p;
  }

  static LstmParams random(std::size_t hidden, std::size_t input, Rng& rng) {
    LstmParams p = zeros(hidden, input);
    const double s = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (Matrix* w : {&p.W_f, &p.W_i, &p.W_c, &p.W_o})
      for (Eigen::Index i = 0; i < w->size(); ++i) (*w)(i) = rng.uniform(-s, s);
    for (Vector* b : {&p.b_f, &p.b_i, &p.b_c, &p.b_o})
      for (Eigen::Index i = 0; i < b->size(); ++i) (*b)(i) = rng.uniform(-s, s);
    return p;
  }

  void validate() const {
    const auto h = static_cast<Eigen::Index>(hidden_size), n = static_cast<Eigen::Index>(hidden_size + input_size);
    for (const Matrix* w : {&W_f, &W_i, &W_c, &W_o})
      if (w->rows() != h || w->cols() != n) throw InputError("LSTM gate weight has the wrong shape");
    for (const Vector* b : {&b_f, &b_i, &b_c, &b_o})
      if (b->size() != h) throw InputError("LSTM gate bias has the wrong size");
  }
};

struct LstmState {
  Vector h;
  Vector c;

  static LstmState zeros(std::size_t hidden) {
    return {Vector::Zero(static_cast<Eigen::Index>(hidden)), Vector::Zero(static_cast<Eigen::Index>(hidden))};
  }
};

inline LstmState lstm_step(const Vector& x, const LstmState& state, const LstmParams& p) {
  p.validate();
  if (static_cast<std::size_t>(x.size()) != p.input_size) throw InputError("LSTM input has the wrong size");
  if (static_cast<std::size_t>(state.h.size()) != p.hidden_size ||
      static_cast<std::size_t>(state.c.size()) != p.hidden_size)
    throw InputError("LSTM state has the wrong size");
  Vector z(state.h.size() + x.size());
  z << state.h, x;
  const Vector f = ad::sigmoid(Matrix(p.W_f * z + p.b_f));
  const Vector i = ad::sigmoid(Matrix(p.W_i * z + p.b_i));
  const Vector c_tilde = (p.W_c * z + p.b_c).array().tanh();
  const Vector o = ad::sigmoid(Matrix(p.W_o * z + p.b_o));
  LstmState next;
  next.c = state.c.cwiseProduct(f) + c_tilde.cwiseProduct(i);
  next.h = o.cwiseProduct(Vector(next.c.array().tanh()));
  return next;
}

namespace detail {

inline void require_word_index(const TokenizedBatch& batch) {
  if (batch.scheme != EncodingScheme::word_index) throw InputError("recurrent encoders need a word_index batch");
}

inline std::vector<Vector> row_inputs(const TokenizedBatch& batch, std::size_t i, const EmbeddingMatrix& emb) {
  std::vector<Vector> xs;
  for (std::size_t j = 0; j < batch.lengths[i]; ++j) xs.push_back(emb.row(batch.id(i, j)));
  return xs;
}

}  // namespace detail

/// Final hidden state after each row's last unmasked position (zero for empty rows).
inline Matrix lstm_forward(const TokenizedBatch& batch, const EmbeddingMatrix& emb, const LstmParams& p) {
  detail::require_word_index(batch);
  if (emb.dim() != p.input_size) throw InputError("embedding width differs from LSTM input size");
  Matrix out(static_cast<Eigen::Index>(batch.rows), static_cast<Eigen::Index>(p.hidden_size));
  for (std::size_t i = 0; i < batch.rows; ++i) {
    LstmState s = LstmState::zeros(p.hidden_size);
    for (const auto& x : detail::row_inputs(batch, i, emb)) s = lstm_step(x, s, p);
    out.row(static_cast<Eigen::Index>(i)) = s.h.transpose();
  }
  return out;
}

enum class Activation : std::uint8_t { identity, sigmoid, tanh, softmax };

inline Vector activate(Activation a, const Vector& v) {
  switch (a) {
    case Activation::identity:
      return v;
    case Activation::sigmoid:
      return ad::sigmoid(Matrix(v));
    case Activation::tanh:
      return v.array().tanh();
    case Activation::softmax:
      return ad::softmax_rows(v.transpose()).transpose();
  }
  return v;
}

/// Two directions plus the per-position combiner O_i = g(w_o1 h_f + w_o2 h_b).
/// In plain-RNN mode each direction is h = f(w_1 x + w_2 h_prev) instead of a gated LSTM.
struct BiLstmParams {
  enum class Mode : std::uint8_t { gated, plain_rnn };

  Mode mode = Mode::gated;
  LstmParams forward;
  LstmParams backward;
  Matrix w_f1, w_f2, w_b1, w_b2;  // plain mode: hidden x input, hidden x hidden
  Matrix w_o1, w_o2;              // out x hidden
  Activation f = Activation::tanh;
  Activation g = Activation::softmax;

  std::size_t hidden_size() const {
    return mode == Mode::gated ? forward.hidden_size : static_cast<std::size_t>(w_f2.rows());
  }
  std::size_t input_size() const {
    return mode == Mode::gated ? forward.input_size : static_cast<std::size_t>(w_f1.cols());
  }

  void validate() const {
    if (mode == Mode::gated) {
      forward.validate();
      backward.validate();
      if (forward.hidden_size != backward.hidden_size || forward.input_size != backward.input_size)
        throw InputError("BiLSTM directions must share sizes");
    } else {
      const auto h = w_f2.rows();
      if (w_f2.cols() != h || w_b2.rows() != h || w_b2.cols() != h || w_f1.rows() != h || w_b1.rows() != h ||
          w_b1.cols() != w_f1.cols())
        throw InputError("plain BiLSTM weights have inconsistent shapes");
    }
    const auto h = static_cast<Eigen::Index>(hidden_size());
    if (w_o1.cols() != h || w_o2.cols() != h || w_o1.rows() != w_o2.rows())
      throw InputError("BiLSTM combiner weights have the wrong shape");
  }

  /// Parameters for the mirrored problem: directions exchanged.
  BiLstmParams swapped() const {
    BiLstmParams s = *this;
    std::swap(s.forward, s.backward);
    std::swap(s.w_f1, s.w_b1);
    std::swap(s.w_f2, s.w_b2);
    std::swap(s.w_o1, s.w_o2);
    return s;
  }
};

struct BiLstmSequence {
  Matrix forward_states;   // length x hidden, row t = h_f after position t
  Matrix backward_states;  // length x hidden, row t = h_b after consuming positions n-1..t
  Matrix outputs;          // length x out, per-position combiner output
};

struct BiLstmOutput {
  Matrix representation;  // rows x 2*hidden: [final forward, final backward]
  std::vector<BiLstmSequence> sequences;
};

inline BiLstmSequence bilstm_sequence(const std::vector<Vector>& xs, const BiLstmParams& p) {
  const std::size_t n = xs.size(), h = p.hidden_size();
  BiLstmSequence out;
  out.forward_states = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h));
  out.backward_states = out.forward_states;
  auto step = [&](bool fwd, const Vector& x, LstmState& s) {
    if (p.mode == BiLstmParams::Mode::gated) {
      s = lstm_step(x, s, fwd ? p.forward : p.backward);
    } else {
      if (static_cast<std::size_t>(x.size()) != p.input_size()) throw InputError("BiLSTM input has the wrong size");
      s.h = activate(p.f, fwd ? Vector(p.w_f1 * x + p.w_f2 * s.h) : Vector(p.w_b1 * x + p.w_b2 * s.h));
    }
  };
  LstmState sf = LstmState::zeros(h), sb = LstmState::zeros(h);
  for (std::size_t t = 0; t < n; ++t) {
    step(true, xs[t], sf);
    out.forward_states.row(static_cast<Eigen::Index>(t)) = sf.h.transpose();
  }
  for (std::size_t t = n; t-- > 0;) {
    step(false, xs[t], sb);
    out.backward_states.row(static_cast<Eigen::Index>(t)) = sb.h.transpose();
  }
  out.outputs = Matrix(static_cast<Eigen::Index>(n), p.w_o1.rows());
  for (std::size_t t = 0; t < n; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    const Vector pre = p.w_o1 * out.forward_states.row(ti).transpose() + p.w_o2 * out.backward_states.row(ti).transpose();
    out.outputs.row(ti) = activate(p.g, pre).transpose();
  }
  return out;
}

inline BiLstmOutput bilstm_forward(const TokenizedBatch& batch, const EmbeddingMatrix& emb, const BiLstmParams& p) {
  detail::require_word_index(batch);
  p.validate();
  if (emb.dim() != p.input_size()) throw InputError("embedding width differs from BiLSTM input size");
  const auto h = static_cast<Eigen::Index>(p.hidden_size());
  BiLstmOutput out;
  out.representation = Matrix::Zero(static_cast<Eigen::Index>(batch.rows), 2 * h);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    auto seq = bilstm_sequence(detail::row_inputs(batch, i, emb), p);
    const auto n = seq.forward_states.rows();
    if (n > 0) {
      out.representation.row(static_cast<Eigen::Index>(i)) << seq.forward_states.row(n - 1), seq.backward_states.row(0);
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

}  // namespace aggro
