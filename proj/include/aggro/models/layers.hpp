#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aggro/models/autodiff.hpp"
#include "aggro/models/recurrent.hpp"

namespace aggro {

namespace detail {
inline ad::Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, double s, Rng& rng) {
  ad::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-s, s);
  return m;
}
}  // namespace detail

/// y = x W^T + b, weight stored [out x in].
struct Linear {
  ad::Parameter weight;
  ad::Parameter bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : has_bias(with_bias) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ad::Parameter(name + ".weight", detail::uniform_matrix(static_cast<Eigen::Index>(out),
                                                                    static_cast<Eigen::Index>(in), s, rng));
    if (with_bias) bias = ad::Parameter(name + ".bias", ad::Matrix::Zero(1, static_cast<Eigen::Index>(out)));
  }

  ad::Var operator()(ad::Tape& t, ad::Var x) {
    ad::Var y = ad::matmul_nt(x, t.param(weight));
    return has_bias ? ad::add_row(y, t.param(bias)) : y;
  }

  void collect(std::vector<ad::Parameter*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }
};

/// Trainable LSTM with the same gate layout as LstmParams.
struct LstmLayer {
  ad::Parameter W_f, W_i, W_c, W_o;
  ad::Parameter b_f, b_i, b_c, b_o;
  std::size_t hidden = 0, input = 0;

  LstmLayer() = default;
  LstmLayer(const std::string& name, std::size_t input_size, std::size_t hidden_size, Rng& rng)
      : hidden(hidden_size), input(input_size) {
    const auto h = static_cast<Eigen::Index>(hidden_size);
    const auto n = static_cast<Eigen::Index>(hidden_size + input_size);
    const double s = 1.0 / std::sqrt(static_cast<double>(hidden_size));
    W_f = ad::Parameter(name + ".W_f", detail::uniform_matrix(h, n, s, rng));
    W_i = ad::Parameter(name + ".W_i", detail::uniform_matrix(h, n, s, rng));
    W_c = ad::Parameter(name + ".W_c", detail::uniform_matrix(h, n, s, rng));
    W_o = ad::Parameter(name + ".W_o", detail::uniform_matrix(h, n, s, rng));
    b_f = ad::Parameter(name + ".b_f", ad::Matrix::Ones(1, h));  // forget bias starts open
    b_i = ad::Parameter(name + ".b_i", ad::Matrix::Zero(1, h));
    b_c = ad::Parameter(name + ".b_c", ad::Matrix::Zero(1, h));
    b_o = ad::Parameter(name + ".b_o", ad::Matrix::Zero(1, h));
  }

  void collect(std::vector<ad::Parameter*>& out) {
    for (auto* p : {&W_f, &W_i, &W_c, &W_o, &b_f, &b_i, &b_c, &b_o}) out.push_back(p);
  }

  void set_trainable(bool on) {
    for (auto* p : {&W_f, &W_i, &W_c, &W_o, &b_f, &b_i, &b_c, &b_o}) p->trainable = on;
  }

  LstmParams params() const {
    LstmParams p;
    p.W_f = W_f.value;
    p.W_i = W_i.value;
    p.W_c = W_c.value;
    p.W_o = W_o.value;
    p.b_f = b_f.value.row(0).transpose();
    p.b_i = b_i.value.row(0).transpose();
    p.b_c = b_c.value.row(0).transpose();
    p.b_o = b_o.value.row(0).transpose();
    p.hidden_size = hidden;
    p.input_size = input;
    return p;
  }

  void assign(const LstmParams& p) {
    p.validate();
    W_f.value = p.W_f;
    W_i.value = p.W_i;
    W_c.value = p.W_c;
    W_o.value = p.W_o;
    b_f.value = p.b_f.transpose();
    b_i.value = p.b_i.transpose();
    b_c.value = p.b_c.transpose();
    b_o.value = p.b_o.transpose();
  }

  struct Vars {
    ad::Var W_f, W_i, W_c, W_o, b_f, b_i, b_c, b_o;
  };

  Vars bind(ad::Tape& t) {
    return {t.param(W_f), t.param(W_i), t.param(W_c), t.param(W_o),
            t.param(b_f), t.param(b_i), t.param(b_c), t.param(b_o)};
  }

  /// One step for every row; rows with keep[r] == 0 keep their previous state.
  static std::pair<ad::Var, ad::Var> step(const Vars& v, ad::Var x, ad::Var h, ad::Var c,
                                          const std::vector<std::uint8_t>& keep) {
    ad::Var z = ad::concat_cols({h, x});
    ad::Var f = ad::sigmoid(ad::add_row(ad::matmul_nt(z, v.W_f), v.b_f));
    ad::Var i = ad::sigmoid(ad::add_row(ad::matmul_nt(z, v.W_i), v.b_i));
    ad::Var ct = ad::tanh(ad::add_row(ad::matmul_nt(z, v.W_c), v.b_c));
    ad::Var o = ad::sigmoid(ad::add_row(ad::matmul_nt(z, v.W_o), v.b_o));
    ad::Var c_new = ad::add(ad::mul(c, f), ad::mul(ct, i));
    ad::Var h_new = ad::mul(o, ad::tanh(c_new));
    return {ad::blend_rows(keep, h_new, h), ad::blend_rows(keep, c_new, c)};
  }
};

struct SequenceInputs {
  std::vector<ad::Var> steps;   // per time step: rows x input
  std::vector<std::size_t> lengths;
  std::size_t max_len = 0;

  std::vector<std::uint8_t> keep(std::size_t t) const {
    std::vector<std::uint8_t> k(lengths.size());
    for (std::size_t r = 0; r < lengths.size(); ++r) k[r] = t < lengths[r];
    return k;
  }
  std::size_t longest() const {
    std::size_t m = 0;
    for (auto l : lengths) m = std::max(m, l);
    return m;
  }
};

/// Embeds a word-index batch column by column.
inline SequenceInputs embed_steps(ad::Tape& t, ad::Parameter& table, const TokenizedBatch& batch) {
  SequenceInputs s;
  s.lengths = batch.lengths;
  s.max_len = batch.max_len;
  const std::size_t n = s.longest();
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::int32_t> ids(batch.rows);
    for (std::size_t i = 0; i < batch.rows; ++i) ids[i] = batch.id(i, j);
    s.steps.push_back(ad::gather(t, table, std::move(ids), true));
  }
  return s;
}

struct LstmRun {
  ad::Var h, c;
};

/// Runs left to right honouring each row's length; returns the final state.
inline LstmRun run_lstm(ad::Tape& t, LstmLayer& layer, const SequenceInputs& in,
                        std::optional<LstmRun> init = std::nullopt) {
  const auto rows = static_cast<Eigen::Index>(in.lengths.size());
  const ad::Matrix h0 = ad::Matrix::Zero(rows, static_cast<Eigen::Index>(layer.hidden));
  LstmRun s = init ? *init : LstmRun{t.constant(h0), t.constant(h0)};
  const auto vars = layer.bind(t);
  for (std::size_t k = 0; k < in.steps.size(); ++k) {
    auto [h, c] = LstmLayer::step(vars, in.steps[k], s.h, s.c, in.keep(k));
    s = {h, c};
  }
  return s;
}

/// Same batch with every row's unmasked content reversed (padding stays at the end).
inline TokenizedBatch reverse_rows(const TokenizedBatch& b) {
  TokenizedBatch r = b;
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t j = 0; j < b.lengths[i]; ++j) r.id(i, j) = b.id(i, b.lengths[i] - 1 - j);
  return r;
}

}  // namespace aggro
