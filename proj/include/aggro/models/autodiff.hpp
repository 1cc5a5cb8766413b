#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "aggro/error.hpp"
#include "aggro/random.hpp"

/// Minimal reverse-mode automatic differentiation over dense double matrices.
/// Rows are samples (or sample-positions); columns are features.
namespace aggro::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Var constant(Matrix v) { return push(std::move(v), false, nullptr); }

  Var param(Parameter& p) {
    if (!p.trainable) return constant(p.value);
    Parameter* ptr = &p;
    return push(p.value, true, [ptr](Tape&, const Matrix& g) { ptr->grad += g; });
  }

  Var push(Matrix value, bool needs_grad, Backward bw) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(bw), needs_grad});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(std::initializer_list<Var> vs) const {
    for (const auto& v : vs)
      if (nodes_[v.id].needs_grad) return true;
    return false;
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward closure in reverse order.
  void backward(Var loss) {
    if (value(loss.id).size() != 1) throw ComputeError("backward needs a scalar loss");
    accumulate(loss, Matrix::Ones(1, 1));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      Matrix g = std::move(n.grad);
      n.backward(*this, g);
      n.grad = Matrix();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ComputeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace detail

inline Matrix sigmoid(const Matrix& m) { return m.unaryExpr([](double x) { return detail::sigmoid(x); }); }

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ComputeError("matmul: inner dimensions differ");
  Tape& t = *a.tape;
  return t.push(a.value() * b.value(), t.needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b.id)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T, the natural form for weights stored as [out x in].
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ComputeError("matmul_nt: inner dimensions differ");
  Tape& t = *a.tape;
  return t.push(a.value() * b.value().transpose(), t.needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id)) t.accumulate(a, g * b.value());
    if (t.needs_grad(b.id)) t.accumulate(b, g.transpose() * a.value());
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  Tape& t = *a.tape;
  return t.push(a.value() + b.value(), t.needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  Tape& t = *a.tape;
  return t.push(a.value() - b.value(), t.needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  Tape& t = *a.tape;
  return t.push(a.value().cwiseProduct(b.value()), t.needs_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b.id)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

/// Adds a 1 x n row (bias) to every row of a.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ComputeError("add_row: bias shape mismatch");
  Tape& t = *a.tape;
  Matrix v = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(v), t.needs_grad({a, row}), [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row.id)) t.accumulate(row, g.colwise().sum());
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.push(a.value() * s, t.needs_grad(a.id), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix y = sigmoid(a.value());
  Matrix d = y.array() * (1.0 - y.array());
  return t.push(std::move(y), t.needs_grad(a.id),
                [a, d = std::move(d)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(d)); });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix y = a.value().array().tanh();
  Matrix d = 1.0 - y.array().square();
  return t.push(std::move(y), t.needs_grad(a.id),
                [a, d = std::move(d)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(d)); });
}

/// Exact GELU, x * Phi(x).
inline Var gelu_erf(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols()), d(x.rows(), x.cols());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x(i);
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    y(i) = v * cdf;
    d(i) = cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
  return t.push(std::move(y), t.needs_grad(a.id),
                [a, d = std::move(d)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(d)); });
}

/// Tanh-approximated GELU used by GPT-2.
inline Var gelu_tanh(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols()), d(x.rows(), x.cols());
  constexpr double k = 0.79788456080286535588;  // sqrt(2/pi)
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x(i);
    const double u = k * (v + 0.044715 * v * v * v);
    const double th = std::tanh(u);
    y(i) = 0.5 * v * (1.0 + th);
    d(i) = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * 0.044715 * v * v);
  }
  return t.push(std::move(y), t.needs_grad(a.id),
                [a, d = std::move(d)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(d)); });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ComputeError("concat_cols: nothing to concatenate");
  Tape& t = *parts[0].tape;
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ComputeError("concat_cols: row counts differ");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id);
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(v), ng, [parts](Tape& t, const Matrix& g) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ComputeError("concat_rows: nothing to concatenate");
  Tape& t = *parts[0].tape;
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ComputeError("concat_rows: column counts differ");
    rows += p.rows();
    ng = ng || t.needs_grad(p.id);
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(v), ng, [parts](Tape& t, const Matrix& g) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || start + n > a.cols()) throw ComputeError("slice_cols out of range");
  Tape& t = *a.tape;
  return t.push(a.value().middleCols(start, n), t.needs_grad(a.id), [a, start, n](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, n) = g;
    t.accumulate(a, full);
  });
}

/// Rows of `a` picked by index (duplicates allowed).
inline Var take_rows(Var a, std::vector<Eigen::Index> idx) {
  Tape& t = *a.tape;
  Matrix v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw ComputeError("take_rows index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return t.push(std::move(v), t.needs_grad(a.id), [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, full);
  });
}

/// Embedding lookup; gradients scatter straight into the table. Row 0 stays frozen when asked.
inline Var gather(Tape& t, Parameter& table, std::vector<std::int32_t> ids, bool freeze_row0 = false) {
  Matrix v(static_cast<Eigen::Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows()) {
      throw ComputeError("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                         std::to_string(table.value.rows()) + " rows");
    }
    v.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
  }
  if (!table.trainable) return t.constant(std::move(v));
  Parameter* p = &table;
  return t.push(std::move(v), true, [p, ids = std::move(ids), freeze_row0](Tape&, const Matrix& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (freeze_row0 && ids[i] == 0) continue;
      p->grad.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

/// Row-wise select: row r is a's row when keep[r] != 0, otherwise b's.
inline Var blend_rows(const std::vector<std::uint8_t>& keep, Var a, Var b) {
  detail::same_shape(a, b, "blend_rows");
  Tape& t = *a.tape;
  Matrix v = b.value();
  for (std::size_t r = 0; r < keep.size(); ++r)
    if (keep[r]) v.row(static_cast<Eigen::Index>(r)) = a.value().row(static_cast<Eigen::Index>(r));
  return t.push(std::move(v), t.needs_grad({a, b}), [keep, a, b](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(g.rows(), g.cols()), gb = g;
    for (std::size_t r = 0; r < keep.size(); ++r) {
      if (keep[r]) {
        ga.row(static_cast<Eigen::Index>(r)) = g.row(static_cast<Eigen::Index>(r));
        gb.row(static_cast<Eigen::Index>(r)).setZero();
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

/// Inverted dropout; identity when rate is 0 or not training.
inline Var dropout(Var a, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw ComputeError("dropout rate must be below 1");
  Matrix m(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform() < rate ? 0.0 : keep;
  Tape& t = *a.tape;
  return mul(a, t.constant(std::move(m)));
}

/// Per-row layer normalisation with learned gain and bias (1 x n each).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = *x.tape;
  const Eigen::Index n = x.cols();
  if (gamma.cols() != n || beta.cols() != n) throw ComputeError("layer_norm: parameter width mismatch");
  Matrix xhat(x.rows(), n);
  Vector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return t.push(std::move(y), t.needs_grad({x, gamma, beta}),
                [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
                  if (t.needs_grad(gamma.id)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                  if (t.needs_grad(beta.id)) t.accumulate(beta, g.colwise().sum());
                  if (!t.needs_grad(x.id)) return;
                  const double n = static_cast<double>(xhat.cols());
                  Matrix gx(g.rows(), g.cols());
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const RowVector gh = g.row(r).cwiseProduct(gamma.value().row(0));
                    const double s1 = gh.sum();
                    const double s2 = gh.cwiseProduct(xhat.row(r)).sum();
                    gx.row(r) = (inv_std(r) / n) * (n * gh.array() - s1 - xhat.row(r).array() * s2);
                  }
                  t.accumulate(x, gx);
                });
}

/// Multi-head scaled dot-product attention over `batch` sequences of `seq_len` rows each.
/// q, k, v are [(batch*seq_len) x d]; keys at positions >= lengths[b] are masked,
/// and with `causal` each query only sees keys at or before it.
inline Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq_len, std::size_t heads,
                     const std::vector<std::size_t>& lengths, bool causal) {
  detail::same_shape(q, k, "attention");
  detail::same_shape(q, v, "attention");
  const Eigen::Index d = q.cols();
  if (heads == 0 || d % static_cast<Eigen::Index>(heads) != 0) throw ComputeError("attention: heads must divide width");
  if (q.rows() != static_cast<Eigen::Index>(batch * seq_len)) throw ComputeError("attention: row count mismatch");
  const Eigen::Index dh = d / static_cast<Eigen::Index>(heads);
  const Eigen::Index T = static_cast<Eigen::Index>(seq_len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out = Matrix::Zero(q.rows(), d);
  std::vector<Matrix> probs(batch * heads);
  for (std::size_t b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
    const Eigen::Index valid = static_cast<Eigen::Index>(std::max<std::size_t>(lengths[b], 1));
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix s = q.value().block(r0, c0, T, dh) * k.value().block(r0, c0, T, dh).transpose() * scale;
      Matrix p = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const Eigen::Index last = causal ? std::min(i + 1, valid) : valid;
        const double mx = s.row(i).head(last).maxCoeff();
        double z = 0;
        for (Eigen::Index j = 0; j < last; ++j) z += (p(i, j) = std::exp(s(i, j) - mx));
        p.row(i).head(last) /= z;
      }
      out.block(r0, c0, T, dh) = p * v.value().block(r0, c0, T, dh);
      probs[b * heads + h] = std::move(p);
    }
  }
  Tape& t = *q.tape;
  return t.push(std::move(out), t.needs_grad({q, k, v}),
                [q, k, v, batch, heads, T, dh, scale, probs = std::move(probs)](Tape& t, const Matrix& g) {
                  Matrix gq = Matrix::Zero(q.rows(), q.cols()), gk = gq, gv = gq;
                  for (std::size_t b = 0; b < batch; ++b) {
                    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * T;
                    for (std::size_t h = 0; h < heads; ++h) {
                      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
                      const Matrix& p = probs[b * heads + h];
                      const Matrix go = g.block(r0, c0, T, dh);
                      gv.block(r0, c0, T, dh) += p.transpose() * go;
                      const Matrix gp = go * v.value().block(r0, c0, T, dh).transpose();
                      Matrix gs(T, T);
                      for (Eigen::Index i = 0; i < T; ++i) {
                        const double dot = gp.row(i).dot(p.row(i));
                        gs.row(i) = p.row(i).array() * (gp.row(i).array() - dot);
                      }
                      gs *= scale;
                      gq.block(r0, c0, T, dh) += gs * k.value().block(r0, c0, T, dh);
                      gk.block(r0, c0, T, dh) += gs.transpose() * q.value().block(r0, c0, T, dh);
                    }
                  }
                  t.accumulate(q, gq);
                  t.accumulate(k, gk);
                  t.accumulate(v, gv);
                });
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Mean softmax cross-entropy over rows with non-zero weight (weights default to 1).
inline Var cross_entropy(Var logits, const std::vector<std::int32_t>& targets, std::vector<double> weights = {}) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) throw ComputeError("cross_entropy: target count mismatch");
  if (weights.empty()) weights.assign(targets.size(), 1.0);
  const Matrix p = softmax_rows(logits.value());
  double total_w = 0, loss = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (weights[r] == 0) continue;
    const auto tgt = targets[r];
    if (tgt < 0 || tgt >= logits.cols()) throw ComputeError("cross_entropy: target out of range");
    total_w += weights[r];
    const Eigen::Index ri = static_cast<Eigen::Index>(r);
    const double mx = logits.value().row(ri).maxCoeff();
    const double lse = mx + std::log((logits.value().row(ri).array() - mx).exp().sum());
    loss -= weights[r] * (logits.value()(ri, tgt) - lse);
  }
  if (total_w <= 0) throw ComputeError("cross_entropy: no weighted rows");
  Tape& t = *logits.tape;
  Matrix v(1, 1);
  v(0, 0) = loss / total_w;
  return t.push(std::move(v), t.needs_grad(logits.id),
                [logits, p, targets, weights = std::move(weights), total_w](Tape& t, const Matrix& g) {
                  Matrix gl = p;
                  for (std::size_t r = 0; r < targets.size(); ++r) {
                    const Eigen::Index ri = static_cast<Eigen::Index>(r);
                    gl(ri, targets[r]) -= 1.0;
                    gl.row(ri) *= weights[r] / total_w;
                  }
                  t.accumulate(logits, gl * g(0, 0));
                });
}

/// Adam with optional global-norm gradient clipping.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double clip_norm = 0.0)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), clip_(clip_norm) {}

  void step(const std::vector<Parameter*>& params) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (auto* p : params) {
        m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      }
    }
    double factor = 1.0;
    if (clip_ > 0) {
      double sq = 0;
      for (auto* p : params)
        if (p->trainable) sq += p->grad.squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > clip_) factor = clip_ / norm;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!p.trainable) continue;
      const Matrix g = p.grad * factor;
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
      p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_, clip_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace aggro::ad
