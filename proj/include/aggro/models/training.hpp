#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "aggro/models/classifier.hpp"

namespace aggro {

struct TrainingOptions {
  /// When set, the best-validation checkpoint and run manifest are written here.
  std::optional<std::filesystem::path> run_dir;
  std::string corpus_manifest_hash;
};

struct TrainingRun {
  ModelSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> train_accuracy, val_accuracy, train_loss, val_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::string checkpoint;  // relative to the run directory
  std::string corpus_manifest_hash;

  std::size_t epochs() const { return train_loss.size(); }
};

inline nlohmann::json to_json(const TrainingRun& r) {
  return {{"spec", to_json(r.spec)},
          {"seed", r.seed},
          {"train_accuracy", r.train_accuracy},
          {"val_accuracy", r.val_accuracy},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"best_epoch", r.best_epoch},
          {"stopped_early", r.stopped_early},
          {"checkpoint", r.checkpoint},
          {"corpus_manifest_hash", r.corpus_manifest_hash}};
}

inline TrainingRun training_run_from_json(const nlohmann::json& j) {
  TrainingRun r;
  r.spec = model_spec_from_json(j.at("spec"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
  r.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  r.val_loss = j.at("val_loss").get<std::vector<double>>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.stopped_early = j.at("stopped_early").get<bool>();
  r.checkpoint = j.value("checkpoint", std::string());
  r.corpus_manifest_hash = j.value("corpus_manifest_hash", std::string());
  return r;
}

struct Prediction {
  ad::Matrix probabilities;  // rows x classes
  std::vector<Label> labels;

  std::size_t size() const { return labels.size(); }
};

/// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax_row(const ad::Matrix& m, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c)
    if (m(r, c) > m(r, best)) best = c;
  return static_cast<std::size_t>(best);
}

inline Prediction predict_from_logits(const ad::Matrix& logits) {
  Prediction p;
  p.probabilities = ad::softmax_rows(logits);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) p.labels.push_back(label_from_index(argmax_row(logits, r)));
  return p;
}

inline Prediction predict(Classifier& model, const TokenizedBatch& batch, std::size_t batch_size = 64) {
  model.check_batch(batch);
  const auto C = static_cast<Eigen::Index>(model.spec().num_classes);
  ad::Matrix logits(static_cast<Eigen::Index>(batch.rows), C);
  Rng unused(0);
  for (std::size_t b = 0; b < batch.rows; b += batch_size) {
    const std::size_t e = std::min(batch.rows, b + batch_size);
    ad::Tape t;
    logits.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
        model.logits(t, batch.slice(b, e), false, unused).value();
  }
  return predict_from_logits(logits);
}

inline Prediction predict(Classifier& model, const std::vector<std::string>& texts) {
  return predict(model, model.encode(texts), model.spec().hp.batch_size);
}

namespace detail {

inline std::vector<std::int32_t> label_ids(const Corpus& c) {
  std::vector<std::int32_t> out;
  for (const auto& x : c) out.push_back(static_cast<std::int32_t>(index_of(x.label)));
  return out;
}

struct EvalPass {
  double loss = 0;
  double accuracy = 0;
};

inline EvalPass eval_pass(Classifier& model, const TokenizedBatch& data, const std::vector<std::int32_t>& y,
                          const std::vector<double>& class_w, std::size_t batch_size) {
  double loss = 0, weight = 0;
  std::size_t correct = 0;
  Rng unused(0);
  for (std::size_t b = 0; b < data.rows; b += batch_size) {
    const std::size_t e = std::min(data.rows, b + batch_size);
    ad::Tape t;
    const ad::Matrix z = model.logits(t, data.slice(b, e), false, unused).value();
    const ad::Matrix p = ad::softmax_rows(z);
    for (std::size_t i = b; i < e; ++i) {
      const auto r = static_cast<Eigen::Index>(i - b);
      const double w = class_w[static_cast<std::size_t>(y[i])];
      loss -= w * std::log(std::max(p(r, y[i]), std::numeric_limits<double>::min()));
      weight += w;
      correct += argmax_row(z, r) == static_cast<std::size_t>(y[i]);
    }
  }
  return {weight > 0 ? loss / weight : 0.0, data.rows ? static_cast<double>(correct) / static_cast<double>(data.rows) : 0.0};
}

/// Inverse-frequency weights normalised so a balanced corpus gets all ones.
inline std::vector<double> class_weights(const std::vector<std::int32_t>& y, std::size_t classes, bool on) {
  std::vector<double> w(classes, 1.0);
  if (!on || y.empty()) return w;
  std::vector<double> n(classes, 0.0);
  for (auto v : y) n[static_cast<std::size_t>(v)] += 1;
  for (std::size_t c = 0; c < classes; ++c)
    w[c] = n[c] > 0 ? static_cast<double>(y.size()) / (static_cast<double>(classes) * n[c]) : 0.0;
  return w;
}

}  // namespace detail

/// Mini-batch Adam on cross-entropy. After every epoch both corpora are scored without dropout;
/// training stops once validation loss fails to improve for `patience` epochs and the best
/// validation weights are restored.
inline TrainingRun train(Classifier& model, const Corpus& train_corpus, const Corpus& val_corpus, const ModelSpec& spec,
                         std::uint64_t seed, const TrainingOptions& options = {}) {
  if (train_corpus.empty()) throw InputError("training corpus is empty");
  if (val_corpus.empty()) throw InputError("validation corpus is empty");
  spec.validate();
  if (spec.kind != model.spec().kind) throw InputError("spec kind does not match the model handle");
  const auto& hp = spec.hp;
  if (hp.batch_size == 0) throw InputError("batch_size must be >= 1");
  model.prepare(train_corpus, seed);
  const TokenizedBatch xtr = model.encode(train_corpus.texts());
  const TokenizedBatch xva = model.encode(val_corpus.texts());
  const auto ytr = detail::label_ids(train_corpus), yva = detail::label_ids(val_corpus);
  const auto cw = detail::class_weights(ytr, spec.num_classes, hp.class_weighting);

  TrainingRun run;
  run.spec = spec;
  run.seed = seed;
  run.corpus_manifest_hash = options.corpus_manifest_hash;
  ad::Adam opt(hp.learning_rate, 0.9, 0.999, 1e-8, hp.clip_norm);
  Rng order_rng(derive_seed(seed, "train.order"));
  Rng drop_rng(derive_seed(seed, "train.dropout"));
  std::vector<std::size_t> order(xtr.rows);
  std::iota(order.begin(), order.end(), 0);
  auto params = model.parameters();
  double best = std::numeric_limits<double>::infinity();
  std::map<std::string, ad::Matrix> best_state = model.snapshot();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
    for (std::size_t b = 0; b < order.size(); b += hp.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + hp.batch_size)));
      std::vector<std::int32_t> y;
      std::vector<double> w;
      for (auto i : idx) {
        y.push_back(ytr[i]);
        w.push_back(cw[static_cast<std::size_t>(ytr[i])]);
      }
      ad::Tape t;
      const ad::Var loss = ad::cross_entropy(model.logits(t, xtr.select(idx), true, drop_rng), y, w);
      if (!std::isfinite(loss.value()(0, 0)))
        throw ComputeError("training loss became non-finite at epoch " + std::to_string(epoch));
      for (auto* p : params) p->zero_grad();
      t.backward(loss);
      opt.step(params);
    }
    const auto tr = detail::eval_pass(model, xtr, ytr, cw, hp.batch_size);
    const auto va = detail::eval_pass(model, xva, yva, cw, hp.batch_size);
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss))
      throw ComputeError("training loss became non-finite at epoch " + std::to_string(epoch));
    run.train_loss.push_back(tr.loss);
    run.train_accuracy.push_back(tr.accuracy);
    run.val_loss.push_back(va.loss);
    run.val_accuracy.push_back(va.accuracy);
    if (va.loss < best) {
      best = va.loss;
      best_state = model.snapshot();
      run.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= hp.patience && hp.patience > 0) {
      run.stopped_early = epoch + 1 < hp.epochs;
      break;
    }
  }
  if (!run.train_loss.empty()) model.restore(best_state);
  if (options.run_dir) {
    run.checkpoint = "checkpoint";
    model.save(*options.run_dir / run.checkpoint);
    std::ofstream out(*options.run_dir / "run.json", std::ios::binary);
    out << to_json(run).dump(2) << '\n';
    if (!out) throw IoError("cannot write run manifest in " + options.run_dir->string());
  }
  return run;
}

}  // namespace aggro
