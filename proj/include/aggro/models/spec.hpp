#pragma once

#include <optional>
#include <string>

#include "aggro/error.hpp"
#include "aggro/features/batch.hpp"
#include "aggro/labels.hpp"
#include "json.hpp"

namespace aggro {

enum class ModelKind : std::uint8_t {
  lstm,
  bilstm,
  lstm_autoencoder,
  word2vec_classifier,
  bert_base,
  bert_multilingual,
  gpt2_medium,
};

inline constexpr ModelKind kAllModelKinds[] = {ModelKind::lstm,        ModelKind::bilstm,
                                               ModelKind::lstm_autoencoder, ModelKind::word2vec_classifier,
                                               ModelKind::bert_base,   ModelKind::bert_multilingual,
                                               ModelKind::gpt2_medium};

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::lstm: return "lstm";
    case ModelKind::bilstm: return "bilstm";
    case ModelKind::lstm_autoencoder: return "lstm_autoencoder";
    case ModelKind::word2vec_classifier: return "word2vec_classifier";
    case ModelKind::bert_base: return "bert_base";
    case ModelKind::bert_multilingual: return "bert_multilingual";
    case ModelKind::gpt2_medium: return "gpt2_medium";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  for (auto k : kAllModelKinds)
    if (to_string(k) == s) return k;
  if (s == "bert") return ModelKind::bert_base;
  if (s == "mbert") return ModelKind::bert_multilingual;
  if (s == "gpt2") return ModelKind::gpt2_medium;
  if (s == "word2vec") return ModelKind::word2vec_classifier;
  if (s == "autoencoder") return ModelKind::lstm_autoencoder;
  return std::nullopt;
}

inline bool is_transformer(ModelKind k) {
  return k == ModelKind::bert_base || k == ModelKind::bert_multilingual || k == ModelKind::gpt2_medium;
}

inline bool is_bert(ModelKind k) { return k == ModelKind::bert_base || k == ModelKind::bert_multilingual; }

inline EncodingScheme scheme_for(ModelKind k) {
  return is_transformer(k) ? EncodingScheme::transformer_subword : EncodingScheme::word_index;
}

struct Hyperparameters {
  // shared
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t patience = 3;
  std::size_t max_len = 100;
  double dropout = 0.3;
  double clip_norm = 5.0;
  bool class_weighting = false;
  // recurrent
  std::size_t vocab_size = 20000;
  std::size_t min_frequency = 1;
  std::size_t embedding_dim = 128;
  std::size_t hidden_size = 128;
  // skip-gram initialisation
  std::size_t w2v_window = 5;
  std::size_t w2v_negatives = 5;
  std::size_t w2v_epochs = 5;
  double w2v_learning_rate = 0.025;
  bool freeze_embeddings = false;
  // autoencoder
  std::size_t ae_epochs = 10;
  double ae_learning_rate = 1e-3;
  bool freeze_encoder = false;
  // transformers
  std::string checkpoint;

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Hyperparameters, learning_rate, batch_size, epochs, patience, max_len,
                                                dropout, clip_norm, class_weighting, vocab_size, min_frequency,
                                                embedding_dim, hidden_size, w2v_window, w2v_negatives, w2v_epochs,
                                                w2v_learning_rate, freeze_embeddings, ae_epochs, ae_learning_rate,
                                                freeze_encoder, checkpoint)

/// Defaults per family: recurrent models train from scratch, transformers fine-tune a checkpoint.
inline Hyperparameters default_hyperparameters(ModelKind k) {
  Hyperparameters h;
  if (is_transformer(k)) {
    h.learning_rate = 2e-5;
    h.batch_size = 16;
    h.epochs = 4;
    h.max_len = 128;
    h.dropout = 0.1;
    h.clip_norm = 1.0;
    h.patience = 2;
  }
  switch (k) {
    case ModelKind::bert_base: h.checkpoint = "bert-base-uncased"; break;
    case ModelKind::bert_multilingual: h.checkpoint = "bert-base-multilingual-cased"; break;
    case ModelKind::gpt2_medium: h.checkpoint = "gpt2-medium"; break;
    default: break;
  }
  return h;
}

struct ModelSpec {
  ModelKind kind = ModelKind::lstm;
  Hyperparameters hp;
  std::size_t num_classes = kNumLabels;
  std::optional<Language> language;

  static ModelSpec make(ModelKind k, std::optional<Language> lang = std::nullopt) {
    return ModelSpec{k, default_hyperparameters(k), kNumLabels, lang};
  }

  EncodingScheme scheme() const { return scheme_for(kind); }

  void validate() const {
    if (num_classes != kNumLabels) throw InputError("models have exactly three output classes");
    if (kind == ModelKind::bert_base && language && *language != Language::en) {
      throw InputError("bert_base is English-only; use bert_multilingual for " + std::string(to_string(*language)));
    }
    if (hp.batch_size == 0) throw InputError("batch_size must be positive");
    if (hp.max_len == 0) throw InputError("max_len must be positive");
    if (hp.learning_rate < 0) throw InputError("learning_rate must be non-negative");
    if (hp.dropout < 0 || hp.dropout >= 1) throw InputError("dropout must be in [0, 1)");
    if (!is_transformer(kind)) {
      if (hp.vocab_size < 3) throw InputError("vocab_size must be at least 3");
      if (hp.embedding_dim == 0 || hp.hidden_size == 0) throw InputError("layer sizes must be positive");
    } else if (hp.checkpoint.empty()) {
      throw InputError(to_string(kind) + " needs a checkpoint id");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["hyperparameters"] = s.hp;
  j["num_classes"] = s.num_classes;
  j["language"] = s.language ? nlohmann::json(to_string(*s.language)) : nlohmann::json(nullptr);
  return j;
}

/// Missing hyperparameters take the kind's defaults; unknown keys are rejected.
inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  const auto kind_name = j.at("kind").get<std::string>();
  const auto kind = parse_model_kind(kind_name);
  if (!kind) throw InputError("unknown model kind '" + kind_name + "'");
  ModelSpec s = ModelSpec::make(*kind);
  if (j.contains("hyperparameters")) {
    const nlohmann::json defaults = s.hp;
    for (const auto& [k, v] : j["hyperparameters"].items())
      if (!defaults.contains(k)) throw InputError("unknown hyperparameter '" + k + "'");
    nlohmann::json merged = defaults;
    merged.update(j["hyperparameters"]);
    s.hp = merged.get<Hyperparameters>();
  }
  s.num_classes = j.value("num_classes", kNumLabels);
  if (j.contains("language") && !j["language"].is_null()) s.language = language_or_throw(j["language"].get<std::string>());
  return s;
}

}  // namespace aggro
