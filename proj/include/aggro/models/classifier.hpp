#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aggro/corpus.hpp"
#include "aggro/features.hpp"
#include "aggro/models/autoencoder.hpp"
#include "aggro/models/layers.hpp"
#include "aggro/models/safetensors.hpp"
#include "aggro/models/skipgram.hpp"
#include "aggro/models/spec.hpp"
#include "aggro/models/transformer.hpp"

namespace aggro {

inline constexpr const char* kPretrainedDirEnv = "AGGRO_PRETRAINED_DIR";

/// Model handle: owns parameters plus whatever turns text into ids for it.
class Classifier {
 public:
  explicit Classifier(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Classifier() = default;
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  const ModelSpec& spec() const { return spec_; }
  EncodingScheme scheme() const { return spec_.scheme(); }

  /// True once the model can encode text (vocabulary fitted or tokenizer loaded).
  virtual bool ready() const = 0;
  virtual std::string fingerprint() const = 0;
  virtual TokenizedBatch encode(const std::vector<std::string>& texts) const = 0;
  /// One-off preparation on the training corpus (vocabulary, embedding or encoder pretraining).
  virtual void prepare(const Corpus& train, std::uint64_t seed) = 0;
  virtual ad::Var logits(ad::Tape& t, const TokenizedBatch& batch, bool training, Rng& rng) = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;

  std::map<std::string, ad::Matrix> snapshot() {
    std::map<std::string, ad::Matrix> s;
    for (auto* p : parameters()) s.emplace(p->name, p->value);
    return s;
  }
  void restore(const std::map<std::string, ad::Matrix>& s) {
    for (auto* p : parameters()) {
      auto it = s.find(p->name);
      if (it == s.end()) throw InputError("snapshot lacks parameter " + p->name);
      p->value = it->second;
    }
  }

  void check_batch(const TokenizedBatch& batch) const {
    if (batch.scheme != scheme()) {
      throw InputError(to_string(spec_.kind) + " expects " + to_string(scheme()) + " batches, got " +
                       to_string(batch.scheme));
    }
    if (ready() && !batch.fingerprint.empty() && batch.fingerprint != fingerprint()) {
      throw InputError("batch was encoded with " + batch.fingerprint + " but the model uses " + fingerprint());
    }
  }

 protected:
  void write_manifest(const std::filesystem::path& dir, nlohmann::json extra) const {
    nlohmann::json j = std::move(extra);
    j["format"] = "aggrolab-model";
    j["version"] = 1;
    j["spec"] = to_json(spec_);
    j["fingerprint"] = fingerprint();
    std::ofstream out(dir / "model.json", std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "model.json").string());
  }

  ModelSpec spec_;
};

/// lstm, bilstm, lstm_autoencoder and word2vec_classifier: embedding -> recurrent encoder -> linear head.
class RecurrentClassifier final : public Classifier {
 public:
  RecurrentClassifier(ModelSpec spec, std::uint64_t seed, std::optional<Vocabulary> vocab = std::nullopt)
      : Classifier(std::move(spec)), vocab_(std::move(vocab)) {
    spec_.validate();
    if (is_transformer(spec_.kind)) throw InputError("not a recurrent model kind");
    const auto& hp = spec_.hp;
    if (vocab_ && vocab_->size() > hp.vocab_size) throw InputError("vocabulary larger than the embedding table");
    Rng rng(derive_seed(seed, "model.init"));
    embedding_ = ad::Parameter("embedding", EmbeddingMatrix::random(hp.vocab_size, hp.embedding_dim, rng).weights);
    forward_ = LstmLayer(spec_.kind == ModelKind::bilstm ? "bilstm.forward" : "lstm", hp.embedding_dim, hp.hidden_size, rng);
    std::size_t rep = hp.hidden_size;
    if (spec_.kind == ModelKind::bilstm) {
      backward_ = LstmLayer("bilstm.backward", hp.embedding_dim, hp.hidden_size, rng);
      rep *= 2;
    }
    head_ = Linear("head", rep, spec_.num_classes, rng);
  }

  bool ready() const override { return vocab_.has_value(); }
  bool prepared() const { return prepared_; }
  const std::optional<Vocabulary>& vocabulary() const { return vocab_; }
  std::string fingerprint() const override { return vocab_ ? vocab_->fingerprint() : std::string(); }

  TokenizedBatch encode(const std::vector<std::string>& texts) const override {
    if (!vocab_) throw InputError("model has no vocabulary yet; prepare it on a training corpus first");
    return encode_word_index(texts, *vocab_, spec_.hp.max_len);
  }

  void prepare(const Corpus& train, std::uint64_t seed) override {
    if (prepared_) return;
    const auto& hp = spec_.hp;
    if (!vocab_) vocab_ = fit_vocabulary(train, hp.vocab_size, hp.min_frequency);
    if (spec_.kind == ModelKind::word2vec_classifier) {
      const auto sg = skipgram_train(train, *vocab_,
                                     SkipGramConfig{hp.embedding_dim, hp.w2v_window, hp.w2v_negatives, hp.w2v_epochs,
                                                    hp.w2v_learning_rate, derive_seed(seed, "skipgram")});
      embedding_.value.topRows(sg.input.weights.rows()) = sg.input.weights;
      embedding_.trainable = !hp.freeze_embeddings;
    } else if (spec_.kind == ModelKind::lstm_autoencoder) {
      const auto ae = autoencoder_pretrain(train, spec_, derive_seed(seed, "autoencoder"), &*vocab_);
      embedding_.value.topRows(ae.model->embedding.value.rows()) = ae.model->embedding.value;
      forward_.assign(ae.model->encoder.params());
      pretrain_loss_ = ae.loss_curve;
      if (hp.freeze_encoder) {
        forward_.set_trainable(false);
        embedding_.trainable = false;
      }
    }
    prepared_ = true;
  }

  const std::vector<double>& pretrain_loss() const { return pretrain_loss_; }

  ad::Var logits(ad::Tape& t, const TokenizedBatch& batch, bool training, Rng& rng) override {
    check_batch(batch);
    const auto in = embed_steps(t, embedding_, batch);
    ad::Var rep = run_lstm(t, forward_, in).h;
    if (spec_.kind == ModelKind::bilstm) {
      const auto rev = embed_steps(t, embedding_, reverse_rows(batch));
      rep = ad::concat_cols({rep, run_lstm(t, backward_, rev).h});
    }
    return head_(t, ad::dropout(rep, spec_.hp.dropout, rng, training));
  }

  std::vector<ad::Parameter*> parameters() override {
    std::vector<ad::Parameter*> out{&embedding_};
    forward_.collect(out);
    if (spec_.kind == ModelKind::bilstm) backward_.collect(out);
    head_.collect(out);
    return out;
  }

  EmbeddingMatrix embedding() const { return {embedding_.value}; }
  LstmParams encoder_params() const { return forward_.params(); }
  LstmParams backward_params() const { return backward_.params(); }
  Linear& head() { return head_; }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    std::map<std::string, ad::Matrix> t;
    for (auto* p : const_cast<RecurrentClassifier*>(this)->parameters()) t.emplace(p->name, p->value);
    safetensors::write(dir / "model.safetensors", t);
    if (vocab_) vocab_->save(dir / "vocab.tsv");
    write_manifest(dir, {{"prepared", prepared_},
                         {"trainable", {{"embedding", embedding_.trainable}, {"encoder", forward_.W_f.trainable}}}});
  }

  static std::unique_ptr<RecurrentClassifier> load(const std::filesystem::path& dir, const nlohmann::json& manifest) {
    const ModelSpec spec = model_spec_from_json(manifest.at("spec"));
    std::optional<Vocabulary> vocab;
    if (std::filesystem::exists(dir / "vocab.tsv")) vocab = Vocabulary::load(dir / "vocab.tsv");
    auto m = std::make_unique<RecurrentClassifier>(spec, 0, std::move(vocab));
    const auto tensors = safetensors::read(dir / "model.safetensors");
    for (auto* p : m->parameters()) {
      auto it = tensors.find(p->name);
      if (it == tensors.end()) throw InputError("saved model lacks tensor " + p->name);
      if (it->second.data.rows() != p->value.rows() || it->second.data.cols() != p->value.cols())
        throw InputError("saved tensor " + p->name + " has the wrong shape");
      p->value = it->second.data;
      p->zero_grad();
    }
    m->prepared_ = manifest.value("prepared", false);
    if (manifest.contains("trainable")) {
      m->embedding_.trainable = manifest["trainable"].value("embedding", true);
      m->forward_.set_trainable(manifest["trainable"].value("encoder", true));
    }
    if (manifest.value("fingerprint", std::string()) != m->fingerprint())
      throw InputError("saved vocabulary does not match the model manifest in " + dir.string());
    return m;
  }

 private:
  std::optional<Vocabulary> vocab_;
  bool prepared_ = false;
  ad::Parameter embedding_;
  LstmLayer forward_, backward_;
  Linear head_;
  std::vector<double> pretrain_loss_;
};

/// Locates a pretrained checkpoint: an existing directory, or `id` under $AGGRO_PRETRAINED_DIR
/// (a '/' in the id may also appear as "--").
inline std::filesystem::path resolve_checkpoint(const std::string& id) {
  namespace fs = std::filesystem;
  if (id.empty()) throw InputError("empty checkpoint id");
  if (fs::is_directory(id)) return id;
  if (const char* root = std::getenv(kPretrainedDirEnv); root && *root) {
    std::string flat = id;
    for (std::size_t p; (p = flat.find('/')) != std::string::npos;) flat.replace(p, 1, "--");
    for (const auto& cand : {fs::path(root) / id, fs::path(root) / flat})
      if (fs::is_directory(cand)) return cand;
  }
  throw InputError("cannot resolve checkpoint '" + id + "'; point " + kPretrainedDirEnv +
                   " at a directory holding it or pass a checkpoint path");
}

/// bert_base, bert_multilingual and gpt2_medium: pretrained stack with a fresh 3-way head.
class TransformerClassifier final : public Classifier {
 public:
  TransformerClassifier(ModelSpec spec, const std::filesystem::path& dir, std::uint64_t seed)
      : Classifier(std::move(spec)), dir_(dir) {
    spec_.validate();
    if (!is_transformer(spec_.kind)) throw InputError("not a transformer model kind");
    auto cfg = TransformerConfig::load(dir);
    const bool want_bert = is_bert(spec_.kind);
    if ((cfg.family == TransformerFamily::bert) != want_bert) {
      throw InputError("checkpoint " + dir.string() + " is a " + cfg.raw.value("model_type", std::string("?")) +
                       " model but " + to_string(spec_.kind) + " was requested");
    }
    tokenizer_ = load_tokenizer(dir);
    if ((tokenizer_->family() == TokenizerFamily::wordpiece) != want_bert)
      throw InputError("tokenizer family in " + dir.string() + " does not match " + to_string(spec_.kind));
    if (tokenizer_->vocab_size() > cfg.vocab_size)
      throw InputError("tokenizer vocabulary exceeds the checkpoint's embedding table");
    Rng rng(derive_seed(seed, "model.init"));
    net_ = std::make_unique<TransformerNet>(std::move(cfg), detail::load_weights(dir), spec_.num_classes, rng);
  }

  bool ready() const override { return true; }
  std::string fingerprint() const override { return tokenizer_->fingerprint(); }
  const SubwordTokenizer& tokenizer() const { return *tokenizer_; }
  TransformerNet& net() { return *net_; }

  TokenizedBatch encode(const std::vector<std::string>& texts) const override {
    return encode_transformer(texts, *tokenizer_, spec_.hp.max_len, fingerprint());
  }

  void prepare(const Corpus&, std::uint64_t) override {}

  ad::Var logits(ad::Tape& t, const TokenizedBatch& batch, bool training, Rng& rng) override {
    check_batch(batch);
    return net_->logits(t, batch, spec_.hp.dropout, rng, training);
  }

  std::vector<ad::Parameter*> parameters() override { return net_->store().all(); }

  void save(const std::filesystem::path& dir) const override {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    safetensors::write(dir / "model.safetensors", net_->store().values());
    std::ofstream(dir / "config.json", std::ios::binary) << net_->config().raw.dump(2) << '\n';
    for (const char* f : {"vocab.txt", "vocab.json", "merges.txt", "tokenizer_config.json"})
      if (fs::exists(dir_ / f) && !fs::equivalent(dir_, dir))
        fs::copy_file(dir_ / f, dir / f, fs::copy_options::overwrite_existing);
    write_manifest(dir, {{"source_checkpoint", spec_.hp.checkpoint}});
  }

  static std::unique_ptr<TransformerClassifier> load(const std::filesystem::path& dir, const nlohmann::json& manifest) {
    auto m = std::make_unique<TransformerClassifier>(model_spec_from_json(manifest.at("spec")), dir, 0);
    if (manifest.value("fingerprint", std::string()) != m->fingerprint())
      throw InputError("saved tokenizer does not match the model manifest in " + dir.string());
    return m;
  }

 private:
  std::filesystem::path dir_;
  std::shared_ptr<SubwordTokenizer> tokenizer_;
  std::unique_ptr<TransformerNet> net_;
};

/// Builds an untrained handle. Pretrained kinds resolve spec.hp.checkpoint.
inline std::unique_ptr<Classifier> build_classifier(const ModelSpec& spec, std::uint64_t seed = 0,
                                                    std::optional<Vocabulary> vocab = std::nullopt) {
  spec.validate();
  if (is_transformer(spec.kind)) {
    return std::make_unique<TransformerClassifier>(spec, resolve_checkpoint(spec.hp.checkpoint), seed);
  }
  return std::make_unique<RecurrentClassifier>(spec, seed, std::move(vocab));
}

inline std::unique_ptr<Classifier> load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("no model.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError((dir / "model.json").string() + ": " + e.what());
  }
  if (manifest.value("format", std::string()) != "aggrolab-model") throw InputError(dir.string() + " is not a saved model");
  const auto kind = parse_model_kind(manifest.at("spec").at("kind").get<std::string>());
  if (kind && is_transformer(*kind)) return TransformerClassifier::load(dir, manifest);
  return RecurrentClassifier::load(dir, manifest);
}

}  // namespace aggro
