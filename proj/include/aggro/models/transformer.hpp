#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "aggro/error.hpp"
#include "aggro/features/batch.hpp"
#include "aggro/models/autodiff.hpp"
#include "aggro/models/safetensors.hpp"
#include "json.hpp"

namespace aggro {

/// Named parameters with stable addresses.
class ParamStore {
 public:
  ad::Parameter& add(const std::string& name, ad::Matrix value) {
    auto [it, fresh] = params_.try_emplace(name, name, std::move(value));
    if (!fresh) throw InputError("duplicate parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  ad::Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InputError("checkpoint lacks tensor '" + name + "'");
    return it->second;
  }
  const ad::Parameter& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }
  std::vector<ad::Parameter*> all() {
    std::vector<ad::Parameter*> out;
    for (auto& [_, p] : params_) out.push_back(&p);
    return out;
  }
  std::map<std::string, ad::Matrix> values() const {
    std::map<std::string, ad::Matrix> out;
    for (const auto& [n, p] : params_) out.emplace(n, p.value);
    return out;
  }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, ad::Parameter> params_;
};

enum class TransformerFamily : std::uint8_t { bert, gpt2 };

struct TransformerConfig {
  TransformerFamily family = TransformerFamily::bert;
  std::size_t vocab_size = 0;
  std::size_t hidden = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t intermediate = 0;
  std::size_t max_positions = 0;
  std::size_t type_vocab = 0;
  double ln_eps = 1e-12;
  std::string activation;
  nlohmann::json raw;

  static TransformerConfig load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "config.json");
    if (!in) throw InputError("no config.json in checkpoint " + dir.string());
    TransformerConfig c;
    try {
      c.raw = nlohmann::json::parse(in);
      const auto type = c.raw.value("model_type", std::string());
      if (type == "bert") {
        c.family = TransformerFamily::bert;
        c.vocab_size = c.raw.at("vocab_size");
        c.hidden = c.raw.at("hidden_size");
        c.layers = c.raw.at("num_hidden_layers");
        c.heads = c.raw.at("num_attention_heads");
        c.intermediate = c.raw.at("intermediate_size");
        c.max_positions = c.raw.value("max_position_embeddings", 512);
        c.type_vocab = c.raw.value("type_vocab_size", 2);
        c.ln_eps = c.raw.value("layer_norm_eps", 1e-12);
        c.activation = c.raw.value("hidden_act", std::string("gelu"));
        if (c.activation != "gelu") throw InputError("unsupported BERT activation " + c.activation);
      } else if (type == "gpt2") {
        c.family = TransformerFamily::gpt2;
        c.vocab_size = c.raw.at("vocab_size");
        c.hidden = c.raw.at("n_embd");
        c.layers = c.raw.at("n_layer");
        c.heads = c.raw.at("n_head");
        c.intermediate = c.raw.contains("n_inner") && !c.raw["n_inner"].is_null() ? c.raw["n_inner"].get<std::size_t>()
                                                                                  : 4 * c.hidden;
        c.max_positions = c.raw.value("n_positions", 1024);
        c.ln_eps = c.raw.value("layer_norm_epsilon", 1e-5);
        c.activation = c.raw.value("activation_function", std::string("gelu_new"));
        if (c.activation != "gelu_new") throw InputError("unsupported GPT-2 activation " + c.activation);
      } else {
        throw InputError("unsupported model_type '" + type + "' in " + dir.string());
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError((dir / "config.json").string() + ": " + e.what());
    }
    if (c.heads == 0 || c.hidden % c.heads != 0) throw InputError("attention heads must divide hidden size");
    return c;
  }
};

namespace detail {

/// Tensors from a checkpoint directory with HF prefixes ("bert.", "transformer.") stripped
/// and legacy LayerNorm gamma/beta names normalised.
inline std::map<std::string, ad::Matrix> load_weights(const std::filesystem::path& dir) {
  const auto file = dir / "model.safetensors";
  if (!std::filesystem::exists(file)) throw InputError("no model.safetensors in " + dir.string());
  std::map<std::string, ad::Matrix> out;
  for (auto& [name, t] : safetensors::read(file)) {
    std::string n = name;
    for (const char* prefix : {"bert.", "transformer."})
      if (n.starts_with(prefix)) n = n.substr(std::string(prefix).size());
    if (n.ends_with(".gamma")) n = n.substr(0, n.size() - 6) + ".weight";
    if (n.ends_with(".beta")) n = n.substr(0, n.size() - 5) + ".bias";
    out[n] = std::move(t.data);
  }
  return out;
}

}  // namespace detail

/// Pretrained encoder/decoder stack plus a 3-way head, run on the autodiff tape.
class TransformerNet {
 public:
  TransformerNet(TransformerConfig cfg, std::map<std::string, ad::Matrix> weights, std::size_t num_classes, Rng& rng)
      : cfg_(std::move(cfg)) {
    auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> ad::Parameter& {
      auto it = weights.find(name);
      if (it == weights.end()) throw InputError("checkpoint lacks tensor '" + name + "'");
      if (it->second.rows() != rows || it->second.cols() != cols) {
        throw InputError("tensor '" + name + "' is " + std::to_string(it->second.rows()) + "x" +
                         std::to_string(it->second.cols()) + ", expected " + std::to_string(rows) + "x" +
                         std::to_string(cols));
      }
      return store_.add(name, std::move(it->second));
    };
    const auto H = static_cast<Eigen::Index>(cfg_.hidden), I = static_cast<Eigen::Index>(cfg_.intermediate);
    const auto V = static_cast<Eigen::Index>(cfg_.vocab_size), P = static_cast<Eigen::Index>(cfg_.max_positions);
    const auto C = static_cast<Eigen::Index>(num_classes);
    auto head = [&](const std::string& name, Eigen::Index in, bool bias) {
      const auto w = weights.find(name + ".weight");
      if (w != weights.end() && w->second.rows() == C && w->second.cols() == in) {
        take(name + ".weight", C, in);
        if (bias) take(name + ".bias", 1, C);
        return;
      }
      ad::Matrix m(C, in);
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal() * 0.02;
      store_.add(name + ".weight", std::move(m));
      if (bias) store_.add(name + ".bias", ad::Matrix::Zero(1, C));
    };
    if (cfg_.family == TransformerFamily::bert) {
      take("embeddings.word_embeddings.weight", V, H);
      take("embeddings.position_embeddings.weight", P, H);
      take("embeddings.token_type_embeddings.weight", static_cast<Eigen::Index>(cfg_.type_vocab), H);
      take("embeddings.LayerNorm.weight", 1, H);
      take("embeddings.LayerNorm.bias", 1, H);
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder.layer." + std::to_string(l) + ".";
        for (const char* m : {"attention.self.query", "attention.self.key", "attention.self.value", "attention.output.dense"}) {
          take(p + m + ".weight", H, H);
          take(p + m + ".bias", 1, H);
        }
        take(p + "attention.output.LayerNorm.weight", 1, H);
        take(p + "attention.output.LayerNorm.bias", 1, H);
        take(p + "intermediate.dense.weight", I, H);
        take(p + "intermediate.dense.bias", 1, I);
        take(p + "output.dense.weight", H, I);
        take(p + "output.dense.bias", 1, H);
        take(p + "output.LayerNorm.weight", 1, H);
        take(p + "output.LayerNorm.bias", 1, H);
      }
      has_pooler_ = weights.count("pooler.dense.weight") != 0;
      if (has_pooler_) {
        take("pooler.dense.weight", H, H);
        take("pooler.dense.bias", 1, H);
      }
      head("classifier", H, true);
    } else {
      take("wte.weight", V, H);
      take("wpe.weight", P, H);
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "h." + std::to_string(l) + ".";
        take(p + "ln_1.weight", 1, H);
        take(p + "ln_1.bias", 1, H);
        take(p + "attn.c_attn.weight", H, 3 * H);
        take(p + "attn.c_attn.bias", 1, 3 * H);
        take(p + "attn.c_proj.weight", H, H);
        take(p + "attn.c_proj.bias", 1, H);
        take(p + "ln_2.weight", 1, H);
        take(p + "ln_2.bias", 1, H);
        take(p + "mlp.c_fc.weight", H, I);
        take(p + "mlp.c_fc.bias", 1, I);
        take(p + "mlp.c_proj.weight", I, H);
        take(p + "mlp.c_proj.bias", 1, H);
      }
      take("ln_f.weight", 1, H);
      take("ln_f.bias", 1, H);
      head("score", H, false);
    }
  }

  const TransformerConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  bool has_pooler() const { return has_pooler_; }

  /// Logits [rows x classes]. BERT reads the first position (through the pooler when present);
  /// GPT-2 reads each row's last unmasked position.
  ad::Var logits(ad::Tape& t, const TokenizedBatch& batch, double dropout, Rng& rng, bool training) {
    if (batch.scheme != EncodingScheme::transformer_subword) throw InputError("transformer models need a subword batch");
    std::size_t T = 1;
    for (auto l : batch.lengths) T = std::max(T, l);
    if (T > cfg_.max_positions) throw InputError("sequence longer than the checkpoint's position table");
    const std::size_t B = batch.rows;
    std::vector<std::int32_t> ids(B * T), pos(B * T);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < T; ++j) {
        ids[b * T + j] = batch.id(b, j);
        pos[b * T + j] = static_cast<std::int32_t>(j);
      }
    auto P = [&](const std::string& n) { return t.param(store_.at(n)); };
    auto lin = [&](ad::Var x, const std::string& n) { return ad::add_row(ad::matmul_nt(x, P(n + ".weight")), P(n + ".bias")); };
    auto conv = [&](ad::Var x, const std::string& n) { return ad::add_row(ad::matmul(x, P(n + ".weight")), P(n + ".bias")); };
    auto ln = [&](ad::Var x, const std::string& n) { return ad::layer_norm(x, P(n + ".weight"), P(n + ".bias"), cfg_.ln_eps); };
    auto drop = [&](ad::Var x) { return ad::dropout(x, dropout, rng, training); };

    if (cfg_.family == TransformerFamily::bert) {
      ad::Var x = ad::add(ad::gather(t, store_.at("embeddings.word_embeddings.weight"), ids),
                          ad::gather(t, store_.at("embeddings.position_embeddings.weight"), pos));
      x = ad::add(x, ad::gather(t, store_.at("embeddings.token_type_embeddings.weight"),
                                std::vector<std::int32_t>(B * T, 0)));
      x = drop(ln(x, "embeddings.LayerNorm"));
      for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder.layer." + std::to_string(l) + ".";
        ad::Var ctx = ad::attention(lin(x, p + "attention.self.query"), lin(x, p + "attention.self.key"),
                                    lin(x, p + "attention.self.value"), B, T, cfg_.heads, batch.lengths, false);
        x = ln(ad::add(drop(lin(ctx, p + "attention.output.dense")), x), p + "attention.output.LayerNorm");
        ad::Var inter = ad::gelu_erf(lin(x, p + "intermediate.dense"));
        x = ln(ad::add(drop(lin(inter, p + "output.dense")), x), p + "output.LayerNorm");
      }
      std::vector<Eigen::Index> first(B);
      for (std::size_t b = 0; b < B; ++b) first[b] = static_cast<Eigen::Index>(b * T);
      ad::Var cls = ad::take_rows(x, first);
      if (has_pooler_) cls = ad::tanh(lin(cls, "pooler.dense"));
      return lin(drop(cls), "classifier");
    }

    ad::Var x = ad::add(ad::gather(t, store_.at("wte.weight"), ids), ad::gather(t, store_.at("wpe.weight"), pos));
    x = drop(x);
    const auto H = static_cast<Eigen::Index>(cfg_.hidden);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "h." + std::to_string(l) + ".";
      ad::Var qkv = conv(ln(x, p + "ln_1"), p + "attn.c_attn");
      ad::Var ctx = ad::attention(ad::slice_cols(qkv, 0, H), ad::slice_cols(qkv, H, H), ad::slice_cols(qkv, 2 * H, H), B,
                                  T, cfg_.heads, batch.lengths, true);
      x = ad::add(x, drop(conv(ctx, p + "attn.c_proj")));
      ad::Var m = ad::gelu_tanh(conv(ln(x, p + "ln_2"), p + "mlp.c_fc"));
      x = ad::add(x, drop(conv(m, p + "mlp.c_proj")));
    }
    x = ln(x, "ln_f");
    std::vector<Eigen::Index> last(B);
    for (std::size_t b = 0; b < B; ++b)
      last[b] = static_cast<Eigen::Index>(b * T + std::max<std::size_t>(batch.lengths[b], 1) - 1);
    return ad::matmul_nt(drop(ad::take_rows(x, last)), P("score.weight"));
  }

 private:
  TransformerConfig cfg_;
  ParamStore store_;
  bool has_pooler_ = false;
};

}  // namespace aggro
