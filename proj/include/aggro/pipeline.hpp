#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "aggro/augmentation.hpp"
#include "aggro/corpus.hpp"
#include "aggro/evaluation.hpp"
#include "aggro/models.hpp"
#include "aggro/translator.hpp"
#include "json.hpp"

namespace aggro::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kDefaultApiKeyEnv = "AGGRO_TRANSLATE_API_KEY";

struct LanguageData {
  fs::path train, test;
  ColumnMap columns = ColumnMap::trac2();
};

struct LanguageResources {
  std::optional<fs::path> lexicon, stopwords;
};

struct TranslatorSettings {
  std::string provider = "stub";  // stub | http
  std::optional<fs::path> dictionary;
  std::string endpoint;
  std::string api_key_env = kDefaultApiKeyEnv;
  std::size_t max_in_flight = 4;
  int max_attempts = 5;
  int initial_backoff_ms = 250;
  fs::path cache = "translation_cache.jsonl";

  /// What determines the produced text; secrets and tuning knobs are left out.
  nlohmann::json identity() const;
};

struct BalanceSettings {
  BalanceStrategy strategy = BalanceStrategy::to_majority;
  std::map<Language, std::array<std::size_t, kNumLabels>> targets;
  double translation_share = 0.5;
};

struct ModelEntry {
  std::string name;
  ModelSpec spec;
};

struct ExperimentConfig {
  fs::path base_dir;
  fs::path output_dir = "out";
  std::map<Language, LanguageData> data;
  std::vector<Language> languages;
  std::vector<DatasetVariant> variants{DatasetVariant::raw};
  std::map<Language, LanguageResources> resources;
  NoiseConfig noise;
  BalanceSettings balance;
  Language translation_target = Language::en;
  std::vector<Language> donors;
  TranslatorSettings translator;
  std::vector<ModelEntry> models;
  std::vector<std::uint64_t> seeds{0};
  double validation_fraction = 0.1;
  std::size_t workers = 1;
  bool offline = false;
  bool check_reference_counts = true;

  bool has_variant(DatasetVariant v) const { return std::find(variants.begin(), variants.end(), v) != variants.end(); }
  void validate() const;
};

/// Command-line restrictions applied on top of a loaded config.
struct Overrides {
  std::optional<DatasetVariant> variant;
  std::optional<Language> language;
  std::optional<std::string> model;
  std::optional<std::uint64_t> seed;
  std::optional<bool> offline;
  std::optional<std::size_t> workers;
  std::optional<fs::path> out;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

inline Language language_key(const std::string& s) {
  auto l = parse_language(s);
  if (!l) throw InputError("unknown language '" + s + "' (expected en, bn or hi)");
  return *l;
}

inline ColumnMap columns_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "trac2") return ColumnMap::trac2();
    if (s == "saved") return ColumnMap::saved();
    throw InputError("unknown corpus format '" + s + "' (expected trac2, saved or a column object)");
  }
  ColumnMap c;
  c.id = j.at("id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.label = j.at("label").get<std::string>();
  const auto d = j.value("delimiter", std::string(","));
  if (d.size() != 1) throw InputError("delimiter must be a single character");
  c.delimiter = d[0];
  return c;
}

inline nlohmann::json to_json(const ColumnMap& c) {
  return {{"id", c.id},
          {"text", c.text},
          {"label", c.label},
          {"language", c.language.value_or("")},
          {"provenance", c.provenance.value_or("")},
          {"source_id", c.source_id.value_or("")},
          {"delimiter", std::string(1, c.delimiter)}};
}

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end())
      throw InputError("unknown key '" + k + "' in " + where);
}

inline std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) h.update(std::string_view(buf, static_cast<std::size_t>(in.gcount())));
  return to_hex(h.digest());
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
}

inline std::optional<nlohmann::json> read_json_if(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  try {
    return read_json(p);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

inline std::map<std::string, std::string> load_dictionary(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open translation dictionary " + p.string());
  std::map<std::string, std::string> d;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError(p.string() + ":" + std::to_string(n) + ": expected source<TAB>translation");
    d[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return d;
}

}  // namespace detail

inline nlohmann::json TranslatorSettings::identity() const {
  nlohmann::json j{{"provider", provider}};
  if (provider == "stub") j["dictionary"] = dictionary ? detail::file_digest(*dictionary) : "";
  else j["endpoint"] = endpoint;
  return j;
}

inline void ExperimentConfig::validate() const {
  const auto exists = [](const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
  };
  if (data.empty()) throw InputError("config lists no datasets");
  for (const auto& [lang, d] : data) {
    exists(d.train, std::string(to_string(lang)) + " training file");
    exists(d.test, std::string(to_string(lang)) + " testing file");
  }
  for (const auto& [lang, r] : resources) {
    if (r.lexicon) exists(*r.lexicon, std::string(to_string(lang)) + " lexicon");
    if (r.stopwords) exists(*r.stopwords, std::string(to_string(lang)) + " stop-word list");
  }
  if (translator.dictionary) exists(*translator.dictionary, "translation dictionary");
  if (translator.provider != "stub" && translator.provider != "http")
    throw InputError("unknown translation provider '" + translator.provider + "' (expected stub or http)");
  if (translator.provider == "http" && translator.endpoint.empty()) throw InputError("http translator needs an endpoint");
  if (translator.max_in_flight < 1) throw InputError("translation.max_in_flight must be at least 1");
  if (translator.max_attempts < 1) throw InputError("translation.max_attempts must be at least 1");
  for (Language l : languages)
    if (!data.count(l)) throw InputError("language " + std::string(to_string(l)) + " has no dataset paths");
  if (variants.empty()) throw InputError("config lists no variants");
  if (has_variant(DatasetVariant::machine_translated)) {
    if (donors.empty()) throw InputError("the machine_translated variant needs at least one donor language");
    if (!data.count(translation_target))
      throw InputError("translation target " + std::string(to_string(translation_target)) + " has no dataset paths");
  }
  for (Language d : donors) {
    if (!data.count(d)) throw InputError("donor language " + std::string(to_string(d)) + " has no dataset paths");
    if (d == translation_target) throw InputError("a donor language cannot equal the translation target");
  }
  noise.validate();
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw InputError("validation_fraction must lie in (0, 1)");
  if (workers < 1) throw InputError("workers must be at least 1");
  if (seeds.empty()) throw InputError("config lists no seeds");
  std::set<std::string> names;
  for (const auto& m : models) {
    m.spec.validate();
    if (!names.insert(m.name).second) throw InputError("duplicate model name '" + m.name + "'");
  }
}

/// Relative paths resolve against the config file's directory.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  using detail::language_key;
  using detail::resolve;
  detail::require_keys(j,
                       {"output_dir", "data", "languages", "variants", "resources", "noise", "balance", "translation",
                        "models", "seeds", "validation_fraction", "workers", "offline", "check_reference_counts"},
                       "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string("out")));
    for (const auto& [lang, d] : j.at("data").items()) {
      detail::require_keys(d, {"train", "test", "format"}, "data." + lang);
      LanguageData ld;
      ld.train = resolve(base_dir, d.at("train").get<std::string>());
      ld.test = resolve(base_dir, d.at("test").get<std::string>());
      if (d.contains("format")) ld.columns = detail::columns_from_json(d["format"]);
      c.data[language_key(lang)] = ld;
    }
    if (j.contains("languages"))
      for (const auto& l : j["languages"]) c.languages.push_back(language_key(l.get<std::string>()));
    else
      for (const auto& [l, d] : c.data) c.languages.push_back(l);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j["variants"]) {
        auto p = parse_variant(v.get<std::string>());
        if (!p) throw InputError("unknown variant '" + v.get<std::string>() + "'");
        c.variants.push_back(*p);
      }
    }
    if (j.contains("resources"))
      for (const auto& [lang, r] : j["resources"].items()) {
        detail::require_keys(r, {"lexicon", "stopwords"}, "resources." + lang);
        LanguageResources lr;
        if (r.contains("lexicon")) lr.lexicon = resolve(base_dir, r["lexicon"].get<std::string>());
        if (r.contains("stopwords")) lr.stopwords = resolve(base_dir, r["stopwords"].get<std::string>());
        c.resources[language_key(lang)] = lr;
      }
    if (j.contains("noise")) c.noise = noise_config_from_json(j["noise"]);
    if (j.contains("balance")) {
      const auto& b = j["balance"];
      detail::require_keys(b, {"strategy", "targets", "translation_share"}, "balance");
      const auto s = b.value("strategy", std::string("to_majority"));
      if (s == "to_majority") c.balance.strategy = BalanceStrategy::to_majority;
      else if (s == "explicit_targets") c.balance.strategy = BalanceStrategy::explicit_targets;
      else throw InputError("unknown balance strategy '" + s + "'");
      if (b.contains("targets"))
        for (const auto& [lang, t] : b["targets"].items()) {
          std::array<std::size_t, kNumLabels> a{};
          if (t.is_array()) {
            if (t.size() != kNumLabels) throw InputError("balance.targets." + lang + " needs three counts");
            for (std::size_t i = 0; i < kNumLabels; ++i) a[i] = t[i].get<std::size_t>();
          } else {
            a = distribution_from_json(t).counts;
          }
          c.balance.targets[language_key(lang)] = a;
        }
      c.balance.translation_share = b.value("translation_share", 0.5);
    }
    if (j.contains("translation")) {
      const auto& t = j["translation"];
      detail::require_keys(t,
                           {"target", "donors", "provider", "dictionary", "endpoint", "api_key_env", "max_in_flight",
                            "max_attempts", "initial_backoff_ms", "cache"},
                           "translation");
      c.translation_target = language_key(t.value("target", std::string("en")));
      if (t.contains("donors"))
        for (const auto& d : t["donors"]) c.donors.push_back(language_key(d.get<std::string>()));
      auto& s = c.translator;
      s.provider = t.value("provider", s.provider);
      if (t.contains("dictionary")) s.dictionary = resolve(base_dir, t["dictionary"].get<std::string>());
      s.endpoint = t.value("endpoint", s.endpoint);
      s.api_key_env = t.value("api_key_env", s.api_key_env);
      s.max_in_flight = t.value("max_in_flight", s.max_in_flight);
      s.max_attempts = t.value("max_attempts", s.max_attempts);
      s.initial_backoff_ms = t.value("initial_backoff_ms", s.initial_backoff_ms);
      if (t.contains("cache")) s.cache = t["cache"].get<std::string>();
    } else {
      for (const auto& [l, d] : c.data)
        if (l != c.translation_target) c.donors.push_back(l);
    }
    if (j.contains("models"))
      for (const auto& m : j["models"]) {
        ModelEntry e;
        e.spec = model_spec_from_json(m);
        e.name = m.value("name", to_string(e.spec.kind));
        auto& ck = e.spec.hp.checkpoint;
        if (!ck.empty() && fs::is_directory(resolve(base_dir, ck))) ck = fs::absolute(resolve(base_dir, ck)).lexically_normal().string();
        c.models.push_back(std::move(e));
      }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.workers = j.value("workers", c.workers);
    c.offline = j.value("offline", c.offline);
    c.check_reference_counts = j.value("check_reference_counts", c.check_reference_counts);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return config_from_json(detail::read_json(path), fs::absolute(path).parent_path());
}

inline void apply(ExperimentConfig& c, const Overrides& o) {
  if (o.variant) c.variants = {*o.variant};
  if (o.language) c.languages = {*o.language};
  if (o.model) {
    std::vector<ModelEntry> keep;
    for (const auto& m : c.models)
      if (m.name == *o.model || to_string(m.spec.kind) == *o.model || parse_model_kind(*o.model) == m.spec.kind)
        keep.push_back(m);
    if (keep.empty()) throw InputError("no model named '" + *o.model + "' in the config");
    c.models = std::move(keep);
  }
  if (o.seed) c.seeds = {*o.seed};
  if (o.offline) c.offline = *o.offline;
  if (o.workers) c.workers = *o.workers;
  if (o.out) c.output_dir = fs::absolute(*o.out);
}

/// One (variant, language, model, seed) entry of the experiment matrix.
struct Cell {
  DatasetVariant variant;
  Language language;
  std::string model;
  ModelSpec spec;
  std::uint64_t seed;

  std::string name() const {
    return std::string(to_string(variant)) + "/" + std::string(to_string(language)) + "/" + model + "-s" +
           std::to_string(seed);
  }
};

/// Cells are ordered variant-major; bert_base is paired only with English.
inline std::vector<Cell> plan_cells(const ExperimentConfig& c) {
  std::vector<Cell> out;
  std::vector<std::string> rejected;
  for (DatasetVariant v : c.variants)
    for (Language l : c.languages) {
      if (v == DatasetVariant::machine_translated && l != c.translation_target) continue;
      for (const auto& m : c.models)
        for (auto seed : c.seeds) {
          ModelSpec s = m.spec;
          s.language = l;
          try {
            s.validate();
          } catch (const InputError& e) {
            rejected.push_back(e.what());
            continue;
          }
          out.push_back({v, l, m.name, s, seed});
        }
    }
  if (out.empty() && !c.models.empty()) {
    std::string why = rejected.empty() ? "" : ": " + rejected.front();
    throw InputError("no experiment cell matches the selection" + why);
  }
  return out;
}

struct StageCount {
  std::size_t computed = 0;
  std::size_t skipped = 0;
};

struct RunSummary {
  std::vector<std::pair<std::string, StageCount>> stages;

  std::size_t computed() const {
    std::size_t n = 0;
    for (const auto& [s, c] : stages) n += c.computed;
    return n;
  }
  std::size_t skipped() const {
    std::size_t n = 0;
    for (const auto& [s, c] : stages) n += c.skipped;
    return n;
  }
};

/// Injection points for network-backed collaborators.
struct Hooks {
  /// Builds the provider for settings.provider; the default handles "stub" only.
  std::function<std::shared_ptr<TranslationProvider>(const TranslatorSettings&)> make_provider;
  /// Downloads a pretrained checkpoint by id and returns its local directory.
  std::function<fs::path(const std::string&)> fetch_checkpoint;
};

/// Serves cached translations only; used for live providers in offline mode.
class OfflineProvider : public TranslationProvider {
 public:
  explicit OfflineProvider(std::string id) : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  std::string translate(const std::string& text, Language source, Language target) override {
    throw ProviderError("offline mode: no cached " + std::string(to_string(source)) + "->" +
                            std::string(to_string(target)) + " translation for '" + text.substr(0, 60) + "'",
                        false);
  }

 private:
  std::string id_;
};

/// Published counts of the fully translated English corpus.
inline LabelDistribution translated_reference() { return LabelDistribution::of(4373, 3096, 2588); }

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig config, Hooks hooks = {}, std::ostream& log = std::cout,
                    std::ostream& warn = std::cerr)
      : cfg_(std::move(config)), hooks_(std::move(hooks)), log_(log), warn_(warn) {
    cfg_.validate();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const fs::path& out() const { return cfg_.output_dir; }

  fs::path corpus_path(Language l, Split s, DatasetVariant v) const {
    return out() / "corpora" /
           (std::string(to_string(l)) + "_" + std::string(to_string(s)) + "_" + std::string(to_string(v)) + ".csv");
  }
  fs::path manifest_path(const fs::path& corpus) const {
    fs::path p = corpus;
    return p.replace_extension(".json");
  }
  fs::path cell_dir(const Cell& c) const { return out() / "cells" / c.name(); }
  fs::path report_dir() const { return out() / "report"; }

  StageCount ingest() {
    StageCount n;
    for (const auto& [lang, d] : cfg_.data)
      for (Split split : {Split::training, Split::testing}) {
        const fs::path src = split == Split::training ? d.train : d.test;
        const fs::path dst = corpus_path(lang, split, DatasetVariant::raw);
        const std::string key = to_hex(Fnv1a{}
                                           .field("ingest-v1")
                                           .field(detail::file_digest(src))
                                           .field(detail::to_json(d.columns).dump())
                                           .field(to_string(lang))
                                           .field(to_string(split))
                                           .digest());
        LabelDistribution dist;
        if (fresh(dst, key)) {
          ++n.skipped;
          dist = distribution_from_json(detail::read_json(manifest_path(dst)).at("counts"));
        } else {
          Corpus c;
          try {
            c = load_corpus(src, lang, split, d.columns);
          } catch (const InputError& e) {
            throw InputError("ingest " + src.string() + ": " + e.what());
          }
          fs::create_directories(dst.parent_path());
          save_corpus(c, dst);
          commit(dst, key, CorpusManifest::describe(c, dst.stem().string(), {src.filename().string()}).to_json());
          dist = distribution(c);
          ++n.computed;
        }
        say(std::string(to_string(lang)) + " " + std::string(to_string(split)) + ": " + describe(dist));
        if (cfg_.check_reference_counts) {
          const auto ref = trac2_reference(lang, split);
          if (ref && !(ref->counts == dist.counts))
            caution(std::string(to_string(lang)) + " " + std::string(to_string(split)) + " distribution " +
                    describe(dist) + " differs from the TRAC-2 release " + describe(*ref));
        }
      }
    return n;
  }

  StageCount augment() {
    StageCount n;
    for (Language lang : cfg_.languages) {
      const Corpus raw = upstream(lang, Split::training, DatasetVariant::raw, "ingest");
      std::vector<Corpus> donors;
      Fnv1a h;
      h.field("augment-v1").field(to_hex(raw.content_hash()));
      for (const auto& [l, d] : cfg_.data)
        if (l != lang) {
          donors.push_back(upstream(l, Split::training, DatasetVariant::raw, "ingest"));
          h.field(to_hex(donors.back().content_hash()));
        }
      std::optional<std::array<std::size_t, kNumLabels>> targets;
      if (auto it = cfg_.balance.targets.find(lang); it != cfg_.balance.targets.end()) targets = it->second;
      const BalancePlan plan = plan_balance(distribution(raw), cfg_.balance.strategy, targets, cfg_.balance.translation_share);
      h.field(aggro::to_json(cfg_.noise).dump()).field(aggro::to_json(plan).dump()).field(cfg_.translator.identity().dump());
      NoiseResources res = resources(lang);
      for (const auto& [id, lex] : res.lexicons) h.field(id).field(detail::file_digest(*cfg_.resources.at(lang).lexicon));
      for (const auto& [id, sw] : res.stopword_lists) h.field(id).field(detail::file_digest(*cfg_.resources.at(lang).stopwords));
      const std::string key = to_hex(h.digest());
      const fs::path dst = corpus_path(lang, Split::training, DatasetVariant::semi_noisy);
      LabelDistribution dist;
      if (fresh(dst, key)) {
        ++n.skipped;
        dist = distribution_from_json(detail::read_json(manifest_path(dst)).at("counts"));
      } else {
        BalanceInputs in;
        in.noise = cfg_.noise;
        in.resources = &res;
        in.translator = &translator();
        in.donors = std::move(donors);
        in.max_in_flight = cfg_.translator.max_in_flight;
        const Corpus out = balance_corpus(raw, plan, in);
        save_corpus(out, dst);
        auto m = CorpusManifest::describe(out, dst.stem().string(), {corpus_path(lang, Split::training, DatasetVariant::raw).filename().string()},
                                          {{"noise", cfg_.noise.seed}})
                     .to_json();
        m["plan"] = aggro::to_json(plan);
        commit(dst, key, m);
        dist = distribution(out);
        ++n.computed;
      }
      say(std::string(to_string(lang)) + " semi_noisy training: " + describe(dist));
    }
    return n;
  }

  StageCount translate() {
    StageCount n;
    const Language target = cfg_.translation_target;
    std::vector<Corpus> sources;
    Fnv1a h;
    h.field("translate-v1").field(to_string(target)).field(cfg_.translator.identity().dump());
    for (Language d : cfg_.donors) {
      sources.push_back(upstream(d, Split::training, DatasetVariant::raw, "ingest"));
      h.field(to_string(d)).field(to_hex(sources.back().content_hash()));
    }
    if (sources.empty()) throw InputError("translate needs at least one donor language");
    const std::string key = to_hex(h.digest());
    const fs::path dst = corpus_path(target, Split::training, DatasetVariant::machine_translated);
    LabelDistribution dist;
    if (fresh(dst, key)) {
      ++n.skipped;
      dist = distribution_from_json(detail::read_json(manifest_path(dst)).at("counts"));
    } else {
      fs::path partial = dst;
      partial.replace_extension(".partial.csv");
      const std::size_t before = translator().provider_calls();
      const Corpus out =
          build_translated_corpus(sources, translator(), target, cfg_.translator.max_in_flight, partial);
      std::error_code ec;
      fs::remove(partial, ec);
      save_corpus(out, dst);
      std::vector<std::string> files;
      for (Language d : cfg_.donors)
        files.push_back(corpus_path(d, Split::training, DatasetVariant::raw).filename().string());
      commit(dst, key, CorpusManifest::describe(out, dst.stem().string(), files).to_json());
      dist = distribution(out);
      ++n.computed;
      say("translation provider calls: " + std::to_string(translator().provider_calls() - before));
    }
    say(std::string(to_string(target)) + " machine_translated training: " + describe(dist));
    std::set<Language> donor_set(cfg_.donors.begin(), cfg_.donors.end());
    if (cfg_.check_reference_counts && target == Language::en && donor_set == std::set{Language::bn, Language::hi} &&
        !(dist.counts == translated_reference().counts))
      caution("translated corpus " + describe(dist) + " differs from the published translated English counts " +
              describe(translated_reference()));
    return n;
  }

  StageCount train() {
    const auto cells = plan_cells(cfg_);
    std::vector<std::function<bool()>> jobs;
    for (const auto& cell : cells) jobs.push_back([this, cell] { return train_cell(cell); });
    return run_jobs(jobs);
  }

  StageCount evaluate() {
    const auto cells = plan_cells(cfg_);
    std::vector<std::function<bool()>> jobs;
    for (const auto& cell : cells) jobs.push_back([this, cell] { return evaluate_cell(cell); });
    return run_jobs(jobs);
  }

  StageCount report() {
    StageCount n;
    std::vector<ReportEntry> entries;
    Fnv1a h;
    h.field("report-v1");
    for (const auto& cell : plan_cells(cfg_)) {
      const fs::path dir = cell_dir(cell);
      const auto metrics = detail::read_json_if(dir / "metrics.json");
      if (!metrics || metrics->value("eval_key", "") != eval_key(cell))
        throw InputError("cell " + cell.name() + " has no current evaluation; run evaluate first");
      ReportEntry e{metric_report_from_json(metrics->at("report")), training_run_from_json(detail::read_json(dir / "run.json"))};
      h.field(aggro::to_json(e.metrics).dump()).field(aggro::to_json(*e.run).dump());
      entries.push_back(std::move(e));
    }
    if (entries.empty()) throw InputError("nothing to report: the config lists no models");
    const std::string key = to_hex(h.digest());
    const fs::path stamp = out() / "state" / "report.json";
    const auto prev = detail::read_json_if(stamp);
    if (prev && prev->value("key", "") == key && fs::exists(report_dir() / "metrics.tsv")) {
      ++n.skipped;
    } else {
      std::error_code ec;
      fs::remove_all(report_dir(), ec);
      render_report(entries, report_dir());
      detail::write_json(stamp, {{"key", key}});
      ++n.computed;
    }
    std::ifstream table(report_dir() / "metrics.tsv");
    for (std::string line; std::getline(table, line);) say(line);
    return n;
  }

  RunSummary all() {
    RunSummary s;
    s.stages.emplace_back("ingest", ingest());
    if (cfg_.has_variant(DatasetVariant::semi_noisy)) s.stages.emplace_back("augment", augment());
    if (cfg_.has_variant(DatasetVariant::machine_translated)) s.stages.emplace_back("translate", translate());
    if (!cfg_.models.empty()) {
      s.stages.emplace_back("train", train());
      s.stages.emplace_back("evaluate", evaluate());
      s.stages.emplace_back("report", report());
    }
    return s;
  }

  std::string train_key(const Cell& c) {
    const Corpus corpus = training_corpus(c);
    return to_hex(Fnv1a{}
                      .field("train-v1")
                      .field(to_hex(corpus.content_hash()))
                      .field(std::to_string(cfg_.validation_fraction))
                      .field(aggro::to_json(c.spec).dump())
                      .field(std::to_string(c.seed))
                      .digest());
  }

  std::string eval_key(const Cell& c) {
    const Corpus test = upstream(test_language(c), Split::testing, DatasetVariant::raw, "ingest");
    return to_hex(Fnv1a{}.field("evaluate-v1").field(train_key(c)).field(to_hex(test.content_hash())).digest());
  }

 private:
  ExperimentConfig cfg_;
  Hooks hooks_;
  std::ostream& log_;
  std::ostream& warn_;
  std::mutex log_mu_, translator_mu_, corpus_mu_;
  std::unique_ptr<TranslationService> translator_;
  std::map<fs::path, Corpus> corpora_;

  void say(const std::string& s) {
    std::lock_guard lock(log_mu_);
    log_ << s << '\n';
  }
  void caution(const std::string& s) {
    std::lock_guard lock(log_mu_);
    warn_ << "warning: " << s << '\n';
  }

  static std::string describe(const LabelDistribution& d) {
    return "NAG=" + std::to_string(d.nag()) + " OAG=" + std::to_string(d.oag()) + " CAG=" + std::to_string(d.cag()) +
           " total=" + std::to_string(d.total);
  }

  bool fresh(const fs::path& corpus, const std::string& key) const {
    const auto m = detail::read_json_if(manifest_path(corpus));
    return m && m->value("input_key", "") == key && fs::exists(corpus);
  }

  void commit(const fs::path& corpus, const std::string& key, nlohmann::json manifest) {
    manifest["input_key"] = key;
    detail::write_json(manifest_path(corpus), manifest);
    std::lock_guard lock(corpus_mu_);
    corpora_.erase(corpus);
  }

  Corpus upstream(Language l, Split s, DatasetVariant v, const char* stage) {
    const fs::path p = corpus_path(l, s, v);
    std::lock_guard lock(corpus_mu_);
    if (auto it = corpora_.find(p); it != corpora_.end()) return it->second;
    if (!fs::exists(p) || !fs::exists(manifest_path(p)))
      throw InputError("missing upstream artifact " + p.string() + "; run " + stage + " first");
    return corpora_[p] = load_saved_corpus(p, l, s);
  }

  Language test_language(const Cell& c) const {
    return c.variant == DatasetVariant::machine_translated ? cfg_.translation_target : c.language;
  }

  Corpus training_corpus(const Cell& c) {
    switch (c.variant) {
      case DatasetVariant::raw: return upstream(c.language, Split::training, c.variant, "ingest");
      case DatasetVariant::semi_noisy: return upstream(c.language, Split::training, c.variant, "augment");
      case DatasetVariant::machine_translated:
        return upstream(cfg_.translation_target, Split::training, c.variant, "translate");
    }
    throw InputError("unknown variant");
  }

  NoiseResources resources(Language lang) const {
    NoiseResources r;
    auto it = cfg_.resources.find(lang);
    if (it == cfg_.resources.end()) return r;
    if (it->second.lexicon) r.lexicons.emplace(cfg_.noise.lexicon_id, SynonymLexicon::load(*it->second.lexicon, lang));
    if (it->second.stopwords) r.stopword_lists.emplace(cfg_.noise.stopword_list_id, load_stopwords(*it->second.stopwords));
    return r;
  }

  TranslationService& translator() {
    std::lock_guard lock(translator_mu_);
    if (translator_) return *translator_;
    const auto& s = cfg_.translator;
    std::shared_ptr<TranslationProvider> provider;
    if (s.provider != "stub" && cfg_.offline) {
      provider = std::make_shared<OfflineProvider>(s.provider);
    } else if (hooks_.make_provider) {
      provider = hooks_.make_provider(s);
    } else if (s.provider == "stub") {
      provider = std::make_shared<StubProvider>(s.dictionary ? detail::load_dictionary(*s.dictionary)
                                                             : std::map<std::string, std::string>{});
    } else {
      throw InputError("translation provider '" + s.provider + "' is not available in this build");
    }
    fs::create_directories(out());
    const fs::path cache = s.cache.is_absolute() ? s.cache : out() / s.cache;
    RetryPolicy retry;
    retry.max_attempts = s.max_attempts;
    retry.initial_backoff = std::chrono::milliseconds(s.initial_backoff_ms);
    translator_ = std::make_unique<TranslationService>(provider, std::make_shared<TranslationCache>(cache), retry,
                                                       s.max_in_flight);
    return *translator_;
  }

  ModelSpec runnable_spec(const Cell& c) {
    ModelSpec s = c.spec;
    if (!is_transformer(s.kind)) return s;
    try {
      resolve_checkpoint(s.hp.checkpoint);
    } catch (const InputError& e) {
      if (cfg_.offline || !hooks_.fetch_checkpoint)
        throw InputError(std::string(e.what()) + (cfg_.offline ? " (offline mode: downloads disabled)" : ""));
      std::lock_guard lock(translator_mu_);
      s.hp.checkpoint = hooks_.fetch_checkpoint(s.hp.checkpoint).string();
    }
    return s;
  }

  bool train_cell(const Cell& c) {
    const fs::path dir = cell_dir(c);
    const std::string key = train_key(c);
    const auto done = detail::read_json_if(dir / "cell.json");
    if (done && done->value("train_key", "") == key && fs::exists(dir / "run.json") && fs::exists(dir / "checkpoint")) {
      say("train " + c.name() + ": up to date");
      return false;
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir);
    const ModelSpec spec = runnable_spec(c);
    const Corpus corpus = training_corpus(c);
    auto [tr, va] = split_train_validation(corpus, cfg_.validation_fraction, derive_seed(c.seed, "validation"));
    auto model = build_classifier(spec, c.seed);
    TrainingOptions opt;
    opt.run_dir = dir;
    opt.corpus_manifest_hash = to_hex(corpus.content_hash());
    TrainingRun run;
    try {
      run = aggro::train(*model, tr, va, c.spec, c.seed, opt);
    } catch (const ComputeError& e) {
      throw ComputeError("cell " + c.name() + ": " + e.what());
    }
    detail::write_json(dir / "cell.json", {{"cell", c.name()}, {"train_key", key}});
    say("train " + c.name() + ": " + std::to_string(run.epochs()) + " epoch(s), best " + std::to_string(run.best_epoch + 1) +
        ", val accuracy " + aggro::detail::fixed(run.val_accuracy[run.best_epoch], 4));
    return true;
  }

  bool evaluate_cell(const Cell& c) {
    const fs::path dir = cell_dir(c);
    const auto done = detail::read_json_if(dir / "cell.json");
    if (!done || done->value("train_key", "") != train_key(c))
      throw InputError("cell " + c.name() + " has not been trained; run train first");
    const std::string key = eval_key(c);
    const auto prev = detail::read_json_if(dir / "metrics.json");
    if (prev && prev->value("eval_key", "") == key) {
      say("evaluate " + c.name() + ": up to date");
      return false;
    }
    const Corpus test = upstream(test_language(c), Split::testing, DatasetVariant::raw, "ingest");
    auto model = load_model(dir / "checkpoint");
    const MetricReport r = aggro::evaluate(*model, test, training_corpus(c), c.variant);
    detail::write_json(dir / "metrics.json", {{"eval_key", key}, {"report", aggro::to_json(r)}});
    say("evaluate " + c.name() + ": accuracy " + aggro::detail::fixed(r.accuracy, 4) + " f1 " + aggro::detail::fixed(r.f1, 4));
    return true;
  }

  /// Runs independent cell jobs on up to cfg_.workers threads; the first failure is rethrown.
  StageCount run_jobs(const std::vector<std::function<bool()>>& jobs) {
    std::atomic<std::size_t> next{0}, computed{0};
    std::exception_ptr failure;
    std::mutex fail_mu;
    const auto worker = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
        {
          std::lock_guard lock(fail_mu);
          if (failure) return;
        }
        try {
          computed += jobs[i]() ? 1 : 0;
        } catch (...) {
          std::lock_guard lock(fail_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const std::size_t n = std::min(cfg_.workers, std::max<std::size_t>(1, jobs.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return {computed.load(), jobs.size() - computed.load()};
  }
};

}  // namespace aggro::pipeline
