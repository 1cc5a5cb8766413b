#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "aggro/http.hpp"
#include "aggro/pipeline.hpp"

namespace {

using namespace aggro;
using namespace aggro::pipeline;

pipeline::Hooks live_hooks(const ExperimentConfig& cfg) {
  pipeline::Hooks h;
  h.make_provider = [](const TranslatorSettings& s) -> std::shared_ptr<TranslationProvider> {
    if (s.provider == "http")
      return std::make_shared<http::HttpProvider>(s.endpoint, http::api_key_from_env(s.api_key_env));
    return std::make_shared<StubProvider>(s.dictionary ? pipeline::detail::load_dictionary(*s.dictionary)
                                                       : std::map<std::string, std::string>{});
  };
  const fs::path cache = [&] {
    const char* env = std::getenv(kPretrainedDirEnv);
    return env && *env ? fs::path(env) : cfg.output_dir / "pretrained";
  }();
  h.fetch_checkpoint = [cache](const std::string& id) {
    std::cerr << "downloading checkpoint " << id << " into " << cache.string() << '\n';
    return http::fetch_checkpoint(id, cache);
  };
  return h;
}

void print(const RunSummary& s) {
  for (const auto& [stage, n] : s.stages)
    std::cout << stage << ": " << n.computed << " computed, " << n.skipped << " up to date\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggression classification experiments: ingest, augment, translate, train, evaluate, report"};
  app.require_subcommand(1, 1);

  std::string config_path, variant, language, model, out;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  bool offline = false;
  const auto common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "experiment config (JSON)")->required();
    c->add_option("--variant", variant, "raw, semi_noisy or machine_translated");
    c->add_option("--language", language, "en, bn or hi");
    c->add_option("--model", model, "model name or kind");
    c->add_option("--seed", seed, "training seed");
    c->add_flag("--offline", offline, "disable live translation and checkpoint downloads");
    c->add_option("--workers", workers, "concurrent experiment cells")->check(CLI::PositiveNumber);
    c->add_option("--out", out, "output directory");
  };
  const char* names[] = {"ingest", "augment", "translate", "train", "evaluate", "report", "all"};
  const char* help[] = {"load corpora and write manifests",
                        "build the balanced semi-noisy training corpora",
                        "build the machine-translated training corpus",
                        "train the selected cells",
                        "evaluate trained cells on held-out data",
                        "render the metrics table, curves and confusion matrices",
                        "run every stage"};
  for (std::size_t i = 0; i < std::size(names); ++i) common(app.add_subcommand(names[i], help[i]));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();

  try {
    ExperimentConfig cfg = load_config(config_path);
    Overrides o;
    if (!variant.empty()) {
      o.variant = parse_variant(variant);
      if (!o.variant) throw InputError("unknown variant '" + variant + "'");
    }
    if (!language.empty()) o.language = pipeline::detail::language_key(language);
    if (!model.empty()) o.model = model;
    if (sub->count("--seed")) o.seed = seed;
    if (offline) o.offline = true;
    if (workers) o.workers = workers;
    if (!out.empty()) o.out = out;
    apply(cfg, o);
    Pipeline p(cfg, live_hooks(cfg));
    RunSummary s;
    if (cmd == "ingest") s.stages.emplace_back(cmd, p.ingest());
    else if (cmd == "augment") s.stages.emplace_back(cmd, p.augment());
    else if (cmd == "translate") s.stages.emplace_back(cmd, p.translate());
    else if (cmd == "train") s.stages.emplace_back(cmd, p.train());
    else if (cmd == "evaluate") s.stages.emplace_back(cmd, p.evaluate());
    else if (cmd == "report") s.stages.emplace_back(cmd, p.report());
    else s = p.all();
    print(s);
    return 0;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 1;
  }
}
