#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "aggro/http.hpp"
#include "aggro/pipeline.hpp"
#include "test_util.hpp"

using namespace aggro;
using namespace aggro::pipeline;
using aggro::testing::read_file;
using aggro::testing::TempDir;
using aggro::testing::write_file;

namespace {

const fs::path kData = AGGRO_TEST_DATA_DIR;
const fs::path kFixture = kData / "pipeline" / "fixture.json";

ExperimentConfig fixture(const fs::path& out, Overrides o = {}) {
  auto c = load_config(kFixture);
  o.out = out;
  apply(c, o);
  return c;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n - 1;
}

std::array<std::size_t, 3> recount(const fs::path& csv) {
  std::ifstream in(csv);
  std::array<std::size_t, 3> n{};
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    for (Label l : kAllLabels)
      if (line.find("," + std::string(to_string(l)) + ",") != std::string::npos) ++n[index_of(l)];
  }
  return n;
}

std::string trac2_csv(std::size_t nag, std::size_t oag, std::size_t cag, const std::string& prefix = "x") {
  std::string s = "ID,Text,Sub-task A,Sub-task B\n";
  const std::size_t counts[] = {nag, oag, cag};
  std::size_t id = 0;
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < counts[l]; ++k, ++id)
      s += prefix + std::to_string(id) + ",word" + std::to_string(id % 7) + " token" + std::to_string(id) + "," +
           std::string(to_string(label_from_index(l))) + ",NGEN\n";
  return s;
}

/// Config over hand-written corpora in `dir`; languages maps code -> (train, test) CSV bodies.
nlohmann::json minimal_config(const TempDir& dir, const std::map<std::string, std::pair<std::string, std::string>>& langs) {
  nlohmann::json j;
  j["output_dir"] = "out";
  j["check_reference_counts"] = false;
  for (const auto& [code, files] : langs) {
    write_file(dir / (code + "_train.csv"), files.first);
    write_file(dir / (code + "_test.csv"), files.second);
    j["data"][code] = {{"train", code + "_train.csv"}, {"test", code + "_test.csv"}};
  }
  j["languages"] = nlohmann::json::array({langs.begin()->first});
  j["models"] = nlohmann::json::array();
  return j;
}

ExperimentConfig config_in(const TempDir& dir, const nlohmann::json& j) {
  write_file(dir / "config.json", j.dump(2));
  return load_config(dir / "config.json");
}

nlohmann::json small_lstm(std::size_t epochs = 2) {
  return {{"kind", "lstm"},
          {"hyperparameters",
           {{"epochs", epochs}, {"embedding_dim", 6}, {"hidden_size", 6}, {"batch_size", 8}, {"max_len", 10}}}};
}

}  // namespace

TEST(Config, FixtureLoadsWithResolvedPaths) {
  const auto c = load_config(kFixture);
  EXPECT_EQ(c.data.size(), 3u);
  EXPECT_EQ(c.data.at(Language::bn).train, kFixture.parent_path() / "bn_train.csv");
  EXPECT_EQ(c.output_dir, kFixture.parent_path() / "out");
  EXPECT_EQ(c.variants.size(), 3u);
  EXPECT_EQ(c.models.size(), 7u);
  EXPECT_EQ(c.donors, (std::vector<Language>{Language::bn, Language::hi}));
  EXPECT_TRUE(fs::path(c.models[4].spec.hp.checkpoint).is_absolute());
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(2, 2, 2), trac2_csv(1, 1, 1, "t")}}});
  j["epochs"] = 3;
  EXPECT_THROW(config_in(dir, j), InputError);
  j.erase("epochs");
  j["variants"] = {"noisy"};
  EXPECT_THROW(config_in(dir, j), InputError);
  j["variants"] = {"machine_translated"};
  j["translation"] = {{"target", "en"}, {"donors", nlohmann::json::array()}};
  EXPECT_THROW(config_in(dir, j).validate(), InputError);
  j["translation"] = {{"target", "en"}, {"donors", {"en"}}};
  EXPECT_THROW(config_in(dir, j).validate(), InputError);
  j.erase("translation");
  j["variants"] = {"raw"};
  j["models"] = {{{"kind", "lstm"}, {"hyperparameters", {{"epoch", 2}}}}};
  EXPECT_THROW(config_in(dir, j), InputError);
}

TEST(Config, MissingFileNamesThePath) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(2, 2, 2), trac2_csv(1, 1, 1, "t")}}});
  j["data"]["en"]["test"] = "nowhere/en_test.csv";
  try {
    config_in(dir, j).validate();
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nowhere/en_test.csv"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config(dir / "absent.json"), IoError);
}

TEST(Config, OverridesNarrowTheMatrix) {
  TempDir dir;
  Overrides o;
  o.language = Language::bn;
  o.model = "bert";
  EXPECT_THROW(plan_cells(fixture(dir.path(), o)), InputError);
  o.model = "mbert";
  o.variant = DatasetVariant::raw;
  o.seed = 9;
  o.workers = 3;
  const auto c = fixture(dir.path(), o);
  const auto cells = plan_cells(c);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].name(), "raw/bn/bert_multilingual-s9");
  EXPECT_EQ(c.workers, 3u);
  EXPECT_EQ(c.output_dir, dir.path());
}

TEST(Cells, MatrixShape) {
  TempDir dir;
  const auto cells = plan_cells(fixture(dir.path()));
  std::map<DatasetVariant, std::size_t> per;
  for (const auto& c : cells) {
    ++per[c.variant];
    if (c.spec.kind == ModelKind::bert_base) EXPECT_EQ(c.language, Language::en);
    if (c.variant == DatasetVariant::machine_translated) EXPECT_EQ(c.language, Language::en);
    EXPECT_EQ(c.spec.language, c.language);
  }
  EXPECT_EQ(per[DatasetVariant::raw], 7u + 6u + 6u);
  EXPECT_EQ(per[DatasetVariant::semi_noisy], 19u);
  EXPECT_EQ(per[DatasetVariant::machine_translated], 7u);
}

TEST(Ingest, ManifestCountsMatchFileRows) {
  TempDir dir;
  std::ostringstream log, warn;
  Pipeline p(fixture(dir.path()), {}, log, warn);
  const auto n = p.ingest();
  EXPECT_EQ(n.computed, 6u);
  for (const auto& [lang, d] : p.config().data)
    for (Split s : {Split::training, Split::testing}) {
      const fs::path src = s == Split::training ? d.train : d.test;
      const auto m = nlohmann::json::parse(read_file(p.manifest_path(p.corpus_path(lang, s, DatasetVariant::raw))));
      EXPECT_EQ(m["counts"]["total"].get<std::size_t>(), data_rows(src)) << src;
      const auto rc = recount(src);
      EXPECT_EQ(m["counts"]["NAG"].get<std::size_t>(), rc[0]);
      EXPECT_EQ(m["counts"]["OAG"].get<std::size_t>(), rc[1]);
      EXPECT_EQ(m["counts"]["CAG"].get<std::size_t>(), rc[2]);
    }
  EXPECT_NE(log.str().find("en training: NAG=14 OAG=5 CAG=5 total=24"), std::string::npos) << log.str();
  EXPECT_EQ(p.ingest().skipped, 6u);
}

TEST(Ingest, WarnsOnlyWhenReferenceCountsDiffer) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(3375, 453, 435), trac2_csv(836, 117, 110, "t")}}});
  j["check_reference_counts"] = true;
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  p.ingest();
  EXPECT_NE(log.str().find("en training: NAG=3375 OAG=453 CAG=435 total=4263"), std::string::npos);
  EXPECT_EQ(warn.str().find("en training"), std::string::npos) << warn.str();
  EXPECT_NE(warn.str().find("en testing distribution NAG=836 OAG=117 CAG=110"), std::string::npos) << warn.str();
}

TEST(Ingest, MalformedFileIsAnInputErrorWithContext) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {"ID,Text,Sub-task A\nx1,hello,BAD\n", trac2_csv(1, 1, 1, "t")}}});
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  try {
    p.ingest();
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("en_train.csv"), std::string::npos) << e.what();
  }
}

TEST(Augment, ToMajorityBalancesEveryLanguage) {
  TempDir dir;
  std::ostringstream log, warn;
  Pipeline p(fixture(dir.path()), {}, log, warn);
  p.ingest();
  EXPECT_EQ(p.augment().computed, 3u);
  for (Language l : kAllLanguages) {
    const auto raw = recount(p.config().data.at(l).train);
    const std::size_t top = *std::max_element(raw.begin(), raw.end());
    const auto out = load_saved_corpus(p.corpus_path(l, Split::training, DatasetVariant::semi_noisy), l, Split::training);
    const auto d = distribution(out);
    EXPECT_EQ(d.counts, (std::array<std::size_t, 3>{top, top, top})) << to_string(l);
    std::size_t raw_n = 0;
    for (const auto& c : out) raw_n += c.provenance == Provenance::raw;
    EXPECT_EQ(raw_n, raw[0] + raw[1] + raw[2]);
  }
  EXPECT_EQ(read_file(p.corpus_path(Language::en, Split::testing, DatasetVariant::raw)),
            read_file(dir / "corpora/en_testing_raw.csv"));
  EXPECT_EQ(p.augment().skipped, 3u);
}

TEST(Augment, ExplicitTargetsAreExact) {
  TempDir dir;
  auto j = nlohmann::json::parse(read_file(kFixture));
  j["balance"] = {{"strategy", "explicit_targets"}, {"targets", {{"en", {14, 9, 11}}}}};
  auto c = config_from_json(j, kFixture.parent_path());
  apply(c, {.language = Language::en, .out = dir.path()});
  std::ostringstream log, warn;
  Pipeline p(c, {}, log, warn);
  p.ingest();
  p.augment();
  const auto d = distribution(load_saved_corpus(dir / "corpora/en_training_semi_noisy.csv", Language::en, Split::training));
  EXPECT_EQ(d.counts, (std::array<std::size_t, 3>{14, 9, 11}));
  EXPECT_EQ(d.total, 34u);
}

TEST(Augment, BalancedInputPassesThrough) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(4, 4, 4), trac2_csv(1, 1, 1, "t")}}});
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  p.ingest();
  p.augment();
  EXPECT_EQ(read_file(dir / "out/corpora/en_training_semi_noisy.csv"), read_file(dir / "out/corpora/en_training_raw.csv"));
}

TEST(Augment, MissingUpstreamNamesTheArtifact) {
  TempDir dir;
  std::ostringstream log, warn;
  Pipeline p(fixture(dir.path()), {}, log, warn);
  try {
    p.augment();
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("en_training_raw.csv"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("run ingest"), std::string::npos) << e.what();
  }
}

TEST(Translate, StubOnThreeComments) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(1, 1, 1), trac2_csv(1, 1, 1, "t")}},
                                {"bn", {trac2_csv(1, 1, 1, "b"), trac2_csv(1, 1, 1, "bt")}}});
  j["variants"] = {"machine_translated"};
  j["translation"] = {{"target", "en"}, {"donors", {"bn"}}};
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  p.ingest();
  EXPECT_EQ(p.translate().computed, 1u);
  const auto out = load_saved_corpus(dir / "out/corpora/en_training_machine_translated.csv", Language::en, Split::training);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& c : out) {
    EXPECT_EQ(c.provenance, Provenance::translated);
    EXPECT_EQ(c.id, "bn>en:" + *c.source_id);
  }
  EXPECT_EQ(p.translate().skipped, 1u);
}

TEST(Translate, ResumesAfterPartialFailure) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(1, 1, 1), trac2_csv(1, 1, 1, "t")}},
                                {"bn", {trac2_csv(40, 30, 30, "b"), trac2_csv(1, 1, 1, "bt")}}});
  j["variants"] = {"machine_translated"};
  j["translation"] = {{"target", "en"}, {"donors", {"bn"}}, {"max_attempts", 1}, {"max_in_flight", 1}};
  const auto cfg = config_in(dir, j);
  auto failing = std::make_shared<StubProvider>();
  failing->fail_after(50);
  std::ostringstream log, warn;
  {
    Pipeline p(cfg, {.make_provider = [&](const TranslatorSettings&) { return failing; }}, log, warn);
    p.ingest();
    EXPECT_THROW(p.translate(), TranslationIncomplete);
    EXPECT_EQ(data_rows(dir / "out/corpora/en_training_machine_translated.partial.csv"), 50u);
    EXPECT_FALSE(fs::exists(dir / "out/corpora/en_training_machine_translated.csv"));
  }
  auto healthy = std::make_shared<StubProvider>();
  Pipeline p(cfg, {.make_provider = [&](const TranslatorSettings&) { return healthy; }}, log, warn);
  EXPECT_EQ(p.translate().computed, 1u);
  EXPECT_EQ(healthy->calls(), 50u);
  EXPECT_EQ(data_rows(dir / "out/corpora/en_training_machine_translated.csv"), 100u);
  EXPECT_FALSE(fs::exists(dir / "out/corpora/en_training_machine_translated.partial.csv"));
}

TEST(Translate, WarnsAgainstPublishedTranslatedCounts) {
  TempDir dir;
  auto c = fixture(dir.path());
  c.check_reference_counts = true;
  std::ostringstream log, warn;
  Pipeline p(c, {}, log, warn);
  p.ingest();
  p.translate();
  EXPECT_NE(log.str().find("en machine_translated training: NAG=22 OAG=11 CAG=11 total=44"), std::string::npos)
      << log.str();
  EXPECT_NE(warn.str().find("NAG=4373 OAG=3096 CAG=2588 total=10057"), std::string::npos) << warn.str();
}

TEST(Translate, OfflineLiveProviderServesOnlyCachedText) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(1, 1, 1), trac2_csv(1, 1, 1, "t")}},
                                {"bn", {trac2_csv(1, 1, 1, "b"), trac2_csv(1, 1, 1, "bt")}}});
  j["variants"] = {"machine_translated"};
  j["offline"] = true;
  j["translation"] = {{"target", "en"}, {"donors", {"bn"}}, {"provider", "http"}, {"endpoint", "http://127.0.0.1:9/t"},
                      {"max_attempts", 1}};
  auto cfg = config_in(dir, j);
  std::ostringstream log, warn;
  {
    Pipeline p(cfg, {}, log, warn);
    p.ingest();
    EXPECT_THROW(p.translate(), TranslationIncomplete);
  }
  fs::create_directories(dir / "out");
  TranslationCache cache(dir / "out/translation_cache.jsonl");
  const auto bn = load_saved_corpus(dir / "out/corpora/bn_training_raw.csv", Language::bn, Split::training);
  for (const auto& c : bn) cache.store({c.text, Language::bn, Language::en}, "cached " + c.id, "http");
  Pipeline p(cfg, {}, log, warn);
  p.translate();
  const auto out = load_saved_corpus(dir / "out/corpora/en_training_machine_translated.csv", Language::en, Split::training);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].text, "cached b0");
}

TEST(Cells, OneCellEndToEndEmitsEveryArtifact) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(8, 8, 8), trac2_csv(3, 3, 3, "t")}}});
  j["models"] = {small_lstm()};
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  const auto s = p.all();
  EXPECT_EQ(s.computed(), 5u);
  const auto table = read_file(dir / "out/report/metrics.tsv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  EXPECT_EQ(table.substr(table.find('\n') + 1).rfind("raw\tlstm\tEnglish\t", 0), 0u) << table;
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "out/report/curves"), fs::directory_iterator()), 2);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "out/report/confusion"), fs::directory_iterator()), 2);
  EXPECT_TRUE(fs::exists(dir / "out/cells/raw/en/lstm-s0/checkpoint/model.json"));
  const auto rerun = p.all();
  EXPECT_EQ(rerun.computed(), 0u);
  EXPECT_EQ(rerun.skipped(), 5u);
}

TEST(Cells, ChangedHyperparameterRetrainsOnlyThatModel) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(8, 8, 8), trac2_csv(3, 3, 3, "t")}}});
  auto other = small_lstm();
  other["kind"] = "bilstm";
  j["models"] = {small_lstm(), other};
  std::ostringstream log, warn;
  Pipeline(config_in(dir, j), {}, log, warn).all();
  j["models"][1]["hyperparameters"]["epochs"] = 3;
  Pipeline p(config_in(dir, j), {}, log, warn);
  const auto s = p.all();
  std::map<std::string, StageCount> by(s.stages.begin(), s.stages.end());
  EXPECT_EQ(by["train"].computed, 1u);
  EXPECT_EQ(by["train"].skipped, 1u);
  EXPECT_EQ(by["evaluate"].computed, 1u);
  EXPECT_EQ(by["report"].computed, 1u);
}

TEST(Cells, EvaluateBeforeTrainNamesTheCell) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(8, 8, 8), trac2_csv(3, 3, 3, "t")}}});
  j["models"] = {small_lstm()};
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  p.ingest();
  try {
    p.evaluate();
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("raw/en/lstm-s0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(p.report(), InputError);
}

TEST(Cells, TrainTestOverlapIsRejected) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(8, 8, 8), trac2_csv(3, 3, 3)}}});
  j["models"] = {small_lstm()};
  std::ostringstream log, warn;
  Pipeline p(config_in(dir, j), {}, log, warn);
  p.ingest();
  p.train();
  EXPECT_THROW(p.evaluate(), InputError);
}

TEST(Cells, OfflineTransformerWithoutLocalCheckpointFails) {
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(8, 8, 8), trac2_csv(2, 2, 2, "t")}}});
  j["models"] = {{{"kind", "bert_base"}, {"hyperparameters", {{"checkpoint", "org/absent-model"}, {"epochs", 1}}}}};
  j["offline"] = true;
  const auto cfg = config_in(dir, j);
  std::ostringstream log, warn;
  Pipeline p(cfg, {.fetch_checkpoint = [](const std::string&) -> fs::path { ADD_FAILURE(); return {}; }}, log, warn);
  p.ingest();
  try {
    p.train();
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("offline"), std::string::npos) << e.what();
  }
  auto online = cfg;
  online.offline = false;
  std::vector<std::string> asked;
  Pipeline q(online, {.fetch_checkpoint = [&](const std::string& id) {
                        asked.push_back(id);
                        return kData / "checkpoints/tiny-bert";
                      }},
             log, warn);
  EXPECT_EQ(q.train().computed, 1u);
  EXPECT_EQ(asked, std::vector<std::string>{"org/absent-model"});
}

TEST(Determinism, CleanRunsProduceIdenticalReports) {
  TempDir a, b, c;
  std::ostringstream log, warn;
  Pipeline(fixture(a.path(), {.workers = 1}), {}, log, warn).all();
  Pipeline(fixture(b.path(), {.workers = 4}), {}, log, warn).all();
  const auto ra = snapshot(a / "report"), rb = snapshot(b / "report");
  EXPECT_EQ(ra.size(), 1u + 1u + 4u * 45u);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(snapshot(a / "cells"), snapshot(b / "cells"));
  Pipeline again(fixture(a.path()), {}, log, warn);
  const auto s = again.all();
  EXPECT_EQ(s.computed(), 0u);
  EXPECT_EQ(snapshot(a / "report"), ra);
}

TEST(Determinism, WeightedRecallEqualsAccuracyInEveryRow) {
  TempDir dir;
  std::ostringstream log, warn;
  Pipeline(fixture(dir.path()), {}, log, warn).all();
  const auto rows = nlohmann::json::parse(read_file(dir / "report/metrics.json"));
  ASSERT_EQ(rows.size(), 45u);
  for (const auto& r : rows) EXPECT_EQ(r["recall"].get<double>(), r["accuracy"].get<double>()) << r["key"];
}

namespace {

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  LocalServer() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

}  // namespace

TEST(Http, ProviderSpeaksJsonAndClassifiesErrors) {
  LocalServer s;
  std::atomic<int> throttled{1};
  std::string auth;
  s.server.Post("/translate", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    const auto j = nlohmann::json::parse(req.body);
    if (j["q"] == "busy" && throttled-- > 0) {
      res.status = 429;
      res.set_header("Retry-After", "0");
      return;
    }
    if (j["q"] == "bad") {
      res.status = 400;
      res.set_content("no", "text/plain");
      return;
    }
    if (j["q"] == "boom") {
      res.status = 503;
      return;
    }
    const std::string t = "<" + j["source"].get<std::string>() + ">" + j["q"].get<std::string>();
    res.set_content(j["q"] == "google" ? nlohmann::json{{"data", {{"translations", {{{"translatedText", t}}}}}}}.dump()
                                       : nlohmann::json{{"translatedText", t}}.dump(),
                    "application/json");
  });
  s.start();
  auto provider = std::make_shared<http::HttpProvider>(s.url("/translate"), "secret");
  EXPECT_EQ(provider->translate("hello", Language::bn, Language::en), "<bn>hello");
  EXPECT_EQ(auth, "Bearer secret");
  EXPECT_EQ(provider->translate("google", Language::hi, Language::en), "<hi>google");
  try {
    provider->translate("bad", Language::bn, Language::en);
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_FALSE(e.transient());
  }
  try {
    provider->translate("boom", Language::bn, Language::en);
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_TRUE(e.transient());
  }
  std::vector<std::chrono::milliseconds> slept;
  TranslationService svc(provider, nullptr, {3, std::chrono::milliseconds(5), 2.0, std::chrono::milliseconds(50)}, 2,
                         [&](std::chrono::milliseconds d) { slept.push_back(d); });
  EXPECT_EQ(svc.translate({"busy", Language::bn, Language::en}), "<bn>busy");
  EXPECT_EQ(slept, std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(0)});
  EXPECT_EQ(svc.provider_calls(), 2u);
}

TEST(Http, UnreachableEndpointIsTransient) {
  http::HttpProvider p("http://127.0.0.1:1/translate", "", std::chrono::seconds(2));
  try {
    p.translate("x", Language::bn, Language::en);
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_TRUE(e.transient());
  }
}

TEST(Http, PipelineTranslatesThroughLiveAdapter) {
  LocalServer s;
  std::atomic<int> hits{0};
  s.server.Post("/t", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    res.set_content(nlohmann::json{{"translatedText", "en " + nlohmann::json::parse(req.body)["q"].get<std::string>()}}.dump(),
                    "application/json");
  });
  s.start();
  TempDir dir;
  auto j = minimal_config(dir, {{"en", {trac2_csv(1, 1, 1), trac2_csv(1, 1, 1, "t")}},
                                {"bn", {trac2_csv(2, 2, 2, "b"), trac2_csv(1, 1, 1, "bt")}}});
  j["variants"] = {"machine_translated"};
  j["translation"] = {{"target", "en"}, {"donors", {"bn"}}, {"provider", "http"}, {"endpoint", s.url("/t")}};
  const auto cfg = config_in(dir, j);
  Hooks hooks{.make_provider = [](const TranslatorSettings& t) -> std::shared_ptr<TranslationProvider> {
    return std::make_shared<http::HttpProvider>(t.endpoint, http::api_key_from_env(t.api_key_env));
  }};
  std::ostringstream log, warn;
  Pipeline p(cfg, hooks, log, warn);
  p.ingest();
  p.translate();
  EXPECT_EQ(hits.load(), 6);
  const auto out = load_saved_corpus(dir / "out/corpora/en_training_machine_translated.csv", Language::en, Split::training);
  EXPECT_EQ(out[0].text, "en word0 token0");
}

TEST(Http, FetchCheckpointFromHubFollowsRedirects) {
  LocalServer s;
  const fs::path src = kData / "checkpoints/tiny-bert";
  std::vector<std::string> requested;
  std::mutex mu;
  s.server.Get(R"(/org/tiny/resolve/main/(.+))", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mu);
      requested.push_back(req.matches[1]);
    }
    res.set_redirect("/cdn/" + std::string(req.matches[1]));
  });
  s.server.Get(R"(/cdn/(.+))", [&](const httplib::Request& req, httplib::Response& res) {
    const fs::path f = src / std::string(req.matches[1]);
    if (!fs::exists(f)) {
      res.status = 404;
      return;
    }
    res.set_content(read_file(f), "application/octet-stream");
  });
  s.start();
  TempDir cache;
  const auto dir = http::fetch_checkpoint("org/tiny", cache.path(), s.url(""));
  EXPECT_EQ(dir, cache / "org--tiny");
  EXPECT_EQ(read_file(dir / "model.safetensors"), read_file(src / "model.safetensors"));
  EXPECT_EQ(read_file(dir / "vocab.txt"), read_file(src / "vocab.txt"));
  EXPECT_FALSE(fs::exists(dir / "merges.txt"));
  ModelSpec spec = ModelSpec::make(ModelKind::bert_base, Language::en);
  spec.hp.checkpoint = dir.string();
  EXPECT_NO_THROW(build_classifier(spec, 1));
  const auto first = requested.size();
  http::fetch_checkpoint("org/tiny", cache.path(), s.url(""));
  EXPECT_EQ(requested.size(), first + 1);  // only the absent optional file is asked for again
  EXPECT_THROW(http::fetch_checkpoint("org/none", cache.path(), s.url("")), IoError);
}

namespace {

struct Cli {
  int code;
  std::string out;
};

Cli run_cli(const std::string& args) {
  TempDir tmp;
  const std::string cmd = std::string(AGGRO_CLI) + " " + args + " > " + (tmp / "o").string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, read_file(tmp / "o")};
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  const std::string cfg = " --config " + kFixture.string() + " --out " + dir.path().string();
  EXPECT_EQ(run_cli("ingest --config /definitely/missing.json").code, 2);
  const auto missing = run_cli("ingest --config /definitely/missing.json");
  EXPECT_NE(missing.out.find("/definitely/missing.json"), std::string::npos) << missing.out;
  EXPECT_EQ(run_cli("frobnicate" + cfg).code, 2);
  EXPECT_EQ(run_cli("train" + cfg + " --model bert_base --language bn").code, 2);
  EXPECT_EQ(run_cli("train" + cfg + " --variant sideways").code, 2);
  const auto evaluate_first = run_cli("evaluate" + cfg + " --model lstm --language en --variant raw");
  EXPECT_EQ(evaluate_first.code, 2);
  const auto ok = run_cli("all" + cfg + " --model lstm --language en --variant raw --offline");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("raw\tlstm\tEnglish\t"), std::string::npos) << ok.out;
  const auto again = run_cli("all" + cfg + " --model lstm --language en --variant raw --offline");
  EXPECT_NE(again.out.find("train: 0 computed, 1 up to date"), std::string::npos) << again.out;

  TempDir bad;
  auto j = minimal_config(bad, {{"en", {trac2_csv(1, 1, 1), trac2_csv(1, 1, 1, "t")}},
                                {"bn", {trac2_csv(1, 1, 1, "b"), trac2_csv(1, 1, 1, "bt")}}});
  j["variants"] = {"machine_translated"};
  j["translation"] = {{"target", "en"}, {"donors", {"bn"}}, {"provider", "http"}, {"endpoint", "http://127.0.0.1:1/t"},
                      {"max_attempts", 1}};
  write_file(bad / "config.json", j.dump());
  const auto failed = run_cli("all --offline --config " + (bad / "config.json").string());
  EXPECT_EQ(failed.code, 1) << failed.out;
}
