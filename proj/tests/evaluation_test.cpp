#include <gtest/gtest.h>

#include <chrono>

#include "aggro/evaluation.hpp"
#include "test_util.hpp"

using namespace aggro;
using aggro::testing::read_file;
using aggro::testing::TempDir;

namespace {

std::vector<Label> labels(std::initializer_list<int> v) {
  std::vector<Label> out;
  for (int x : v) out.push_back(label_from_index(static_cast<std::size_t>(x)));
  return out;
}

ConfusionMatrix matrix(std::array<std::array<std::size_t, 3>, 3> c) {
  ConfusionMatrix cm;
  cm.cells = c;
  return cm;
}

/// Metrics recomputed sample by sample: a weighted mean is the mean, over samples, of the
/// metric of each sample's gold class.
struct BruteForce {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;

  BruteForce(const std::vector<Label>& g, const std::vector<Label>& p) {
    const std::size_t n = g.size();
    auto per_class = [&](Label c) {
      double tp = 0, pred = 0, gold = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += g[i] == c && p[i] == c;
        pred += p[i] == c;
        gold += g[i] == c;
      }
      const double pr = pred ? tp / pred : 0, rc = gold ? tp / gold : 0;
      return std::array<double, 3>{pr, rc, pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0};
    };
    for (std::size_t i = 0; i < n; ++i) {
      const auto m = per_class(g[i]);
      accuracy += g[i] == p[i];
      precision += m[0];
      recall += m[1];
      f1 += m[2];
    }
    accuracy /= static_cast<double>(n);
    precision /= static_cast<double>(n);
    recall /= static_cast<double>(n);
    f1 /= static_cast<double>(n);
  }
};

MetricReport row(const std::string& model, const std::string& lang, DatasetVariant v, double a, double p, double r,
                 double f) {
  MetricReport m;
  m.model = model;
  m.language = lang;
  m.variant = v;
  m.accuracy = a;
  m.precision = p;
  m.recall = r;
  m.f1 = f;
  m.confusion = matrix({{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}});
  return m;
}

Corpus corpus_of(const std::vector<std::pair<std::string, int>>& rows, const std::string& prefix) {
  std::vector<LabeledComment> v;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    LabeledComment c;
    c.id = prefix + std::to_string(i);
    c.text = rows[i].first;
    c.label = label_from_index(static_cast<std::size_t>(rows[i].second));
    v.push_back(c);
  }
  return Corpus(std::move(v), Split::testing, Language::en);
}

/// Recurrent classifier whose head ignores the input and always prefers `winner`.
std::unique_ptr<Classifier> constant_model(const Corpus& fit, Label winner) {
  ModelSpec s = ModelSpec::make(ModelKind::lstm);
  s.hp.embedding_dim = 4;
  s.hp.hidden_size = 4;
  s.hp.vocab_size = 50;
  auto m = build_classifier(s, 1);
  m->prepare(fit, 1);
  auto& head = dynamic_cast<RecurrentClassifier&>(*m).head();
  head.weight.value.setZero();
  head.bias.value.setZero();
  head.bias.value(0, static_cast<Eigen::Index>(index_of(winner))) = 5.0;
  return m;
}

}  // namespace

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  const auto g = labels({0, 0, 1, 2, 2, 2});
  EXPECT_EQ(confusion(g, g), matrix({{{2, 0, 0}, {0, 1, 0}, {0, 0, 3}}}));
}

TEST(Confusion, AllNagPredictorFillsFirstColumn) {
  std::vector<Label> g(8, Label::NAG);
  g.push_back(Label::OAG);
  g.push_back(Label::CAG);
  EXPECT_EQ(confusion(g, std::vector<Label>(10, Label::NAG)), matrix({{{8, 0, 0}, {1, 0, 0}, {1, 0, 0}}}));
}

TEST(Confusion, MatchesIndependentTally) {
  Rng rng(1);
  std::vector<Label> g, p;
  for (int i = 0; i < 50; ++i) {
    g.push_back(label_from_index(rng.index(3)));
    p.push_back(label_from_index(rng.index(3)));
  }
  const auto cm = confusion(g, p);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < g.size(); ++i) n += index_of(g[i]) == a && index_of(p[i]) == b;
      EXPECT_EQ(cm.cells[a][b], n);
    }
  EXPECT_EQ(cm.total(), 50u);
  for (Label l : kAllLabels) EXPECT_EQ(cm.tp(l) + cm.fp(l) + cm.fn(l) + cm.tn(l), 50u);
}

TEST(Confusion, RejectsMismatchAndEmpty) {
  EXPECT_THROW(confusion(labels({0, 1}), labels({0})), InputError);
  EXPECT_THROW(confusion({}, {}), InputError);
}

TEST(PerClass, PerfectPredictorScoresOne) {
  const auto cm = matrix({{{3, 0, 0}, {0, 2, 0}, {0, 0, 5}}});
  for (Label l : kAllLabels) {
    EXPECT_EQ(precision(cm, l).value, 1.0);
    EXPECT_EQ(recall(cm, l).value, 1.0);
    EXPECT_EQ(f1(cm, l).value, 1.0);
  }
}

TEST(PerClass, ZeroPredictionsAreFlagged) {
  const auto cm = matrix({{{8, 0, 0}, {1, 0, 0}, {1, 0, 0}}});
  const Ratio p = precision(cm, Label::OAG);
  EXPECT_EQ(p.value, 0.0);
  EXPECT_TRUE(p.degenerate);
  const Ratio r = recall(cm, Label::OAG);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_FALSE(r.degenerate);
  EXPECT_TRUE(f1(cm, Label::OAG).degenerate);
  EXPECT_FALSE(precision(cm, Label::NAG).degenerate);
}

TEST(PerClass, HandComputedFixture) {
  const auto cm = matrix({{{5, 1, 0}, {2, 3, 0}, {0, 0, 4}}});
  const double P = 5.0 / 7.0, R = 5.0 / 6.0;
  EXPECT_NEAR(precision(cm, Label::NAG), P, 1e-15);
  EXPECT_NEAR(recall(cm, Label::NAG), R, 1e-15);
  EXPECT_NEAR(f1(cm, Label::NAG), 2 * P * R / (P + R), 1e-15);
  EXPECT_NEAR(precision(cm, Label::OAG), 3.0 / 4.0, 1e-15);
  EXPECT_NEAR(recall(cm, Label::OAG), 3.0 / 5.0, 1e-15);
  EXPECT_EQ(precision(cm, Label::CAG).value, 1.0);
}

TEST(Aggregate, PerfectPredictorIsAllOnes) {
  const auto r = aggregate_metrics(matrix({{{3, 0, 0}, {0, 2, 0}, {0, 0, 5}}}));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(Aggregate, HandComputedWeightedAndMacro) {
  const auto cm = matrix({{{5, 1, 0}, {2, 3, 0}, {0, 0, 4}}});
  const double p[3] = {5.0 / 7, 3.0 / 4, 1.0}, r[3] = {5.0 / 6, 3.0 / 5, 1.0}, s[3] = {6, 5, 4};
  double wp = 0, wf = 0, mp = 0, mr = 0;
  for (int k = 0; k < 3; ++k) {
    wp += s[k] * p[k] / 15;
    wf += s[k] * (2 * p[k] * r[k] / (p[k] + r[k])) / 15;
    mp += p[k] / 3;
    mr += r[k] / 3;
  }
  const auto w = aggregate_metrics(cm);
  EXPECT_NEAR(w.accuracy, 12.0 / 15, 1e-15);
  EXPECT_NEAR(w.precision, wp, 1e-15);
  EXPECT_NEAR(w.f1, wf, 1e-15);
  EXPECT_EQ(w.recall, w.accuracy);
  const auto m = aggregate_metrics(cm, Averaging::macro);
  EXPECT_NEAR(m.precision, mp, 1e-15);
  EXPECT_NEAR(m.recall, mr, 1e-15);
  EXPECT_NE(m.recall, m.accuracy);
}

TEST(Aggregate, MatchesPerSampleBruteForceOnRandomLists) {
  Rng rng(2024);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(500);
    std::vector<Label> g, p;
    const double skew = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      g.push_back(label_from_index(rng.uniform() < skew ? 0 : rng.index(3)));
      p.push_back(rng.uniform() < 0.6 ? g.back() : label_from_index(rng.index(3)));
    }
    const auto r = aggregate_metrics(confusion(g, p));
    const BruteForce b(g, p);
    EXPECT_NEAR(r.accuracy, b.accuracy, 1e-12);
    EXPECT_NEAR(r.precision, b.precision, 1e-12);
    EXPECT_NEAR(r.recall, b.recall, 1e-12);
    EXPECT_NEAR(r.f1, b.f1, 1e-12);
    EXPECT_EQ(r.recall, r.accuracy);
    for (double v : {r.accuracy, r.precision, r.recall, r.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (const auto& c : r.per_class) {
      if (c.precision.value > 0 && c.recall.value > 0) {
        EXPECT_LE(c.f1.value, std::max(c.precision.value, c.recall.value) + 1e-15);
        EXPECT_GE(c.f1.value, std::min(c.precision.value, c.recall.value) - 1e-15);
      }
    }
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
}

TEST(Evaluate, MajorityPredictorOnBalancedSetScoresAThird) {
  const Corpus train = corpus_of({{"good day", 0}, {"bad day", 1}, {"odd day", 2}}, "tr");
  const Corpus test = corpus_of({{"good", 0}, {"good", 0}, {"bad", 1}, {"bad", 1}, {"odd", 2}, {"odd", 2}}, "te");
  auto m = constant_model(train, Label::NAG);
  const auto r = evaluate(*m, test, train, DatasetVariant::raw);
  EXPECT_NEAR(r.accuracy, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.confusion, matrix({{{2, 0, 0}, {2, 0, 0}, {2, 0, 0}}}));
  EXPECT_EQ(r.model, "lstm");
  EXPECT_EQ(r.language, "en");
  EXPECT_EQ(to_json(evaluate(*m, test, train, DatasetVariant::raw)).dump(), to_json(r).dump());
}

TEST(Evaluate, KnownPredictionsGiveHandMetrics) {
  const Corpus train = corpus_of({{"x y", 0}}, "tr");
  const Corpus test = corpus_of({{"a", 1}, {"b", 1}, {"c", 1}, {"d", 0}}, "te");
  auto m = constant_model(train, Label::OAG);
  const auto r = evaluate(*m, test, train, DatasetVariant::semi_noisy);
  EXPECT_EQ(r.accuracy, 0.75);
  EXPECT_NEAR(r.precision, 0.75 * 0.75, 1e-15);
  EXPECT_NEAR(r.f1, 0.75 * (2 * 0.75 / 1.75), 1e-15);
  EXPECT_TRUE(r.per_class[0].precision.degenerate);
  EXPECT_EQ(r.variant, DatasetVariant::semi_noisy);
}

TEST(Evaluate, OverlapIsRejectedWithIds) {
  const Corpus train = corpus_of({{"a", 0}, {"b", 1}}, "x");
  const Corpus test = corpus_of({{"c", 0}, {"d", 1}, {"e", 2}}, "x");
  auto m = constant_model(train, Label::NAG);
  try {
    evaluate(*m, test, train, DatasetVariant::raw);
    FAIL() << "expected overlap error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("x0, x1"), std::string::npos) << e.what();
  }
  std::vector<LabeledComment> derived{train[0]};
  derived[0].id = "aug";
  derived[0].provenance = Provenance::noise_aug;
  derived[0].source_id = "x2";
  EXPECT_THROW(check_disjoint(Corpus(derived, Split::training, Language::en), test), InputError);
}

TEST(Evaluate, OverlapIsScopedByLanguage) {
  const Corpus test = corpus_of({{"c", 0}, {"d", 1}}, "x");
  LabeledComment t{"bn>en:x0", "translated text", Label::NAG, Language::en, Provenance::translated, "x0"};
  EXPECT_NO_THROW(check_disjoint(Corpus({t}, Split::training, Language::en), test));
  LabeledComment n{"aug", "noisy text", Label::NAG, Language::en, Provenance::noise_aug, "x0"};
  EXPECT_THROW(check_disjoint(Corpus({n}, Split::training, Language::en), test), InputError);
  LabeledComment b{"x1", "same id, other language", Label::OAG, Language::bn, Provenance::raw, std::nullopt};
  EXPECT_NO_THROW(check_disjoint(Corpus({b}, Split::training, Language::bn), test));
  std::vector<LabeledComment> hi_test{{"y", "hindi test", Label::CAG, Language::hi, Provenance::raw, std::nullopt}};
  LabeledComment u{"hi>en:y", "from hindi", Label::CAG, Language::en, Provenance::translated, "y"};
  EXPECT_THROW(check_disjoint(Corpus({u}, Split::training, Language::en), Corpus(hi_test, Split::testing, Language::hi)),
               InputError);
}

TEST(Report, OneRunWritesOneOfEach) {
  TempDir dir;
  TrainingRun run;
  run.spec = ModelSpec::make(ModelKind::lstm);
  run.train_accuracy = {0.5, 0.7, 0.9};
  run.val_accuracy = {0.4, 0.5, 0.55};
  run.train_loss = {1.0, 0.7, 0.3};
  run.val_loss = {1.1, 0.9, 0.95};
  auto m = aggregate_metrics(matrix({{{5, 1, 0}, {2, 3, 0}, {0, 0, 4}}}));
  m.model = "lstm";
  m.language = "en";
  const auto files = render_report({{m, run}}, dir.path());
  const auto table = read_file(files.table);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  EXPECT_NE(table.find("raw\tlstm\tEnglish\t0.80\t"), std::string::npos) << table;
  ASSERT_EQ(files.curves.size(), 1u);
  ASSERT_EQ(files.matrices.size(), 1u);
  EXPECT_EQ(read_file(files.matrices[0]), "gold\\pred,NAG,OAG,CAG\nNAG,5,1,0\nOAG,2,3,0\nCAG,0,0,4\n");
  const auto curve = read_file(files.curves[0]);
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "epoch,train_accuracy,val_accuracy,train_loss,val_loss");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 4);
  EXPECT_NE(read_file(files.curve_plots[0]).find("<polyline"), std::string::npos);
  EXPECT_NE(read_file(files.matrix_plots[0]).find("<svg"), std::string::npos);
  const auto j = nlohmann::json::parse(read_file(files.json));
  EXPECT_EQ(j[0]["accuracy"].get<double>(), m.accuracy);
  EXPECT_EQ(to_json(metric_report_from_json(j[0])).dump(), to_json(m).dump());
}

TEST(Report, TableCellsPassThroughVerbatim) {
  TempDir dir;
  const std::vector<std::tuple<std::string, std::string, double, double, double, double>> t4 = {
      {"lstm_autoencoder", "en", 0.78, 0.68, 0.78, 0.70}, {"lstm", "bn", 0.55, 0.30, 0.55, 0.39},
      {"bilstm", "hi", 0.56, 0.45, 0.56, 0.50},           {"gpt2_medium", "en", 0.80, 0.76, 0.80, 0.77}};
  std::vector<ReportEntry> entries;
  for (const auto& [mo, la, a, p, r, f] : t4) entries.push_back({row(mo, la, DatasetVariant::raw, a, p, r, f), {}});
  const auto table = read_file(render_report(entries, dir.path()).table);
  EXPECT_EQ(table,
            "variant\tmodel\tlanguage\taccuracy\tprecision\trecall\tf1\n"
            "raw\tlstm_autoencoder\tEnglish\t0.78\t0.68\t0.78\t0.70\n"
            "raw\tlstm\tBangla\t0.55\t0.30\t0.55\t0.39\n"
            "raw\tbilstm\tHindi\t0.56\t0.45\t0.56\t0.50\n"
            "raw\tgpt2_medium\tEnglish\t0.80\t0.76\t0.80\t0.77\n");
}

TEST(Report, FullMatrixGroupsEighteenRowsByVariant) {
  TempDir dir;
  const std::vector<std::string> models = {"lstm_autoencoder", "lstm", "bilstm", "word2vec_classifier", "bert", "gpt2_medium"};
  std::vector<ReportEntry> entries;
  const DatasetVariant mixed[3] = {DatasetVariant::machine_translated, DatasetVariant::raw, DatasetVariant::semi_noisy};
  for (const auto& mo : models)
    for (const char* la : {"en", "bn", "hi"})
      entries.push_back({row(mo, la, mixed[entries.size() % 3], 0.5, 0.5, 0.5, 0.5), {}});
  const auto files = render_report(entries, dir.path());
  std::istringstream in(read_file(files.table));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> variants;
  while (std::getline(in, line)) variants.push_back(line.substr(0, line.find('\t')));
  ASSERT_EQ(variants.size(), 18u);
  EXPECT_TRUE(std::is_sorted(variants.begin(), variants.end(), [](const auto& a, const auto& b) {
    return *parse_variant(a) < *parse_variant(b);
  }));
  EXPECT_EQ(std::count(variants.begin(), variants.end(), "raw"), 6);
  EXPECT_EQ(files.matrices.size(), 18u);
}

TEST(Report, RenderingIsByteStable) {
  TempDir a, b;
  std::vector<ReportEntry> entries{{row("lstm", "en", DatasetVariant::raw, 0.1234567, 0.2, 0.1234567, 0.3), {}}};
  const auto fa = render_report(entries, a.path()), fb = render_report(entries, b.path());
  EXPECT_EQ(read_file(fa.table), read_file(fb.table));
  EXPECT_EQ(read_file(fa.json), read_file(fb.json));
  EXPECT_EQ(fa.matrices[0].filename(), fb.matrices[0].filename());
  EXPECT_EQ(read_file(fa.matrix_plots[0]), read_file(fb.matrix_plots[0]));
  EXPECT_THROW(render_report({}, a.path()), InputError);
}
