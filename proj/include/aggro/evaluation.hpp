#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aggro/corpus.hpp"
#include "aggro/hash.hpp"
#include "aggro/labels.hpp"
#include "aggro/models/training.hpp"
#include "json.hpp"

namespace aggro {

enum class DatasetVariant : std::uint8_t { raw, semi_noisy, machine_translated };

inline constexpr std::array<DatasetVariant, 3> kAllVariants{DatasetVariant::raw, DatasetVariant::semi_noisy,
                                                           DatasetVariant::machine_translated};

constexpr std::string_view to_string(DatasetVariant v) {
  switch (v) {
    case DatasetVariant::raw: return "raw";
    case DatasetVariant::semi_noisy: return "semi_noisy";
    case DatasetVariant::machine_translated: return "machine_translated";
  }
  return "?";
}

inline std::optional<DatasetVariant> parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (s == to_string(v)) return v;
  return std::nullopt;
}

/// Rows are gold labels, columns predictions, both in NAG, OAG, CAG order.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> cells{};

  std::size_t operator()(Label gold, Label pred) const { return cells[index_of(gold)][index_of(pred)]; }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : cells)
      for (auto v : r) n += v;
    return n;
  }
  std::size_t support(Label l) const {
    std::size_t n = 0;
    for (auto v : cells[index_of(l)]) n += v;
    return n;
  }
  std::size_t predicted(Label l) const {
    std::size_t n = 0;
    for (const auto& r : cells) n += r[index_of(l)];
    return n;
  }
  std::size_t tp(Label l) const { return (*this)(l, l); }
  std::size_t fp(Label l) const { return predicted(l) - tp(l); }
  std::size_t fn(Label l) const { return support(l) - tp(l); }
  std::size_t tn(Label l) const { return total() - tp(l) - fp(l) - fn(l); }
  std::size_t trace() const { return cells[0][0] + cells[1][1] + cells[2][2]; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(const std::vector<Label>& golds, const std::vector<Label>& preds) {
  if (golds.size() != preds.size())
    throw InputError("confusion: " + std::to_string(golds.size()) + " gold labels but " + std::to_string(preds.size()) +
                     " predictions");
  if (golds.empty()) throw InputError("confusion: no samples");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < golds.size(); ++i) ++cm.cells[index_of(golds[i])][index_of(preds[i])];
  return cm;
}

/// A metric value; `degenerate` marks a zero denominator, in which case value is 0.
struct Ratio {
  double value = 0;
  bool degenerate = false;

  operator double() const { return value; }
};

inline Ratio safe_ratio(double num, double den) { return den > 0 ? Ratio{num / den, false} : Ratio{0.0, true}; }

inline Ratio precision(const ConfusionMatrix& cm, Label l) {
  return safe_ratio(static_cast<double>(cm.tp(l)), static_cast<double>(cm.tp(l) + cm.fp(l)));
}

inline Ratio recall(const ConfusionMatrix& cm, Label l) {
  return safe_ratio(static_cast<double>(cm.tp(l)), static_cast<double>(cm.tp(l) + cm.fn(l)));
}

inline Ratio f1(const ConfusionMatrix& cm, Label l) {
  const Ratio p = precision(cm, l), r = recall(cm, l);
  return safe_ratio(2 * p.value * r.value, p.value + r.value);
}

enum class Averaging : std::uint8_t { weighted, macro };

struct ClassMetrics {
  Ratio precision, recall, f1;
  std::size_t support = 0;
};

struct MetricReport {
  std::array<ClassMetrics, kNumLabels> per_class{};
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  Averaging averaging = Averaging::weighted;
  ConfusionMatrix confusion;
  std::string model;
  std::string language;
  DatasetVariant variant = DatasetVariant::raw;

  std::size_t total() const { return confusion.total(); }
};

inline MetricReport aggregate_metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::weighted) {
  const std::size_t n = cm.total();
  if (n == 0) throw InputError("aggregate_metrics: empty confusion matrix");
  MetricReport r;
  r.confusion = cm;
  r.averaging = averaging;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(n);
  for (Label l : kAllLabels) {
    auto& c = r.per_class[index_of(l)];
    c = {precision(cm, l), recall(cm, l), f1(cm, l), cm.support(l)};
    const double w = averaging == Averaging::weighted ? static_cast<double>(c.support) : 1.0;
    r.precision += w * c.precision.value;
    r.f1 += w * c.f1.value;
    r.recall += averaging == Averaging::weighted ? static_cast<double>(cm.tp(l)) : c.recall.value;
  }
  const double denom = averaging == Averaging::weighted ? static_cast<double>(n) : static_cast<double>(kNumLabels);
  r.precision /= denom;
  r.recall /= denom;
  r.f1 /= denom;
  return r;
}

/// Throws when any test comment also appears in training, directly or as the source of a derived
/// comment. Ids are scoped by language; a translation's source lives in some other language.
inline void check_disjoint(const Corpus& train, const Corpus& test) {
  std::set<std::pair<Language, std::string>> test_ids;
  for (const auto& c : test) test_ids.emplace(c.language, c.id);
  std::set<std::string> overlap;
  for (const auto& c : train) {
    if (test_ids.count({c.language, c.id})) overlap.insert(c.id);
    if (!c.source_id) continue;
    for (Language l : kAllLanguages) {
      const bool candidate = c.provenance == Provenance::translated ? l != c.language : l == c.language;
      if (candidate && test_ids.count({l, *c.source_id})) overlap.insert(*c.source_id);
    }
  }
  if (overlap.empty()) return;
  std::string list;
  std::size_t shown = 0;
  for (const auto& id : overlap) {
    if (shown++ == 20) {
      list += ", ...";
      break;
    }
    list += (list.empty() ? "" : ", ") + id;
  }
  throw InputError("train/test overlap on " + std::to_string(overlap.size()) + " ids: " + list);
}

inline MetricReport evaluate(Classifier& model, const Corpus& test, const Corpus& train, DatasetVariant variant,
                             Averaging averaging = Averaging::weighted) {
  if (test.empty()) throw InputError("evaluate: test corpus is empty");
  check_disjoint(train, test);
  const Prediction p = predict(model, model.encode(test.texts()), model.spec().hp.batch_size);
  MetricReport r = aggregate_metrics(confusion(test.labels(), p.labels), averaging);
  r.model = to_string(model.spec().kind);
  r.language = test.language() ? std::string(to_string(*test.language())) : to_string(model.spec().language);
  r.variant = variant;
  return r;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : cm.cells) j.push_back(r);
  return j;
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (Label l : kAllLabels) {
    const auto& c = r.per_class[index_of(l)];
    per[std::string(to_string(l))] = {{"precision", c.precision.value},
                                      {"recall", c.recall.value},
                                      {"f1", c.f1.value},
                                      {"support", c.support},
                                      {"precision_degenerate", c.precision.degenerate},
                                      {"recall_degenerate", c.recall.degenerate},
                                      {"f1_degenerate", c.f1.degenerate}};
  }
  return {{"model", r.model},
          {"language", r.language},
          {"variant", std::string(to_string(r.variant))},
          {"averaging", r.averaging == Averaging::weighted ? "weighted" : "macro"},
          {"accuracy", r.accuracy},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"per_class", per},
          {"confusion", to_json(r.confusion)}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.model = j.at("model");
  r.language = j.at("language");
  const auto v = parse_variant(j.at("variant").get<std::string>());
  if (!v) throw InputError("unknown dataset variant in metrics JSON");
  r.variant = *v;
  r.averaging = j.value("averaging", std::string("weighted")) == "macro" ? Averaging::macro : Averaging::weighted;
  r.accuracy = j.at("accuracy");
  r.precision = j.at("precision");
  r.recall = j.at("recall");
  r.f1 = j.at("f1");
  for (std::size_t g = 0; g < kNumLabels; ++g)
    for (std::size_t p = 0; p < kNumLabels; ++p) r.confusion.cells[g][p] = j.at("confusion").at(g).at(p);
  for (Label l : kAllLabels) {
    const auto& c = j.at("per_class").at(std::string(to_string(l)));
    r.per_class[index_of(l)] = {{c.at("precision"), c.at("precision_degenerate")},
                                {c.at("recall"), c.at("recall_degenerate")},
                                {c.at("f1"), c.at("f1_degenerate")},
                                c.at("support")};
  }
  return r;
}

/// One row of the combined report: metrics plus, when available, the run that produced them.
struct ReportEntry {
  MetricReport metrics;
  std::optional<TrainingRun> run;
};

struct ReportFiles {
  std::filesystem::path table, json;
  std::vector<std::filesystem::path> curves, curve_plots, matrices, matrix_plots;
};

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) throw IoError("cannot write " + p.string());
}

inline std::string language_name(const std::string& code) {
  if (code == "en") return "English";
  if (code == "bn") return "Bangla";
  if (code == "hi") return "Hindi";
  return code;
}

inline std::string entry_key(const ReportEntry& e) {
  Fnv1a h;
  h.field(to_json(e.metrics).dump());
  if (e.run) h.field(to_json(*e.run).dump());
  return e.metrics.model + "_" + e.metrics.language + "_" + std::string(to_string(e.metrics.variant)) + "_" +
         to_hex(h.digest()).substr(0, 12);
}

inline std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline std::string curve_svg(const TrainingRun& run, const std::string& title) {
  const double W = 480, H = 320, L = 50, R = 20, T = 30, B = 40;
  const std::size_t n = run.epochs();
  auto x = [&](std::size_t e) { return L + (n > 1 ? (W - L - R) * static_cast<double>(e) / static_cast<double>(n - 1) : 0.0); };
  auto y = [&](double v) { return T + (H - T - B) * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << svg_escape(title) << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    s << "<text x=\"" << L - 6 << "\" y=\"" << fixed(y(v) + 4, 1) << "\" text-anchor=\"end\" font-size=\"10\">"
      << fixed(v, 2) << "</text>\n";
  }
  s << "<text x=\"" << (W + L - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
  auto line = [&](const std::vector<double>& v, const char* colour, const char* label, double ly) {
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t e = 0; e < v.size(); ++e) s << (e ? " " : "") << fixed(x(e), 2) << "," << fixed(y(v[e]), 2);
    s << "\"/>\n";
    s << "<text x=\"" << W - R - 90 << "\" y=\"" << ly << "\" font-size=\"11\" fill=\"" << colour << "\">" << label
      << "</text>\n";
  };
  line(run.train_accuracy, "#1f77b4", "train accuracy", T + 14);
  line(run.val_accuracy, "#ff7f0e", "val accuracy", T + 28);
  s << "</svg>\n";
  return s.str();
}

inline std::string heatmap_svg(const ConfusionMatrix& cm, const std::string& title) {
  const double cell = 80, L = 70, T = 50;
  std::size_t peak = 1;
  for (const auto& r : cm.cells)
    for (auto v : r) peak = std::max(peak, v);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << L + 3 * cell + 20 << "\" height=\"" << T + 3 * cell + 40
    << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << L + 1.5 * cell << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << svg_escape(title)
    << "</text>\n";
  for (std::size_t g = 0; g < kNumLabels; ++g) {
    const std::string name(to_string(label_from_index(g)));
    s << "<text x=\"" << L - 8 << "\" y=\"" << T + cell * (static_cast<double>(g) + 0.5) + 4
      << "\" text-anchor=\"end\" font-size=\"12\">" << name << "</text>\n";
    s << "<text x=\"" << L + cell * (static_cast<double>(g) + 0.5) << "\" y=\"" << T - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">" << name << "</text>\n";
    for (std::size_t p = 0; p < kNumLabels; ++p) {
      const double a = static_cast<double>(cm.cells[g][p]) / static_cast<double>(peak);
      const int shade = static_cast<int>(std::lround(255 * (1 - a)));
      s << "<rect x=\"" << L + cell * static_cast<double>(p) << "\" y=\"" << T + cell * static_cast<double>(g)
        << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade
        << ",255)\" stroke=\"gray\"/>\n";
      s << "<text x=\"" << L + cell * (static_cast<double>(p) + 0.5) << "\" y=\"" << T + cell * (static_cast<double>(g) + 0.5) + 5
        << "\" text-anchor=\"middle\" font-size=\"14\" fill=\"" << (a > 0.6 ? "white" : "black") << "\">"
        << cm.cells[g][p] << "</text>\n";
    }
  }
  s << "<text x=\"" << L + 1.5 * cell << "\" y=\"" << T + 3 * cell + 28
    << "\" text-anchor=\"middle\" font-size=\"11\">predicted (rows: gold)</text>\n</svg>\n";
  return s.str();
}

}  // namespace detail

/// Writes metrics.tsv (two decimals, grouped by variant), metrics.json (full precision), and per entry
/// an accuracy-curve CSV + SVG (when a run is attached) and a confusion-matrix CSV + SVG heatmap.
inline ReportFiles render_report(const std::vector<ReportEntry>& entries, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (entries.empty()) throw InputError("render_report needs at least one run");
  std::error_code ec;
  fs::create_directories(dir / "curves", ec);
  fs::create_directories(dir / "confusion", ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  for (const auto& e : entries) {
    const auto& m = e.metrics;
    if (m.averaging == Averaging::weighted && m.recall != m.accuracy)
      throw ComputeError("weighted recall differs from accuracy for " + m.model);
  }
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return entries[a].metrics.variant < entries[b].metrics.variant;
  });

  ReportFiles files;
  std::string table = "variant\tmodel\tlanguage\taccuracy\tprecision\trecall\tf1\n";
  nlohmann::json all = nlohmann::json::array();
  for (auto i : order) {
    const auto& e = entries[i];
    const auto& m = e.metrics;
    table += std::string(to_string(m.variant)) + "\t" + m.model + "\t" + detail::language_name(m.language) + "\t" +
             detail::fixed(m.accuracy, 2) + "\t" + detail::fixed(m.precision, 2) + "\t" + detail::fixed(m.recall, 2) +
             "\t" + detail::fixed(m.f1, 2) + "\n";
    const std::string key = detail::entry_key(e);
    nlohmann::json j = to_json(m);
    j["key"] = key;
    if (e.run) j["run"] = to_json(*e.run);
    all.push_back(std::move(j));
    const std::string title = m.model + " / " + detail::language_name(m.language) + " / " + std::string(to_string(m.variant));
    if (e.run) {
      std::string csv = "epoch,train_accuracy,val_accuracy,train_loss,val_loss\n";
      for (std::size_t k = 0; k < e.run->epochs(); ++k) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", k + 1, e.run->train_accuracy[k],
                      e.run->val_accuracy[k], e.run->train_loss[k], e.run->val_loss[k]);
        csv += buf;
      }
      files.curves.push_back(dir / "curves" / (key + ".csv"));
      detail::write_text(files.curves.back(), csv);
      files.curve_plots.push_back(dir / "curves" / (key + ".svg"));
      detail::write_text(files.curve_plots.back(), detail::curve_svg(*e.run, title));
    }
    std::string cm = "gold\\pred,NAG,OAG,CAG\n";
    for (Label g : kAllLabels) {
      cm += std::string(to_string(g));
      for (Label p : kAllLabels) cm += "," + std::to_string(m.confusion(g, p));
      cm += "\n";
    }
    files.matrices.push_back(dir / "confusion" / (key + ".csv"));
    detail::write_text(files.matrices.back(), cm);
    files.matrix_plots.push_back(dir / "confusion" / (key + ".svg"));
    detail::write_text(files.matrix_plots.back(), detail::heatmap_svg(m.confusion, title));
  }
  files.table = dir / "metrics.tsv";
  detail::write_text(files.table, table);
  files.json = dir / "metrics.json";
  detail::write_text(files.json, all.dump(2) + "\n");
  return files;
}

}  // namespace aggro
