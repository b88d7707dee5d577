#pragma once

// Threshold decoding of span score tensors and micro / boundary / per-class
// precision-recall-F1.

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eiou/corpus.hpp"
#include "eiou/span_tensor.hpp"

namespace eiou {

struct Triple {
  int start = 0;
  int end = 0;
  int label = 0;

  auto operator<=>(const Triple&) const = default;
};

using PredictionSet = std::set<Triple>;
using BoundarySet = std::set<std::pair<int, int>>;

// Every valid cell with score > tau (and length <= max_len when given).
inline PredictionSet decode(const ScoreTensor& s, double tau = 0.0, std::optional<int> max_len = std::nullopt) {
  PredictionSet out;
  for (int c = 0; c < s.classes(); ++c) {
    for (int i = 0; i < s.length(); ++i) {
      for (int j = i; j < s.length(); ++j) {
        if (max_len && j - i + 1 > *max_len) break;
        if (s.at(c, i, j) > tau) out.insert({i, j, c});
      }
    }
  }
  return out;
}

inline PredictionSet gold_set(const Sentence& sentence, const LabelSet& labels) {
  PredictionSet out;
  for (const auto& e : sentence.entities) out.insert({e.start, e.end, labels.index(e.label)});
  return out;
}

inline BoundarySet boundary_project(const PredictionSet& spans) {
  BoundarySet out;
  for (const auto& t : spans) out.emplace(t.start, t.end);
  return out;
}

struct Prf {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // Ratios with a zero denominator are defined as 0.
  static Prf from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    Prf r{tp, fp, fn, 0.0, 0.0, 0.0};
    if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (r.precision + r.recall > 0.0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
  }

  bool operator==(const Prf&) const = default;
};

struct ClassReport {
  int class_id = 0;
  std::string label;
  std::size_t gold_count = 0;
  double ratio = 0.0;
  Prf prf;

  bool operator==(const ClassReport&) const = default;
};

struct EvalReport {
  Prf overall;                         // exact (start, end, class) match
  Prf boundary;                        // deduplicated (start, end) match
  std::vector<ClassReport> per_class;  // label-set order

  bool operator==(const EvalReport&) const = default;
};

template <class Set>
std::size_t intersection_size(const Set& a, const Set& b) {
  std::size_t n = 0;
  for (const auto& x : a) n += b.count(x);
  return n;
}

// Corpus-level micro metrics: counts are summed over sentences before dividing.
inline EvalReport evaluate(std::span<const PredictionSet> preds, std::span<const PredictionSet> golds,
                           const LabelSet& labels) {
  if (preds.size() != golds.size()) throw Error("evaluate: prediction/gold sentence counts differ");
  const auto n_classes = static_cast<std::size_t>(labels.size());
  std::vector<std::size_t> tp(n_classes, 0);
  std::vector<std::size_t> n_pred(n_classes, 0);
  std::vector<std::size_t> n_gold(n_classes, 0);
  std::size_t b_tp = 0;
  std::size_t b_pred = 0;
  std::size_t b_gold = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    for (const auto& t : preds[s]) {
      if (t.label < 0 || static_cast<std::size_t>(t.label) >= n_classes) throw Error("evaluate: class id out of range");
      ++n_pred[static_cast<std::size_t>(t.label)];
      tp[static_cast<std::size_t>(t.label)] += golds[s].count(t);
    }
    for (const auto& t : golds[s]) {
      if (t.label < 0 || static_cast<std::size_t>(t.label) >= n_classes) throw Error("evaluate: class id out of range");
      ++n_gold[static_cast<std::size_t>(t.label)];
    }
    const auto bp = boundary_project(preds[s]);
    const auto bg = boundary_project(golds[s]);
    b_tp += intersection_size(bp, bg);
    b_pred += bp.size();
    b_gold += bg.size();
  }

  EvalReport r;
  std::size_t all_tp = 0;
  std::size_t all_pred = 0;
  std::size_t all_gold = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    all_tp += tp[c];
    all_pred += n_pred[c];
    all_gold += n_gold[c];
  }
  r.overall = Prf::from_counts(all_tp, all_pred - all_tp, all_gold - all_tp);
  r.boundary = Prf::from_counts(b_tp, b_pred - b_tp, b_gold - b_tp);
  for (std::size_t c = 0; c < n_classes; ++c) {
    ClassReport row;
    row.class_id = static_cast<int>(c);
    row.label = labels.name(static_cast<int>(c));
    row.gold_count = n_gold[c];
    row.ratio = all_gold > 0 ? static_cast<double>(n_gold[c]) / static_cast<double>(all_gold) : 0.0;
    row.prf = Prf::from_counts(tp[c], n_pred[c] - tp[c], n_gold[c] - tp[c]);
    r.per_class.push_back(std::move(row));
  }
  return r;
}

inline EvalReport evaluate(const PredictionSet& preds, const PredictionSet& golds, const LabelSet& labels) {
  return evaluate(std::span<const PredictionSet>(&preds, 1), std::span<const PredictionSet>(&golds, 1), labels);
}

// Per-class rows sorted by descending gold count (ties by class id).
inline std::vector<ClassReport> per_class_report(std::span<const PredictionSet> preds,
                                                 std::span<const PredictionSet> golds, const LabelSet& labels) {
  auto rows = evaluate(preds, golds, labels).per_class;
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ClassReport& a, const ClassReport& b) { return a.gold_count > b.gold_count; });
  return rows;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json prf_json(const Prf& p) {
  return {{"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn}, {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& row : r.per_class) {
    per_class.push_back({{"label", row.label},
                         {"count_gold", row.gold_count},
                         {"ratio", row.ratio},
                         {"precision", row.prf.precision},
                         {"recall", row.prf.recall},
                         {"f1", row.prf.f1},
                         {"tp", row.prf.tp},
                         {"fp", row.prf.fp},
                         {"fn", row.prf.fn}});
  }
  return {{"precision", r.overall.precision},
          {"recall", r.overall.recall},
          {"f1", r.overall.f1},
          {"tp", r.overall.tp},
          {"fp", r.overall.fp},
          {"fn", r.overall.fn},
          {"boundary_precision", r.boundary.precision},
          {"boundary_recall", r.boundary.recall},
          {"boundary_f1", r.boundary.f1},
          {"per_class", per_class}};
}

namespace detail {

inline std::string fixed(double v, int prec = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

// Left-aligned first column, right-aligned rest.
inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t k = 0; k < row.size(); ++k) width[k] = std::max(width[k], row[k].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k > 0) out << "  ";
      if (k == 0) {
        out << std::left << std::setw(static_cast<int>(width[k])) << row[k];
      } else {
        out << std::right << std::setw(static_cast<int>(width[k])) << row[k];
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace detail

inline std::string report_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> rows{{"label", "gold", "ratio", "P", "R", "F1"}};
  for (const auto& row : r.per_class) {
    rows.push_back({row.label, std::to_string(row.gold_count), detail::fixed(row.ratio), detail::fixed(row.prf.precision),
                    detail::fixed(row.prf.recall), detail::fixed(row.prf.f1)});
  }
  rows.push_back({"boundary", "", "", detail::fixed(r.boundary.precision), detail::fixed(r.boundary.recall),
                  detail::fixed(r.boundary.f1)});
  rows.push_back({"micro", std::to_string(r.overall.tp + r.overall.fn), "", detail::fixed(r.overall.precision),
                  detail::fixed(r.overall.recall), detail::fixed(r.overall.f1)});
  return detail::render_table(rows);
}

// Imbalance view: per-class rows by descending ratio, then Boundary, then All.
struct ImbalanceRow {
  std::string type;
  std::optional<double> ratio;
  double f1 = 0.0;
};

inline std::vector<ImbalanceRow> imbalance_rows(const EvalReport& r) {
  auto classes = r.per_class;
  std::stable_sort(classes.begin(), classes.end(),
                   [](const ClassReport& a, const ClassReport& b) { return a.ratio > b.ratio; });
  std::vector<ImbalanceRow> rows;
  for (const auto& c : classes) rows.push_back({c.label, c.ratio, c.prf.f1});
  rows.push_back({"Boundary", std::nullopt, r.boundary.f1});
  rows.push_back({"All", std::nullopt, r.overall.f1});
  return rows;
}

inline nlohmann::json imbalance_json(const std::vector<ImbalanceRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j{{"type", row.type}, {"f1", row.f1}};
    j["ratio"] = row.ratio ? nlohmann::json(*row.ratio) : nlohmann::json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

inline std::string imbalance_table(const std::vector<ImbalanceRow>& rows) {
  std::vector<std::vector<std::string>> table{{"Type", "Ratio", "F1"}};
  for (const auto& row : rows) {
    table.push_back({row.type, row.ratio ? detail::fixed(100.0 * *row.ratio, 1) + "%" : "",
                     detail::fixed(100.0 * row.f1, 2)});
  }
  return detail::render_table(table);
}

}  // namespace eiou
