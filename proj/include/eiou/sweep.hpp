#pragma once

// Low-resource sweep: train on uniform subsamples of the training split and
// evaluate each model on the full test split.

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eiou/corpus.hpp"
#include "eiou/decode_eval.hpp"
#include "eiou/trainer.hpp"

namespace eiou {

inline const std::vector<double>& default_sweep_fractions() {
  static const std::vector<double> f{0.01, 0.02, 0.05, 0.10, 0.20, 0.50, 1.00};
  return f;
}

struct SweepPoint {
  double fraction = 1.0;
  std::size_t train_sentences = 0;
  int best_epoch = 0;
  EvalReport test;
};

struct SweepResult {
  std::vector<SweepPoint> points;
};

// `on_point` fires after every completed fraction so callers can flush
// partial results before a later fraction fails.
inline SweepResult run_lowresource_sweep(const Corpus& train_set, const Corpus& dev_set, const Corpus& test_set,
                                         const std::vector<double>& fractions, const TrainConfig& cfg,
                                         const std::function<void(const SweepResult&)>& on_point = {}) {
  if (fractions.empty()) throw ConfigError("sweep needs at least one fraction");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep fractions must lie in (0, 1]");
  }
  SweepResult result;
  for (double f : fractions) {
    const Corpus sub = subsample(train_set, f, cfg.seed);
    TrainData data;
    data.train = &sub;
    data.dev = &dev_set;
    const auto run = train(data, cfg);
    result.points.push_back({f, sub.sentences.size(), run.best.epoch,
                             evaluate_checkpoint(run.best, test_set, cfg.threshold)});
    if (on_point) on_point(result);
  }
  return result;
}

inline std::string fraction_label(double f) {
  std::ostringstream o;
  o << 100.0 * f << "%";
  return o.str();
}

// Two metric rows (Boundary, Category), one column per fraction.
inline std::string sweep_table(const SweepResult& r) {
  std::vector<std::vector<std::string>> rows{{"Entity"}, {"Boundary"}, {"Category"}};
  for (const auto& p : r.points) {
    rows[0].push_back(fraction_label(p.fraction));
    rows[1].push_back(detail::fixed(100.0 * p.test.boundary.f1, 2));
    rows[2].push_back(detail::fixed(100.0 * p.test.overall.f1, 2));
  }
  return detail::render_table(rows);
}

inline nlohmann::json sweep_json(const SweepResult& r) {
  nlohmann::json columns = nlohmann::json::array();
  nlohmann::json boundary = nlohmann::json::array();
  nlohmann::json category = nlohmann::json::array();
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : r.points) {
    columns.push_back(p.fraction);
    boundary.push_back(p.test.boundary.f1);
    category.push_back(p.test.overall.f1);
    points.push_back({{"fraction", p.fraction},
                      {"train_sentences", p.train_sentences},
                      {"best_epoch", p.best_epoch},
                      {"test", report_json(p.test)}});
  }
  return {{"fractions", columns},
          {"rows", {{{"entity", "Boundary"}, {"f1", boundary}}, {{"entity", "Category"}, {"f1", category}}}},
          {"points", points}};
}

}  // namespace eiou
