// eiou_cli: data generation, training, evaluation and analysis runs.
//
// Exit codes: 0 ok, 1 check failure, 2 usage or config error, 3 I/O error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eiou/eiou.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kIo = 3 };

// The manifest of the command in flight; main() finalizes it on errors too.
std::unique_ptr<cli::Manifest> g_run;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> threshold;
  std::optional<double> beta;
  std::optional<std::string> emc_form;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file (flags override it)");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output directory")->required();
  app->add_option("--threshold", c.threshold, "decode threshold on raw scores");
  app->add_option("--beta", c.beta, "EIoU weight in the combined loss");
  app->add_option("--emc-form", c.emc_form, "product or additive");
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw eiou::IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw eiou::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw eiou::ConfigError("config '" + path + "' must be a JSON object");
  return j;
}

json section(const json& cfg, const char* name) {
  if (!cfg.contains(name)) return json::object();
  if (!cfg.at(name).is_object()) throw eiou::ConfigError(std::string("config section '") + name + "' must be an object");
  return cfg.at(name);
}

// Converts config-section type errors into ConfigError.
template <class T>
T parse_section(const json& j, const char* name) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw eiou::ConfigError(std::string("bad '") + name + "' config: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw eiou::IoError("cannot write '" + path.string() + "'");
}

cli::Manifest& start_run(const std::string& command, const std::string& out) {
  fs::create_directories(out);
  g_run = std::make_unique<cli::Manifest>(command, out);
  return *g_run;
}

int finish_run(int code = kOk) {
  g_run->write();
  g_run.reset();
  return code;
}

// Flags win over the config file.
eiou::TrainConfig resolve_train(const json& cfg, const Common& c) {
  auto tc = parse_section<eiou::TrainConfig>(section(cfg, "train"), "train");
  if (c.seed) tc.seed = *c.seed;
  if (c.threshold) tc.threshold = *c.threshold;
  if (c.beta) tc.beta = *c.beta;
  if (c.emc_form) tc.emc_form = eiou::parse_emc_form(*c.emc_form);
  return tc;
}

struct TrainOverrides {
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> patience;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "maximum epochs");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--batch-size", batch_size, "sentences per batch");
    app->add_option("--patience", patience, "epochs without dev improvement before stopping");
  }
  void apply(eiou::TrainConfig& tc) const {
    if (epochs) tc.max_epochs = *epochs;
    if (lr) tc.learning_rate = *lr;
    if (batch_size) tc.batch_size = *batch_size;
    if (patience) tc.patience = *patience;
  }
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<int> num_sentences;
  std::optional<int> num_classes;
};

int cmd_synth(const SynthArgs& a) {
  auto& run = start_run("synth", a.common.out);
  const json cfg = load_config(a.common.config_path);
  if (!a.common.config_path.empty()) run.add_input("config", a.common.config_path);
  auto sc = parse_section<eiou::SynthConfig>(section(cfg, "synth"), "synth");
  if (a.common.seed) sc.seed = *a.common.seed;
  if (a.num_sentences) sc.num_sentences = *a.num_sentences;
  if (a.num_classes) sc.num_classes = *a.num_classes;
  sc.check();
  run.set_config({{"synth", sc}, {"split", {0.8, 0.1, 0.1}}});
  run.set_seeds({sc.seed});

  const eiou::Corpus all = eiou::synthesize(sc);
  const std::size_t n = all.sentences.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq split_seq{static_cast<std::uint32_t>(sc.seed), static_cast<std::uint32_t>(sc.seed >> 32), 0x5u};
  std::mt19937_64 rng(split_seq);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_dev = n / 10, n_test = n / 10, n_train = n - n_dev - n_test;

  auto take = [&](std::size_t from, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(from),
                                 order.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(idx.begin(), idx.end());  // keep generation order inside a split
    eiou::Corpus c;
    c.labels = all.labels;
    for (auto i : idx) c.sentences.push_back(all.sentences[i]);
    return c;
  };
  eiou::write_jsonl(take(0, n_train), run.output("train.jsonl").string());
  eiou::write_jsonl(take(n_train, n_dev), run.output("dev.jsonl").string());
  eiou::write_jsonl(take(n_train + n_dev, n_test), run.output("test.jsonl").string());
  run.set_result({{"train", n_train}, {"dev", n_dev}, {"test", n_test}});
  std::cout << "synth: " << n_train << " train / " << n_dev << " dev / " << n_test << " test sentences in "
            << a.common.out << "\n";
  return finish_run();
}

struct SubsampleArgs {
  Common common;
  std::string input;
  std::optional<double> fraction;
};

int cmd_subsample(const SubsampleArgs& a) {
  auto& run = start_run("subsample", a.common.out);
  const json cfg = load_config(a.common.config_path);
  if (!a.common.config_path.empty()) run.add_input("config", a.common.config_path);
  const json sec = section(cfg, "subsample");
  double fraction = 0.0;
  std::uint64_t seed = 1;
  try {
    fraction = a.fraction ? *a.fraction : sec.value("fraction", 1.0);
    seed = a.common.seed ? *a.common.seed : sec.value("seed", std::uint64_t{1});
  } catch (const json::exception& e) {
    throw eiou::ConfigError(std::string("bad 'subsample' config: ") + e.what());
  }
  run.set_config({{"subsample", {{"fraction", fraction}, {"seed", seed}}}});
  run.set_seeds({seed});
  run.add_input("corpus", a.input);
  const auto sub = eiou::subsample(eiou::load_jsonl(a.input), fraction, seed);
  eiou::write_jsonl(sub, run.output("subsample.jsonl").string());
  run.set_result({{"sentences", sub.size()}});
  std::cout << "subsample: kept " << sub.size() << " sentences\n";
  return finish_run();
}

struct InputArgs {
  Common common;
  std::string input;
};

int cmd_stats(const InputArgs& a) {
  auto& run = start_run("stats", a.common.out);
  run.set_config(json::object());
  run.add_input("corpus", a.input);
  const auto st = eiou::class_stats(eiou::load_jsonl(a.input));
  write_text(run.output("stats.tsv"), eiou::stats_tsv(st));
  write_text(run.output("stats.json"), eiou::stats_json(st).dump(2) + "\n");
  std::cout << eiou::stats_tsv(st);
  return finish_run();
}

struct TrainArgs {
  Common common;
  TrainOverrides overrides;
  std::string train;
  std::string dev;
  std::string vectors;
  std::vector<std::uint64_t> seeds;
};

int cmd_train(const TrainArgs& a) {
  auto& run = start_run("train", a.common.out);
  const json cfg = load_config(a.common.config_path);
  if (!a.common.config_path.empty()) run.add_input("config", a.common.config_path);
  auto tc = resolve_train(cfg, a.common);
  a.overrides.apply(tc);
  if (!a.vectors.empty()) tc.embedding_mode = eiou::EmbeddingMode::kFileVectors;
  if (tc.embedding_mode == eiou::EmbeddingMode::kFileVectors && a.vectors.empty()) {
    throw eiou::ConfigError("embedding_mode 'file' needs --vectors");
  }
  tc.check();

  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty() && cfg.contains("seeds") && !a.common.seed) {
    seeds = parse_section<std::vector<std::uint64_t>>(cfg.at("seeds"), "seeds");
  }
  if (seeds.empty()) seeds = {tc.seed};
  run.set_config({{"train", tc}, {"seeds", seeds}});
  run.set_seeds(seeds);

  run.add_input("train", a.train);
  run.add_input("dev", a.dev);
  const auto train_set = eiou::load_jsonl(a.train);
  const auto dev_set = eiou::load_jsonl(a.dev);
  eiou::TrainData data{&train_set, &dev_set, {}, {}};
  if (!a.vectors.empty()) {
    run.add_input("vectors", a.vectors);
    data.train_vectors = eiou::load_vectors_jsonl(a.vectors, tc.input_dim);
    data.dev_vectors = data.train_vectors;
  }

  json per_seed = json::array();
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1_sum = 0.0;
  for (auto seed : seeds) {
    auto seeded = tc;
    seeded.seed = seed;
    const fs::path dir = seeds.size() == 1 ? fs::path(a.common.out) : fs::path(a.common.out) / ("seed-" + std::to_string(seed));
    const std::string prefix = seeds.size() == 1 ? "" : "seed-" + std::to_string(seed) + "/";
    fs::create_directories(dir);

    const auto result = eiou::train(data, seeded);
    for (const auto& rec : result.history) {
      std::cout << "seed " << seed << " epoch " << rec.epoch << "  loss " << eiou::detail::fixed(rec.combined, 5)
                << "  dev_f1 " << eiou::detail::fixed(rec.dev.overall.f1, 4) << "\n";
    }
    const auto& dev = *result.best.dev_report;
    eiou::save_checkpoint(result.best, run.output(prefix + "checkpoint.json").string());
    write_text(run.output(prefix + "history.jsonl"), eiou::history_jsonl(result.history));
    write_text(run.output(prefix + "dev_report.json"), eiou::report_json(dev).dump(2) + "\n");
    tp += dev.overall.tp;
    fp += dev.overall.fp;
    fn += dev.overall.fn;
    f1_sum += dev.overall.f1;
    per_seed.push_back({{"seed", seed}, {"best_epoch", result.best.epoch}, {"dev_f1", dev.overall.f1}});
  }

  const auto pooled = eiou::Prf::from_counts(tp, fp, fn);
  const json summary{{"runs", per_seed},
                     {"mean_f1", f1_sum / static_cast<double>(seeds.size())},
                     {"pooled_micro", eiou::prf_json(pooled)}};
  write_text(run.output("summary.json"), summary.dump(2) + "\n");
  run.set_result(summary);
  std::cout << "train: mean dev F1 " << eiou::detail::fixed(f1_sum / static_cast<double>(seeds.size()), 4)
            << " over " << seeds.size() << " run(s)\n";
  return finish_run();
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string input;
  std::string vectors;
  bool breakdown = false;
};

struct LoadedEval {
  eiou::Checkpoint ck;
  eiou::Corpus corpus;
  eiou::VectorStore vectors;
  double threshold = 0.0;
};

LoadedEval load_eval_inputs(cli::Manifest& run, const EvalArgs& a) {
  LoadedEval le;
  run.add_input("checkpoint", a.checkpoint);
  run.add_input("corpus", a.input);
  le.ck = eiou::load_checkpoint(a.checkpoint);
  le.corpus = eiou::load_jsonl(a.input);
  le.threshold = a.common.threshold ? *a.common.threshold : le.ck.config.threshold;
  if (le.ck.config.embedding_mode == eiou::EmbeddingMode::kFileVectors) {
    if (a.vectors.empty()) throw eiou::ConfigError("checkpoint uses file vectors; pass --vectors");
    run.add_input("vectors", a.vectors);
    le.vectors = eiou::load_vectors_jsonl(a.vectors, le.ck.params.config().input_dim);
  }
  for (const auto& name : le.corpus.labels.names()) {
    if (!le.ck.labels.contains(name)) throw eiou::ConfigError("corpus label '" + name + "' unknown to the checkpoint");
  }
  run.set_config({{"threshold", le.threshold}, {"checkpoint_config", le.ck.config}});
  run.set_seeds({le.ck.config.seed});
  return le;
}

int cmd_eval(const EvalArgs& a) {
  auto& run = start_run("eval", a.common.out);
  const auto le = load_eval_inputs(run, a);
  const auto report = eiou::evaluate_checkpoint(le.ck, le.corpus, le.threshold, le.vectors);
  write_text(run.output("report.json"), eiou::report_json(report).dump(2) + "\n");
  write_text(run.output("report.txt"), eiou::report_table(report));
  if (a.breakdown) {
    std::string lines;
    for (const auto& j : eiou::eiou_breakdowns(le.ck, le.corpus, le.vectors)) lines += j.dump() + "\n";
    write_text(run.output("breakdown.jsonl"), lines);
  }
  run.set_result(eiou::prf_json(report.overall));
  std::cout << eiou::report_table(report);
  return finish_run();
}

int cmd_report_imbalance(const EvalArgs& a) {
  auto& run = start_run("report-imbalance", a.common.out);
  const auto le = load_eval_inputs(run, a);
  const auto rows = eiou::imbalance_rows(eiou::evaluate_checkpoint(le.ck, le.corpus, le.threshold, le.vectors));
  write_text(run.output("imbalance.json"), eiou::imbalance_json(rows).dump(2) + "\n");
  write_text(run.output("imbalance.txt"), eiou::imbalance_table(rows));
  std::cout << eiou::imbalance_table(rows);
  return finish_run();
}

struct GradcheckArgs {
  Common common;
  std::optional<int> instances;
  std::optional<double> tolerance;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  auto& run = start_run("gradcheck", a.common.out);
  const json cfg = load_config(a.common.config_path);
  if (!a.common.config_path.empty()) run.add_input("config", a.common.config_path);
  const json sec = section(cfg, "gradcheck");
  eiou::GradcheckConfig gc;
  try {
    gc.instances = sec.value("instances", gc.instances);
    gc.seed = sec.value("seed", gc.seed);
    gc.step = sec.value("step", gc.step);
    gc.tolerance = sec.value("tolerance", gc.tolerance);
    gc.beta = sec.value("beta", gc.beta);
    gc.emc_form = eiou::parse_emc_form(sec.value("emc_form", eiou::to_string(gc.emc_form)));
  } catch (const json::exception& e) {
    throw eiou::ConfigError(std::string("bad 'gradcheck' config: ") + e.what());
  }
  if (a.common.seed) gc.seed = *a.common.seed;
  if (a.common.beta) gc.beta = *a.common.beta;
  if (a.common.emc_form) gc.emc_form = eiou::parse_emc_form(*a.common.emc_form);
  if (a.instances) gc.instances = *a.instances;
  if (a.tolerance) gc.tolerance = *a.tolerance;
  if (!(gc.beta >= 0.0 && gc.beta <= 1.0)) throw eiou::ConfigError("beta must lie in [0, 1]");

  if (a.inject_fault == "emc-sign") {
    gc.emc_grad_mutator = [](eiou::ScoreTensor& g) {
      for (auto& v : g.data()) v = -v;
    };
  } else if (!a.inject_fault.empty()) {
    throw eiou::ConfigError("unknown fault '" + a.inject_fault + "'");
  }

  json resolved{{"instances", gc.instances}, {"seed", gc.seed},   {"step", gc.step},
                {"tolerance", gc.tolerance}, {"beta", gc.beta}, {"emc_form", eiou::to_string(gc.emc_form)}};
  if (!a.inject_fault.empty()) resolved["inject_fault"] = a.inject_fault;
  run.set_config({{"gradcheck", resolved}});
  run.set_seeds({gc.seed});

  const auto result = eiou::run_gradcheck(gc);
  json comps = json::array();
  for (const auto& c : result.components) {
    std::cout << std::left << std::setw(9) << c.name << " worst rel err " << std::scientific << std::setprecision(3)
              << c.worst << "  (instance seed " << c.worst_seed << ")\n";
    comps.push_back({{"name", c.name}, {"worst", c.worst}, {"worst_seed", c.worst_seed}});
  }
  std::cout << std::defaultfloat;
  const json out{{"components", comps}, {"tolerance", gc.tolerance}, {"passed", result.passed()}};
  write_text(run.output("gradcheck.json"), out.dump(2) + "\n");
  run.set_result(out);
  if (!result.passed()) {
    for (const auto& c : result.components) {
      if (c.worst >= gc.tolerance) {
        std::cerr << "gradcheck FAILED: " << c.name << " error " << c.worst << " >= " << gc.tolerance
                  << " at instance seed " << c.worst_seed << "\n";
      }
    }
    return finish_run(kCheckFailed);
  }
  std::cout << "gradcheck passed (" << gc.instances << " instances, tolerance " << gc.tolerance << ")\n";
  return finish_run();
}

struct SweepArgs {
  Common common;
  TrainOverrides overrides;
  std::string train;
  std::string dev;
  std::string test;
  std::vector<double> fractions;
};

int cmd_sweep(const SweepArgs& a) {
  auto& run = start_run("sweep-lowresource", a.common.out);
  const json cfg = load_config(a.common.config_path);
  if (!a.common.config_path.empty()) run.add_input("config", a.common.config_path);
  auto tc = resolve_train(cfg, a.common);
  a.overrides.apply(tc);
  tc.check();
  if (tc.embedding_mode != eiou::EmbeddingMode::kTrainableLookup) {
    throw eiou::ConfigError("sweep-lowresource trains lookup embeddings only");
  }
  std::vector<double> fractions = a.fractions;
  if (fractions.empty()) {
    fractions = parse_section<std::vector<double>>(section(cfg, "sweep").value("fractions", json(eiou::default_sweep_fractions())),
                                                   "sweep");
  }
  run.set_config({{"train", tc}, {"fractions", fractions}});
  run.set_seeds({tc.seed});
  run.add_input("train", a.train);
  run.add_input("dev", a.dev);
  run.add_input("test", a.test);
  const auto train_set = eiou::load_jsonl(a.train);
  const auto dev_set = eiou::load_jsonl(a.dev);
  const auto test_set = eiou::load_jsonl(a.test);

  const auto json_path = run.output("sweep.json");
  const auto table_path = run.output("sweep.txt");
  auto flush = [&](const eiou::SweepResult& r) {
    write_text(json_path, eiou::sweep_json(r).dump(2) + "\n");
    write_text(table_path, eiou::sweep_table(r));
    const auto& p = r.points.back();
    std::cout << "fraction " << eiou::fraction_label(p.fraction) << ": " << p.train_sentences
              << " sentences, test F1 " << eiou::detail::fixed(p.test.overall.f1, 4) << "\n";
  };
  const auto result = eiou::run_lowresource_sweep(train_set, dev_set, test_set, fractions, tc, flush);
  run.set_result(eiou::sweep_json(result).at("rows"));
  std::cout << eiou::sweep_table(result);
  return finish_run();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EIoU-EMC nested NER: synthesize, train, evaluate, analyse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", EIOU_VERSION);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic nested corpus split 80/10/10");
  add_common(s_synth, synth.common);
  s_synth->add_option("--num-sentences", synth.num_sentences, "sentences to generate");
  s_synth->add_option("--num-classes", synth.num_classes, "entity classes");

  SubsampleArgs sub;
  auto* s_sub = app.add_subcommand("subsample", "keep a seeded fraction of a corpus");
  add_common(s_sub, sub.common);
  s_sub->add_option("--input", sub.input, "corpus JSONL")->required();
  s_sub->add_option("--fraction", sub.fraction, "fraction in (0, 1]");

  InputArgs stats;
  auto* s_stats = app.add_subcommand("stats", "per-class counts, ratios and length histograms");
  add_common(s_stats, stats.common);
  s_stats->add_option("--input", stats.input, "corpus JSONL")->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "train a scorer, keeping the best dev checkpoint");
  add_common(s_train, tr.common);
  tr.overrides.add(s_train);
  s_train->add_option("--train", tr.train, "training JSONL")->required();
  s_train->add_option("--dev", tr.dev, "dev JSONL")->required();
  s_train->add_option("--vectors", tr.vectors, "token vectors JSONL (file embedding mode)");
  s_train->add_option("--seeds", tr.seeds, "run once per seed, e.g. 1,2,3")->delimiter(',')->excludes("--seed");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  add_common(s_eval, ev.common);
  s_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  s_eval->add_option("--input", ev.input, "corpus JSONL")->required();
  s_eval->add_option("--vectors", ev.vectors, "token vectors JSONL");
  s_eval->add_flag("--breakdown", ev.breakdown, "dump per-sentence EIoU terms to breakdown.jsonl");

  EvalArgs imb;
  auto* s_imb = app.add_subcommand("report-imbalance", "per-class F1 by class ratio, then Boundary and All");
  add_common(s_imb, imb.common);
  s_imb->add_option("--checkpoint", imb.checkpoint, "checkpoint file")->required();
  s_imb->add_option("--input", imb.input, "corpus JSONL")->required();
  s_imb->add_option("--vectors", imb.vectors, "token vectors JSONL");

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_common(s_gc, gc.common);
  s_gc->add_option("--instances", gc.instances, "random instances");
  s_gc->add_option("--tolerance", gc.tolerance, "max relative error");
  s_gc->add_option("--inject-fault", gc.inject_fault)->group("");

  SweepArgs sw;
  auto* s_sweep = app.add_subcommand("sweep-lowresource", "train on growing fractions of the training split");
  add_common(s_sweep, sw.common);
  sw.overrides.add(s_sweep);
  s_sweep->add_option("--train", sw.train, "training JSONL")->required();
  s_sweep->add_option("--dev", sw.dev, "dev JSONL")->required();
  s_sweep->add_option("--test", sw.test, "test JSONL")->required();
  s_sweep->add_option("--fractions", sw.fractions, "e.g. 0.01,0.1,1")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  auto fail = [](const std::exception& e, int code) {
    std::cerr << "error: " << e.what() << "\n";
    if (g_run) {
      try {
        g_run->write(e.what());
      } catch (const std::exception& inner) {
        std::cerr << "error: " << inner.what() << "\n";
      }
    }
    return code;
  };

  try {
    if (*s_synth) return cmd_synth(synth);
    if (*s_sub) return cmd_subsample(sub);
    if (*s_stats) return cmd_stats(stats);
    if (*s_train) return cmd_train(tr);
    if (*s_eval) return cmd_eval(ev);
    if (*s_imb) return cmd_report_imbalance(imb);
    if (*s_gc) return cmd_gradcheck(gc);
    if (*s_sweep) return cmd_sweep(sw);
  } catch (const eiou::ConfigError& e) {
    return fail(e, kUsage);
  } catch (const eiou::IoError& e) {
    return fail(e, kIo);
  } catch (const fs::filesystem_error& e) {
    return fail(e, kIo);
  } catch (const std::exception& e) {
    return fail(e, kCheckFailed);
  }
  return kUsage;
}
