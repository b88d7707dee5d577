#pragma once

// Mini-batch training of the span scorer under the combined EIoU/EMC
// objective, with Adam, global-norm clipping and dev-F1 model selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eiou/common.hpp"
#include "eiou/corpus.hpp"
#include "eiou/decode_eval.hpp"
#include "eiou/losses.hpp"
#include "eiou/scorer.hpp"

namespace eiou {

struct TrainConfig {
  double beta = 0.5;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
  int batch_size = 16;
  int max_epochs = 30;
  int patience = 5;
  std::uint64_t seed = 1;
  double threshold = 0.0;
  EmcForm emc_form = EmcForm::kProduct;
  int head_dim = 16;
  int input_dim = 32;
  int max_len = 0;  // 0: no span-length limit at decode time
  int min_freq = 1;
  double rope_base = constants::kDefaultRopeBase;
  bool scale_scores = false;
  EmbeddingMode embedding_mode = EmbeddingMode::kTrainableLookup;

  void check() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in (0, 1)");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in (0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (head_dim < 2 || head_dim % 2 != 0) throw ConfigError("head_dim must be even and >= 2");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
    if (max_len < 0) throw ConfigError("max_len must be >= 0");
    if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  }

  std::optional<int> decode_max_len() const { return max_len > 0 ? std::optional<int>(max_len) : std::nullopt; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"beta", c.beta},
       {"learning_rate", c.learning_rate},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"clip_norm", c.clip_norm},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"seed", c.seed},
       {"threshold", c.threshold},
       {"emc_form", to_string(c.emc_form)},
       {"head_dim", c.head_dim},
       {"input_dim", c.input_dim},
       {"max_len", c.max_len},
       {"min_freq", c.min_freq},
       {"rope_base", c.rope_base},
       {"scale_scores", c.scale_scores},
       {"embedding_mode", c.embedding_mode == EmbeddingMode::kTrainableLookup ? "lookup" : "file"}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.beta = j.value("beta", d.beta);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.seed = j.value("seed", d.seed);
  c.threshold = j.value("threshold", d.threshold);
  c.emc_form = parse_emc_form(j.value("emc_form", to_string(d.emc_form)));
  c.head_dim = j.value("head_dim", d.head_dim);
  c.input_dim = j.value("input_dim", d.input_dim);
  c.max_len = j.value("max_len", d.max_len);
  c.min_freq = j.value("min_freq", d.min_freq);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.scale_scores = j.value("scale_scores", d.scale_scores);
  const std::string mode = j.value("embedding_mode", std::string("lookup"));
  if (mode == "lookup") {
    c.embedding_mode = EmbeddingMode::kTrainableLookup;
  } else if (mode == "file") {
    c.embedding_mode = EmbeddingMode::kFileVectors;
  } else {
    throw ConfigError("embedding_mode must be 'lookup' or 'file', got '" + mode + "'");
  }
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  std::vector<std::size_t> indices;  // sentence indices, in accumulation order
  int padded_len = 0;                // longest sentence in the batch
};

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

inline std::vector<Batch> batch_iter(const Corpus& corpus, int batch_size, std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (corpus.sentences.empty()) throw Error("cannot batch an empty corpus");
  std::vector<std::size_t> order(corpus.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = epoch_rng(seed, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t k = 0; k < order.size(); k += static_cast<std::size_t>(batch_size)) {
    Batch b;
    const std::size_t stop = std::min(order.size(), k + static_cast<std::size_t>(batch_size));
    for (std::size_t q = k; q < stop; ++q) {
      b.indices.push_back(order[q]);
      b.padded_len = std::max(b.padded_len, corpus.sentences[order[q]].length());
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("adam_step: size mismatch");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

// Rescales grads in place so their L2 norm is at most max_norm. Returns the
// norm before clipping.
inline double clip_global_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (double& g : grads) g *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Model and checkpoint

inline constexpr const char* kCheckpointMagic = "EIOU-EMC-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  LabelSet labels;
  Vocabulary vocab;
  ScorerParams params;
  int epoch = 0;
  std::optional<EvalReport> dev_report;

  EmbeddingSource source(VectorStore vectors = {}) const {
    EmbeddingSource s;
    s.mode = config.embedding_mode;
    s.vocab = vocab;
    s.vectors = std::move(vectors);
    return s;
  }
};

inline nlohmann::json checkpoint_json(const Checkpoint& ck) {
  nlohmann::json j;
  j["magic"] = kCheckpointMagic;
  j["format_version"] = kCheckpointVersion;
  j["scorer"] = ck.params.config();
  j["train_config"] = ck.config;
  j["labels"] = ck.labels.names();
  j["vocab"] = ck.vocab.tokens();
  j["epoch"] = ck.epoch;
  j["dev_metrics"] = ck.dev_report ? report_json(*ck.dev_report) : nlohmann::json(nullptr);
  j["params"] = ck.params.values();
  return j;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  for (double v : ck.params.values()) {
    if (!std::isfinite(v)) throw Error("refusing to save a checkpoint with non-finite parameters");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << checkpoint_json(ck).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  Checkpoint ck;
  try {
    auto j = nlohmann::json::parse(in);
    if (j.value("magic", std::string()) != kCheckpointMagic) throw IoError("'" + path + "' is not a checkpoint");
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw IoError("unsupported checkpoint version in '" + path + "'");
    }
    ck.config = j.at("train_config").get<TrainConfig>();
    ck.labels = LabelSet(j.at("labels").get<std::vector<std::string>>());
    ck.vocab = Vocabulary(j.at("vocab").get<std::vector<std::string>>());
    ck.epoch = j.at("epoch").get<int>();
    ScorerParams params(j.at("scorer").get<ScorerConfig>());
    auto flat = j.at("params").get<std::vector<double>>();
    if (flat.size() != params.values().size()) throw IoError("checkpoint parameter count mismatch in '" + path + "'");
    if (params.config().num_classes != ck.labels.size()) throw IoError("checkpoint label count mismatch in '" + path + "'");
    params.values() = std::move(flat);
    ck.params = std::move(params);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint '" + path + "': " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("corrupt checkpoint '" + path + "': " + e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Inference

struct SentenceScores {
  ScoreTensor scores;
  ScorerCache cache;
};

inline SentenceScores score_sentence(const Checkpoint& ck, const EmbeddingSource& source, const Sentence& s,
                                     int padded_len = -1, bool keep_cache = false) {
  SentenceScores out;
  const auto enc = encode(s, source, ck.params);
  out.scores = score_forward(ck.params, enc, padded_len < 0 ? s.length() : padded_len,
                             keep_cache ? &out.cache : nullptr);
  return out;
}

inline std::vector<PredictionSet> predict(const Checkpoint& ck, const EmbeddingSource& source, const Corpus& corpus,
                                          double tau) {
  std::vector<PredictionSet> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    out.push_back(decode(score_sentence(ck, source, s).scores, tau, ck.config.decode_max_len()));
  }
  return out;
}

inline std::vector<PredictionSet> gold_sets(const Corpus& corpus, const LabelSet& labels) {
  std::vector<PredictionSet> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) out.push_back(gold_set(s, labels));
  return out;
}

inline EvalReport evaluate_checkpoint(const Checkpoint& ck, const Corpus& corpus, double tau,
                                      const VectorStore& vectors = {}) {
  if (corpus.sentences.empty()) throw Error("cannot evaluate on an empty corpus");
  const auto source = ck.source(vectors);
  const auto preds = predict(ck, source, corpus, tau);
  const auto golds = gold_sets(corpus, ck.labels);
  return evaluate(preds, golds, ck.labels);
}

// One JSON object per sentence: {"id": ..., "classes": {label -> EIoU terms}}.
inline std::vector<nlohmann::json> eiou_breakdowns(const Checkpoint& ck, const Corpus& corpus,
                                                   const VectorStore& vectors = {}) {
  const auto source = ck.source(vectors);
  std::vector<nlohmann::json> out;
  for (const auto& s : corpus.sentences) {
    const auto scores = score_sentence(ck, source, s).scores;
    const auto loss = eiou_loss(scores, gold_tensor(s, ck.labels));
    out.push_back({{"id", s.id}, {"classes", breakdown_json(*loss.breakdown, ck.labels)}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  double eiou = 0.0;  // mean per sentence
  double emc = 0.0;
  double combined = 0.0;
  EvalReport dev;
};

using RunHistory = std::vector<EpochRecord>;

inline nlohmann::json epoch_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", {{"eiou", r.eiou}, {"emc", r.emc}, {"combined", r.combined}}},
          {"dev", report_json(r.dev)}};
}

inline std::string history_jsonl(const RunHistory& h) {
  std::ostringstream out;
  for (const auto& r : h) out << epoch_json(r).dump() << '\n';
  return out.str();
}

struct TrainResult {
  Checkpoint best;
  RunHistory history;
};

struct TrainData {
  const Corpus* train = nullptr;
  const Corpus* dev = nullptr;
  VectorStore train_vectors;  // file-vector mode
  VectorStore dev_vectors;
};

inline TrainResult train(const TrainData& data, const TrainConfig& cfg) {
  cfg.check();
  if (data.train == nullptr || data.train->sentences.empty()) throw Error("training split is empty");
  if (data.dev == nullptr || data.dev->sentences.empty()) throw Error("dev split is empty");
  const Corpus& train_set = *data.train;
  const Corpus& dev_set = *data.dev;
  for (const auto& name : dev_set.labels.names()) {
    if (!train_set.labels.contains(name)) throw ConfigError("dev label '" + name + "' missing from training labels");
  }

  Checkpoint ck;
  ck.config = cfg;
  ck.labels = train_set.labels;
  ScorerConfig sc;
  sc.num_classes = ck.labels.size();
  sc.input_dim = cfg.input_dim;
  sc.head_dim = cfg.head_dim;
  sc.rope_base = cfg.rope_base;
  sc.scale_scores = cfg.scale_scores;
  if (cfg.embedding_mode == EmbeddingMode::kTrainableLookup) {
    ck.vocab = build_vocab(train_set, cfg.min_freq);
    sc.vocab_size = ck.vocab.size();
  }
  ck.params = ScorerParams::initialized(sc, cfg.seed);

  const auto train_source = ck.source(data.train_vectors);
  const AdamConfig adam{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const EMCConfig emc{cfg.emc_form};
  AdamState state(ck.params.values().size());
  std::vector<double> grad(ck.params.values().size());

  auto dev_eval = [&] { return evaluate_checkpoint(ck, dev_set, cfg.threshold, data.dev_vectors); };

  TrainResult result;
  result.best = ck;
  if (cfg.max_epochs == 0) {
    result.best.dev_report = dev_eval();
    return result;
  }

  double best_f1 = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (const auto& batch : batch_iter(train_set, cfg.batch_size, cfg.seed, epoch)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(batch.indices.size());
      for (auto idx : batch.indices) {
        const Sentence& s = train_set.sentences[idx];
        auto fwd = score_sentence(ck, train_source, s, batch.padded_len, true);
        const auto y = gold_tensor(s, ck.labels, batch.padded_len);
        auto loss = combined_loss(fwd.scores, y, cfg.beta, emc);
        if (!std::isfinite(loss.total.value)) {
          throw Error("non-finite loss at epoch " + std::to_string(epoch) + " on sentence '" + s.id + "'");
        }
        rec.eiou += loss.eiou;
        rec.emc += loss.emc;
        rec.combined += loss.total.value;
        for (auto& g : loss.total.grad.data()) g *= inv;
        scorer_backward(loss.total.grad, fwd.cache, ck.params, grad);
      }
      clip_global_norm(grad, cfg.clip_norm);
      adam_step(ck.params.values(), grad, state, adam);
    }
    const double n = static_cast<double>(train_set.sentences.size());
    rec.eiou /= n;
    rec.emc /= n;
    rec.combined /= n;
    rec.dev = dev_eval();
    result.history.push_back(rec);

    if (rec.dev.overall.f1 > best_f1) {
      best_f1 = rec.dev.overall.f1;
      since_best = 0;
      result.best = ck;
      result.best.epoch = epoch;
      result.best.dev_report = rec.dev;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace eiou
