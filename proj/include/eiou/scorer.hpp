#pragma once

// Span scorer: token representations -> per-class affine start/end heads ->
// rotary position rotation -> bilinear span score
//
//   s_c[i, j] = (R_i H_c[i]) . (R_j T_c[j]),  H_c = W_s^c x + b_s^c,  T_c = W_e^c x + b_e^c
//
// All parameters (optional lookup table, then per-class heads) live in one
// flat vector so the optimizer, checkpoints and gradient checks share a
// single layout.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "eiou/common.hpp"
#include "eiou/corpus.hpp"
#include "eiou/rope.hpp"
#include "eiou/span_tensor.hpp"

namespace eiou {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using VectorView = Eigen::Map<Eigen::VectorXd>;
using ConstVectorView = Eigen::Map<const Eigen::VectorXd>;

struct ScorerConfig {
  int num_classes = 1;
  int input_dim = 32;
  int head_dim = 16;
  int vocab_size = 0;  // rows of the trainable lookup table; 0 in file-vector mode
  double rope_base = constants::kDefaultRopeBase;
  bool scale_scores = false;  // multiply scores by 1/sqrt(head_dim)

  void check() const {
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
    if (head_dim < 2 || head_dim % 2 != 0) throw ConfigError("head_dim must be even and >= 2");
    if (vocab_size < 0) throw ConfigError("vocab_size must be >= 0");
    if (!(rope_base > 0.0)) throw ConfigError("rope_base must be > 0");
  }

  bool operator==(const ScorerConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ScorerConfig& c) {
  j = {{"num_classes", c.num_classes}, {"input_dim", c.input_dim}, {"head_dim", c.head_dim},
       {"vocab_size", c.vocab_size},   {"rope_base", c.rope_base},  {"scale_scores", c.scale_scores}};
}

inline void from_json(const nlohmann::json& j, ScorerConfig& c) {
  c.num_classes = j.at("num_classes").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.head_dim = j.at("head_dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.scale_scores = j.at("scale_scores").get<bool>();
}

// Offsets into the flat parameter vector. Per class: W_s (d x d_in), b_s (d),
// W_e (d x d_in), b_e (d).
struct ParamLayout {
  ScorerConfig cfg;

  std::size_t embedding_size() const {
    return static_cast<std::size_t>(cfg.vocab_size) * static_cast<std::size_t>(cfg.input_dim);
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(cfg.head_dim) * static_cast<std::size_t>(cfg.input_dim);
  }
  std::size_t head_size() const { return 2 * (weight_size() + static_cast<std::size_t>(cfg.head_dim)); }
  std::size_t total() const { return embedding_size() + head_size() * static_cast<std::size_t>(cfg.num_classes); }

  std::size_t start_weight(int c) const { return embedding_size() + head_size() * static_cast<std::size_t>(c); }
  std::size_t start_bias(int c) const { return start_weight(c) + weight_size(); }
  std::size_t end_weight(int c) const { return start_bias(c) + static_cast<std::size_t>(cfg.head_dim); }
  std::size_t end_bias(int c) const { return end_weight(c) + weight_size(); }

  MatrixView embedding(double* base) const { return {base, cfg.vocab_size, cfg.input_dim}; }
  MatrixView weight(double* base, std::size_t off) const {
    return {base + off, cfg.head_dim, cfg.input_dim};
  }
  ConstMatrixView weight(const double* base, std::size_t off) const {
    return {base + off, cfg.head_dim, cfg.input_dim};
  }
  VectorView bias(double* base, std::size_t off) const { return {base + off, cfg.head_dim}; }
  ConstVectorView bias(const double* base, std::size_t off) const { return {base + off, cfg.head_dim}; }
};

class ScorerParams {
 public:
  ScorerParams() = default;
  explicit ScorerParams(ScorerConfig cfg) : layout_{cfg}, values_(layout_.total(), 0.0) { cfg.check(); }

  // Weights and embeddings ~ U(-1/sqrt(d_in), 1/sqrt(d_in)); biases zero.
  static ScorerParams initialized(ScorerConfig cfg, std::uint64_t seed) {
    ScorerParams p(cfg);
    std::mt19937_64 rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
    std::uniform_real_distribution<double> dist(-a, a);
    auto fill = [&](std::size_t off, std::size_t n) {
      for (std::size_t k = 0; k < n; ++k) p.values_[off + k] = dist(rng);
    };
    const auto& L = p.layout_;
    fill(0, L.embedding_size());
    for (int c = 0; c < cfg.num_classes; ++c) {
      fill(L.start_weight(c), L.weight_size());
      fill(L.end_weight(c), L.weight_size());
    }
    return p;
  }

  const ScorerConfig& config() const { return layout_.cfg; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  ConstMatrixView embedding() const {
    return {values_.data(), layout_.cfg.vocab_size, layout_.cfg.input_dim};
  }
  ConstMatrixView start_weight(int c) const { return layout_.weight(values_.data(), layout_.start_weight(c)); }
  ConstVectorView start_bias(int c) const { return layout_.bias(values_.data(), layout_.start_bias(c)); }
  ConstMatrixView end_weight(int c) const { return layout_.weight(values_.data(), layout_.end_weight(c)); }
  ConstVectorView end_bias(int c) const { return layout_.bias(values_.data(), layout_.end_bias(c)); }

  MatrixView start_weight(int c) { return layout_.weight(values_.data(), layout_.start_weight(c)); }
  VectorView start_bias(int c) { return layout_.bias(values_.data(), layout_.start_bias(c)); }
  MatrixView end_weight(int c) { return layout_.weight(values_.data(), layout_.end_weight(c)); }
  VectorView end_bias(int c) { return layout_.bias(values_.data(), layout_.end_bias(c)); }

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Embedding source

enum class EmbeddingMode { kTrainableLookup, kFileVectors };

using VectorStore = std::unordered_map<std::string, RowMatrix>;

struct EmbeddingSource {
  EmbeddingMode mode = EmbeddingMode::kTrainableLookup;
  Vocabulary vocab;     // lookup mode
  VectorStore vectors;  // file mode, keyed by sentence id
};

// Reads {"id": ..., "vectors": [[...], ...]} records. All vectors must share
// one dimension; `expected_dim` < 0 accepts whatever the first record uses.
inline VectorStore load_vectors_jsonl(const std::string& path, int expected_dim = -1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  VectorStore store;
  std::string line;
  int line_no = 0;
  int dim = expected_dim;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    try {
      auto rec = nlohmann::json::parse(line);
      auto rows = rec.at("vectors").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw IoError(where + "no vectors");
      if (dim < 0) dim = static_cast<int>(rows.front().size());
      RowMatrix m(static_cast<Eigen::Index>(rows.size()), dim);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<int>(rows[r].size()) != dim) {
          throw IoError(where + "vector dimension " + std::to_string(rows[r].size()) +
                        " != " + std::to_string(dim));
        }
        for (int k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(r), k) = rows[r][static_cast<std::size_t>(k)];
      }
      store[rec.at("id").get<std::string>()] = std::move(m);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(where + e.what());
    }
  }
  return store;
}

struct EncodedSentence {
  RowMatrix reps;              // k x d_in
  std::vector<int> token_ids;  // lookup mode only
};

inline EncodedSentence encode(const Sentence& sentence, const EmbeddingSource& source,
                              const ScorerParams& params) {
  const int d_in = params.config().input_dim;
  EncodedSentence out;
  if (source.mode == EmbeddingMode::kTrainableLookup) {
    const auto table = params.embedding();
    if (table.rows() == 0) throw Error("lookup mode requires an embedding table");
    out.reps.resize(sentence.length(), d_in);
    for (int t = 0; t < sentence.length(); ++t) {
      int id = source.vocab.index(sentence.tokens[static_cast<std::size_t>(t)]);
      if (id >= table.rows()) id = Vocabulary::kUnk;
      out.token_ids.push_back(id);
      out.reps.row(t) = table.row(id);
    }
    return out;
  }
  auto it = source.vectors.find(sentence.id);
  if (it == source.vectors.end()) throw Error("no vectors for sentence '" + sentence.id + "'");
  if (it->second.rows() != sentence.length()) {
    throw Error("sentence '" + sentence.id + "' has " + std::to_string(sentence.length()) +
                " tokens but " + std::to_string(it->second.rows()) + " vectors");
  }
  if (it->second.cols() != d_in) {
    throw Error("sentence '" + sentence.id + "' vectors have dimension " +
                std::to_string(it->second.cols()) + ", expected " + std::to_string(d_in));
  }
  out.reps = it->second;
  return out;
}

// ---------------------------------------------------------------------------
// Forward

// H = reps W_s^T + b_s, T = reps W_e^T + b_e for class c.
inline std::pair<RowMatrix, RowMatrix> project(const RowMatrix& reps, const ScorerParams& params, int c) {
  if (reps.cols() != params.config().input_dim) throw Error("representation dimension mismatch");
  RowMatrix h = reps * params.start_weight(c).transpose();
  RowMatrix t = reps * params.end_weight(c).transpose();
  h.rowwise() += params.start_bias(c).transpose();
  t.rowwise() += params.end_bias(c).transpose();
  return {std::move(h), std::move(t)};
}

inline void rotate_rows(RowMatrix& m, double base, double sign = 1.0) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rope_rotate_inplace(std::span<double>(m.row(r).data(), static_cast<std::size_t>(m.cols())),
                        sign * static_cast<double>(r), base);
  }
}

inline double score_scale(const ScorerConfig& cfg) {
  return cfg.scale_scores ? 1.0 / std::sqrt(static_cast<double>(cfg.head_dim)) : 1.0;
}

// Single-class score slice from unrotated start/end projections.
inline ScoreTensor score_matrix(const RowMatrix& h, const RowMatrix& t, const ScorerConfig& cfg,
                                int padded_len = -1) {
  if (h.rows() != t.rows() || h.cols() != t.cols()) throw Error("H/T shape mismatch");
  const int len = static_cast<int>(h.rows());
  ScoreTensor out(1, padded_len < 0 ? len : padded_len, len);
  RowMatrix q = h;
  RowMatrix k = t;
  rotate_rows(q, cfg.rope_base);
  rotate_rows(k, cfg.rope_base);
  const RowMatrix full = (q * k.transpose()) * score_scale(cfg);
  for (int i = 0; i < len; ++i) {
    for (int j = i; j < len; ++j) out.at(0, i, j) = full(i, j);
  }
  return out;
}

struct ScorerCache {
  bool filled = false;
  RowMatrix reps;
  std::vector<int> token_ids;
  std::vector<RowMatrix> q;  // rotated start projections, per class
  std::vector<RowMatrix> k;  // rotated end projections, per class
};

inline ScoreTensor score_forward(const ScorerParams& params, const EncodedSentence& enc, int padded_len,
                                 ScorerCache* cache = nullptr) {
  const auto& cfg = params.config();
  const int len = static_cast<int>(enc.reps.rows());
  ScoreTensor scores(cfg.num_classes, padded_len, len);
  const double scale = score_scale(cfg);
  if (cache != nullptr) {
    cache->filled = true;
    cache->reps = enc.reps;
    cache->token_ids = enc.token_ids;
    cache->q.assign(static_cast<std::size_t>(cfg.num_classes), RowMatrix());
    cache->k.assign(static_cast<std::size_t>(cfg.num_classes), RowMatrix());
  }
  for (int c = 0; c < cfg.num_classes; ++c) {
    auto [q, k] = project(enc.reps, params, c);
    rotate_rows(q, cfg.rope_base);
    rotate_rows(k, cfg.rope_base);
    const RowMatrix full = q * k.transpose();
    for (int i = 0; i < len; ++i) {
      for (int j = i; j < len; ++j) scores.at(c, i, j) = scale * full(i, j);
    }
    if (cache != nullptr) {
      cache->q[static_cast<std::size_t>(c)] = std::move(q);
      cache->k[static_cast<std::size_t>(c)] = std::move(k);
    }
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Backward

// Accumulates d(loss)/d(params) into grad_out (same layout as params.values())
// given d(loss)/d(scores). Masked cells of grad_scores are ignored.
inline void scorer_backward(const ScoreTensor& grad_scores, const ScorerCache& cache,
                            const ScorerParams& params, std::span<double> grad_out) {
  if (!cache.filled) throw Error("scorer_backward called without a forward cache");
  const auto& cfg = params.config();
  const auto& layout = params.layout();
  if (grad_out.size() != layout.total()) throw Error("gradient buffer size mismatch");
  const int len = static_cast<int>(cache.reps.rows());
  if (grad_scores.classes() != cfg.num_classes || grad_scores.length() != len) {
    throw Error("gradient tensor shape mismatch");
  }
  const double scale = score_scale(cfg);
  RowMatrix grad_reps = RowMatrix::Zero(len, cfg.input_dim);

  for (int c = 0; c < cfg.num_classes; ++c) {
    RowMatrix g = RowMatrix::Zero(len, len);
    for (int i = 0; i < len; ++i) {
      for (int j = i; j < len; ++j) g(i, j) = scale * grad_scores.at(c, i, j);
    }
    const auto& q = cache.q[static_cast<std::size_t>(c)];
    const auto& k = cache.k[static_cast<std::size_t>(c)];
    RowMatrix grad_h = g * k;              // d/dq_i = sum_j g_ij k_j
    RowMatrix grad_t = g.transpose() * q;  // d/dk_j = sum_i g_ij q_i
    rotate_rows(grad_h, cfg.rope_base, -1.0);
    rotate_rows(grad_t, cfg.rope_base, -1.0);

    layout.weight(grad_out.data(), layout.start_weight(c)) += grad_h.transpose() * cache.reps;
    layout.bias(grad_out.data(), layout.start_bias(c)) += grad_h.colwise().sum().transpose();
    layout.weight(grad_out.data(), layout.end_weight(c)) += grad_t.transpose() * cache.reps;
    layout.bias(grad_out.data(), layout.end_bias(c)) += grad_t.colwise().sum().transpose();

    grad_reps += grad_h * params.start_weight(c);
    grad_reps += grad_t * params.end_weight(c);
  }

  if (cfg.vocab_size > 0 && !cache.token_ids.empty()) {
    auto table = layout.embedding(grad_out.data());
    for (int t = 0; t < len; ++t) table.row(cache.token_ids[static_cast<std::size_t>(t)]) += grad_reps.row(t);
  }
}

}  // namespace eiou
