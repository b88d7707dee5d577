#pragma once

// Seeded random instances for checking analytic gradients of EMC, EIoU, the
// combined loss and the full scorer chain against central differences.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "eiou/common.hpp"
#include "eiou/losses.hpp"
#include "eiou/scorer.hpp"

namespace eiou {

struct GradcheckConfig {
  int instances = 20;
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  double beta = 0.5;
  EmcForm emc_form = EmcForm::kProduct;
  // Applied to the EMC analytic gradient before comparison. Test fixtures use
  // it to inject faults; leave empty otherwise.
  std::function<void(ScoreTensor&)> emc_grad_mutator;
};

struct ComponentResult {
  std::string name;
  double worst = 0.0;
  std::uint64_t worst_seed = 0;  // instance seed that produced `worst`
};

struct GradcheckResult {
  std::vector<ComponentResult> components;  // emc, eiou, combined, scorer
  double tolerance = 0.0;

  bool passed() const {
    return std::all_of(components.begin(), components.end(),
                       [&](const ComponentResult& c) { return c.worst < tolerance; });
  }
};

struct RandomInstance {
  ScoreTensor scores;
  GoldTensor gold;
  int head_dim = 4;
};

inline std::uint64_t instance_seed(std::uint64_t seed, int k) {
  return seed * 1000003ULL + static_cast<std::uint64_t>(k);
}

// L in [3, 8], C in [2, 4], d in {4, 8}; scores ~ U(-3, 3). Every class gets
// up to three gold cells with probability 0.8, so some slices stay empty.
inline RandomInstance random_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> score(-3.0, 3.0);
  const int len = uni_int(3, 8);
  const int classes = uni_int(2, 4);
  RandomInstance inst;
  inst.head_dim = uni_int(0, 1) == 0 ? 4 : 8;
  inst.scores = ScoreTensor(classes, len, len);
  inst.gold = GoldTensor(classes, len, len);
  const auto cells = valid_cells(len);
  for (int c = 0; c < classes; ++c) {
    for (const auto& cell : cells) inst.scores.at(c, cell.start, cell.end) = score(rng);
    if (std::bernoulli_distribution(0.8)(rng)) {
      const int n_gold = uni_int(1, 3);
      for (int g = 0; g < n_gold; ++g) {
        const auto& cell = cells[static_cast<std::size_t>(uni_int(0, static_cast<int>(cells.size()) - 1))];
        inst.gold.at(c, cell.start, cell.end) = 1;
      }
    }
  }
  return inst;
}

namespace detail {

// Combined loss of the scorer output as a function of the flat parameters.
struct ScorerChain {
  ScorerParams params;
  Sentence sentence;
  EmbeddingSource source;
  GoldTensor gold;
  double beta = 0.5;
  EMCConfig emc;

  double value() const {
    const auto enc = encode(sentence, source, params);
    const auto s = score_forward(params, enc, sentence.length());
    return combined_loss(s, gold, beta, emc).total.value;
  }

  std::vector<double> gradient() const {
    ScorerCache cache;
    const auto enc = encode(sentence, source, params);
    const auto s = score_forward(params, enc, sentence.length(), &cache);
    const auto loss = combined_loss(s, gold, beta, emc);
    std::vector<double> g(params.values().size(), 0.0);
    scorer_backward(loss.total.grad, cache, params, g);
    return g;
  }
};

inline ScorerChain random_chain(std::uint64_t seed, const RandomInstance& inst, double beta, EMCConfig emc) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  ScorerChain chain;
  ScorerConfig cfg;
  cfg.num_classes = inst.scores.classes();
  cfg.head_dim = inst.head_dim;
  cfg.input_dim = inst.head_dim + 2;
  const int n_tokens = 6;
  cfg.vocab_size = n_tokens + 2;
  chain.params = ScorerParams::initialized(cfg, seed);
  std::vector<std::string> vocab{"<unk>", "<pad>"};
  for (int t = 0; t < n_tokens; ++t) vocab.push_back("t" + std::to_string(t));
  chain.source.vocab = Vocabulary(vocab);
  // Unknown tokens exercise the UNK row.
  std::uniform_int_distribution<int> tok(0, n_tokens);
  chain.sentence.id = "gradcheck";
  for (int i = 0; i < inst.scores.length(); ++i) chain.sentence.tokens.push_back("t" + std::to_string(tok(rng)));
  chain.gold = inst.gold;
  chain.beta = beta;
  chain.emc = emc;
  return chain;
}

}  // namespace detail

inline double scorer_chain_check(const detail::ScorerChain& chain, double step) {
  const auto analytic = chain.gradient();
  detail::ScorerChain probe = chain;
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    double& v = probe.params.values()[k];
    const double orig = v;
    v = orig + step;
    const double up = probe.value();
    v = orig - step;
    const double down = probe.value();
    v = orig;
    worst = std::max(worst, relative_error(analytic[k], (up - down) / (2.0 * step)));
  }
  return worst;
}

inline GradcheckResult run_gradcheck(const GradcheckConfig& cfg) {
  if (cfg.instances < 1) throw ConfigError("gradcheck needs at least one instance");
  GradcheckResult result;
  result.tolerance = cfg.tolerance;
  result.components = {{"emc", 0.0, 0}, {"eiou", 0.0, 0}, {"combined", 0.0, 0}, {"scorer", 0.0, 0}};
  const EMCConfig emc{cfg.emc_form};

  auto record = [&](std::size_t k, double err, std::uint64_t seed) {
    auto& comp = result.components[k];
    if (err >= comp.worst) {
      comp.worst = err;
      comp.worst_seed = seed;
    }
  };

  for (int k = 0; k < cfg.instances; ++k) {
    const auto seed = instance_seed(cfg.seed, k);
    const auto inst = random_instance(seed);
    const auto& y = inst.gold;

    LossFn emc_fn = [&](const ScoreTensor& s) {
      auto r = emc_loss(s, y, emc);
      if (cfg.emc_grad_mutator) cfg.emc_grad_mutator(r.grad);
      return r;
    };
    LossFn eiou_fn = [&](const ScoreTensor& s) { return eiou_loss(s, y); };
    LossFn combined_fn = [&](const ScoreTensor& s) {
      auto a = eiou_fn(s);
      auto b = emc_fn(s);
      LossResult r{cfg.beta * a.value + (1.0 - cfg.beta) * b.value, a.grad, std::nullopt};
      for (std::size_t q = 0; q < r.grad.data().size(); ++q) {
        r.grad.data()[q] = cfg.beta * a.grad.data()[q] + (1.0 - cfg.beta) * b.grad.data()[q];
      }
      return r;
    };

    record(0, finite_diff_check(emc_fn, inst.scores, cfg.step), seed);
    record(1, finite_diff_check(eiou_fn, inst.scores, cfg.step), seed);
    record(2, finite_diff_check(combined_fn, inst.scores, cfg.step), seed);
    record(3, scorer_chain_check(detail::random_chain(seed, inst, cfg.beta, emc), cfg.step), seed);
  }
  return result;
}

}  // namespace eiou
