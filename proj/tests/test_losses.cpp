#include <gtest/gtest.h>

#include <random>

#include "eiou/gradcheck.hpp"
#include "eiou/losses.hpp"
#include "oracles.hpp"

using namespace eiou;

namespace {

ScoreTensor random_scores(std::mt19937_64& rng, int classes, int len, double lo, double hi, int padded = -1) {
  ScoreTensor s(classes, padded < 0 ? len : padded, len);
  std::uniform_real_distribution<double> u(lo, hi);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < len; ++i)
      for (int j = i; j < len; ++j) s.at(c, i, j) = u(rng);
  return s;
}

GoldTensor random_gold(std::mt19937_64& rng, int classes, int len, int padded = -1, bool every_class = true) {
  GoldTensor y(classes, padded < 0 ? len : padded, len);
  const auto cells = valid_cells(len);
  std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
  for (int c = 0; c < classes; ++c) {
    if (!every_class && c % 2 == 1) continue;
    const int n = 1 + static_cast<int>(pick(rng) % 3);
    for (int k = 0; k < n; ++k) {
      const auto& cell = cells[pick(rng)];
      y.at(c, cell.start, cell.end) = 1;
    }
  }
  return y;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST(GoldTensor, Construction) {
  LabelSet labels({"A", "B"});
  Sentence none{"s", {"a", "b", "c", "d"}, {}};
  const auto empty = gold_tensor(none, labels);
  for (auto v : empty.data()) EXPECT_EQ(v, 0);

  Sentence one{"s", {"a", "b"}, {{0, 1, "A"}}};
  auto y = gold_tensor(one, labels);
  EXPECT_EQ(y.at(0, 0, 1), 1);
  EXPECT_EQ(std::count(y.data().begin(), y.data().end(), 1), 1);

  Sentence nested{"s", {"a", "b", "c", "d"}, {{0, 3, "A"}, {1, 2, "B"}}};
  auto yn = gold_tensor(nested, labels);
  EXPECT_EQ(yn.at(0, 0, 3), 1);
  EXPECT_EQ(yn.at(1, 1, 2), 1);
  EXPECT_EQ(std::count(yn.data().begin(), yn.data().end(), 1), 2);

  Sentence bad{"s", {"a"}, {{0, 3, "A"}}};
  EXPECT_THROW(gold_tensor(bad, labels), Error);
}

TEST(SoftIou, IdentityAndTwoCellCase) {
  std::vector<double> y{1, 0, 0, 1};
  EXPECT_DOUBLE_EQ(soft_iou(y, y), 1.0);
  std::vector<double> p2{0.5, 0.5}, y2{1, 0};
  EXPECT_NEAR(soft_iou(p2, y2), 1.0 / 3.0, 1e-12);
  std::vector<double> empty{0, 0};
  EXPECT_THROW(soft_iou(p2, empty), Error);
}

TEST(SoftIou, MatchesDirectSummation) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(6), y(6, 0.0);
    for (auto& v : p) v = u(rng);
    y[static_cast<std::size_t>(trial % 6)] = 1;
    y[static_cast<std::size_t>((trial * 7) % 6)] = 1;
    double i = 0, sp = 0, sy = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      i += p[k] * y[k];
      sp += p[k];
      sy += y[k];
    }
    EXPECT_LT(rel(soft_iou(p, y), i / (sp + sy - i)), 1e-12);
  }
}

TEST(SoftBox, PointMassAndTwoCells) {
  std::vector<Cell> cells{{2, 5}};
  std::vector<double> w{1.0};
  auto b = soft_box(w, cells);
  EXPECT_EQ(b.center_row, 2.0);
  EXPECT_EQ(b.center_col, 5.0);
  EXPECT_EQ(b.extent_b, 1.0);
  EXPECT_EQ(b.extent_c, 1.0);

  std::vector<Cell> two{{1, 1}, {3, 3}};
  std::vector<double> w2{1.0, 1.0};
  auto b2 = soft_box(w2, two);
  EXPECT_DOUBLE_EQ(b2.center_row, 2.0);
  EXPECT_DOUBLE_EQ(b2.center_col, 2.0);
  EXPECT_DOUBLE_EQ(b2.extent_b, 3.0);
  EXPECT_DOUBLE_EQ(b2.extent_c, 3.0);

  std::vector<double> zero{0.0, 0.0};
  EXPECT_THROW(soft_box(zero, two), Error);
}

TEST(SoftBox, MatchesDirectOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 2 + trial % 6;
    const auto cells = valid_cells(len);
    std::vector<double> w(cells.size());
    std::vector<std::vector<double>> grid(static_cast<std::size_t>(len), std::vector<double>(static_cast<std::size_t>(len), 0.0));
    for (std::size_t k = 0; k < cells.size(); ++k) {
      w[k] = u(rng);
      grid[static_cast<std::size_t>(cells[k].start)][static_cast<std::size_t>(cells[k].end)] = w[k];
    }
    const auto a = soft_box(w, cells);
    const auto b = oracle::direct_box(grid);
    EXPECT_NEAR(a.center_row, b.r, 1e-12);
    EXPECT_NEAR(a.center_col, b.c, 1e-12);
    EXPECT_NEAR(a.extent_b, b.b, 1e-12);
    EXPECT_NEAR(a.extent_c, b.h, 1e-12);
  }
}

TEST(EIoU, PerfectMatchLimitIsZero) {
  const auto cells = valid_cells(4);
  std::vector<double> y(cells.size(), 0.0);
  y[1] = 1;
  y[5] = 1;
  auto t = eiou_terms(y, y, cells);
  EXPECT_NEAR(t.total, 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(t.iou, 1.0);
  EXPECT_EQ(t.center_term, 0.0);
  EXPECT_EQ(t.v, 0.0);
  EXPECT_EQ(t.aspect_term, 0.0);
}

TEST(EIoU, NoEntitiesGivesZero) {
  std::mt19937_64 rng(3);
  auto s = random_scores(rng, 3, 5, -2, 2);
  GoldTensor y(3, 5, 5);
  auto r = eiou_loss(s, y);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(EIoU, TwoTokenAnchor) {
  // Value and gradient frozen from a 40-digit direct-substitution evaluation.
  ScoreTensor s(1, 2, 2);
  s.at(0, 0, 0) = -2;
  s.at(0, 0, 1) = 1;
  s.at(0, 1, 1) = -2;
  GoldTensor y(1, 2, 2);
  y.at(0, 0, 1) = 1;
  auto r = eiou_loss(s, y);
  EXPECT_NEAR(r.value, 0.5344659248082924423, 1e-9);
  const auto& t = r.breakdown->at(0);
  EXPECT_NEAR(t.iou, 0.59032229389567698659, 1e-12);
  EXPECT_NEAR(t.center_term, 0.0073792944199109393204, 1e-12);
  EXPECT_NEAR(t.v, 0.0, 1e-15);
  EXPECT_NEAR(r.grad.at(0, 0, 0), 0.088412553340527873903, 1e-9);
  EXPECT_NEAR(r.grad.at(0, 0, 1), -0.27115898110391136754, 1e-9);
  EXPECT_NEAR(r.grad.at(0, 1, 1), 0.088412553340527873903, 1e-9);
  EXPECT_LT(finite_diff_check([&](const ScoreTensor& x) { return eiou_loss(x, y); }, s), 1e-6);
}

TEST(EIoU, MatchesDirectSubstitution) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int len = 2 + trial % 7, classes = 1 + trial % 4;
    auto s = random_scores(rng, classes, len, -4, 4);
    auto y = random_gold(rng, classes, len, -1, trial % 3 != 0);
    EXPECT_LT(rel(eiou_loss(s, y).value, oracle::direct_eiou(s, y)), 1e-12) << trial;
    const auto loss = eiou_loss(s, y);
    for (const auto& [c, t] : *loss.breakdown) {
      const auto d = oracle::direct_eiou_class(s, y, c);
      EXPECT_NEAR(t.iou, d.iou, 1e-12);
      EXPECT_NEAR(t.center_term, d.center, 1e-12);
      EXPECT_NEAR(t.v, d.v, 1e-12);
    }
  }
}

TEST(EIoU, TermBounds) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto s = random_scores(rng, 2, 3 + trial % 6, -6, 6);
    auto y = random_gold(rng, 2, 3 + trial % 6);
    const auto loss = eiou_loss(s, y);
    for (const auto& [c, t] : *loss.breakdown) {
      EXPECT_GT(t.iou, 0.0);
      EXPECT_LE(t.iou, 1.0);
      EXPECT_GE(t.center_term, 0.0);
      EXPECT_LE(t.center_term, 1.0);
      EXPECT_GE(t.v, 0.0);
      EXPECT_LT(t.v, 1.0);
      EXPECT_GE(t.aspect_term, 0.0);
      EXPECT_GE(t.total, 0.0);
    }
  }
}

TEST(EIoU, VanishingPredictedMassStaysFinite) {
  // Every probability far below the mass guard; the loss is still defined.
  std::mt19937_64 rng(15);
  for (int len : {1, 3, 5}) {
    auto s = random_scores(rng, 2, len, -45, -35);
    auto y = random_gold(rng, 2, len);
    const auto r = eiou_loss(s, y);
    ASSERT_TRUE(std::isfinite(r.value));
    EXPECT_LT(rel(r.value, oracle::direct_eiou(s, y)), 1e-12);
    for (double g : r.grad.data()) EXPECT_TRUE(std::isfinite(g));
    LossFn fn = [&](const ScoreTensor& x) { return eiou_loss(x, y); };
    // The loss is near 40 here, so a 1e-5 step drowns the smallest gradient
    // entries in rounding; a wider step keeps the comparison meaningful.
    EXPECT_LT(finite_diff_check(fn, s, 1e-3), 1e-4) << "len " << len;
  }
}

TEST(EIoU, NegLogIouFallsAsPredictionApproachesGold) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  const auto cells = valid_cells(5);
  std::vector<double> p(cells.size()), y(cells.size(), 0.0);
  for (auto& v : p) v = u(rng);
  y[3] = 1;
  y[9] = 1;
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 10; ++k) {
    const double a = k / 10.0;
    std::vector<double> q(p.size());
    for (std::size_t x = 0; x < p.size(); ++x) q[x] = (1 - a) * p[x] + a * y[x];
    const auto t = eiou_terms(q, y, cells);
    EXPECT_LT(t.neg_log_iou, prev);
    prev = t.neg_log_iou;
  }
  EXPECT_NEAR(prev, 0.0, 1e-12);
}

TEST(EIoU, MaskedCellsCarryNoGradient) {
  std::mt19937_64 rng(7);
  auto s = random_scores(rng, 2, 4, -2, 2, 7);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        if (!s.valid(i, j)) s.at(c, i, j) = 123.0;
  auto y = random_gold(rng, 2, 4, 7);
  for (const auto& r : {eiou_loss(s, y), emc_loss(s, y), combined_loss(s, y, 0.3).total}) {
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j)
          if (!s.valid(i, j)) {
            EXPECT_EQ(r.grad.at(c, i, j), 0.0);
          }
  }
}

TEST(EMC, ClassCases) {
  std::vector<double> none;
  std::vector<double> zero{0.0};
  EXPECT_EQ(emc_class_loss(none, zero, EmcForm::kProduct), 0.0);
  EXPECT_EQ(emc_class_loss(zero, none, EmcForm::kProduct), 0.0);
  EXPECT_NEAR(emc_class_loss(zero, zero, EmcForm::kProduct), std::log(2.0), 1e-15);
  EXPECT_NEAR(emc_class_loss(std::vector<double>{0.693147}, zero, EmcForm::kProduct), std::log1p(0.5), 1e-6);

  std::vector<double> pos{5.0}, neg{-5.0};
  EXPECT_NEAR(emc_class_loss(pos, neg, EmcForm::kProduct), 4.5398899216870535e-05, 1e-15);

  std::vector<double> big_pos{1e4, -1e4}, big_neg{1e4, -1e4};
  const double v = emc_class_loss(big_pos, big_neg, EmcForm::kProduct);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 2e4, 1e-6);
  std::vector<double> gp(2), gn(2);
  emc_class_loss(big_pos, big_neg, EmcForm::kProduct, gp, gn);
  for (double g : gp) EXPECT_TRUE(std::isfinite(g));
  for (double g : gn) EXPECT_TRUE(std::isfinite(g));
}

TEST(EMC, MatchesNaiveSum) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_scores(rng, 3, 4, -20, 20);
    auto y = random_gold(rng, 3, 4, -1, trial % 2 == 0);
    EXPECT_LT(rel(emc_loss(s, y).value, oracle::naive_emc(s, y)), 1e-9) << trial;
  }
}

TEST(EMC, AdditiveFormMatchesNaive) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_scores(rng, 2, 4, -5, 5);
    auto y = random_gold(rng, 2, 4);
    double expect = 0;
    for (int c = 0; c < 2; ++c) {
      double sn = 0, sp = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = i; j < 4; ++j) (y.at(c, i, j) ? sp : sn) += std::exp(y.at(c, i, j) ? -s.at(c, i, j) : s.at(c, i, j));
      expect += std::log1p(sn) + std::log1p(sp);
    }
    EXPECT_LT(rel(emc_loss(s, y, {EmcForm::kAdditive}).value, expect), 1e-12);
  }
}

TEST(EMC, NonNegativeAndZeroOnlyWhenDegenerate) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_scores(rng, 3, 3, -10, 10);
    auto y = random_gold(rng, 3, 3, -1, false);
    EXPECT_GT(emc_loss(s, y).value, 0.0);
  }
  auto s = random_scores(rng, 2, 3, -1, 1);
  EXPECT_EQ(emc_loss(s, GoldTensor(2, 3, 3)).value, 0.0);
  GoldTensor full(1, 1, 1);
  full.at(0, 0, 0) = 1;
  EXPECT_EQ(emc_loss(ScoreTensor(1, 1, 1), full).value, 0.0);
}

TEST(EMC, MonotoneInPositiveAndNegativeScores) {
  std::mt19937_64 rng(11);
  const double delta = 1e-3;
  for (int trial = 0; trial < 50; ++trial) {
    auto s = random_scores(rng, 2, 4, -3, 3);
    auto y = random_gold(rng, 2, 4);
    const double base = emc_loss(s, y).value;
    for (int c = 0; c < 2; ++c)
      for (const auto& cell : valid_cells(4)) {
        ScoreTensor t = s;
        t.at(c, cell.start, cell.end) += delta;
        const double moved = emc_loss(t, y).value;
        if (y.at(c, cell.start, cell.end)) {
          EXPECT_LE(moved, base);
        } else {
          EXPECT_GE(moved, base);
        }
      }
  }
}

TEST(Combined, EndpointsAndMidpoint) {
  std::mt19937_64 rng(12);
  auto s = random_scores(rng, 3, 5, -3, 3);
  auto y = random_gold(rng, 3, 5);
  const auto e = eiou_loss(s, y);
  const auto m = emc_loss(s, y);
  EXPECT_EQ(combined_loss(s, y, 1.0).total.value, e.value);
  EXPECT_EQ(combined_loss(s, y, 0.0).total.value, m.value);
  EXPECT_EQ(combined_loss(s, y, 1.0).total.grad, e.grad);
  const auto half = combined_loss(s, y, 0.5);
  EXPECT_NEAR(half.total.value, 0.5 * (e.value + m.value), 1e-12);
  for (double beta : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    const auto c = combined_loss(s, y, beta);
    for (std::size_t k = 0; k < c.total.grad.data().size(); ++k) {
      EXPECT_NEAR(c.total.grad.data()[k], beta * e.grad.data()[k] + (1 - beta) * m.grad.data()[k], 1e-12);
    }
  }
  EXPECT_THROW(combined_loss(s, y, 1.5), ConfigError);
  EXPECT_THROW(combined_loss(s, y, -0.1), ConfigError);
}

TEST(FiniteDiff, QuadraticSanity) {
  std::mt19937_64 rng(13);
  auto s = random_scores(rng, 2, 4, -2, 2);
  LossFn sq = [](const ScoreTensor& x) {
    LossResult r{0.0, ScoreTensor(x.classes(), x.padded_len(), x.length()), std::nullopt};
    for (int c = 0; c < x.classes(); ++c)
      for (int i = 0; i < x.length(); ++i)
        for (int j = i; j < x.length(); ++j) {
          r.value += x.at(c, i, j) * x.at(c, i, j);
          r.grad.at(c, i, j) = 2 * x.at(c, i, j);
        }
    return r;
  };
  // Rounding in the central difference is about eps * |f| / step.
  EXPECT_LT(finite_diff_check(sq, s), 1e-8);
}

TEST(FiniteDiff, LossesOnRandomInstances) {
  for (int k = 0; k < 40; ++k) {
    const auto inst = random_instance(instance_seed(99, k));
    const auto& y = inst.gold;
    EXPECT_LT(finite_diff_check([&](const ScoreTensor& s) { return emc_loss(s, y); }, inst.scores), 1e-4);
    EXPECT_LT(finite_diff_check([&](const ScoreTensor& s) { return emc_loss(s, y, {EmcForm::kAdditive}); }, inst.scores),
              1e-4);
    EXPECT_LT(finite_diff_check([&](const ScoreTensor& s) { return eiou_loss(s, y); }, inst.scores), 1e-4);
  }
}

TEST(Gradcheck, DefaultRunPassesAndIsDeterministic) {
  GradcheckConfig cfg;
  const auto a = run_gradcheck(cfg);
  EXPECT_TRUE(a.passed());
  const auto b = run_gradcheck(cfg);
  for (std::size_t k = 0; k < a.components.size(); ++k) {
    EXPECT_EQ(a.components[k].worst, b.components[k].worst);
    EXPECT_EQ(a.components[k].worst_seed, b.components[k].worst_seed);
  }
}

TEST(Gradcheck, DetectsFlippedEmcGradient) {
  GradcheckConfig cfg;
  cfg.instances = 3;
  cfg.emc_grad_mutator = [](ScoreTensor& g) {
    for (auto& v : g.data()) v = -v;
  };
  const auto r = run_gradcheck(cfg);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.components[0].worst, 1.0);
}
