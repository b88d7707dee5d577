#pragma once

// Entity-IoU and multi-class imbalance losses over span score tensors.
//
// EIoU treats each class slice of the (start, end) plane as a detection
// problem: sigmoid(scores) forms a soft prediction region, the gold cells
// form the target region, and the loss is
//
//   -ln(IoU) + rho^2 / (b_enc^2 + c_enc^2) + v^2 / ((1 - IoU) + v)
//
// with rho the distance between soft-box centers, (b_enc, c_enc) the extents
// of the smallest enclosing box and v = 4/pi^2 (atan(b_gt/c_gt) - atan(b/c))^2.
//
// EMC couples every positive and negative cell of a class slice:
//
//   sum_c ln(1 + sum_{n in N_c} e^{s_n} sum_{m in P_c} e^{-s_m})

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eiou/common.hpp"
#include "eiou/corpus.hpp"
#include "eiou/span_tensor.hpp"

namespace eiou {

inline GoldTensor gold_tensor(const Sentence& sentence, const LabelSet& labels, int padded_len = -1) {
  const int len = sentence.length();
  GoldTensor y(labels.size(), padded_len < 0 ? len : padded_len, len);
  for (const auto& e : sentence.entities) {
    if (e.start < 0 || e.start > e.end || e.end >= len) {
      throw Error("annotation (" + std::to_string(e.start) + "," + std::to_string(e.end) +
                  ") out of range in sentence '" + sentence.id + "'");
    }
    y.at(labels.index(e.label), e.start, e.end) = 1;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Soft IoU and soft boxes

// I / U with I = sum p*y, U = sum p + sum y - I.
inline double soft_iou(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size()) throw Error("soft_iou: size mismatch");
  double inter = 0.0;
  double sum_p = 0.0;
  double sum_y = 0.0;
  for (std::size_t x = 0; x < p.size(); ++x) {
    inter += p[x] * y[x];
    sum_p += p[x];
    sum_y += y[x];
  }
  if (sum_y <= 0.0) throw Error("soft_iou: empty gold slice");
  return inter / (sum_p + sum_y - inter);
}

struct SoftBox {
  double center_row = 0.0;  // start axis
  double center_col = 0.0;  // end axis
  double extent_b = 1.0;    // spread along the start axis
  double extent_c = 1.0;    // spread along the end axis
  double mass = 0.0;

  double row_lo() const { return center_row - extent_b / 2.0; }
  double row_hi() const { return center_row + extent_b / 2.0; }
  double col_lo() const { return center_col - extent_c / 2.0; }
  double col_hi() const { return center_col + extent_c / 2.0; }
};

// Weighted center and extents 2 * (weighted mean absolute deviation) + 1.
inline SoftBox soft_box(std::span<const double> w, std::span<const Cell> cells) {
  if (w.size() != cells.size()) throw Error("soft_box: size mismatch");
  SoftBox box;
  double sr = 0.0;
  double sc = 0.0;
  for (std::size_t x = 0; x < w.size(); ++x) {
    box.mass += w[x];
    sr += w[x] * cells[x].start;
    sc += w[x] * cells[x].end;
  }
  if (!(box.mass > constants::kMassEpsilon)) throw Error("soft_box: mass below epsilon");
  box.center_row = sr / box.mass;
  box.center_col = sc / box.mass;
  double dr = 0.0;
  double dc = 0.0;
  for (std::size_t x = 0; x < w.size(); ++x) {
    dr += w[x] * std::abs(cells[x].start - box.center_row);
    dc += w[x] * std::abs(cells[x].end - box.center_col);
  }
  box.extent_b = 2.0 * dr / box.mass + 1.0;
  box.extent_c = 2.0 * dc / box.mass + 1.0;
  return box;
}

namespace detail {

inline double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

// Adds upstream gradients on a soft box's (center_row, center_col, extent_b,
// extent_c) back onto its weights.
inline void soft_box_backward(std::span<const double> w, std::span<const Cell> cells, const SoftBox& box,
                              double g_row, double g_col, double g_eb, double g_ec,
                              std::span<double> grad_w) {
  const double m = box.mass;
  double sign_r = 0.0;
  double sign_c = 0.0;
  for (std::size_t x = 0; x < w.size(); ++x) {
    sign_r += w[x] * sign(cells[x].start - box.center_row);
    sign_c += w[x] * sign(cells[x].end - box.center_col);
  }
  const double mad_r = (box.extent_b - 1.0) / 2.0;
  const double mad_c = (box.extent_c - 1.0) / 2.0;
  for (std::size_t x = 0; x < w.size(); ++x) {
    const double ur = cells[x].start - box.center_row;
    const double uc = cells[x].end - box.center_col;
    const double d_mad_r = (std::abs(ur) - sign_r * ur / m) / m - mad_r / m;
    const double d_mad_c = (std::abs(uc) - sign_c * uc / m) / m - mad_c / m;
    grad_w[x] += g_row * ur / m + g_col * uc / m + g_eb * 2.0 * d_mad_r + g_ec * 2.0 * d_mad_c;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// EIoU

struct EIoUTerms {
  double iou = 1.0;
  double neg_log_iou = 0.0;
  double center_term = 0.0;
  double v = 0.0;
  double aspect_term = 0.0;
  double total = 0.0;
};

// Per-class EIoU from probabilities p and gold indicators y on `cells`.
// When grad_p is non-empty, d(total)/d(p) is added into it.
inline EIoUTerms eiou_terms(std::span<const double> p, std::span<const double> y,
                            std::span<const Cell> cells, std::span<double> grad_p = {}) {
  if (p.size() != y.size() || p.size() != cells.size()) throw Error("eiou_terms: size mismatch");
  double inter = 0.0;
  double sum_p = 0.0;
  double sum_y = 0.0;
  double diff = 0.0;  // U - I, accumulated without cancellation
  for (std::size_t x = 0; x < p.size(); ++x) {
    inter += p[x] * y[x];
    sum_p += p[x];
    sum_y += y[x];
    diff += p[x] * (1.0 - y[x]) + y[x] * (1.0 - p[x]);
  }
  if (sum_y <= 0.0) throw Error("eiou_terms: empty gold slice");
  const double uni = sum_p + sum_y - inter;

  EIoUTerms t;
  t.iou = inter / uni;
  t.neg_log_iou = std::log(uni) - std::log(inter);
  const double w = diff / uni;  // 1 - IoU

  // The box is invariant to rescaling its weights, so the predicted box is
  // built from p / max(p). This keeps tiny probability mass above the guard.
  const double p_max = *std::max_element(p.begin(), p.end());
  if (!(p_max > 0.0)) {
    t.total = std::numeric_limits<double>::infinity();
    return t;
  }
  std::vector<double> q(p.begin(), p.end());
  for (auto& v : q) v /= p_max;

  const SoftBox gold = soft_box(y, cells);
  const SoftBox pred = soft_box(q, cells);

  const double dr = pred.center_row - gold.center_row;
  const double dc = pred.center_col - gold.center_col;
  const double rho2 = dr * dr + dc * dc;
  const bool pred_row_hi = pred.row_hi() >= gold.row_hi();
  const bool pred_row_lo = pred.row_lo() <= gold.row_lo();
  const bool pred_col_hi = pred.col_hi() >= gold.col_hi();
  const bool pred_col_lo = pred.col_lo() <= gold.col_lo();
  const double b_enc = std::max(pred.row_hi(), gold.row_hi()) - std::min(pred.row_lo(), gold.row_lo());
  const double c_enc = std::max(pred.col_hi(), gold.col_hi()) - std::min(pred.col_lo(), gold.col_lo());
  const double diag2 = b_enc * b_enc + c_enc * c_enc;
  t.center_term = rho2 / diag2;

  const double angle_gold = std::atan(gold.extent_b / gold.extent_c);
  const double angle_pred = std::atan(pred.extent_b / pred.extent_c);
  const double angle_gap = angle_gold - angle_pred;
  t.v = constants::kAspectScale * angle_gap * angle_gap;

  const bool degenerate = t.v < constants::kAspectEpsilon && w < constants::kAspectEpsilon;
  const double denom = w + t.v;
  t.aspect_term = degenerate ? 0.0 : t.v * t.v / denom;
  t.total = t.neg_log_iou + t.center_term + t.aspect_term;

  if (grad_p.empty()) return t;
  if (grad_p.size() != p.size()) throw Error("eiou_terms: gradient size mismatch");

  // Aspect term through v and w = 1 - IoU.
  const double g_v = degenerate ? 0.0 : t.v * (t.v + 2.0 * w) / (denom * denom);
  const double g_w = degenerate ? 0.0 : -t.v * t.v / (denom * denom);
  const double g_iou = -g_w;

  // Center term through the predicted center and extents.
  const double g_rho2 = 1.0 / diag2;
  const double g_diag2 = -rho2 / (diag2 * diag2);
  const double g_benc = g_diag2 * 2.0 * b_enc;
  const double g_cenc = g_diag2 * 2.0 * c_enc;
  double g_row = g_rho2 * 2.0 * dr + g_benc * ((pred_row_hi ? 1.0 : 0.0) - (pred_row_lo ? 1.0 : 0.0));
  double g_col = g_rho2 * 2.0 * dc + g_cenc * ((pred_col_hi ? 1.0 : 0.0) - (pred_col_lo ? 1.0 : 0.0));
  double g_eb = g_benc * 0.5 * ((pred_row_hi ? 1.0 : 0.0) + (pred_row_lo ? 1.0 : 0.0));
  double g_ec = g_cenc * 0.5 * ((pred_col_hi ? 1.0 : 0.0) + (pred_col_lo ? 1.0 : 0.0));

  // v depends on the predicted aspect angle atan(eb / ec).
  const double g_angle_pred = g_v * constants::kAspectScale * (-2.0 * angle_gap);
  const double r2 = pred.extent_b * pred.extent_b + pred.extent_c * pred.extent_c;
  g_eb += g_angle_pred * pred.extent_c / r2;
  g_ec += g_angle_pred * (-pred.extent_b / r2);

  for (std::size_t x = 0; x < p.size(); ++x) {
    const double d_iou = (y[x] - t.iou * (1.0 - y[x])) / uni;
    grad_p[x] += -y[x] / inter + (1.0 - y[x]) / uni + g_iou * d_iou;
  }
  std::vector<double> grad_q(q.size(), 0.0);
  detail::soft_box_backward(q, cells, pred, g_row, g_col, g_eb, g_ec, grad_q);
  for (std::size_t x = 0; x < p.size(); ++x) grad_p[x] += grad_q[x] / p_max;
  return t;
}

// class id -> terms, only for classes with at least one gold cell.
using EIoUBreakdown = std::map<int, EIoUTerms>;

struct LossResult {
  double value = 0.0;
  ScoreTensor grad;  // zero on masked cells
  std::optional<EIoUBreakdown> breakdown;
};

inline void check_shapes(const ScoreTensor& s, const GoldTensor& y) {
  if (!s.same_shape(y)) throw Error("score and gold tensor shapes differ");
}

// Mean per-class EIoU over gold-bearing classes (0 when there are none).
inline LossResult eiou_loss(const ScoreTensor& s, const GoldTensor& y) {
  check_shapes(s, y);
  LossResult out{0.0, ScoreTensor(s.classes(), s.padded_len(), s.length()), EIoUBreakdown{}};
  const auto cells = valid_cells(s.length());
  std::vector<int> gold_classes;
  for (int c = 0; c < s.classes(); ++c) {
    for (const auto& cell : cells) {
      if (y.at(c, cell.start, cell.end) != 0) {
        gold_classes.push_back(c);
        break;
      }
    }
  }
  if (gold_classes.empty()) return out;
  const double weight = 1.0 / static_cast<double>(gold_classes.size());

  std::vector<double> p(cells.size());
  std::vector<double> yv(cells.size());
  std::vector<double> grad_p(cells.size());
  for (int c : gold_classes) {
    for (std::size_t x = 0; x < cells.size(); ++x) {
      p[x] = sigmoid(s.at(c, cells[x].start, cells[x].end));
      yv[x] = y.at(c, cells[x].start, cells[x].end);
    }
    std::fill(grad_p.begin(), grad_p.end(), 0.0);
    const EIoUTerms t = eiou_terms(p, yv, cells, grad_p);
    (*out.breakdown)[c] = t;
    out.value += weight * t.total;
    for (std::size_t x = 0; x < cells.size(); ++x) {
      out.grad.at(c, cells[x].start, cells[x].end) = weight * grad_p[x] * p[x] * (1.0 - p[x]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// EMC

enum class EmcForm {
  kProduct,   // ln(1 + sum_n e^{s_n} * sum_m e^{-s_m})
  kAdditive,  // ln(1 + sum_n e^{s_n}) + ln(1 + sum_m e^{-s_m})
};

struct EMCConfig {
  EmcForm form = EmcForm::kProduct;
};

inline std::string to_string(EmcForm form) { return form == EmcForm::kProduct ? "product" : "additive"; }

inline EmcForm parse_emc_form(const std::string& s) {
  if (s == "product") return EmcForm::kProduct;
  if (s == "additive") return EmcForm::kAdditive;
  throw ConfigError("emc form must be 'product' or 'additive', got '" + s + "'");
}

namespace detail {

// log-sum-exp with max subtraction; -inf for an empty input. Fills `softmax`
// with the normalized weights.
inline double log_sum_exp(std::span<const double> v, std::vector<double>& softmax) {
  softmax.assign(v.size(), 0.0);
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    softmax[k] = std::exp(v[k] - mx);
    sum += softmax[k];
  }
  for (auto& w : softmax) w /= sum;
  return mx + std::log(sum);
}

}  // namespace detail

// Per-class EMC value for positive scores s_m and negative scores s_n.
// Gradients (if requested) are written into grad_pos / grad_neg.
inline double emc_class_loss(std::span<const double> pos, std::span<const double> neg, EmcForm form,
                             std::span<double> grad_pos = {}, std::span<double> grad_neg = {}) {
  std::vector<double> neg_pos(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) neg_pos[k] = -pos[k];
  std::vector<double> w_pos;
  std::vector<double> w_neg;
  const double lse_neg = detail::log_sum_exp(neg, w_neg);
  const double lse_pos = detail::log_sum_exp(neg_pos, w_pos);
  const bool want_grad = !grad_pos.empty() || !grad_neg.empty();

  if (form == EmcForm::kProduct) {
    if (pos.empty() || neg.empty()) return 0.0;
    const double t = lse_neg + lse_pos;
    if (want_grad) {
      const double g = sigmoid(t);
      for (std::size_t k = 0; k < pos.size(); ++k) grad_pos[k] = -g * w_pos[k];
      for (std::size_t k = 0; k < neg.size(); ++k) grad_neg[k] = g * w_neg[k];
    }
    return softplus(t);
  }

  double value = 0.0;
  if (!neg.empty()) {
    value += softplus(lse_neg);
    if (want_grad) {
      const double g = sigmoid(lse_neg);
      for (std::size_t k = 0; k < neg.size(); ++k) grad_neg[k] = g * w_neg[k];
    }
  }
  if (!pos.empty()) {
    value += softplus(lse_pos);
    if (want_grad) {
      const double g = sigmoid(lse_pos);
      for (std::size_t k = 0; k < pos.size(); ++k) grad_pos[k] = -g * w_pos[k];
    }
  }
  return value;
}

// Sum over classes. P_c = gold cells of slice c, N_c = every other valid cell
// of that slice.
inline LossResult emc_loss(const ScoreTensor& s, const GoldTensor& y, EMCConfig cfg = {}) {
  check_shapes(s, y);
  LossResult out{0.0, ScoreTensor(s.classes(), s.padded_len(), s.length()), std::nullopt};
  const auto cells = valid_cells(s.length());
  std::vector<double> pos;
  std::vector<double> neg;
  std::vector<Cell> pos_cells;
  std::vector<Cell> neg_cells;
  for (int c = 0; c < s.classes(); ++c) {
    pos.clear();
    neg.clear();
    pos_cells.clear();
    neg_cells.clear();
    for (const auto& cell : cells) {
      const double v = s.at(c, cell.start, cell.end);
      if (y.at(c, cell.start, cell.end) != 0) {
        pos.push_back(v);
        pos_cells.push_back(cell);
      } else {
        neg.push_back(v);
        neg_cells.push_back(cell);
      }
    }
    std::vector<double> grad_pos(pos.size());
    std::vector<double> grad_neg(neg.size());
    out.value += emc_class_loss(pos, neg, cfg.form, grad_pos, grad_neg);
    for (std::size_t k = 0; k < pos.size(); ++k) out.grad.at(c, pos_cells[k].start, pos_cells[k].end) = grad_pos[k];
    for (std::size_t k = 0; k < neg.size(); ++k) out.grad.at(c, neg_cells[k].start, neg_cells[k].end) = grad_neg[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Combined objective

struct CombinedLoss {
  LossResult total;
  double eiou = 0.0;
  double emc = 0.0;
};

// beta * EIoU + (1 - beta) * EMC.
inline CombinedLoss combined_loss(const ScoreTensor& s, const GoldTensor& y, double beta, EMCConfig emc_cfg = {}) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  LossResult a = eiou_loss(s, y);
  LossResult b = emc_loss(s, y, emc_cfg);
  CombinedLoss out;
  out.eiou = a.value;
  out.emc = b.value;
  out.total.value = beta * a.value + (1.0 - beta) * b.value;
  out.total.grad = ScoreTensor(s.classes(), s.padded_len(), s.length());
  auto& g = out.total.grad.data();
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = beta * a.grad.data()[k] + (1.0 - beta) * b.grad.data()[k];
  out.total.breakdown = std::move(a.breakdown);
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference checking

using LossFn = std::function<LossResult(const ScoreTensor&)>;

// Max over valid cells of |analytic - central difference| / max(|a|, |n|, floor).
inline double finite_diff_check(const LossFn& loss_fn, const ScoreTensor& s, double step = 1e-5) {
  const LossResult base = loss_fn(s);
  ScoreTensor probe = s;
  double worst = 0.0;
  for (int c = 0; c < s.classes(); ++c) {
    for (const auto& cell : valid_cells(s.length())) {
      double& v = probe.at(c, cell.start, cell.end);
      const double orig = v;
      v = orig + step;
      const double up = loss_fn(probe).value;
      v = orig - step;
      const double down = loss_fn(probe).value;
      v = orig;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(base.grad.at(c, cell.start, cell.end), numeric));
    }
  }
  return worst;
}

inline nlohmann::json breakdown_json(const EIoUBreakdown& b, const LabelSet& labels) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [c, t] : b) {
    out[labels.name(c)] = {{"iou", t.iou},
                           {"neg_log_iou", t.neg_log_iou},
                           {"center_term", t.center_term},
                           {"v", t.v},
                           {"aspect_term", t.aspect_term},
                           {"total", t.total}};
  }
  return out;
}

}  // namespace eiou
