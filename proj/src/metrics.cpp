#include "certainnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace certainnet {

namespace {

// One PR point per distinct ranking value, highest value first; ties enter
// the curve together so monotone re-scalings of the values cannot move it.
std::vector<PrPoint> pr_points(const std::vector<double>& values,
                               const std::vector<bool>& positive,
                               size_t recall_denominator) {
  std::vector<size_t> order(values.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] > values[b]; });

  std::vector<PrPoint> points;
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) {
      if (positive[order[j]])
        ++tp;
      else
        ++fp;
      ++j;
    }
    points.push_back(PrPoint{static_cast<double>(tp) / recall_denominator,
                             static_cast<double>(tp) / (tp + fp)});
    i = j;
  }
  return points;
}

double all_point_area(const std::vector<PrPoint>& points) {
  if (points.empty()) return 0.0;
  // Monotone non-increasing precision envelope, built right to left.
  std::vector<double> env(points.size());
  double best = 0.0;
  for (size_t i = points.size(); i-- > 0;) {
    best = std::max(best, points[i].precision);
    env[i] = best;
  }
  double area = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < points.size(); ++i) {
    area += (points[i].recall - prev_recall) * env[i];
    prev_recall = points[i].recall;
  }
  return area;
}

double eleven_point_area(const std::vector<PrPoint>& points) {
  double sum = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double r = k / 10.0;
    double best = 0.0;
    for (const auto& p : points)
      if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
    sum += best;
  }
  return sum / 11.0;
}

double curve_area(const std::vector<PrPoint>& points, ApInterp interp) {
  return interp == ApInterp::AllPoint ? all_point_area(points)
                                      : eleven_point_area(points);
}

void check_sizes(size_t a, size_t b, const char* who) {
  if (a != b)
    throw std::invalid_argument(std::string(who) + ": flag list size mismatch");
}

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double h = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

MatchResult match(const std::vector<Detection>& detections,
                  const std::vector<GroundTruthBox>& ground_truths,
                  double iou_threshold) {
  MatchResult res;
  res.det_to_gt.assign(detections.size(), -1);
  res.gt_to_det.assign(ground_truths.size(), -1);

  std::vector<size_t> order(detections.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (detections[a].score != detections[b].score)
      return detections[a].score > detections[b].score;
    return a < b;
  });

  for (size_t di : order) {
    const Detection& d = detections[di];
    const Box db = d.box();
    int best_gt = -1;
    double best_iou = 0.0;
    for (size_t gi = 0; gi < ground_truths.size(); ++gi) {
      if (res.gt_to_det[gi] >= 0) continue;
      const GroundTruthBox& g = ground_truths[gi];
      if (g.image_id != d.image_id || g.class_id != d.class_id) continue;
      const double v = iou(db, g.box);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0) {
      res.det_to_gt[di] = best_gt;
      res.gt_to_det[best_gt] = static_cast<int>(di);
    }
  }
  return res;
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& is_true_positive,
                         size_t n_ground_truth, ApInterp interp,
                         std::vector<PrPoint>* curve) {
  check_sizes(scores.size(), is_true_positive.size(), "average_precision");
  if (n_ground_truth == 0)
    throw std::invalid_argument(
        "average_precision: undefined without ground truths");
  const auto points = pr_points(scores, is_true_positive, n_ground_truth);
  if (curve) *curve = points;
  return 100.0 * curve_area(points, interp);
}

double ece(const std::vector<double>& scores, const std::vector<bool>& correct,
           int n_bins, std::vector<ReliabilityBin>* bins) {
  check_sizes(scores.size(), correct.size(), "ece");
  if (n_bins < 1) throw std::invalid_argument("ece: n_bins must be >= 1");
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0))
      throw std::invalid_argument("ece: scores must lie in [0, 1]");

  std::vector<size_t> count(n_bins, 0), hits(n_bins, 0);
  std::vector<double> score_sum(n_bins, 0.0);
  for (size_t i = 0; i < scores.size(); ++i) {
    const int b = std::min(static_cast<int>(scores[i] * n_bins), n_bins - 1);
    ++count[b];
    score_sum[b] += scores[i];
    hits[b] += correct[i] ? 1 : 0;
  }

  double err = 0.0;
  const double n = static_cast<double>(scores.size());
  std::vector<ReliabilityBin> table(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    table[b].lo = static_cast<double>(b) / n_bins;
    table[b].hi = static_cast<double>(b + 1) / n_bins;
    table[b].count = count[b];
    if (count[b] > 0) {
      table[b].mean_score = score_sum[b] / count[b];
      table[b].accuracy = static_cast<double>(hits[b]) / count[b];
      err += (count[b] / n) * std::abs(table[b].mean_score - table[b].accuracy);
    }
  }
  if (bins) *bins = std::move(table);
  return scores.empty() ? 0.0 : 100.0 * err;
}

double uncertainty_error(const std::vector<double>& u,
                         const std::vector<bool>& correct) {
  check_sizes(u.size(), correct.size(), "uncertainty_error");
  if (u.empty()) throw std::invalid_argument("uncertainty_error: empty input");
  for (double v : u)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("uncertainty_error: u must lie in [0, 1]");

  size_t n_correct = 0;
  for (bool c : correct) n_correct += c ? 1 : 0;
  const size_t n_incorrect = u.size() - n_correct;

  std::vector<double> taus = u;
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  const size_t n_distinct = taus.size();
  for (size_t i = 0; i + 1 < n_distinct; ++i)
    taus.push_back(0.5 * (taus[i] + taus[i + 1]));
  taus.push_back(taus[0] - 1.0);  // reject-all

  double best = 1.0;
  for (double tau : taus) {
    size_t high_correct = 0, low_incorrect = 0;
    for (size_t i = 0; i < u.size(); ++i) {
      if (correct[i] && u[i] > tau) ++high_correct;
      if (!correct[i] && u[i] <= tau) ++low_incorrect;
    }
    double e;
    if (n_correct > 0 && n_incorrect > 0)
      e = 0.5 * high_correct / n_correct + 0.5 * low_incorrect / n_incorrect;
    else if (n_correct > 0)
      e = static_cast<double>(high_correct) / n_correct;
    else
      e = static_cast<double>(low_incorrect) / n_incorrect;
    best = std::min(best, e);
  }
  return 100.0 * best;
}

std::optional<double> aupr_in(const std::vector<double>& scores,
                              const std::vector<bool>& correct) {
  check_sizes(scores.size(), correct.size(), "aupr_in");
  size_t n_pos = 0;
  for (bool c : correct) n_pos += c ? 1 : 0;
  if (n_pos == 0) return std::nullopt;
  return 100.0 * all_point_area(pr_points(scores, correct, n_pos));
}

std::optional<double> aupr_out(const std::vector<double>& scores,
                               const std::vector<bool>& correct) {
  check_sizes(scores.size(), correct.size(), "aupr_out");
  size_t n_neg = 0;
  for (bool c : correct) n_neg += c ? 0 : 1;
  if (n_neg == 0) return std::nullopt;
  std::vector<double> inverted(scores.size());
  std::vector<bool> positive(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    inverted[i] = 1.0 - scores[i];
    positive[i] = !correct[i];
  }
  return 100.0 * all_point_area(pr_points(inverted, positive, n_neg));
}

std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<bool>& correct,
                            std::vector<RocPoint>* curve) {
  check_sizes(scores.size(), correct.size(), "auroc");
  size_t n_pos = 0;
  for (bool c : correct) n_pos += c ? 1 : 0;
  const size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> points{RocPoint{0.0, 0.0}};
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (correct[order[j]])
        ++tp;
      else
        ++fp;
      ++j;
    }
    points.push_back(RocPoint{static_cast<double>(fp) / n_neg,
                              static_cast<double>(tp) / n_pos});
    i = j;
  }

  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i)
    area += (points[i].fpr - points[i - 1].fpr) *
            0.5 * (points[i].tpr + points[i - 1].tpr);
  if (curve) *curve = std::move(points);
  return 100.0 * area;
}

double calibration_error(const std::vector<MatchedPair>& pairs,
                         CalibrationSignal signal) {
  if (pairs.empty())
    throw std::invalid_argument("calibration_error: no matched pairs");
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& p : pairs) {
    if (p.det.w <= 0.0 || p.det.h <= 0.0)
      throw std::invalid_argument(
          "calibration_error: predicted sizes must be positive");
    if (signal == CalibrationSignal::Location) {
      sum_a += std::abs(p.det.u_x - std::abs(p.det.cx - p.gt.box.cx()) / p.det.w);
      sum_b += std::abs(p.det.u_y - std::abs(p.det.cy - p.gt.box.cy()) / p.det.h);
    } else {
      sum_a += std::abs(p.det.u_w - std::abs(p.det.w - p.gt.box.w) / p.det.w);
      sum_b += std::abs(p.det.u_h - std::abs(p.det.h - p.gt.box.h) / p.det.h);
    }
  }
  const double n = static_cast<double>(pairs.size());
  return 0.5 * (100.0 * sum_a / n + 100.0 * sum_b / n);
}

UbqResult ubq(const Box& gt, const Box& inner, const Box& outer) {
  const double tol = 1e-9;
  if (inner.x < outer.x - tol || inner.y < outer.y - tol ||
      inner.x2() > outer.x2() + tol || inner.y2() > outer.y2() + tol)
    throw std::invalid_argument("ubq: inner box must lie inside outer box");

  UbqResult r;
  const double a_in = inner.area();
  r.ibq = a_in > 0.0 ? intersection_area(gt, inner) / a_in : 0.0;
  const double a_gt = gt.area();
  r.obq = a_gt > 0.0 ? intersection_area(gt, outer) / a_gt : 0.0;
  const double rw = outer.w > 0.0 ? inner.w / outer.w : 0.0;
  const double rh = outer.h > 0.0 ? inner.h / outer.h : 0.0;
  r.br = 0.5 * (rw + rh);
  r.ubq = 0.5 * (r.ibq + r.obq) * r.br;
  return r;
}

void EvalConfig::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("EvalConfig: iou_threshold must be in (0, 1]");
  if (ece_bins < 1) throw std::invalid_argument("EvalConfig: ece_bins must be >= 1");
  if (boundary_scale <= 0.0)
    throw std::invalid_argument("EvalConfig: boundary_scale must be positive");
}

EvalReport evaluate(const std::vector<Detection>& detections,
                    const std::vector<GroundTruthBox>& ground_truths,
                    const EvalConfig& cfg) {
  cfg.validate();
  EvalReport rep;
  rep.n_detections = detections.size();
  rep.n_ground_truth = ground_truths.size();

  const MatchResult m = match(detections, ground_truths, cfg.iou_threshold);
  rep.true_positives = m.true_positives();
  rep.false_positives = m.false_positives();
  rep.false_negatives = m.false_negatives();

  std::vector<double> scores(detections.size());
  std::vector<double> u_obj(detections.size());
  std::vector<bool> correct(detections.size());
  for (size_t i = 0; i < detections.size(); ++i) {
    scores[i] = detections[i].score;
    u_obj[i] = detections[i].u_obj;
    correct[i] = m.det_to_gt[i] >= 0;
  }

  if (!ground_truths.empty())
    rep.ap = average_precision(scores, correct, ground_truths.size(),
                               cfg.ap_interp, &rep.pr_curve);
  if (!detections.empty()) {
    rep.aupr_in = aupr_in(scores, correct);
    rep.aupr_out = aupr_out(scores, correct);
    rep.auroc = auroc(scores, correct, &rep.roc_curve);
    rep.ece = ece(scores, correct, cfg.ece_bins, &rep.reliability);
    rep.ue = uncertainty_error(u_obj, correct);
    double sum = 0.0;
    for (double v : u_obj) sum += v;
    rep.mean_u_obj = sum / detections.size();
  }

  std::vector<MatchedPair> pairs;
  for (size_t i = 0; i < detections.size(); ++i)
    if (m.det_to_gt[i] >= 0)
      pairs.push_back(MatchedPair{detections[i], ground_truths[m.det_to_gt[i]]});

  if (!pairs.empty()) {
    rep.ce_loc = calibration_error(pairs, CalibrationSignal::Location);
    rep.ce_dims = calibration_error(pairs, CalibrationSignal::Dimensions);

    double uq_loc = 0, b_loc = 0, uq_dims = 0, b_dims = 0;
    for (const auto& p : pairs) {
      const auto [in_loc, out_loc] =
          boundaries_from(p.det.cx, p.det.cy, p.det.w, p.det.h, p.det.u_x,
                          p.det.u_y, 0.0, 0.0, cfg.boundary_scale);
      const auto [in_dims, out_dims] =
          boundaries_from(p.det.cx, p.det.cy, p.det.w, p.det.h, 0.0, 0.0,
                          p.det.u_w, p.det.u_h, cfg.boundary_scale);
      const UbqResult q_loc = ubq(p.gt.box, in_loc, out_loc);
      const UbqResult q_dims = ubq(p.gt.box, in_dims, out_dims);
      uq_loc += q_loc.ubq;
      b_loc += q_loc.br;
      uq_dims += q_dims.ubq;
      b_dims += q_dims.br;
    }
    const double n = static_cast<double>(pairs.size());
    rep.ubq_loc = 100.0 * uq_loc / n;
    rep.br_loc = 100.0 * b_loc / n;
    rep.ubq_dims = 100.0 * uq_dims / n;
    rep.br_dims = 100.0 * b_dims / n;
  }
  return rep;
}

std::string report_to_text(const EvalReport& report) {
  std::string out;
  auto put_count = [&](const char* key, double v) {
    out += key;
    out += " = ";
    out += format_value(v);
    out += "\n";
  };
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) put_count(key, *v);
  };
  put_count("n_detections", static_cast<double>(report.n_detections));
  put_count("n_ground_truth", static_cast<double>(report.n_ground_truth));
  put_count("true_positives", report.true_positives);
  put_count("false_positives", report.false_positives);
  put_count("false_negatives", report.false_negatives);
  put("ap", report.ap);
  put("aupr_in", report.aupr_in);
  put("aupr_out", report.aupr_out);
  put("auroc", report.auroc);
  put("ece", report.ece);
  put("ue", report.ue);
  put("ce_loc", report.ce_loc);
  put("ce_dims", report.ce_dims);
  put("ubq_loc", report.ubq_loc);
  put("br_loc", report.br_loc);
  put("ubq_dims", report.ubq_dims);
  put("br_dims", report.br_dims);
  put("mean_u_obj", report.mean_u_obj);
  return out;
}

}  // namespace certainnet
