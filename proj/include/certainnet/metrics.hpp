#pragma once

#include <optional>
#include <string>
#include <vector>

#include "certainnet/decode.hpp"
#include "certainnet/grid.hpp"
#include "certainnet/metrics_iou.hpp"

namespace certainnet {

struct GroundTruthBox {
  int image_id = -1;
  int class_id = 0;
  Box box;
};

// Greedy matching by descending detection score; each detection claims the
// highest-IoU unclaimed ground truth of its own class and image with
// IoU >= threshold. Score ties resolve in input order.
struct MatchResult {
  std::vector<int> det_to_gt;  // per detection, ground-truth index or -1
  std::vector<int> gt_to_det;  // per ground truth, detection index or -1

  int true_positives() const {
    int n = 0;
    for (int g : det_to_gt) n += (g >= 0);
    return n;
  }
  int false_positives() const { return static_cast<int>(det_to_gt.size()) - true_positives(); }
  int false_negatives() const { return static_cast<int>(gt_to_det.size()) - true_positives(); }
};

MatchResult match(const std::vector<Detection>& detections,
                  const std::vector<GroundTruthBox>& ground_truths,
                  double iou_threshold);

struct PrPoint {
  double recall = 0;
  double precision = 0;
};

enum class ApInterp { AllPoint, ElevenPoint };

// Area under the precision/recall curve as a percentage. Detections with equal
// scores enter the curve together (one point per distinct score), which makes
// the result invariant under strictly monotone score transforms. Throws
// std::invalid_argument when n_ground_truth is zero (undefined).
double average_precision(const std::vector<double>& scores,
                         const std::vector<bool>& is_true_positive,
                         size_t n_ground_truth, ApInterp interp = ApInterp::AllPoint,
                         std::vector<PrPoint>* curve = nullptr);

struct ReliabilityBin {
  double lo = 0, hi = 0;
  size_t count = 0;
  double mean_score = 0;
  double accuracy = 0;
};

// Expected calibration error (percent) over n_bins equal-width score bins.
// Empty input gives 0.
double ece(const std::vector<double>& scores, const std::vector<bool>& correct,
           int n_bins, std::vector<ReliabilityBin>* bins = nullptr);

// Best achievable balanced rejection error (percent): min over thresholds tau
// of 1/2 (fraction of correct with u > tau) + 1/2 (fraction of incorrect with
// u <= tau). The sweep covers every observed u, midpoints between consecutive
// distinct values, and one value below the minimum (reject-all), so with both
// classes present the result never exceeds 50. With one class empty only its
// counterpart's term is scored.
double uncertainty_error(const std::vector<double>& u,
                         const std::vector<bool>& correct);

// Precision/recall area (percent) with correct detections as positives ranked
// by score. Absent when there are no positives.
std::optional<double> aupr_in(const std::vector<double>& scores,
                              const std::vector<bool>& correct);

// Same, with incorrect detections as positives ranked by (1 - score). Absent
// when there are no negatives.
std::optional<double> aupr_out(const std::vector<double>& scores,
                               const std::vector<bool>& correct);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
};

// Trapezoidal ROC area (percent), ties grouped. Absent unless both classes
// are present.
std::optional<double> auroc(const std::vector<double>& scores,
                            const std::vector<bool>& correct,
                            std::vector<RocPoint>* curve = nullptr);

struct MatchedPair {
  Detection det;
  GroundTruthBox gt;
};

enum class CalibrationSignal { Location, Dimensions };

// Mean absolute gap (percent) between predicted uncertainty and the measured
// normalized error, averaged over the two axes of the chosen signal.
// Throws std::invalid_argument on an empty set.
double calibration_error(const std::vector<MatchedPair>& pairs,
                         CalibrationSignal signal);

// Quality of an (inner, outer) confidence-box pair against ground truth.
// All fields are fractions in [0, 1].
struct UbqResult {
  double ubq = 0;
  double br = 0;
  double ibq = 0;
  double obq = 0;
};

// inner must lie inside outer (checked); zero-area inner scores ibq 0.
UbqResult ubq(const Box& gt, const Box& inner, const Box& outer);

struct EvalConfig {
  double iou_threshold = 0.5;
  int ece_bins = 10;
  ApInterp ap_interp = ApInterp::AllPoint;
  double boundary_scale = 1.0;  // k used for the per-signal confidence boxes

  void validate() const;
};

struct EvalReport {
  size_t n_detections = 0;
  size_t n_ground_truth = 0;
  int true_positives = 0;
  int false_positives = 0;
  int false_negatives = 0;

  // Percentages; absent when undefined on the given inputs.
  std::optional<double> ap, aupr_in, aupr_out, auroc, ece, ue;
  std::optional<double> ce_loc, ce_dims;
  std::optional<double> ubq_loc, br_loc, ubq_dims, br_dims;
  std::optional<double> mean_u_obj;  // fraction in [0,1], not a percentage

  std::vector<PrPoint> pr_curve;
  std::vector<ReliabilityBin> reliability;
  std::vector<RocPoint> roc_curve;
};

// Matches once, then derives every metric from that matching. Correctness for
// the objectness metrics means "matched at the IoU threshold". The location
// and dimensions box-quality scores use confidence boxes rebuilt from only
// that signal's uncertainties.
EvalReport evaluate(const std::vector<Detection>& detections,
                    const std::vector<GroundTruthBox>& ground_truths,
                    const EvalConfig& cfg);

// key = value lines; absent metrics are omitted.
std::string report_to_text(const EvalReport& report);

}  // namespace certainnet
