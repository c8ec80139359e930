#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "oseg/dataio.hpp"
#include "oseg/geometry.hpp"
#include "oseg/net.hpp"

namespace oseg {

inline double iou_box(const Box& a, const Box& b) { return box_iou(a, b); }
inline double iou_mask(const Bitmask& a, const Bitmask& b) { return mask_iou(a, b); }

/// One prediction after matching: kept in confidence order per class.
struct ScoredPrediction {
  double confidence = 0.0;
  bool is_tp = false;
  double matched_iou = 0.0;  // 0 for false positives
  int class_id = 0;
};

struct MatchResult {
  std::vector<int> tp, fp, fn;             // per class
  std::vector<ScoredPrediction> scored;    // per prediction, input order
  std::vector<int> unmatched_gt;           // ground-truth indices left unmatched

  int tp_total() const;
};

/// Greedy confidence-priority matching: each prediction takes the highest-IoU
/// unmatched same-class ground truth at or above the threshold (ties: lower
/// GT index). Predictions must arrive sorted by confidence descending.
MatchResult match_instances(const std::vector<int>& pred_classes,
                            const std::vector<int>& gt_classes,
                            const std::function<double(int, int)>& iou_fn, int num_classes,
                            double threshold = 0.5);

/// Eq. 1 and Eq. 2 with the 0/0 -> 0 convention.
std::pair<double, double> precision_recall(int tp, int fp, int fn);

/// All-point interpolated AP (monotone precision envelope) over recall.
/// `scored` must be sorted by confidence descending.
double average_precision(const std::vector<ScoredPrediction>& scored, int total_gt);

struct CurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PRCurve {
  std::vector<CurvePoint> points;  // `samples` evenly spaced thresholds in [0,1]
  double ap = 0.0;
  double best_f1 = 0.0;
  double best_f1_threshold = 0.0;  // lowest threshold among ties
};

PRCurve confidence_curve(const std::vector<ScoredPrediction>& scored, int total_gt,
                         int samples = 200);

/// Mean mask IoU over true-positive pairs; 0 when there are none.
double miou(const std::vector<ScoredPrediction>& scored);

// --- whole-set evaluation ---------------------------------------------------

struct ClassReport {
  std::string name;
  int gt_count = 0;
  double box_p = 0, box_r = 0, box_ap = 0;
  double mask_p = 0, mask_r = 0, mask_ap = 0;
  double miou = 0;
  PRCurve box_curve, mask_curve;
};

struct TimingReport {
  double ms_preprocess = 0, ms_inference = 0, ms_postprocess = 0;  // median per image
};

struct EvalReport {
  std::vector<ClassReport> rows;  // ordered All, Branch, Trunk
  TimingReport timing;
  int images = 0;
  int warnings = 0;  // missing prediction files etc.
};

struct EvalOptions {
  double iou_threshold = 0.5;
  int mask_resolution = 96;  // ground-truth rasterization resolution
  int curve_samples = 200;
};

/// Pools matches per class across images and fills per-class plus "All" rows.
/// "All" is the unweighted mean over classes present in the ground truth.
EvalReport evaluate(const std::vector<std::vector<PredictionRecord>>& preds_per_image,
                    const std::vector<std::vector<InstanceRecord>>& gts_per_image,
                    const EvalOptions& opts = {});

/// File-based evaluation: predictions are label lines with a trailing
/// confidence; boxes come from polygon hulls, masks from rasterization.
/// A missing prediction file counts as zero predictions plus one warning.
EvalReport evaluate_files(const std::vector<std::string>& pred_files,
                          const std::vector<std::string>& gt_files, const EvalOptions& opts = {});

std::string report_to_csv(const EvalReport& report);
EvalReport report_from_csv(const std::string& csv);
std::string report_to_json(const EvalReport& report);
std::string curve_to_csv(const PRCurve& curve);

}  // namespace oseg
