#pragma once

// Detection and vocabulary metrics: greedy IoU matching, precision/recall at
// k, average precision (all-point or 11-point), mean AP, average recall at k.
//
// Box sets are keyed by image id. Detections are matched greedily in
// descending score order, each to the unmatched ground-truth box with the
// highest IoU above the threshold (lowest index on ties). In class-aware mode
// a detection can only match ground truth with the same class_id.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capg/box.hpp"

namespace capg {

using BoxSet = std::map<std::string, std::vector<Box>>;

struct MatchResult {
  std::vector<std::optional<std::size_t>> gt_index;  // per detection, input order
  std::vector<double> iou;                           // per detection, 0 when unmatched
  std::vector<bool> gt_covered;                      // per ground-truth box
  std::size_t true_positives() const;
};

MatchResult match_detections(std::span<const Box> detections, std::span<const Box> ground_truth,
                             double iou_threshold = 0.5, bool class_aware = false);

/// Detections sorted by descending score (stable) and cut to k.
std::vector<Box> top_k(std::span<const Box> boxes, std::size_t k);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// Micro-averaged over every image present in either set: true positives over
/// retained detections, and over ground-truth boxes. Empty denominators give 0.
PrecisionRecall precision_recall_at_k(const BoxSet& detections, const BoxSet& ground_truth,
                                      std::size_t k, double iou_threshold = 0.5,
                                      bool class_aware = false);

enum class ApIntegration { AllPoint, ElevenPoint };

struct PRCurve {
  std::vector<double> recall;     // one point per ranked detection
  std::vector<double> precision;
  double ap = 0.0;
  std::size_t positives = 0;      // ground-truth boxes of the class
};

/// Ranked-detection AP for one class over the whole dataset. Detections of
/// the class are ranked globally by score (ties keep image-id order, then
/// input order). AP is 0 when there are no positives or no detections.
PRCurve average_precision(const BoxSet& detections, const BoxSet& ground_truth, int class_id,
                          double iou_threshold = 0.5,
                          ApIntegration integration = ApIntegration::AllPoint);

/// Per-class AP for every class with at least one ground-truth box, and their mean.
struct MeanAp {
  std::map<int, double> per_class;
  double map = 0.0;
};

MeanAp mean_average_precision(const BoxSet& detections, const BoxSet& ground_truth,
                              double iou_threshold = 0.5,
                              ApIntegration integration = ApIntegration::AllPoint);

/// Mean over images with ground truth of (matched ground truth / total), one
/// value per k.
std::vector<double> average_recall_at_k(const BoxSet& detections, const BoxSet& ground_truth,
                                        std::span<const std::size_t> ks,
                                        double iou_threshold = 0.5, bool class_aware = false);

/// Fraction of targets hit by a mined word, either verbatim or through one of
/// the target's aliases (alias_map[target]).
double vocabulary_recall(std::span<const std::string> mined, std::span<const std::string> targets,
                         const std::map<std::string, std::vector<std::string>>& alias_map = {});

struct EvalOptions {
  double iou_threshold = 0.5;
  ApIntegration integration = ApIntegration::AllPoint;
  bool class_aware = true;
  std::vector<std::size_t> precision_ks{1, 5, 10, 50, 100};
  std::vector<std::size_t> recall_ks{1, 10, 100};
};

struct MetricsReport {
  std::map<std::string, double> per_class_ap;  // keyed by class name
  double map = 0.0;
  std::map<std::size_t, PrecisionRecall> at_k;
  std::map<std::size_t, double> average_recall;
  std::size_t images = 0;
  std::size_t detections = 0;
  std::size_t ground_truth = 0;

  nlohmann::json to_json() const;
};

/// class_names[i] names class_id i.
MetricsReport evaluate_detections(const BoxSet& detections, const BoxSet& ground_truth,
                                  std::span<const std::string> class_names,
                                  const EvalOptions& options = {});

/// "class,rank,recall,precision" rows for every class with ground truth.
std::string pr_curves_csv(const BoxSet& detections, const BoxSet& ground_truth,
                          std::span<const std::string> class_names,
                          const EvalOptions& options = {});

}  // namespace capg
