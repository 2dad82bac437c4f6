#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "diffdet/detector.hpp"
#include "diffdet/pointops.hpp"

namespace diffdet::evalkit {

using detector::ScoredBox;

/// Predictions and ground truth for one scene; AP pools ranked predictions
/// across scenes but matches within a scene.
struct DetectionSet {
  std::vector<ScoredBox> preds;
  std::vector<BoundingBox3D> gts;
};

/// All-point interpolated average precision for one class. Predictions are
/// ranked by descending score (ties by scene then slot order) and matched
/// greedily to the highest-IoU unmatched same-class GT with IoU >= iou_thresh.
/// Returns nullopt when the class has no ground-truth instance.
std::optional<double> average_precision(const std::vector<DetectionSet>& scenes, int class_id,
                                        double iou_thresh);

struct EvalResult {
  std::vector<std::optional<double>> ap25;  // indexed by class
  std::vector<std::optional<double>> ap50;
  std::optional<double> map25;
  std::optional<double> map50;
  std::optional<double> pseudo_precision;
  std::optional<double> pseudo_recall;

  std::string to_json(const std::string& config_hash) const;
};

/// Unweighted mean over classes that appear in the ground truth, at IoU 0.25
/// and 0.5.
EvalResult mean_ap(const std::vector<DetectionSet>& scenes, int n_classes);

/// Class-aware greedy matching at the given IoU; precision of an empty
/// prediction set is 1 (vacuous), recall of an empty GT set is 1.
std::pair<double, double> pseudo_label_precision_recall(
    const std::vector<DetectionSet>& scenes, double iou_thresh = 0.25);

}  // namespace diffdet::evalkit
