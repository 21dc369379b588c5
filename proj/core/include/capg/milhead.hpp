#pragma once

// Multiple-instance classification head.
//
// Each image is a bag of proposal boxes kept because they overlap a pseudo
// ground-truth box. A linear layer scores every box for every class; the bag's
// class probability is a softmax over the per-class maximum box score, so only
// the most confident box per class receives gradient. Labels come from exact
// word matches in the caption.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capg/box.hpp"
#include "capg/grounding.hpp"
#include "capg/objectness.hpp"

namespace capg {

/// y_c = 1 for every class word present in the caption, normalized to sum to
/// 1; all zero when no class word occurs.
std::vector<double> extract_labels(const Caption& caption, std::span<const std::size_t> class_words);

/// True when the label vector has any mass (the image can supervise the head).
bool labels_usable(std::span<const double> labels);

/// Proposals whose best IoU against any pseudo ground-truth box exceeds the
/// threshold, in input order.
std::vector<Box> match_boxes(std::span<const Box> proposals, std::span<const Box> pseudo_gt,
                             double iou_threshold = 0.5);

/// Mean of the feature-map cells whose centres (see cell_center) fall inside
/// the box. A box that covers no centre uses the cell nearest to its own centre.
std::vector<double> box_feature(const Grid3D& fmap, const Box& box);

struct InstanceBag {
  std::string image_id;
  std::vector<Box> boxes;
  std::vector<double> features;  // boxes.size() x feature_dim
  std::size_t feature_dim = 0;
  std::vector<double> labels;

  std::size_t size() const noexcept { return boxes.size(); }
  std::span<const double> feature(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }
};

/// Throws InvalidArgument when boxes is empty.
InstanceBag make_bag(std::string image_id, const Grid3D& fmap, std::vector<Box> boxes,
                     std::vector<double> labels);

struct MilParams {
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> weights;  // classes x feature_dim
  std::vector<double> bias;     // classes

  static MilParams zeros(std::size_t classes, std::size_t feature_dim);
  static MilParams random_uniform(std::size_t classes, std::size_t feature_dim,
                                  std::uint64_t seed, double range = 0.01);

  /// Throws ShapeError on inconsistent sizes and NumericalError on non-finite values.
  void validate() const;
  bool operator==(const MilParams&) const = default;
};

/// P x C row-major box-class scores.
std::vector<double> instance_scores(const InstanceBag& bag, const MilParams& params);

/// Softmax over the per-class column maxima of a P x C score matrix.
std::vector<double> mil_probability(std::span<const double> scores, std::size_t boxes,
                                    std::size_t classes);

/// Cross-entropy -sum y_c log P_c. Probabilities at labelled classes are
/// clamped to at least 1e-12 (with a logged warning).
double mil_loss(std::span<const double> probability, std::span<const double> labels);

struct MilGradients {
  double loss = 0.0;
  MilParams grads;
};

/// Loss of one bag and its gradient. The gradient of each class maximum goes
/// to the single box attaining it (lowest index on ties).
MilGradients mil_gradients(const InstanceBag& bag, const MilParams& params);

struct MilConfig {
  double learning_rate = 5.0;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
};

/// Full-batch gradient descent on the mean loss over usable bags (bags with
/// at least one box and a non-zero label vector). Throws InvalidArgument when
/// no bag is usable and NumericalError on a non-finite loss.
MilParams train_mil(std::span<const InstanceBag> bags, MilParams initial, const MilConfig& config);

/// Fraction of usable bags whose single highest box-class score names a
/// labelled class.
double mil_accuracy(std::span<const InstanceBag> bags, const MilParams& params);

struct DetectConfig {
  ScoringConfig scoring;
  CamOptions cam;
  std::size_t top_k = 100;
};

/// Scores every proposal against the class-word CAMs with cfg.scoring, applies
/// NMS on that score, keeps top_k, then multiplies each survivor's objectness
/// by its largest class probability. class_id is a position in class_words.
/// With mil == nullptr every class is equally likely and class 0 is reported.
std::vector<Box> detect(const Grid3D& fmap, std::span<const Box> proposals,
                        const GroundingParams& grounding, const MilParams* mil,
                        std::span<const std::size_t> class_words, const DetectConfig& cfg = {});

}  // namespace capg
