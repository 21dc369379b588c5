#include "capg/milhead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <spdlog/spdlog.h>

#include "capg/error.hpp"
#include "capg/parallel.hpp"
#include "capg/rng.hpp"

namespace capg {

namespace {
constexpr double kProbabilityFloor = 1e-12;
}

std::vector<double> extract_labels(const Caption& caption,
                                   std::span<const std::size_t> class_words) {
  if (class_words.empty()) throw InvalidArgument("extract_labels: empty class list");
  std::vector<double> y(class_words.size(), 0.0);
  double count = 0.0;
  for (std::size_t c = 0; c < class_words.size(); ++c) {
    const int word = static_cast<int>(class_words[c]);
    if (std::find(caption.tokens.begin(), caption.tokens.end(), word) != caption.tokens.end()) {
      y[c] = 1.0;
      count += 1.0;
    }
  }
  if (count > 0.0) {
    for (double& v : y) v /= count;
  }
  return y;
}

bool labels_usable(std::span<const double> labels) {
  return std::any_of(labels.begin(), labels.end(), [](double v) { return v > 0.0; });
}

std::vector<Box> match_boxes(std::span<const Box> proposals, std::span<const Box> pseudo_gt,
                             double iou_threshold) {
  std::vector<Box> kept;
  for (const Box& p : proposals) {
    const bool hit = std::any_of(pseudo_gt.begin(), pseudo_gt.end(),
                                 [&](const Box& g) { return iou(p, g) > iou_threshold; });
    if (hit) kept.push_back(p);
  }
  return kept;
}

std::vector<double> box_feature(const Grid3D& fmap, const Box& box) {
  if (fmap.cell_count() == 0) throw ShapeError("box_feature: empty feature map");
  const std::size_t d = fmap.channels();
  std::vector<double> out(d, 0.0);
  std::size_t count = 0;
  for (std::size_t r = 0; r < fmap.rows(); ++r) {
    const double cy = cell_center(r, fmap.rows());
    if (cy < box.ymin || cy > box.ymax) continue;
    for (std::size_t c = 0; c < fmap.cols(); ++c) {
      const double cx = cell_center(c, fmap.cols());
      if (cx < box.xmin || cx > box.xmax) continue;
      const auto f = fmap.cell(r * fmap.cols() + c);
      for (std::size_t k = 0; k < d; ++k) out[k] += f[k];
      ++count;
    }
  }
  if (count == 0) {
    const auto nearest = [](double centre, std::size_t n) {
      if (n <= 1) return std::size_t{0};
      const auto i = std::lround(centre * static_cast<double>(n - 1));
      return static_cast<std::size_t>(std::clamp(i, 0L, static_cast<long>(n) - 1));
    };
    const std::size_t r = nearest(0.5 * (box.ymin + box.ymax), fmap.rows());
    const std::size_t c = nearest(0.5 * (box.xmin + box.xmax), fmap.cols());
    const auto f = fmap.cell(r * fmap.cols() + c);
    return {f.begin(), f.end()};
  }
  for (double& v : out) v /= static_cast<double>(count);
  return out;
}

InstanceBag make_bag(std::string image_id, const Grid3D& fmap, std::vector<Box> boxes,
                     std::vector<double> labels) {
  if (boxes.empty()) throw InvalidArgument("bag '" + image_id + "' has no boxes");
  InstanceBag bag;
  bag.image_id = std::move(image_id);
  bag.feature_dim = fmap.channels();
  bag.features.reserve(boxes.size() * bag.feature_dim);
  for (const Box& b : boxes) {
    const auto f = box_feature(fmap, b);
    bag.features.insert(bag.features.end(), f.begin(), f.end());
  }
  bag.boxes = std::move(boxes);
  bag.labels = std::move(labels);
  return bag;
}

MilParams MilParams::zeros(std::size_t classes, std::size_t feature_dim) {
  if (classes == 0 || feature_dim == 0) throw ShapeError("MilParams: dimensions must be positive");
  MilParams p;
  p.classes = classes;
  p.feature_dim = feature_dim;
  p.weights.assign(classes * feature_dim, 0.0);
  p.bias.assign(classes, 0.0);
  return p;
}

MilParams MilParams::random_uniform(std::size_t classes, std::size_t feature_dim,
                                    std::uint64_t seed, double range) {
  MilParams p = zeros(classes, feature_dim);
  Rng rng(seed);
  for (double& w : p.weights) w = rng.uniform(-range, range);
  return p;
}

void MilParams::validate() const {
  if (weights.size() != classes * feature_dim || bias.size() != classes) {
    throw ShapeError("MilParams: tensor sizes do not match dims");
  }
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(weights.begin(), weights.end(), finite) ||
      !std::all_of(bias.begin(), bias.end(), finite)) {
    throw NumericalError("MilParams: non-finite value");
  }
}

std::vector<double> instance_scores(const InstanceBag& bag, const MilParams& params) {
  if (bag.feature_dim != params.feature_dim) {
    throw ShapeError("bag feature dim " + std::to_string(bag.feature_dim) + " vs head " +
                     std::to_string(params.feature_dim));
  }
  const std::size_t c_count = params.classes;
  std::vector<double> scores(bag.size() * c_count);
  for (std::size_t i = 0; i < bag.size(); ++i) {
    const auto x = bag.feature(i);
    for (std::size_t c = 0; c < c_count; ++c) {
      scores[i * c_count + c] =
          dot(std::span<const double>(params.weights.data() + c * params.feature_dim,
                                      params.feature_dim),
              x) +
          params.bias[c];
    }
  }
  return scores;
}

namespace {

// Row index of the per-class maximum; lowest row on ties.
std::vector<std::size_t> responsible_boxes(std::span<const double> scores, std::size_t boxes,
                                           std::size_t classes) {
  std::vector<std::size_t> arg(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 1; i < boxes; ++i) {
      if (scores[i * classes + c] > scores[arg[c] * classes + c]) arg[c] = i;
    }
  }
  return arg;
}

}  // namespace

std::vector<double> mil_probability(std::span<const double> scores, std::size_t boxes,
                                    std::size_t classes) {
  if (boxes == 0 || classes == 0 || scores.size() != boxes * classes) {
    throw ShapeError("mil_probability: score matrix is not P x C with P >= 1");
  }
  const auto arg = responsible_boxes(scores, boxes, classes);
  std::vector<double> maxima(classes);
  for (std::size_t c = 0; c < classes; ++c) maxima[c] = scores[arg[c] * classes + c];
  return softmax(maxima);
}

double mil_loss(std::span<const double> probability, std::span<const double> labels) {
  if (probability.size() != labels.size()) throw ShapeError("mil_loss: size mismatch");
  double loss = 0.0;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c] == 0.0) continue;
    double p = probability[c];
    if (p < kProbabilityFloor) {
      spdlog::warn("class {} probability {} clamped to {}", c, p, kProbabilityFloor);
      p = kProbabilityFloor;
    }
    loss -= labels[c] * std::log(p);
  }
  return loss;
}

MilGradients mil_gradients(const InstanceBag& bag, const MilParams& params) {
  if (bag.labels.size() != params.classes) throw ShapeError("bag labels do not match class count");
  const std::size_t c_count = params.classes;
  const std::size_t d = params.feature_dim;
  const auto scores = instance_scores(bag, params);
  const auto arg = responsible_boxes(scores, bag.size(), c_count);
  const auto prob = mil_probability(scores, bag.size(), c_count);

  MilGradients out;
  out.loss = mil_loss(prob, bag.labels);
  out.grads = MilParams::zeros(c_count, d);
  double label_mass = 0.0;
  for (double y : bag.labels) label_mass += y;
  for (std::size_t c = 0; c < c_count; ++c) {
    const double g = prob[c] * label_mass - bag.labels[c];
    const auto x = bag.feature(arg[c]);
    double* row = out.grads.weights.data() + c * d;
    for (std::size_t k = 0; k < d; ++k) row[k] = g * x[k];
    out.grads.bias[c] = g;
  }
  return out;
}

MilParams train_mil(std::span<const InstanceBag> bags, MilParams initial, const MilConfig& config) {
  initial.validate();
  if (!(config.learning_rate >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  std::vector<const InstanceBag*> usable;
  for (const auto& bag : bags) {
    if (bag.size() > 0 && labels_usable(bag.labels)) usable.push_back(&bag);
  }
  if (usable.empty()) throw InvalidArgument("train_mil: no usable bags");

  MilParams params = std::move(initial);
  const double scale = 1.0 / static_cast<double>(usable.size());
  std::vector<MilGradients> partial(usable.size());
  for (std::size_t step = 0; step < config.steps; ++step) {
    parallel_for(usable.size(), [&](std::size_t b) { partial[b] = mil_gradients(*usable[b], params); });
    double loss = 0.0;
    MilParams total = MilParams::zeros(params.classes, params.feature_dim);
    for (const auto& g : partial) {
      loss += g.loss;
      for (std::size_t i = 0; i < total.weights.size(); ++i) total.weights[i] += g.grads.weights[i];
      for (std::size_t i = 0; i < total.bias.size(); ++i) total.bias[i] += g.grads.bias[i];
    }
    if (!std::isfinite(loss)) {
      throw NumericalError("MIL loss is not finite at step " + std::to_string(step));
    }
    const double lr = config.learning_rate * scale;
    for (std::size_t i = 0; i < params.weights.size(); ++i) params.weights[i] -= lr * total.weights[i];
    for (std::size_t i = 0; i < params.bias.size(); ++i) params.bias[i] -= lr * total.bias[i];
  }
  return params;
}

double mil_accuracy(std::span<const InstanceBag> bags, const MilParams& params) {
  std::size_t usable = 0;
  std::size_t correct = 0;
  for (const auto& bag : bags) {
    if (bag.size() == 0 || !labels_usable(bag.labels)) continue;
    ++usable;
    const auto scores = instance_scores(bag, params);
    const auto best = static_cast<std::size_t>(
        std::max_element(scores.begin(), scores.end()) - scores.begin());
    if (bag.labels[best % params.classes] > 0.0) ++correct;
  }
  return usable == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(usable);
}

std::vector<Box> detect(const Grid3D& fmap, std::span<const Box> proposals,
                        const GroundingParams& grounding, const MilParams* mil,
                        std::span<const std::size_t> class_words, const DetectConfig& cfg) {
  if (class_words.empty()) throw InvalidArgument("detect: empty class list");
  if (mil != nullptr && mil->classes != class_words.size()) {
    throw ShapeError("MIL head class count does not match the class list");
  }
  const auto maps = class_activation_maps(fmap, class_words, grounding, cfg.cam);
  std::vector<Box> kept = nms(score_proposals(maps, proposals, cfg.scoring), cfg.scoring.nms_iou);
  if (kept.size() > cfg.top_k) kept.resize(cfg.top_k);

  const double uniform = 1.0 / static_cast<double>(class_words.size());
  for (Box& box : kept) {
    std::size_t best_class = 0;
    double best_prob = uniform;
    if (mil != nullptr) {
      InstanceBag bag = make_bag({}, fmap, {box}, {});
      const auto prob = mil_probability(instance_scores(bag, *mil), 1, mil->classes);
      best_class = static_cast<std::size_t>(std::max_element(prob.begin(), prob.end()) -
                                            prob.begin());
      best_prob = prob[best_class];
    }
    box.score *= best_prob;
    box.class_id = static_cast<int>(best_class);
  }
  return kept;
}

}  // namespace capg
