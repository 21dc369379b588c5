#include "capg/evalkit.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "capg/error.hpp"

namespace capg {

std::size_t MatchResult::true_positives() const {
  return static_cast<std::size_t>(
      std::count_if(gt_index.begin(), gt_index.end(), [](const auto& g) { return g.has_value(); }));
}

MatchResult match_detections(std::span<const Box> detections, std::span<const Box> ground_truth,
                             double iou_threshold, bool class_aware) {
  MatchResult m;
  m.gt_index.assign(detections.size(), std::nullopt);
  m.iou.assign(detections.size(), 0.0);
  m.gt_covered.assign(ground_truth.size(), false);
  const std::vector<Box> dets(detections.begin(), detections.end());
  for (std::size_t d : order_by_score(dets)) {
    std::optional<std::size_t> best;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (m.gt_covered[g]) continue;
      if (class_aware && detections[d].class_id != ground_truth[g].class_id) continue;
      const double v = iou(detections[d], ground_truth[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best) {
      m.gt_index[d] = best;
      m.iou[d] = best_iou;
      m.gt_covered[*best] = true;
    }
  }
  return m;
}

std::vector<Box> top_k(std::span<const Box> boxes, std::size_t k) {
  const std::vector<Box> all(boxes.begin(), boxes.end());
  std::vector<Box> out;
  for (std::size_t i : order_by_score(all)) {
    if (out.size() == k) break;
    out.push_back(all[i]);
  }
  return out;
}

namespace {

const std::vector<Box> kNoBoxes;

const std::vector<Box>& boxes_of(const BoxSet& set, const std::string& image) {
  const auto it = set.find(image);
  return it == set.end() ? kNoBoxes : it->second;
}

std::set<std::string> all_images(const BoxSet& a, const BoxSet& b) {
  std::set<std::string> ids;
  for (const auto& [id, _] : a) ids.insert(id);
  for (const auto& [id, _] : b) ids.insert(id);
  return ids;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

PrecisionRecall precision_recall_at_k(const BoxSet& detections, const BoxSet& ground_truth,
                                      std::size_t k, double iou_threshold, bool class_aware) {
  std::size_t tp = 0;
  std::size_t retained = 0;
  std::size_t positives = 0;
  for (const auto& id : all_images(detections, ground_truth)) {
    const auto dets = top_k(boxes_of(detections, id), k);
    const auto& gts = boxes_of(ground_truth, id);
    tp += match_detections(dets, gts, iou_threshold, class_aware).true_positives();
    retained += dets.size();
    positives += gts.size();
  }
  return {ratio(tp, retained), ratio(tp, positives)};
}

PRCurve average_precision(const BoxSet& detections, const BoxSet& ground_truth, int class_id,
                          double iou_threshold, ApIntegration integration) {
  struct Ranked {
    const std::string* image;
    const Box* box;
  };
  std::vector<Ranked> ranked;
  for (const auto& [id, boxes] : detections) {
    for (const Box& b : boxes) {
      if (b.class_id == class_id) ranked.push_back({&id, &b});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.box->score > b.box->score; });

  std::map<std::string, std::vector<const Box*>> gts;
  PRCurve curve;
  for (const auto& [id, boxes] : ground_truth) {
    for (const Box& b : boxes) {
      if (b.class_id == class_id) {
        gts[id].push_back(&b);
        ++curve.positives;
      }
    }
  }
  if (curve.positives == 0 || ranked.empty()) return curve;

  std::map<std::string, std::vector<bool>> used;
  for (const auto& [id, list] : gts) used[id].assign(list.size(), false);
  std::size_t tp = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto it = gts.find(*ranked[r].image);
    if (it != gts.end()) {
      auto& taken = used[it->first];
      std::optional<std::size_t> best;
      double best_iou = iou_threshold;
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (taken[g]) continue;
        const double v = iou(*ranked[r].box, *it->second[g]);
        if (v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      if (best) {
        taken[*best] = true;
        ++tp;
      }
    }
    curve.recall.push_back(ratio(tp, curve.positives));
    curve.precision.push_back(ratio(tp, r + 1));
  }

  const std::size_t n = curve.recall.size();
  if (integration == ApIntegration::AllPoint) {
    // Precision envelope: best precision at this recall or any later point.
    std::vector<double> envelope(curve.precision);
    for (std::size_t i = n - 1; i-- > 0;) envelope[i] = std::max(envelope[i], envelope[i + 1]);
    double previous = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      curve.ap += (curve.recall[i] - previous) * envelope[i];
      previous = curve.recall[i];
    }
  } else {
    for (int t = 0; t <= 10; ++t) {
      const double threshold = t / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (curve.recall[i] >= threshold) best = std::max(best, curve.precision[i]);
      }
      curve.ap += best / 11.0;
    }
  }
  return curve;
}

MeanAp mean_average_precision(const BoxSet& detections, const BoxSet& ground_truth,
                              double iou_threshold, ApIntegration integration) {
  std::set<int> classes;
  for (const auto& [_, boxes] : ground_truth) {
    for (const Box& b : boxes) {
      if (!b.class_id) throw InvalidArgument("class-aware evaluation needs labelled ground truth");
      classes.insert(*b.class_id);
    }
  }
  MeanAp out;
  for (int c : classes) {
    out.per_class[c] = average_precision(detections, ground_truth, c, iou_threshold, integration).ap;
    out.map += out.per_class[c];
  }
  if (!classes.empty()) out.map /= static_cast<double>(classes.size());
  return out;
}

std::vector<double> average_recall_at_k(const BoxSet& detections, const BoxSet& ground_truth,
                                        std::span<const std::size_t> ks, double iou_threshold,
                                        bool class_aware) {
  std::vector<double> out;
  for (std::size_t k : ks) {
    double total = 0.0;
    std::size_t images = 0;
    for (const auto& [id, gts] : ground_truth) {
      if (gts.empty()) continue;
      const auto dets = top_k(boxes_of(detections, id), k);
      total += ratio(match_detections(dets, gts, iou_threshold, class_aware).true_positives(),
                     gts.size());
      ++images;
    }
    out.push_back(images == 0 ? 0.0 : total / static_cast<double>(images));
  }
  return out;
}

double vocabulary_recall(std::span<const std::string> mined, std::span<const std::string> targets,
                         const std::map<std::string, std::vector<std::string>>& alias_map) {
  if (targets.empty()) return 0.0;
  const std::set<std::string> have(mined.begin(), mined.end());
  std::size_t hits = 0;
  for (const auto& target : targets) {
    bool hit = have.contains(target);
    if (!hit) {
      if (const auto it = alias_map.find(target); it != alias_map.end()) {
        hit = std::any_of(it->second.begin(), it->second.end(),
                          [&](const std::string& alias) { return have.contains(alias); });
      }
    }
    if (hit) ++hits;
  }
  return ratio(hits, targets.size());
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["mAP"] = map;
  j["per_class_ap"] = per_class_ap;
  nlohmann::json pk = nlohmann::json::object();
  for (const auto& [k, pr] : at_k) {
    pk["P@" + std::to_string(k)] = pr.precision;
    pk["R@" + std::to_string(k)] = pr.recall;
  }
  j["precision_recall"] = pk;
  nlohmann::json ar = nlohmann::json::object();
  for (const auto& [k, v] : average_recall) ar["AR@" + std::to_string(k)] = v;
  j["average_recall"] = ar;
  j["images"] = images;
  j["detections"] = detections;
  j["ground_truth"] = ground_truth;
  return j;
}

namespace {

std::string class_name(std::span<const std::string> names, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= names.size()) {
    throw InvalidArgument("class id " + std::to_string(id) + " has no name");
  }
  return names[static_cast<std::size_t>(id)];
}

}  // namespace

MetricsReport evaluate_detections(const BoxSet& detections, const BoxSet& ground_truth,
                                  std::span<const std::string> class_names,
                                  const EvalOptions& options) {
  MetricsReport r;
  r.images = all_images(detections, ground_truth).size();
  for (const auto& [_, b] : detections) r.detections += b.size();
  for (const auto& [_, b] : ground_truth) r.ground_truth += b.size();
  if (options.class_aware) {
    const MeanAp m =
        mean_average_precision(detections, ground_truth, options.iou_threshold, options.integration);
    for (const auto& [c, ap] : m.per_class) r.per_class_ap[class_name(class_names, c)] = ap;
    r.map = m.map;
  }
  for (std::size_t k : options.precision_ks) {
    r.at_k[k] = precision_recall_at_k(detections, ground_truth, k, options.iou_threshold,
                                      options.class_aware);
  }
  const auto ar = average_recall_at_k(detections, ground_truth, options.recall_ks,
                                      options.iou_threshold, options.class_aware);
  for (std::size_t i = 0; i < ar.size(); ++i) r.average_recall[options.recall_ks[i]] = ar[i];
  return r;
}

std::string pr_curves_csv(const BoxSet& detections, const BoxSet& ground_truth,
                          std::span<const std::string> class_names, const EvalOptions& options) {
  std::set<int> classes;
  for (const auto& [_, boxes] : ground_truth) {
    for (const Box& b : boxes) {
      if (b.class_id) classes.insert(*b.class_id);
    }
  }
  std::ostringstream out;
  out.precision(17);
  out << "class,rank,recall,precision\n";
  for (int c : classes) {
    const PRCurve curve = average_precision(detections, ground_truth, c, options.iou_threshold,
                                            options.integration);
    for (std::size_t i = 0; i < curve.recall.size(); ++i) {
      out << class_name(class_names, c) << ',' << i + 1 << ',' << curve.recall[i] << ','
          << curve.precision[i] << '\n';
    }
  }
  return out.str();
}

}  // namespace capg
