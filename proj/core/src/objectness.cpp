#include "capg/objectness.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <tuple>

#include "capg/error.hpp"
#include "capg/parallel.hpp"

namespace capg {

std::string_view to_string(Criterion criterion) {
  switch (criterion) {
    case Criterion::MinEdgeGradient:
      return "min-edge-gradient";
    case Criterion::AverageActivation:
      return "average-activation";
    case Criterion::InsideOutside:
      return "inside-outside-contrast";
  }
  return "unknown";
}

Criterion parse_criterion(std::string_view name) {
  for (Criterion c :
       {Criterion::MinEdgeGradient, Criterion::AverageActivation, Criterion::InsideOutside}) {
    if (name == to_string(c)) return c;
  }
  throw InvalidArgument("unknown criterion '" + std::string(name) + "'");
}

void ScoringConfig::validate() const {
  if (!(margin_fraction > 0.0 && margin_fraction < 0.5)) {
    throw InvalidArgument("margin fraction must lie in (0, 0.5)");
  }
  if (!(beta >= 0.0)) throw InvalidArgument("beta must be non-negative");
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw InvalidArgument("NMS IoU must lie in [0, 1]");
  if (!(border_fraction > 0.0)) throw InvalidArgument("border fraction must be positive");
}

namespace {

int thickness(int side, double fraction) {
  return std::max(1, static_cast<int>(std::lround(fraction * side)));
}

// Mean over rect, or 0 for an empty rect (outside the raster).
double mean_or_zero(const IntegralImage& ii, const PixelRect& rect) {
  return rect.area() > 0 ? ii.rect_mean(rect) : 0.0;
}

template <typename ScoreFn>
ClassScore best_over_maps(std::span<const ActivationMap> maps, ScoreFn&& score) {
  if (maps.empty()) throw InvalidArgument("box scoring needs at least one activation map");
  ClassScore best{0.0, -1};
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const double s = score(maps[m]);
    if (m == 0 || s > best.score) best = {s, maps[m].class_word()};
  }
  return best;
}

PixelRect pixel_box(const ActivationMap& map, const Box& box) {
  return to_pixel_rect(box, map.rows(), map.cols());
}

double objectness_on(const ActivationMap& map, const PixelRect& rect, const ScoringConfig& cfg) {
  const IntegralImage& ii = map.integral();
  double weakest = 0.0;
  for (std::size_t k = 0; k < kEdges.size(); ++k) {
    const EdgeStrips s = edge_strips(rect, kEdges[k], map.rows(), map.cols(), cfg.margin_fraction);
    const double g = ii.rect_mean(s.inner) - mean_or_zero(ii, s.outer);
    weakest = k == 0 ? g : std::min(weakest, g);
  }
  return cfg.beta * ii.rect_mean(rect) + weakest;
}

}  // namespace

EdgeStrips edge_strips(const PixelRect& box, Edge edge, std::size_t rows, std::size_t cols,
                       double margin_fraction) {
  if (box.height() <= 0 || box.width() <= 0) throw InvalidRect("edge strips of an empty box");
  const int nr = static_cast<int>(rows);
  const int nc = static_cast<int>(cols);
  const int tw = thickness(box.width(), margin_fraction);
  const int th = thickness(box.height(), margin_fraction);
  switch (edge) {
    case Edge::Left:
      return {{box.row0, box.col0, box.row1, box.col0 + tw},
              {box.row0, std::max(0, box.col0 - tw), box.row1, box.col0}};
    case Edge::Right:
      return {{box.row0, box.col1 - tw, box.row1, box.col1},
              {box.row0, box.col1, box.row1, std::min(nc, box.col1 + tw)}};
    case Edge::Top:
      return {{box.row0, box.col0, box.row0 + th, box.col1},
              {std::max(0, box.row0 - th), box.col0, box.row0, box.col1}};
    case Edge::Bottom:
      return {{box.row1 - th, box.col0, box.row1, box.col1},
              {box.row1, box.col0, std::min(nr, box.row1 + th), box.col1}};
  }
  throw InvalidArgument("unknown edge");
}

double edge_gradient(const ActivationMap& map, const Box& box, Edge edge,
                     const ScoringConfig& cfg) {
  const EdgeStrips s =
      edge_strips(pixel_box(map, box), edge, map.rows(), map.cols(), cfg.margin_fraction);
  return map.integral().rect_mean(s.inner) - mean_or_zero(map.integral(), s.outer);
}

ClassScore box_objectness(std::span<const ActivationMap> maps, const Box& box,
                          const ScoringConfig& cfg) {
  return best_over_maps(maps, [&](const ActivationMap& map) {
    return objectness_on(map, pixel_box(map, box), cfg);
  });
}

ClassScore baseline_avg_activation(std::span<const ActivationMap> maps, const Box& box) {
  return best_over_maps(maps, [&](const ActivationMap& map) {
    return map.integral().rect_mean(pixel_box(map, box));
  });
}

ClassScore baseline_inside_outside(std::span<const ActivationMap> maps, const Box& box,
                                   double border_fraction) {
  return best_over_maps(maps, [&](const ActivationMap& map) {
    const IntegralImage& ii = map.integral();
    const PixelRect inner = pixel_box(map, box);
    const int bw = static_cast<int>(std::lround(border_fraction * inner.width()));
    const int bh = static_cast<int>(std::lround(border_fraction * inner.height()));
    const PixelRect outer{std::max(0, inner.row0 - bh), std::max(0, inner.col0 - bw),
                          std::min(static_cast<int>(map.rows()), inner.row1 + bh),
                          std::min(static_cast<int>(map.cols()), inner.col1 + bw)};
    const long ring_area = outer.area() - inner.area();
    const double inside_sum = ii.rect_sum(inner);
    const double ring_mean =
        ring_area > 0 ? (ii.rect_sum(outer) - inside_sum) / static_cast<double>(ring_area) : 0.0;
    return inside_sum / static_cast<double>(inner.area()) - ring_mean;
  });
}

ClassScore score_box(std::span<const ActivationMap> maps, const Box& box,
                     const ScoringConfig& cfg) {
  switch (cfg.criterion) {
    case Criterion::MinEdgeGradient:
      return box_objectness(maps, box, cfg);
    case Criterion::AverageActivation:
      return baseline_avg_activation(maps, box);
    case Criterion::InsideOutside:
      return baseline_inside_outside(maps, box, cfg.border_fraction);
  }
  throw InvalidArgument("unknown criterion");
}

std::vector<Box> score_proposals(std::span<const ActivationMap> maps,
                                 std::span<const Box> proposals, const ScoringConfig& cfg) {
  cfg.validate();
  std::vector<Box> out(proposals.begin(), proposals.end());
  parallel_for(out.size(), [&](std::size_t i) {
    const ClassScore s = score_box(maps, out[i], cfg);
    out[i].score = s.score;
    out[i].class_id = s.class_word;
  });
  return out;
}

std::vector<Box> nms(std::span<const Box> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<Box> kept;
  for (std::size_t i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Box& k) {
      return iou(k, boxes[i]) > iou_threshold;
    });
    if (!suppressed) kept.push_back(boxes[i]);
  }
  return kept;
}

std::vector<Box> select_pseudo_gt(std::span<const ActivationMap> maps,
                                  std::span<const Box> proposals, const ScoringConfig& cfg) {
  if (proposals.empty()) throw InvalidArgument("select_pseudo_gt: no proposals");
  std::vector<Box> kept = nms(score_proposals(maps, proposals, cfg), cfg.nms_iou);
  if (kept.size() > cfg.top_k) kept.resize(cfg.top_k);
  return kept;
}

std::vector<Box> grid_proposals(std::size_t grid_steps, std::span<const double> scales,
                                std::span<const double> aspects) {
  if (grid_steps == 0) throw InvalidArgument("grid_proposals: steps must be positive");
  for (double v : scales) {
    if (!(v > 0.0)) throw InvalidArgument("grid_proposals: scales must be positive");
  }
  for (double v : aspects) {
    if (!(v > 0.0)) throw InvalidArgument("grid_proposals: aspects must be positive");
  }
  // Dedup key quantized to 1e-9 so clipped twins compare equal.
  const auto key = [](const Box& b) {
    const auto q = [](double x) { return std::llround(x * 1e9); };
    return std::make_tuple(q(b.xmin), q(b.ymin), q(b.xmax), q(b.ymax));
  };
  std::set<std::tuple<long long, long long, long long, long long>> seen;
  std::vector<Box> out;
  const double n = static_cast<double>(grid_steps);
  for (std::size_t i = 0; i < grid_steps; ++i) {
    for (std::size_t j = 0; j < grid_steps; ++j) {
      const double cy = (static_cast<double>(i) + 0.5) / n;
      const double cx = (static_cast<double>(j) + 0.5) / n;
      for (double s : scales) {
        for (double a : aspects) {
          const double half_w = 0.5 * s * std::sqrt(a);
          const double half_h = 0.5 * s / std::sqrt(a);
          const Box b = make_box(cx - half_w, cy - half_h, cx + half_w, cy + half_h);
          if (seen.insert(key(b)).second) out.push_back(b);
        }
      }
    }
  }
  return out;
}

std::vector<Box> lattice_proposals(std::size_t grid, std::size_t min_cells, std::size_t max_cells) {
  if (grid == 0 || min_cells == 0 || min_cells > max_cells) {
    throw InvalidArgument("lattice_proposals: need 1 <= min_cells <= max_cells and grid > 0");
  }
  max_cells = std::min(max_cells, grid);
  std::vector<Box> out;
  for (std::size_t h = min_cells; h <= max_cells; ++h) {
    for (std::size_t w = min_cells; w <= max_cells; ++w) {
      for (std::size_t r = 0; r + h <= grid; ++r) {
        for (std::size_t c = 0; c + w <= grid; ++c) {
          out.push_back(make_box(cell_boundary(c, grid), cell_boundary(r, grid),
                                 cell_boundary(c + w, grid), cell_boundary(r + h, grid)));
        }
      }
    }
  }
  return out;
}

}  // namespace capg
