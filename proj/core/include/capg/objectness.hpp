#pragma once

// Box scoring against class activation maps.
//
// The edge-gradient criterion rewards boxes whose four edges all sit on a
// sharp activation drop: for each edge, the mean activation of a thin strip
// just inside the edge minus that of the matching strip just outside. A box
// scores beta * (mean inside activation) + (weakest of its four edges), maxed
// over classes. Two simpler criteria are kept for comparison.

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "capg/activation_map.hpp"
#include "capg/box.hpp"

namespace capg {

enum class Edge { Left, Right, Top, Bottom };
inline constexpr std::array<Edge, 4> kEdges = {Edge::Left, Edge::Right, Edge::Top, Edge::Bottom};

enum class Criterion { MinEdgeGradient, AverageActivation, InsideOutside };

/// "min-edge-gradient", "average-activation", "inside-outside-contrast".
std::string_view to_string(Criterion criterion);
/// Throws InvalidArgument on an unknown name.
Criterion parse_criterion(std::string_view name);

struct ScoringConfig {
  double margin_fraction = 0.02;
  double beta = 0.005;
  double nms_iou = 0.5;
  std::size_t top_k = 5;
  Criterion criterion = Criterion::MinEdgeGradient;
  double border_fraction = 0.2;  // inside-outside ring width, per axis

  /// Throws InvalidArgument unless 0 < margin_fraction < 0.5, beta >= 0,
  /// 0 <= nms_iou <= 1 and border_fraction > 0.
  void validate() const;
};

/// Inner and outer strip of one box edge. The outer strip is clamped to the
/// raster and may have zero area for boxes touching the border.
struct EdgeStrips {
  PixelRect inner;
  PixelRect outer;
};

/// Strip thickness is max(1, round(margin_fraction * side)) pixels, where side
/// is the box width for the left/right edges and its height for top/bottom.
EdgeStrips edge_strips(const PixelRect& box, Edge edge, std::size_t rows, std::size_t cols,
                       double margin_fraction);

/// Inner strip mean minus outer strip mean; the inner mean alone when the
/// outer strip is empty.
double edge_gradient(const ActivationMap& map, const Box& box, Edge edge,
                     const ScoringConfig& cfg = {});

struct ClassScore {
  double score = 0.0;
  int class_word = -1;
};

/// max over maps of [beta * mean(box) + min over edges of edge_gradient].
/// Ties go to the map listed first. Throws InvalidArgument on an empty list.
ClassScore box_objectness(std::span<const ActivationMap> maps, const Box& box,
                          const ScoringConfig& cfg = {});

/// max over maps of the mean activation inside the box.
ClassScore baseline_avg_activation(std::span<const ActivationMap> maps, const Box& box);

/// max over maps of mean(inside) - mean(surrounding ring). The ring extends
/// round(border_fraction * side) pixels per axis, clamped to the raster; an
/// empty ring counts as zero activation.
ClassScore baseline_inside_outside(std::span<const ActivationMap> maps, const Box& box,
                                   double border_fraction = 0.2);

/// Dispatches on cfg.criterion.
ClassScore score_box(std::span<const ActivationMap> maps, const Box& box,
                     const ScoringConfig& cfg = {});

/// Copies of the proposals with score and class_id set, in input order.
std::vector<Box> score_proposals(std::span<const ActivationMap> maps,
                                 std::span<const Box> proposals, const ScoringConfig& cfg = {});

/// Greedy class-agnostic suppression: visits boxes by descending score (input
/// order among equals) and drops any box whose IoU with a kept box exceeds
/// the threshold.
std::vector<Box> nms(std::span<const Box> boxes, double iou_threshold);

/// score_proposals, nms, then the top_k survivors. Throws InvalidArgument on
/// an empty proposal list.
std::vector<Box> select_pseudo_gt(std::span<const ActivationMap> maps,
                                  std::span<const Box> proposals, const ScoringConfig& cfg = {});

/// Sliding windows centred at ((j + 0.5) / steps, (i + 0.5) / steps) for every
/// scale s and aspect a (width s * sqrt(a), height s / sqrt(a)), clipped to the
/// unit square. Duplicates after clipping are dropped; order is row, column,
/// scale, aspect.
std::vector<Box> grid_proposals(std::size_t grid_steps, std::span<const double> scales,
                                std::span<const double> aspects);

/// Every box whose edges lie on the cell boundaries of an n x n feature grid
/// (see cell_boundary) and that spans min_cells..max_cells cells on each axis.
/// Order is height, width, top row, left column.
std::vector<Box> lattice_proposals(std::size_t grid, std::size_t min_cells, std::size_t max_cells);

}  // namespace capg
