#pragma once

// Tracking loss: penalty-reduced focal loss on the center heatmap plus GIoU
// and L1 regression on the box read out at the ground-truth peak cell.

#include <array>
#include <cstddef>

#include "vipt/foundation.hpp"
#include "vipt/geometry.hpp"
#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

struct LossWeights {
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
};

struct GtTarget {
  Box box;
  Tensor cls_target;  // [1, S, S] Gaussian splat with a single cell at 1
  std::size_t peak_index = 0;
};

// CenterNet radius for a box of `height` x `width` cells.
double gaussian_radius(double height, double width, double min_overlap = 0.7);
GtTarget make_target(const Box& box, std::size_t grid);

constexpr double kFocalAlpha = 2.0;
constexpr double kFocalGamma = 4.0;
constexpr double kProbClamp = 1e-6;

double focal_loss(const Tensor& cls_map, const Tensor& cls_target);
// Corner boxes (x1, y1, x2, y2).
double giou_loss(const std::array<double, 4>& a, const std::array<double, 4>& b);
double giou_loss(const Box& a, const Box& b);
double l1_loss(const Box& a, const Box& b);

namespace ops {
Var focal_loss(const Var& cls_map, const Tensor& cls_target);
// pred [4] as (cx, cy, w, h)
Var giou_loss(const Var& pred, const Box& target);
Var l1_loss(const Var& pred, const Box& target);
}  // namespace ops

// Box (cx, cy, w, h) read from the head maps at flat cell `index`.
Var box_at_cell(const HeadMaps& maps, std::size_t index);

struct LossParts {
  Var total;
  double cls = 0.0;
  double iou = 0.0;
  double l1 = 0.0;
};

LossParts total_loss(const HeadMaps& maps, const GtTarget& gt, const LossWeights& weights);

}  // namespace vipt
