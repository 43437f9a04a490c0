#include "vipt/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vipt/ops.hpp"

namespace vipt {

double gaussian_radius(double height, double width, double min_overlap) {
  const double b1 = height + width;
  const double c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;

  const double b2 = 2 * (height + width);
  const double c2 = (1 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;

  const double a3 = 4 * min_overlap;
  const double b3 = -2 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

GtTarget make_target(const Box& box, std::size_t grid) {
  if (grid == 0) throw std::invalid_argument("make_target: empty grid");
  const double s = static_cast<double>(grid);
  const auto cell = [&](double v) {
    return static_cast<std::size_t>(std::clamp(std::floor(v * s), 0.0, s - 1));
  };
  const std::size_t col = cell(box.cx), row = cell(box.cy);
  const double radius = std::max(0.0, std::floor(gaussian_radius(box.h * s, box.w * s)));
  const double sigma = (2 * radius + 1) / 6;

  GtTarget gt{box, Tensor({1, grid, grid}), row * grid + col};
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const double di = static_cast<double>(i) - static_cast<double>(row);
      const double dj = static_cast<double>(j) - static_cast<double>(col);
      double v = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      if (v < 1e-12) v = 0.0;
      gt.cls_target.at(0, i, j) = v;
    }
  }
  return gt;
}

namespace {

void check_focal_inputs(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) throw DimensionError("focal_loss", pred.shape(), target.shape());
  for (double y : target.values()) {
    if (!(y >= 0.0 && y <= 1.0)) throw std::invalid_argument("focal_loss: target value outside [0, 1]");
  }
}

// Loss value, and d(loss)/d(pred) into `grad` when non-null.
double focal_impl(const Tensor& pred, const Tensor& target, std::vector<double>* grad) {
  check_focal_inputs(pred, target);
  std::size_t positives = 0;
  for (double y : target.values()) positives += y == 1.0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(positives, 1));
  double loss = 0.0;
  if (grad) grad->assign(pred.size(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool clamped = pred[i] < kProbClamp || pred[i] > 1 - kProbClamp;
    const double p = std::clamp(pred[i], kProbClamp, 1 - kProbClamp);
    const double y = target[i];
    double value, slope;
    if (y == 1.0) {
      const double q = 1 - p;
      value = -q * q * std::log(p);
      slope = 2 * q * std::log(p) - q * q / p;
    } else {
      const double w = std::pow(1 - y, kFocalGamma);
      value = -w * p * p * std::log(1 - p);
      slope = -w * (2 * p * std::log(1 - p) - p * p / (1 - p));
    }
    loss += value;
    if (grad && !clamped) (*grad)[i] = slope * norm;
  }
  return loss * norm;
}

struct GiouGrad {
  double loss = 0.0;
  std::array<double, 4> d{};  // w.r.t. a's corners (x1, y1, x2, y2)
};

GiouGrad giou_impl(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const auto [ax1, ay1, ax2, ay2] = a;
  const auto [bx1, by1, bx2, by2] = b;
  if (ax2 < ax1 || ay2 < ay1 || bx2 < bx1 || by2 < by1) {
    throw std::invalid_argument("giou_loss: boxes must have non-negative width and height");
  }

  const double iw_raw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih_raw = std::min(ay2, by2) - std::max(ay1, by1);
  const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
  const double inter = iw * ih;
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  const double area_b = (bx2 - bx1) * (by2 - by1);
  const double uni = area_a + area_b - inter;
  const double cw = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double ch = std::max(ay2, by2) - std::min(ay1, by1);
  const double hull = cw * ch;

  const double iou = uni > 0 ? inter / uni : 0.0;
  const double giou = hull > 0 ? iou - (hull - uni) / hull : iou;

  // Partials w.r.t. (x1, y1, x2, y2) of a.
  const std::array<double, 4> d_iw{iw_raw > 0 && ax1 >= bx1 ? -1.0 : 0.0, 0.0, iw_raw > 0 && ax2 <= bx2 ? 1.0 : 0.0, 0.0};
  const std::array<double, 4> d_ih{0.0, ih_raw > 0 && ay1 >= by1 ? -1.0 : 0.0, 0.0, ih_raw > 0 && ay2 <= by2 ? 1.0 : 0.0};
  const std::array<double, 4> d_area{-(ay2 - ay1), -(ax2 - ax1), ay2 - ay1, ax2 - ax1};
  const std::array<double, 4> d_cw{ax1 <= bx1 ? -1.0 : 0.0, 0.0, ax2 >= bx2 ? 1.0 : 0.0, 0.0};
  const std::array<double, 4> d_ch{0.0, ay1 <= by1 ? -1.0 : 0.0, 0.0, ay2 >= by2 ? 1.0 : 0.0};

  GiouGrad out;
  out.loss = 1 - giou;
  for (std::size_t k = 0; k < 4; ++k) {
    const double d_inter = d_iw[k] * ih + iw * d_ih[k];
    const double d_uni = d_area[k] - d_inter;
    const double d_iou = uni > 0 ? (d_inter * uni - inter * d_uni) / (uni * uni) : 0.0;
    const double d_hull = d_cw[k] * ch + cw * d_ch[k];
    const double d_pen = hull > 0 ? (d_uni * hull - uni * d_hull) / (hull * hull) : 0.0;
    out.d[k] = -(d_iou + d_pen);
  }
  return out;
}

}  // namespace

double focal_loss(const Tensor& cls_map, const Tensor& cls_target) { return focal_impl(cls_map, cls_target, nullptr); }

double giou_loss(const std::array<double, 4>& a, const std::array<double, 4>& b) { return giou_impl(a, b).loss; }

double giou_loss(const Box& a, const Box& b) { return giou_loss(a.corners(), b.corners()); }

double l1_loss(const Box& a, const Box& b) {
  const auto x = a.as_array(), y = b.as_array();
  double s = 0.0;
  for (std::size_t k = 0; k < 4; ++k) s += std::abs(x[k] - y[k]);
  return s / 4;
}

namespace ops {

Var focal_loss(const Var& cls_map, const Tensor& cls_target) {
  auto grad = std::vector<double>();
  const double loss = focal_impl(cls_map.value(), cls_target, &grad);
  const std::size_t ix = cls_map.id();
  return cls_map.tape().record(Tensor::scalar(loss), {cls_map}, [ix, grad = std::move(grad)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < grad.size(); ++i) d[i] += g * grad[i];
  });
}

namespace {
Box box_of(const Var& pred) {
  const Tensor& v = pred.value();
  if (v.size() != 4) throw DimensionError("box loss: prediction must hold 4 values, got " + shape_str(v.shape()));
  return {v[0], v[1], std::max(0.0, v[2]), std::max(0.0, v[3])};
}
}  // namespace

Var giou_loss(const Var& pred, const Box& target) {
  const Box b = box_of(pred);
  const GiouGrad r = giou_impl(b.corners(), target.corners());
  // corners -> (cx, cy, w, h)
  const std::array<double, 4> d{r.d[0] + r.d[2], r.d[1] + r.d[3], (r.d[2] - r.d[0]) / 2, (r.d[3] - r.d[1]) / 2};
  const std::size_t ix = pred.id();
  return pred.tape().record(Tensor::scalar(r.loss), {pred}, [ix, d](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& out = t.grad_buffer(ix);
    for (std::size_t k = 0; k < 4; ++k) out[k] += g * d[k];
  });
}

Var l1_loss(const Var& pred, const Box& target) {
  const Tensor& v = pred.value();
  if (v.size() != 4) throw DimensionError("l1_loss: prediction must hold 4 values, got " + shape_str(v.shape()));
  const auto y = target.as_array();
  std::array<double, 4> sign{};
  double s = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double diff = v[k] - y[k];
    s += std::abs(diff);
    sign[k] = diff > 0 ? 0.25 : (diff < 0 ? -0.25 : 0.0);
  }
  const std::size_t ix = pred.id();
  return pred.tape().record(Tensor::scalar(s / 4), {pred}, [ix, sign](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& out = t.grad_buffer(ix);
    for (std::size_t k = 0; k < 4; ++k) out[k] += g * sign[k];
  });
}

}  // namespace ops

Var box_at_cell(const HeadMaps& maps, std::size_t index) {
  const std::size_t s = maps.cls.shape().at(1);
  const std::size_t plane = s * s;
  if (index >= plane) throw DimensionError("box_at_cell: cell index outside the " + std::to_string(s) + "x" + std::to_string(s) + " grid");
  const Var offset = ops::pick(maps.offset, {index, plane + index});
  const Var size = ops::pick(maps.size, {index, plane + index});
  const double sd = static_cast<double>(s);
  const double row = static_cast<double>(index / s), col = static_cast<double>(index % s);
  return ops::affine(ops::concat_rows(offset, size), {1 / sd, 1 / sd, 1, 1}, {col / sd, row / sd, 0, 0});
}

LossParts total_loss(const HeadMaps& maps, const GtTarget& gt, const LossWeights& weights) {
  if (weights.lambda_iou < 0 || weights.lambda_l1 < 0) throw std::invalid_argument("loss weights must be non-negative");
  const Var cls = ops::focal_loss(maps.cls, gt.cls_target);
  const Var box = box_at_cell(maps, gt.peak_index);
  const Var iou = ops::giou_loss(box, gt.box);
  const Var l1 = ops::l1_loss(box, gt.box);
  const Var total = ops::add(ops::add(cls, ops::scale(iou, weights.lambda_iou)), ops::scale(l1, weights.lambda_l1));
  return {total, cls.value()[0], iou.value()[0], l1.value()[0]};
}

}  // namespace vipt
