#pragma once

// One-pass tracking evaluation: overlap, centre error, precision and
// success curves, and long-term Pr / Re / F.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "vipt/geometry.hpp"

namespace vipt {

struct FrameResult {
  std::optional<Rect> pred;  // absent: tracker reports the target as lost
  std::optional<Rect> gt;    // absent: target not in view
  std::optional<double> confidence;
};

double iou(const Rect& a, const Rect& b);
double center_error(const Rect& a, const Rect& b);

struct Curve {
  std::vector<double> thresholds;
  std::vector<double> values;
};

// Fraction of gt-present frames with centre error <= t, t = 0..50 px. A
// missing prediction counts as a miss at every threshold.
Curve precision_plot(const std::vector<FrameResult>& results);
double precision_at(const Curve& precision, double threshold_px);

// Fraction of gt-present frames with IoU > t over t = 0, 0.02, ..., 1.
Curve success_plot(const std::vector<FrameResult>& results);
double curve_mean(const Curve& curve);

double f_score(double pr, double re);

struct PrReF {
  double pr = 0.0;
  double re = 0.0;
  double f = 0.0;
  double threshold = 0.0;
};

// Pr: mean IoU over frames reported at confidence >= threshold (0 when
// nothing is reported). Re: IoU summed over reported gt-present frames,
// divided by the number of gt-present frames. Returns the F-maximizing
// threshold; ties keep the first one.
PrReF pr_re_f(const std::vector<FrameResult>& results, const std::vector<double>& thresholds);
// Sorted distinct confidences of the reported frames.
std::vector<double> confidence_thresholds(const std::vector<FrameResult>& results);

struct EvalReport {
  double precision_at_20 = 0.0;
  double success_auc = 0.0;
  double pr = 0.0;
  double re = 0.0;
  double f_score = 0.0;
  double mean_iou = 0.0;
  std::size_t frames = 0;
  Curve precision;
  Curve success;
};

EvalReport evaluate(const std::vector<FrameResult>& results);

// `x,y,w,h` or `absent` per line.
void write_results(const std::filesystem::path& path, const std::vector<std::optional<Rect>>& boxes);
std::vector<std::optional<Rect>> read_results(const std::filesystem::path& path);
void write_confidences(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_confidences(const std::filesystem::path& path);

}  // namespace vipt
