#include "vipt/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "vipt/synthdata.hpp"

namespace vipt {

double iou(const Rect& a, const Rect& b) {
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double center_error(const Rect& a, const Rect& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

namespace {

std::size_t gt_frames(const std::vector<FrameResult>& results, const char* who) {
  std::size_t n = 0;
  for (const auto& r : results) n += r.gt.has_value();
  if (n == 0) throw std::invalid_argument(std::string(who) + ": no frames with the target present");
  return n;
}

double overlap(const FrameResult& r) { return r.pred && r.gt ? iou(*r.pred, *r.gt) : 0.0; }

}  // namespace

Curve precision_plot(const std::vector<FrameResult>& results) {
  const double n = static_cast<double>(gt_frames(results, "precision_plot"));
  Curve c;
  for (int t = 0; t <= 50; ++t) {
    std::size_t hits = 0;
    for (const auto& r : results) {
      if (r.gt && r.pred && center_error(*r.pred, *r.gt) <= t) ++hits;
    }
    c.thresholds.push_back(t);
    c.values.push_back(static_cast<double>(hits) / n);
  }
  return c;
}

double precision_at(const Curve& precision, double threshold_px) {
  for (std::size_t i = 0; i < precision.thresholds.size(); ++i) {
    if (precision.thresholds[i] == threshold_px) return precision.values[i];
  }
  throw std::out_of_range("precision curve has no threshold " + std::to_string(threshold_px));
}

Curve success_plot(const std::vector<FrameResult>& results) {
  const double n = static_cast<double>(gt_frames(results, "success_plot"));
  Curve c;
  for (int k = 0; k <= 50; ++k) {
    const double t = k / 50.0;
    std::size_t hits = 0;
    for (const auto& r : results) {
      if (r.gt && overlap(r) > t) ++hits;
    }
    c.thresholds.push_back(t);
    c.values.push_back(static_cast<double>(hits) / n);
  }
  return c;
}

double curve_mean(const Curve& curve) {
  if (curve.values.empty()) return 0.0;
  double s = 0.0;
  for (double v : curve.values) s += v;
  return s / static_cast<double>(curve.values.size());
}

double f_score(double pr, double re) { return pr + re > 0 ? 2 * pr * re / (pr + re) : 0.0; }

std::vector<double> confidence_thresholds(const std::vector<FrameResult>& results) {
  std::vector<double> t;
  for (const auto& r : results) {
    if (r.pred && r.confidence) t.push_back(*r.confidence);
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

PrReF pr_re_f(const std::vector<FrameResult>& results, const std::vector<double>& thresholds) {
  const double n_gt = static_cast<double>(gt_frames(results, "pr_re_f"));
  if (thresholds.empty()) throw std::invalid_argument("pr_re_f: no confidence thresholds");
  for (const auto& r : results) {
    if (r.pred && !r.confidence) throw std::invalid_argument("pr_re_f: reported frame without a confidence");
  }
  PrReF best;
  bool first = true;
  for (double t : thresholds) {
    double pr_sum = 0.0, re_sum = 0.0;
    std::size_t reported = 0;
    for (const auto& r : results) {
      if (!r.pred || *r.confidence < t) continue;
      ++reported;
      const double o = overlap(r);
      pr_sum += o;
      if (r.gt) re_sum += o;
    }
    PrReF cur;
    cur.pr = reported ? pr_sum / static_cast<double>(reported) : 0.0;
    cur.re = re_sum / n_gt;
    cur.f = f_score(cur.pr, cur.re);
    cur.threshold = t;
    if (first || cur.f > best.f) best = cur;
    first = false;
  }
  return best;
}

EvalReport evaluate(const std::vector<FrameResult>& results) {
  EvalReport rep;
  rep.precision = precision_plot(results);
  rep.success = success_plot(results);
  rep.precision_at_20 = precision_at(rep.precision, 20);
  rep.success_auc = curve_mean(rep.success);
  std::vector<FrameResult> scored = results;
  for (auto& r : scored) {
    if (r.pred && !r.confidence) r.confidence = 1.0;
  }
  auto thresholds = confidence_thresholds(scored);
  if (thresholds.empty()) thresholds.push_back(0.0);
  const PrReF prf = pr_re_f(scored, thresholds);
  rep.pr = prf.pr;
  rep.re = prf.re;
  rep.f_score = prf.f;
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (!r.gt) continue;
    s += overlap(r);
    ++n;
  }
  rep.mean_iou = s / static_cast<double>(n);
  rep.frames = results.size();
  return rep;
}

void write_results(const std::filesystem::path& path, const std::vector<std::optional<Rect>>& boxes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& b : boxes) out << (b ? format_rect(*b) : std::string("absent")) << '\n';
}

std::vector<std::optional<Rect>> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::optional<Rect>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line == "absent") {
      out.emplace_back();
      continue;
    }
    const Rect r = parse_rect(line);
    if (r.w < 0 || r.h < 0) throw std::invalid_argument(path.string() + ": negative box size");
    out.emplace_back(r);
  }
  return out;
}

void write_confidences(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[64];
  for (double v : values) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, ptr - buf);
    out << '\n';
  }
}

std::vector<double> read_confidences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double v = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      throw std::invalid_argument(path.string() + ": malformed confidence '" + line + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace vipt
