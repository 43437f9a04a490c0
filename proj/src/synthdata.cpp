#include "vipt/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace vipt {

namespace fs = std::filesystem;

// ---- PNM --------------------------------------------------------------------

namespace {

void write_pnm(const fs::path& path, const Image8& image, const char* magic, std::size_t channels) {
  if (image.channels != channels) {
    throw ImageFormatError(path.string() + ": expected " + std::to_string(channels) + " channel image");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const fs::path& path) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) throw ImageFormatError(path.string() + ": truncated header");
  return token;
}

std::size_t header_number(std::istream& in, const fs::path& path) {
  const std::string tok = header_token(in, path);
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v == 0) {
    throw ImageFormatError(path.string() + ": malformed header field '" + tok + "'");
  }
  return v;
}

}  // namespace

void write_ppm(const fs::path& path, const Image8& image) { write_pnm(path, image, "P6", 3); }
void write_pgm(const fs::path& path, const Image8& image) { write_pnm(path, image, "P5", 1); }

Image8 read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetIntegrityError("missing image file " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  std::size_t channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw ImageFormatError(path.string() + ": unsupported magic '" + magic + "'");
  }
  const std::size_t width = header_number(in, path);
  const std::size_t height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval != 255) throw ImageFormatError(path.string() + ": only 8-bit images are supported");
  Image8 image(width, height, channels);
  in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw ImageFormatError(path.string() + ": truncated pixel data");
  }
  return image;
}

// ---- generation -------------------------------------------------------------

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("scene spec: " + m); };
  if (num_frames == 0) fail("num_frames must be positive");
  if (height == 0 || width == 0) fail("canvas must be non-empty");
  if (!(min_size > 0) || min_size > max_size) fail("size range must satisfy 0 < min_size <= max_size");
  if (max_size + 2 > static_cast<double>(std::min(height, width))) fail("target larger than canvas");
  if (!(rgb_corruption_rate >= 0 && rgb_corruption_rate <= 1)) fail("rgb_corruption_rate must be in [0, 1]");
  if (!(aux_noise >= 0)) fail("aux_noise must be non-negative");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

struct Walker {
  double cx, cy, vx, vy;
};

void step_walker(Walker& w, std::mt19937_64& rng, double half_w, double half_h, double width, double height) {
  std::normal_distribution<double> accel(0.0, 0.4);
  w.vx += accel(rng);
  w.vy += accel(rng);
  const double speed = std::hypot(w.vx, w.vy);
  if (speed > 3.0) {
    w.vx *= 3.0 / speed;
    w.vy *= 3.0 / speed;
  }
  w.cx += w.vx;
  w.cy += w.vy;
  const double lo_x = half_w + 1, hi_x = width - half_w - 1;
  const double lo_y = half_h + 1, hi_y = height - half_h - 1;
  if (w.cx < lo_x) { w.cx = 2 * lo_x - w.cx; w.vx = -w.vx; }
  if (w.cx > hi_x) { w.cx = 2 * hi_x - w.cx; w.vx = -w.vx; }
  if (w.cy < lo_y) { w.cy = 2 * lo_y - w.cy; w.vy = -w.vy; }
  if (w.cy > hi_y) { w.cy = 2 * hi_y - w.cy; w.vy = -w.vy; }
  w.cx = std::clamp(w.cx, lo_x, hi_x);
  w.cy = std::clamp(w.cy, lo_y, hi_y);
}

bool covers(TargetShape shape, double cx, double cy, double w, double h, double px, double py) {
  const double dx = (px - cx) / (w / 2), dy = (py - cy) / (h / 2);
  if (shape == TargetShape::kSquare) return std::abs(dx) <= 1 && std::abs(dy) <= 1;
  return dx * dx + dy * dy <= 1;
}

template <typename Fn>
void paint(Image8& img, TargetShape shape, const Walker& at, double w, double h, Fn&& value) {
  const std::size_t x0 = static_cast<std::size_t>(std::max(0.0, std::floor(at.cx - w / 2)));
  const std::size_t y0 = static_cast<std::size_t>(std::max(0.0, std::floor(at.cy - h / 2)));
  const std::size_t x1 = std::min(img.width, static_cast<std::size_t>(std::ceil(at.cx + w / 2)) + 1);
  const std::size_t y1 = std::min(img.height, static_cast<std::size_t>(std::ceil(at.cy + h / 2)) + 1);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x)
      if (covers(shape, at.cx, at.cy, w, h, x + 0.5, y + 0.5))
        for (std::size_t c = 0; c < img.channels; ++c) img.at(x, y, c) = value(c);
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l)); }

}  // namespace

Sequence gen_sequence(const SceneSpec& spec, std::string id) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double W = static_cast<double>(spec.width), H = static_cast<double>(spec.height);

  double bg[3], target[3], amp[3], phase[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = 50 + 150 * unit(rng);
    amp[c] = 8 + 10 * unit(rng);
    phase[c] = 2 * std::numbers::pi * unit(rng);
  }
  // Target colour: well separated from the background in every channel.
  for (int c = 0; c < 3; ++c) target[c] = bg[c] > 127 ? bg[c] - 70 - 40 * unit(rng) : bg[c] + 70 + 40 * unit(rng);
  const double freq_x = 0.03 + 0.05 * unit(rng), freq_y = 0.03 + 0.05 * unit(rng);
  const double depth_angle = 2 * std::numbers::pi * unit(rng);

  const double tw = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
  const double th = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
  auto spawn = [&]() {
    Walker w;
    w.cx = tw / 2 + 1 + (W - tw - 2) * unit(rng);
    w.cy = th / 2 + 1 + (H - th - 2) * unit(rng);
    const double a = 2 * std::numbers::pi * unit(rng), s = 1 + 1.5 * unit(rng);
    w.vx = s * std::cos(a);
    w.vy = s * std::sin(a);
    return w;
  };
  Walker tgt = spawn();
  std::vector<Walker> distract(spec.distractors);
  for (auto& d : distract) d = spawn();

  Sequence seq;
  seq.id = std::move(id);
  seq.corrupted.assign(spec.num_frames, false);
  {
    std::vector<std::size_t> order;
    for (std::size_t i = 1; i < spec.num_frames; ++i) order.push_back(i);
    std::shuffle(order.begin(), order.end(), rng);
    const auto k = std::min<std::size_t>(order.size(), std::llround(spec.rgb_corruption_rate * spec.num_frames));
    for (std::size_t i = 0; i < k; ++i) seq.corrupted[order[i]] = true;
  }

  std::uniform_int_distribution<int> grain(-5, 5);
  std::normal_distribution<double> aux_noise(0.0, spec.aux_noise > 0 ? spec.aux_noise : 1.0);
  for (std::size_t f = 0; f < spec.num_frames; ++f) {
    if (f > 0) {
      step_walker(tgt, rng, tw / 2, th / 2, W, H);
      for (auto& d : distract) step_walker(d, rng, tw / 2, th / 2, W, H);
    }
    Image8 rgb(spec.width, spec.height, 3);
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          rgb.at(x, y, c) = to_u8(bg[c] + amp[c] * std::sin(freq_x * x + freq_y * y + phase[c]) + grain(rng));
    for (const auto& d : distract) paint(rgb, spec.shape, d, tw, th, [&](std::size_t c) { return to_u8(target[c]); });
    const bool hidden = seq.corrupted[f];
    paint(rgb, spec.shape, tgt, tw, th, [&](std::size_t c) {
      return to_u8(hidden ? 0.9 * bg[c] + 0.1 * target[c] : target[c]);
    });

    Image8 aux(spec.width, spec.height, 1);
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double ramp = (std::cos(depth_angle) * x / W + std::sin(depth_angle) * y / H + 1) / 2;
        aux.at(x, y, 0) = to_u8(30 + 60 * ramp + (spec.aux_noise > 0 ? aux_noise(rng) : 0.0));
      }
    paint(aux, spec.shape, tgt, tw, th,
          [&](std::size_t) { return to_u8(200 + (spec.aux_noise > 0 ? aux_noise(rng) : 0.0)); });

    seq.rgb.push_back(std::move(rgb));
    seq.aux.push_back(std::move(aux));
    seq.boxes.push_back({tgt.cx - tw / 2, tgt.cy - th / 2, tw, th});
  }
  return seq;
}

std::size_t corrupted_count(const Sequence& seq) {
  return static_cast<std::size_t>(std::count(seq.corrupted.begin(), seq.corrupted.end(), true));
}

// ---- dataset IO -------------------------------------------------------------

std::string format_rect(const Rect& r) {
  std::string out;
  char buf[64];
  for (double v : {r.x, r.y, r.w, r.h}) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (!out.empty()) out.push_back(',');
    out.append(buf, ptr);
  }
  return out;
}

Rect parse_rect(const std::string& line) {
  double v[4];
  const char* p = line.data();
  const char* end = line.data() + line.size();
  for (int i = 0; i < 4; ++i) {
    while (p < end && *p == ' ') ++p;
    auto [next, ec] = std::from_chars(p, end, v[i]);
    if (ec != std::errc()) throw DatasetIntegrityError("malformed box line '" + line + "'");
    p = next;
    while (p < end && *p == ' ') ++p;
    if (i < 3) {
      if (p >= end || *p != ',') throw DatasetIntegrityError("malformed box line '" + line + "'");
      ++p;
    }
  }
  while (p < end && (*p == ' ' || *p == '\r')) ++p;
  if (p != end) throw DatasetIntegrityError("malformed box line '" + line + "'");
  return {v[0], v[1], v[2], v[3]};
}

namespace {

std::string frame_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.%s", i, ext);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

void write_sequence(const Sequence& seq, const fs::path& dir) {
  const fs::path root = dir / seq.id;
  fs::create_directories(root / "rgb");
  fs::create_directories(root / "aux");
  std::ofstream gt(root / "groundtruth.txt");
  std::ofstream flags(root / "corrupted.txt");
  for (std::size_t i = 0; i < seq.size(); ++i) {
    write_ppm(root / "rgb" / frame_name(i, "ppm"), seq.rgb[i]);
    write_pgm(root / "aux" / frame_name(i, "pgm"), seq.aux[i]);
    gt << format_rect(seq.boxes[i]) << '\n';
    flags << (i < seq.corrupted.size() && seq.corrupted[i] ? 1 : 0) << '\n';
  }
  if (!gt || !flags) throw std::runtime_error("failed writing annotations for " + seq.id);
}

void write_dataset(const std::vector<Sequence>& sequences, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : sequences) write_sequence(s, dir);
}

std::vector<Sequence> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetIntegrityError("dataset directory " + dir.string() + " does not exist");
  std::vector<fs::path> roots;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) roots.push_back(e.path());
  }
  std::sort(roots.begin(), roots.end());
  std::vector<Sequence> out;
  for (const auto& root : roots) {
    const fs::path gt_path = root / "groundtruth.txt";
    if (!fs::exists(gt_path)) throw DatasetIntegrityError(root.string() + ": missing groundtruth.txt");
    Sequence seq;
    seq.id = root.filename().string();
    for (const auto& line : read_lines(gt_path)) seq.boxes.push_back(parse_rect(line));

    std::size_t rgb_files = 0, aux_files = 0;
    if (fs::is_directory(root / "rgb"))
      for (const auto& e : fs::directory_iterator(root / "rgb")) rgb_files += e.path().extension() == ".ppm";
    if (fs::is_directory(root / "aux"))
      for (const auto& e : fs::directory_iterator(root / "aux")) aux_files += e.path().extension() == ".pgm";
    if (rgb_files != seq.boxes.size() || aux_files != seq.boxes.size()) {
      throw DatasetIntegrityError(root.string() + ": " + std::to_string(seq.boxes.size()) + " boxes but " +
                                  std::to_string(rgb_files) + " rgb / " + std::to_string(aux_files) + " aux frames");
    }
    for (std::size_t i = 0; i < seq.boxes.size(); ++i) {
      seq.rgb.push_back(read_pnm(root / "rgb" / frame_name(i, "ppm")));
      seq.aux.push_back(read_pnm(root / "aux" / frame_name(i, "pgm")));
      if (seq.rgb.back().channels != 3 || seq.aux.back().channels != 1) {
        throw ImageFormatError(root.string() + ": frame " + std::to_string(i) + " has the wrong channel count");
      }
    }
    seq.corrupted.assign(seq.boxes.size(), false);
    if (fs::exists(root / "corrupted.txt")) {
      const auto flags = read_lines(root / "corrupted.txt");
      if (flags.size() != seq.boxes.size()) throw DatasetIntegrityError(root.string() + ": corrupted.txt length mismatch");
      for (std::size_t i = 0; i < flags.size(); ++i) seq.corrupted[i] = flags[i] == "1";
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::size_t total_frames(const std::vector<Sequence>& sequences) {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

// ---- crops ------------------------------------------------------------------

Jitter random_jitter(std::mt19937_64& rng, double max_shift, double max_log_scale) {
  std::uniform_real_distribution<double> shift(-max_shift, max_shift);
  std::uniform_real_distribution<double> scale(-max_log_scale, max_log_scale);
  Jitter j;
  j.dx = shift(rng);
  j.dy = shift(rng);
  j.log_scale = scale(rng);
  return j;
}

Tensor crop_resize(const Image8& image, const CropWindow& window, std::size_t out, bool* padded) {
  const std::size_t ch = image.channels;
  std::vector<double> mean(ch, 0.0);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) mean[i % ch] += image.pixels[i];
  for (auto& m : mean) m /= static_cast<double>(image.width * image.height);

  const bool escapes = window.x0 < 0 || window.y0 < 0 || window.x0 + window.side > static_cast<double>(image.width) ||
                       window.y0 + window.side > static_cast<double>(image.height);
  if (padded) *padded = escapes;

  const double step = window.side / static_cast<double>(out);
  const long w = static_cast<long>(image.width), h = static_cast<long>(image.height);
  auto sample = [&](long x, long y, std::size_t c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return mean[c];
    return static_cast<double>(image.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c));
  };

  Tensor t({3, out, out});
  for (std::size_t v = 0; v < out; ++v) {
    const double sy = window.y0 + (v + 0.5) * step - 0.5;
    const long y0 = static_cast<long>(std::floor(sy));
    const double fy = sy - y0;
    for (std::size_t u = 0; u < out; ++u) {
      const double sx = window.x0 + (u + 0.5) * step - 0.5;
      const long x0 = static_cast<long>(std::floor(sx));
      const double fx = sx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = ch == 1 ? 0 : c;
        const double top = sample(x0, y0, src) * (1 - fx) + sample(x0 + 1, y0, src) * fx;
        const double bot = sample(x0, y0 + 1, src) * (1 - fx) + sample(x0 + 1, y0 + 1, src) * fx;
        const double value = top * (1 - fy) + bot * fy;
        t.at(c, v, u) = (value / 255.0 - 0.5) / 0.5;
      }
    }
  }
  return t;
}

CropWindow template_window(const Rect& box, double context) {
  const double side = context * std::sqrt(box.w * box.h);
  return {box.cx() - side / 2, box.cy() - side / 2, side};
}

CropWindow search_window(const Rect& box, double context, const Jitter& jitter) {
  const double side = context * std::sqrt(box.w * box.h) * std::exp(jitter.log_scale);
  const double cx = box.cx() + jitter.dx * side, cy = box.cy() + jitter.dy * side;
  return {cx - side / 2, cy - side / 2, side};
}

namespace {

SamplePair crop_pair(const Sequence& seq, std::size_t template_idx, const Rect& template_box, std::size_t search_idx,
                     const CropWindow& sw, const CropSettings& crop) {
  const CropWindow tw = template_window(template_box, crop.template_context);
  SamplePair p;
  bool pad[4];
  p.template_rgb = crop_resize(seq.rgb[template_idx], tw, crop.template_size, &pad[0]);
  p.template_aux = crop_resize(seq.aux[template_idx], tw, crop.template_size, &pad[1]);
  p.search_rgb = crop_resize(seq.rgb[search_idx], sw, crop.search_size, &pad[2]);
  p.search_aux = crop_resize(seq.aux[search_idx], sw, crop.search_size, &pad[3]);
  p.padded = pad[0] || pad[2];
  p.search_window = sw;
  const Rect& g = seq.boxes[search_idx];
  p.gt = {(g.cx() - sw.x0) / sw.side, (g.cy() - sw.y0) / sw.side, g.w / sw.side, g.h / sw.side};
  return p;
}

void check_index(const Sequence& seq, std::size_t idx) {
  if (idx >= seq.size()) {
    throw std::out_of_range("frame index " + std::to_string(idx) + " outside sequence " + seq.id + " of " +
                            std::to_string(seq.size()) + " frames");
  }
}

}  // namespace

SamplePair make_pair(const Sequence& seq, std::size_t template_idx, std::size_t search_idx, const Jitter& jitter,
                     const CropSettings& crop) {
  check_index(seq, template_idx);
  check_index(seq, search_idx);
  const CropWindow sw = search_window(seq.boxes[search_idx], crop.search_context, jitter);
  return crop_pair(seq, template_idx, seq.boxes[template_idx], search_idx, sw, crop);
}

SamplePair make_tracking_pair(const Sequence& seq, const Rect& template_box, std::size_t search_idx,
                              const Rect& previous, const CropSettings& crop) {
  check_index(seq, search_idx);
  const CropWindow sw = search_window(previous, crop.search_context, Jitter{});
  return crop_pair(seq, 0, template_box, search_idx, sw, crop);
}

SamplePair random_pair(const CropSettings& crop, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pixel(-1.0, 1.0);
  auto image = [&](std::size_t side) {
    Tensor t({3, side, side});
    for (auto& v : t.values()) v = pixel(rng);
    return t;
  };
  SamplePair p;
  p.template_rgb = image(crop.template_size);
  p.template_aux = image(crop.template_size);
  p.search_rgb = image(crop.search_size);
  p.search_aux = image(crop.search_size);
  std::uniform_real_distribution<double> centre(0.25, 0.75), size(0.1, 0.4);
  p.gt.cx = centre(rng);
  p.gt.cy = centre(rng);
  p.gt.w = size(rng);
  p.gt.h = size(rng);
  p.search_window = {0.0, 0.0, static_cast<double>(crop.search_size)};
  return p;
}

PairSampler::PairSampler(const std::vector<Sequence>& sequences, Options options)
    : sequences_(sequences), options_(options) {
  if (sequences_.empty()) throw std::invalid_argument("pair sampler: no sequences");
  for (const auto& s : sequences_) {
    if (s.size() == 0) throw std::invalid_argument("pair sampler: empty sequence " + s.id);
  }
}

SamplePair PairSampler::sample(std::uint64_t step, std::uint64_t slot) const {
  std::seed_seq seq{static_cast<std::uint32_t>(options_.seed), static_cast<std::uint32_t>(options_.seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(slot)};
  std::mt19937_64 rng(seq);
  const Sequence& s = sequences_[std::uniform_int_distribution<std::size_t>(0, sequences_.size() - 1)(rng)];
  const std::size_t n = s.size();
  const std::size_t search = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  const std::size_t lo = search > options_.max_gap ? search - options_.max_gap : 0;
  const std::size_t hi = std::min(n - 1, search + options_.max_gap);
  const std::size_t tmpl = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  const Jitter j = random_jitter(rng, options_.max_shift, options_.max_log_scale);
  return make_pair(s, tmpl, search, j, options_.crop);
}

}  // namespace vipt
