#pragma once

// Deterministic synthetic RGB + auxiliary tracking sequences.
//
// A single target moves on a smooth random walk. Distractors with the
// target's colour appear only in RGB, and in "corrupted" frames the target's
// RGB colour is blended into the background while the auxiliary frame keeps
// full contrast. The auxiliary frame is single channel (depth-like).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vipt/geometry.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::size_t c) : width(w), height(h), channels(c), pixels(w * h * c, 0) {}
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image8&) const = default;
};

class ImageFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_ppm(const std::filesystem::path& path, const Image8& image);  // 3 channels, P6
void write_pgm(const std::filesystem::path& path, const Image8& image);  // 1 channel, P5
Image8 read_pnm(const std::filesystem::path& path);                      // P5 or P6

enum class TargetShape { kSquare, kDisc };

struct SceneSpec {
  std::uint64_t seed = 1;
  std::size_t num_frames = 100;
  std::size_t height = 128;
  std::size_t width = 128;
  TargetShape shape = TargetShape::kSquare;
  double min_size = 12;
  double max_size = 20;
  double rgb_corruption_rate = 0.5;
  double aux_noise = 0.0;  // std-dev of auxiliary noise in 8-bit units; 0 is clean
  std::size_t distractors = 2;

  void validate() const;
};

struct Sequence {
  std::string id;
  std::vector<Image8> rgb;
  std::vector<Image8> aux;
  std::vector<Rect> boxes;      // pixels
  std::vector<bool> corrupted;  // per frame; all false when unknown

  std::size_t size() const { return boxes.size(); }
};

Sequence gen_sequence(const SceneSpec& spec, std::string id = "seq");
std::size_t corrupted_count(const Sequence& seq);

// Sub-seed for sequence `index` of a dataset generated from `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// <dir>/<id>/rgb/%06d.ppm, <dir>/<id>/aux/%06d.pgm, <dir>/<id>/groundtruth.txt
// ("x,y,w,h" per frame), plus <dir>/<id>/corrupted.txt with one 0/1 flag per frame.
void write_dataset(const std::vector<Sequence>& sequences, const std::filesystem::path& dir);
void write_sequence(const Sequence& seq, const std::filesystem::path& dir);
// Sequences sorted by id. Auxiliary frames stay single channel in memory and
// are replicated to three channels when cropped.
std::vector<Sequence> read_dataset(const std::filesystem::path& dir);
std::size_t total_frames(const std::vector<Sequence>& sequences);

std::string format_rect(const Rect& r);
Rect parse_rect(const std::string& line);

// ---- sample pairs -----------------------------------------------------------

struct CropSettings {
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  double template_context = 2.0;  // crop side = context * sqrt(w * h)
  double search_context = 4.0;
};

struct Jitter {
  double dx = 0.0;  // search-centre shift, fraction of the search crop side
  double dy = 0.0;
  double log_scale = 0.0;
};

Jitter random_jitter(std::mt19937_64& rng, double max_shift, double max_log_scale);

// Square crop window in frame pixels.
struct CropWindow {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;
};

struct SamplePair {
  Tensor template_rgb;  // [3, t, t], standardized
  Tensor template_aux;
  Tensor search_rgb;  // [3, s, s]
  Tensor search_aux;
  Box gt;  // normalized, search-crop coordinates
  CropWindow search_window;
  bool padded = false;  // some crop left the canvas and was padded with the mean colour
};

// Bilinear crop of `window` resampled to out x out, standardized to
// (v / 255 - 0.5) / 0.5 and replicated to 3 channels for single-channel
// images. Out-of-canvas samples take the per-channel mean colour.
Tensor crop_resize(const Image8& image, const CropWindow& window, std::size_t out, bool* padded = nullptr);

CropWindow template_window(const Rect& box, double context);
CropWindow search_window(const Rect& box, double context, const Jitter& jitter);

SamplePair make_pair(const Sequence& seq, std::size_t template_idx, std::size_t search_idx, const Jitter& jitter,
                     const CropSettings& crop);

// Search crop for tracking: centred on a previous estimate, no jitter.
SamplePair make_tracking_pair(const Sequence& seq, const Rect& template_box, std::size_t search_idx,
                              const Rect& previous, const CropSettings& crop);

// Unstructured pair: pixels uniform in [-1, 1], a random in-crop gt box.
SamplePair random_pair(const CropSettings& crop, std::uint64_t seed);

// Deterministic training-pair stream over in-memory sequences. Sample (step,
// slot) depends only on the seed and those two indices.
class PairSampler {
 public:
  struct Options {
    std::uint64_t seed = 0;
    std::size_t max_gap = 50;
    double max_shift = 0.2;
    double max_log_scale = 0.15;
    CropSettings crop;
  };

  PairSampler(const std::vector<Sequence>& sequences, Options options);
  SamplePair sample(std::uint64_t step, std::uint64_t slot) const;

 private:
  const std::vector<Sequence>& sequences_;
  Options options_;
};

}  // namespace vipt
