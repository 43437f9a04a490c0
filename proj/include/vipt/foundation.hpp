#pragma once

// RGB foundation tracker: patch + positional embedding, a pre-norm
// transformer encoder over [template; search] tokens, and a center-based
// convolutional box head reading the search tokens.

#include <cstddef>
#include <string>
#include <vector>

#include "vipt/geometry.hpp"
#include "vipt/params.hpp"
#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

struct FoundationConfig {
  std::size_t dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t patch = 8;
  std::size_t template_size = 32;
  std::size_t search_size = 64;
  std::size_t in_channels = 3;

  static FoundationConfig paper();
  static FoundationConfig toy();
  // Smallest preset used for finite-difference checks.
  static FoundationConfig gradcheck();

  std::size_t template_grid() const { return template_size / patch; }
  std::size_t search_grid() const { return search_size / patch; }
  std::size_t n_template() const { return template_grid() * template_grid(); }
  std::size_t n_search() const { return search_grid() * search_grid(); }
  std::size_t n_tokens() const { return n_template() + n_search(); }
  std::size_t patch_features() const { return in_channels * patch * patch; }

  // Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;

  bool operator==(const FoundationConfig&) const = default;
};

// The split of a token sequence: [template (n_z); search (n_x)].
struct TokenLayout {
  std::size_t n_z = 0;
  std::size_t n_x = 0;
  std::size_t z_grid = 0;
  std::size_t x_grid = 0;
  std::size_t total() const { return n_z + n_x; }
};

TokenLayout token_layout(const FoundationConfig& cfg);

std::vector<ParamSpec> foundation_param_specs(const FoundationConfig& cfg);
std::size_t encoder_layer_param_count(std::size_t dim, std::size_t ffn_dim);

struct BoxPrediction {
  Tensor cls_map;     // [1, S, S], sigmoid scores
  Tensor offset_map;  // [2, S, S], (x, y) sub-cell offsets
  Tensor size_map;    // [2, S, S], (w, h) normalized sizes
  Box box;            // decoded at the cls argmax
  double score = 0.0; // cls value at the argmax
};

// Decodes at argmax(cls); ties go to the lowest flat index. The box is
// clamped to [0, 1]^4.
Box decode_box(const Tensor& cls_map, const Tensor& offset_map, const Tensor& size_map,
               std::size_t* peak_index = nullptr);

// Tape-level head outputs, kept for the training loss.
struct HeadMaps {
  Var cls;
  Var offset;
  Var size;
  BoxPrediction prediction() const;
};

struct TrackerOutput {
  Var tokens;  // H^L, [n_z + n_x, D]
  HeadMaps maps;
};

// Patch embedding of a single image with the affine map stored under
// `prefix` (prefix.weight [C*p*p, D], prefix.bias [D]).
Var embed_patches(ParamBinder& params, const Var& image, const std::string& prefix, std::size_t patch);

// RGB tokens [n_z + n_x, D] including positional embeddings.
Var patch_embed_rgb(ParamBinder& params, const FoundationConfig& cfg, const Var& template_img,
                    const Var& search_img);

Var multi_head_attention(ParamBinder& params, const Var& x, const std::string& prefix, std::size_t heads);

// Pre-norm block: x + MSA(LN(x)), then + FFN(LN(.)). `layer` is 1-based.
Var encoder_layer(ParamBinder& params, const FoundationConfig& cfg, const Var& x, std::size_t layer);

// Final layer norm + box head on the search tokens of H^L.
HeadMaps box_head(ParamBinder& params, const FoundationConfig& cfg, const Var& search_tokens);
HeadMaps finish(ParamBinder& params, const FoundationConfig& cfg, const Var& tokens);

TrackerOutput forward_foundation(ParamBinder& params, const FoundationConfig& cfg, const Var& template_img,
                                 const Var& search_img);

// Inference convenience: runs on an untracked tape.
BoxPrediction predict_foundation(const ParamStore& store, const FoundationConfig& cfg, const Tensor& template_img,
                                 const Tensor& search_img);

}  // namespace vipt
