#pragma once

// Modality-complementary prompting of a frozen foundation tracker.
//
// The auxiliary flow is embedded by its own trainable patch embedding and
// carried as a prompt stream P alongside the foundation tokens H. At each
// placement layer an MCP block turns (H, P) into a new prompt which is added
// residually to the foundation tokens before the layer:
//
//   M_rgb = g1(H), M_aux = g2(P)                 (1x1 projections to d channels)
//   P'    = g3(fovea(M_rgb, lambda) + M_aux)     (back to D channels)
//   E_l input = H + P'
//
// fovea() is a per-channel spatial softmax scaled by the learnable lambda and
// applied as a mask over M_rgb, separately on the template and search grids.

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "vipt/foundation.hpp"
#include "vipt/params.hpp"
#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

enum class PromptMode {
  kViPT,    // MCP blocks at the placement layers
  kVptSum,  // auxiliary embedding summed at the input, optional per-layer token tables
};

std::string to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& text);

struct PromptConfig {
  PromptMode mode = PromptMode::kViPT;
  // 1-based encoder layers that receive an MCP block (kViPT) or a prompt
  // token table (kVptSum; empty means the shallow form).
  std::vector<std::size_t> placement;
  std::size_t latent = 8;
  std::size_t aux_channels = 3;

  // Interval-k placement {1, 1+k, 1+2k, ...} within 1..layers.
  static std::vector<std::size_t> interval_placement(std::size_t k, std::size_t layers);
  static PromptConfig deep(std::size_t layers, std::size_t latent = 8);
  static PromptConfig shallow(std::size_t latent = 8);
  static PromptConfig vpt_shallow();
  static PromptConfig vpt_deep(std::size_t layers);

  bool placed(std::size_t layer) const;
  void validate(const FoundationConfig& foundation) const;
  bool operator==(const PromptConfig&) const = default;
};

std::vector<ParamSpec> prompt_param_specs(const FoundationConfig& foundation, const PromptConfig& prompt);

// Closed forms: 2 (D d + d) + (d D + D) + 1, and C p^2 D + D.
std::size_t mcp_block_param_count(std::size_t dim, std::size_t latent);
std::size_t aux_embed_param_count(std::size_t in_channels, std::size_t patch, std::size_t dim);

// Channel-major fovea on a single feature map m [d, H, W].
Tensor fovea(const Tensor& m, double lambda);
// The mask lambda * softmax over space, per channel, for m [d, H, W].
Tensor fovea_mask(const Tensor& m, double lambda);

// Auxiliary tokens [n_z + n_x, D] from the trainable embedding "aux_embed".
// The auxiliary images must match the RGB geometry.
Var patch_embed_aux(ParamBinder& params, const FoundationConfig& cfg, const Var& template_aux,
                    const Var& search_aux);

// Fovea applied to the template and search token groups independently.
Var grouped_fovea(const Var& m, const Var& lambda, const TokenLayout& layout);

// MCP block `index` (1-based): new prompt tokens from (H_prev, P_prev).
Var mcp_block(ParamBinder& params, const Var& h_prev, const Var& p_prev, const TokenLayout& layout,
              std::size_t index);

// Residual prompt injection H + P.
Var inject(const Var& h, const Var& p);

struct TrackerInputs {
  Tensor template_rgb;
  Tensor search_rgb;
  Tensor template_aux;
  Tensor search_aux;
};

TrackerOutput forward_prompted(ParamBinder& params, const FoundationConfig& foundation, const PromptConfig& prompt,
                               const Var& template_rgb, const Var& search_rgb, const Var& template_aux,
                               const Var& search_aux);

TrackerOutput forward_prompted(ParamBinder& params, const FoundationConfig& foundation, const PromptConfig& prompt,
                               const TrackerInputs& inputs);

BoxPrediction predict_prompted(const ParamStore& store, const FoundationConfig& foundation,
                               const PromptConfig& prompt, const TrackerInputs& inputs);

}  // namespace vipt
