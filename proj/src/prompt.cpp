#include "vipt/prompt.hpp"

#include <algorithm>
#include <stdexcept>

#include "vipt/kernels.hpp"
#include "vipt/ops.hpp"

namespace vipt {

std::string to_string(PromptMode mode) { return mode == PromptMode::kViPT ? "vipt" : "vpt_sum"; }

PromptMode parse_prompt_mode(const std::string& text) {
  if (text == "vipt") return PromptMode::kViPT;
  if (text == "vpt_sum") return PromptMode::kVptSum;
  throw std::invalid_argument("unknown prompt mode '" + text + "' (expected vipt or vpt_sum)");
}

std::vector<std::size_t> PromptConfig::interval_placement(std::size_t k, std::size_t layers) {
  if (k == 0) throw std::invalid_argument("prompt interval must be positive");
  std::vector<std::size_t> out;
  for (std::size_t l = 1; l <= layers; l += k) out.push_back(l);
  return out;
}

PromptConfig PromptConfig::deep(std::size_t layers, std::size_t latent) {
  return {PromptMode::kViPT, interval_placement(1, layers), latent, 3};
}

PromptConfig PromptConfig::shallow(std::size_t latent) { return {PromptMode::kViPT, {1}, latent, 3}; }

PromptConfig PromptConfig::vpt_shallow() { return {PromptMode::kVptSum, {}, 8, 3}; }

PromptConfig PromptConfig::vpt_deep(std::size_t layers) {
  return {PromptMode::kVptSum, interval_placement(1, layers), 8, 3};
}

bool PromptConfig::placed(std::size_t layer) const {
  return std::find(placement.begin(), placement.end(), layer) != placement.end();
}

void PromptConfig::validate(const FoundationConfig& foundation) const {
  if (mode == PromptMode::kViPT && latent == 0) throw std::invalid_argument("prompt latent channels must be positive");
  if (aux_channels != foundation.in_channels) {
    throw std::invalid_argument("auxiliary flow must have " + std::to_string(foundation.in_channels) + " channels");
  }
  std::set<std::size_t> seen;
  for (std::size_t l : placement) {
    if (l < 1 || l > foundation.layers) {
      throw std::invalid_argument("prompt placement layer " + std::to_string(l) + " outside 1.." +
                                  std::to_string(foundation.layers));
    }
    if (!seen.insert(l).second) throw std::invalid_argument("duplicate prompt placement layer " + std::to_string(l));
  }
}

std::size_t mcp_block_param_count(std::size_t dim, std::size_t latent) {
  return 2 * (dim * latent + latent) + (latent * dim + dim) + 1;
}

std::size_t aux_embed_param_count(std::size_t in_channels, std::size_t patch, std::size_t dim) {
  return in_channels * patch * patch * dim + dim;
}

std::vector<ParamSpec> prompt_param_specs(const FoundationConfig& foundation, const PromptConfig& prompt) {
  prompt.validate(foundation);
  const std::size_t d = foundation.dim, r = prompt.latent;
  std::vector<ParamSpec> specs;
  specs.push_back({"aux_embed.weight", {prompt.aux_channels * foundation.patch * foundation.patch, d},
                   ParamGroup::kAuxEmbed, ParamInit::kXavier, true});
  specs.push_back({"aux_embed.bias", {d}, ParamGroup::kAuxEmbed, ParamInit::kZeros, false});
  for (std::size_t l : prompt.placement) {
    if (prompt.mode == PromptMode::kVptSum) {
      specs.push_back({"prompt_table" + std::to_string(l), {foundation.n_tokens(), d}, ParamGroup::kPromptTable,
                       ParamInit::kXavier, false});
      continue;
    }
    const std::string p = "mcp" + std::to_string(l);
    specs.push_back({p + ".g1.weight", {d, r}, ParamGroup::kPrompter, ParamInit::kXavier, true});
    specs.push_back({p + ".g1.bias", {r}, ParamGroup::kPrompter, ParamInit::kZeros, false});
    specs.push_back({p + ".g2.weight", {d, r}, ParamGroup::kPrompter, ParamInit::kXavier, true});
    specs.push_back({p + ".g2.bias", {r}, ParamGroup::kPrompter, ParamInit::kZeros, false});
    specs.push_back({p + ".g3.weight", {r, d}, ParamGroup::kPrompter, ParamInit::kXavier, true});
    specs.push_back({p + ".g3.bias", {d}, ParamGroup::kPrompter, ParamInit::kZeros, false});
    specs.push_back({p + ".lambda", {1}, ParamGroup::kPrompter, ParamInit::kOnes, false});
  }
  return specs;
}

Tensor fovea_mask(const Tensor& m, double lambda) {
  if (m.rank() != 3) throw DimensionError("fovea: expected [d, H, W], got " + shape_str(m.shape()));
  const std::size_t d = m.dim(0), hw = m.dim(1) * m.dim(2);
  Tensor mask(m.shape());
  kernels::softmax_forward(m.span(), mask.span(), d, hw, 1);
  for (auto& v : mask.values()) v *= lambda;
  return mask;
}

Tensor fovea(const Tensor& m, double lambda) {
  Tensor out = fovea_mask(m, lambda);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return out;
}

Var patch_embed_aux(ParamBinder& params, const FoundationConfig& cfg, const Var& template_aux, const Var& search_aux) {
  const Shape zs{cfg.in_channels, cfg.template_size, cfg.template_size};
  const Shape xs{cfg.in_channels, cfg.search_size, cfg.search_size};
  if (template_aux.shape() != zs) throw DimensionError("auxiliary template not aligned with RGB flow", zs, template_aux.shape());
  if (search_aux.shape() != xs) throw DimensionError("auxiliary search not aligned with RGB flow", xs, search_aux.shape());
  return ops::concat_rows(embed_patches(params, template_aux, "aux_embed", cfg.patch),
                          embed_patches(params, search_aux, "aux_embed", cfg.patch));
}

Var grouped_fovea(const Var& m, const Var& lambda, const TokenLayout& layout) {
  const Var z = ops::fovea(ops::slice_rows(m, 0, layout.n_z), lambda);
  const Var x = ops::fovea(ops::slice_rows(m, layout.n_z, layout.total()), lambda);
  return ops::concat_rows(z, x);
}

Var mcp_block(ParamBinder& params, const Var& h_prev, const Var& p_prev, const TokenLayout& layout, std::size_t index) {
  const std::string p = "mcp" + std::to_string(index);
  const Var m_rgb = ops::linear(h_prev, params(p + ".g1.weight"), params(p + ".g1.bias"));
  const Var m_aux = ops::linear(p_prev, params(p + ".g2.weight"), params(p + ".g2.bias"));
  const Var enhanced = grouped_fovea(m_rgb, params(p + ".lambda"), layout);
  return ops::linear(ops::add(enhanced, m_aux), params(p + ".g3.weight"), params(p + ".g3.bias"));
}

Var inject(const Var& h, const Var& p) { return ops::add(h, p); }

TrackerOutput forward_prompted(ParamBinder& params, const FoundationConfig& foundation, const PromptConfig& prompt,
                               const Var& template_rgb, const Var& search_rgb, const Var& template_aux,
                               const Var& search_aux) {
  const TokenLayout layout = token_layout(foundation);
  Var h = patch_embed_rgb(params, foundation, template_rgb, search_rgb);
  Var p = patch_embed_aux(params, foundation, template_aux, search_aux);

  if (prompt.mode == PromptMode::kVptSum) {
    h = inject(h, p);
    for (std::size_t l = 1; l <= foundation.layers; ++l) {
      const Var in = prompt.placed(l) ? inject(h, params("prompt_table" + std::to_string(l))) : h;
      h = encoder_layer(params, foundation, in, l);
    }
    return {h, finish(params, foundation, h)};
  }

  for (std::size_t l = 1; l <= foundation.layers; ++l) {
    Var in = h;
    if (prompt.placed(l)) {
      p = mcp_block(params, h, p, layout, l);
      in = inject(h, p);
    }
    h = encoder_layer(params, foundation, in, l);
  }
  return {h, finish(params, foundation, h)};
}

TrackerOutput forward_prompted(ParamBinder& params, const FoundationConfig& foundation, const PromptConfig& prompt,
                               const TrackerInputs& inputs) {
  Tape& tape = params.tape();
  return forward_prompted(params, foundation, prompt, tape.constant(inputs.template_rgb),
                          tape.constant(inputs.search_rgb), tape.constant(inputs.template_aux),
                          tape.constant(inputs.search_aux));
}

BoxPrediction predict_prompted(const ParamStore& store, const FoundationConfig& foundation,
                               const PromptConfig& prompt, const TrackerInputs& inputs) {
  Tape tape;
  ParamBinder params(tape, store, Tracking::kNone);
  return forward_prompted(params, foundation, prompt, inputs).maps.prediction();
}

}  // namespace vipt
