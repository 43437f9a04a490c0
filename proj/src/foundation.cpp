#include "vipt/foundation.hpp"

#include <stdexcept>

#include "vipt/ops.hpp"

namespace vipt {

FoundationConfig FoundationConfig::paper() {
  return {.dim = 768, .layers = 12, .heads = 12, .ffn_dim = 3072, .patch = 16, .template_size = 128, .search_size = 256};
}

FoundationConfig FoundationConfig::toy() { return {}; }

FoundationConfig FoundationConfig::gradcheck() {
  return {.dim = 16, .layers = 2, .heads = 2, .ffn_dim = 64, .patch = 8, .template_size = 16, .search_size = 32};
}

void FoundationConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("foundation config: " + msg); };
  if (dim == 0 || layers == 0 || heads == 0 || ffn_dim == 0 || patch == 0 || in_channels == 0) {
    fail("all sizes must be positive");
  }
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  if (dim % 4 != 0) fail("dim must be divisible by 4 for the box head");
  if (template_size == 0 || template_size % patch != 0) fail("template_size not divisible by patch");
  if (search_size == 0 || search_size % patch != 0) fail("search_size not divisible by patch");
}

TokenLayout token_layout(const FoundationConfig& cfg) {
  return {cfg.n_template(), cfg.n_search(), cfg.template_grid(), cfg.search_grid()};
}

namespace {

ParamSpec weight(std::string name, Shape shape, ParamGroup group) {
  return {std::move(name), std::move(shape), group, ParamInit::kXavier, true};
}
ParamSpec bias(std::string name, std::size_t n, ParamGroup group) {
  return {std::move(name), {n}, group, ParamInit::kZeros, false};
}
ParamSpec gain(std::string name, std::size_t n, ParamGroup group) {
  return {std::move(name), {n}, group, ParamInit::kOnes, false};
}

constexpr const char* kHeadMaps[] = {"cls", "offset", "size"};
constexpr std::size_t kHeadOut[] = {1, 2, 2};

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer); }

}  // namespace

std::size_t encoder_layer_param_count(std::size_t dim, std::size_t ffn_dim) {
  return 4 * dim * dim + 2 * dim * ffn_dim + 9 * dim + ffn_dim;
}

std::vector<ParamSpec> foundation_param_specs(const FoundationConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  std::vector<ParamSpec> specs;
  specs.push_back(weight("rgb_embed.weight", {cfg.patch_features(), d}, ParamGroup::kRgbEmbed));
  specs.push_back(bias("rgb_embed.bias", d, ParamGroup::kRgbEmbed));
  specs.push_back({"pos.template", {cfg.n_template(), d}, ParamGroup::kPositional, ParamInit::kNormal002, false});
  specs.push_back({"pos.search", {cfg.n_search(), d}, ParamGroup::kPositional, ParamInit::kNormal002, false});
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const std::string p = layer_prefix(l);
    specs.push_back(gain(p + ".ln1.gamma", d, ParamGroup::kEncoder));
    specs.push_back(bias(p + ".ln1.beta", d, ParamGroup::kEncoder));
    specs.push_back(weight(p + ".attn.qkv.weight", {d, 3 * d}, ParamGroup::kEncoder));
    specs.push_back(bias(p + ".attn.qkv.bias", 3 * d, ParamGroup::kEncoder));
    specs.push_back(weight(p + ".attn.proj.weight", {d, d}, ParamGroup::kEncoder));
    specs.push_back(bias(p + ".attn.proj.bias", d, ParamGroup::kEncoder));
    specs.push_back(gain(p + ".ln2.gamma", d, ParamGroup::kEncoder));
    specs.push_back(bias(p + ".ln2.beta", d, ParamGroup::kEncoder));
    specs.push_back(weight(p + ".ffn.fc1.weight", {d, cfg.ffn_dim}, ParamGroup::kEncoder));
    specs.push_back(bias(p + ".ffn.fc1.bias", cfg.ffn_dim, ParamGroup::kEncoder));
    specs.push_back(weight(p + ".ffn.fc2.weight", {cfg.ffn_dim, d}, ParamGroup::kEncoder));
    specs.push_back(bias(p + ".ffn.fc2.bias", d, ParamGroup::kEncoder));
  }
  specs.push_back(gain("final_norm.gamma", d, ParamGroup::kFinalNorm));
  specs.push_back(bias("final_norm.beta", d, ParamGroup::kFinalNorm));
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t channels[] = {d, d / 2, d / 4, kHeadOut[m]};
    for (std::size_t c = 0; c < 3; ++c) {
      const std::string p = std::string("head.") + kHeadMaps[m] + ".conv" + std::to_string(c + 1);
      specs.push_back(weight(p + ".weight", {channels[c + 1], channels[c], 3, 3}, ParamGroup::kBoxHead));
      specs.push_back(bias(p + ".bias", channels[c + 1], ParamGroup::kBoxHead));
    }
  }
  return specs;
}

Box decode_box(const Tensor& cls_map, const Tensor& offset_map, const Tensor& size_map, std::size_t* peak_index) {
  if (cls_map.rank() != 3 || cls_map.dim(0) != 1 || cls_map.dim(1) != cls_map.dim(2)) {
    throw DimensionError("decode_box: cls map must be [1, S, S], got " + shape_str(cls_map.shape()));
  }
  const std::size_t s = cls_map.dim(1);
  const Shape two{2, s, s};
  if (offset_map.shape() != two) throw DimensionError("decode_box offset", two, offset_map.shape());
  if (size_map.shape() != two) throw DimensionError("decode_box size", two, size_map.shape());
  std::size_t best = 0;
  for (std::size_t k = 1; k < s * s; ++k) {
    if (cls_map[k] > cls_map[best]) best = k;
  }
  if (peak_index) *peak_index = best;
  const double row = static_cast<double>(best / s);
  const double col = static_cast<double>(best % s);
  const double sd = static_cast<double>(s);
  Box box{(col + offset_map[best]) / sd, (row + offset_map[s * s + best]) / sd, size_map[best], size_map[s * s + best]};
  return box.clamped();
}

BoxPrediction HeadMaps::prediction() const {
  BoxPrediction p{cls.value(), offset.value(), size.value(), {}, 0.0};
  std::size_t peak = 0;
  p.box = decode_box(p.cls_map, p.offset_map, p.size_map, &peak);
  p.score = p.cls_map[peak];
  return p;
}

Var embed_patches(ParamBinder& params, const Var& image, const std::string& prefix, std::size_t patch) {
  const Var patches = ops::patchify(image, patch);
  return ops::linear(patches, params(prefix + ".weight"), params(prefix + ".bias"));
}

namespace {

void check_image(const std::string& what, const Var& image, std::size_t channels, std::size_t side) {
  const Shape expected{channels, side, side};
  if (image.shape() != expected) throw DimensionError(what, expected, image.shape());
}

}  // namespace

Var patch_embed_rgb(ParamBinder& params, const FoundationConfig& cfg, const Var& template_img, const Var& search_img) {
  check_image("template image", template_img, cfg.in_channels, cfg.template_size);
  check_image("search image", search_img, cfg.in_channels, cfg.search_size);
  const Var z = ops::add(embed_patches(params, template_img, "rgb_embed", cfg.patch), params("pos.template"));
  const Var x = ops::add(embed_patches(params, search_img, "rgb_embed", cfg.patch), params("pos.search"));
  return ops::concat_rows(z, x);
}

Var multi_head_attention(ParamBinder& params, const Var& x, const std::string& prefix, std::size_t heads) {
  const Var qkv = ops::linear(x, params(prefix + ".qkv.weight"), params(prefix + ".qkv.bias"));
  const Var mixed = ops::attention(qkv, heads);
  return ops::linear(mixed, params(prefix + ".proj.weight"), params(prefix + ".proj.bias"));
}

Var encoder_layer(ParamBinder& params, const FoundationConfig& cfg, const Var& x, std::size_t layer) {
  const std::string p = layer_prefix(layer);
  const Var n1 = ops::layer_norm(x, params(p + ".ln1.gamma"), params(p + ".ln1.beta"));
  const Var h = ops::add(x, multi_head_attention(params, n1, p + ".attn", cfg.heads));
  const Var n2 = ops::layer_norm(h, params(p + ".ln2.gamma"), params(p + ".ln2.beta"));
  const Var f1 = ops::gelu(ops::linear(n2, params(p + ".ffn.fc1.weight"), params(p + ".ffn.fc1.bias")));
  const Var f2 = ops::linear(f1, params(p + ".ffn.fc2.weight"), params(p + ".ffn.fc2.bias"));
  return ops::add(h, f2);
}

HeadMaps box_head(ParamBinder& params, const FoundationConfig& cfg, const Var& search_tokens) {
  const std::size_t n = search_tokens.shape().at(0);
  std::size_t s = 0;
  while (s * s < n) ++s;
  if (s * s != n) throw DimensionError("box_head: search token count " + std::to_string(n) + " is not a square");
  const Var grid = ops::reshape(ops::transpose(search_tokens), {cfg.dim, s, s});
  Var out[3];
  for (std::size_t m = 0; m < 3; ++m) {
    const std::string p = std::string("head.") + kHeadMaps[m];
    Var y = grid;
    for (std::size_t c = 1; c <= 3; ++c) {
      const std::string conv = p + ".conv" + std::to_string(c);
      y = ops::conv3x3(y, params(conv + ".weight"), params(conv + ".bias"));
      y = c < 3 ? ops::gelu(y) : ops::sigmoid(y);
    }
    out[m] = y;
  }
  return {out[0], out[1], out[2]};
}

HeadMaps finish(ParamBinder& params, const FoundationConfig& cfg, const Var& tokens) {
  const Var normed = ops::layer_norm(tokens, params("final_norm.gamma"), params("final_norm.beta"));
  const Var search = ops::slice_rows(normed, cfg.n_template(), cfg.n_tokens());
  return box_head(params, cfg, search);
}

TrackerOutput forward_foundation(ParamBinder& params, const FoundationConfig& cfg, const Var& template_img,
                                 const Var& search_img) {
  Var h = patch_embed_rgb(params, cfg, template_img, search_img);
  for (std::size_t l = 1; l <= cfg.layers; ++l) h = encoder_layer(params, cfg, h, l);
  return {h, finish(params, cfg, h)};
}

BoxPrediction predict_foundation(const ParamStore& store, const FoundationConfig& cfg, const Tensor& template_img,
                                 const Tensor& search_img) {
  Tape tape;
  ParamBinder params(tape, store, Tracking::kNone);
  const auto out = forward_foundation(params, cfg, tape.constant(template_img), tape.constant(search_img));
  return out.maps.prediction();
}

}  // namespace vipt
