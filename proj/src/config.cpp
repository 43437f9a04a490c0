#include "vipt/config.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vipt {

namespace pt = boost::property_tree;

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw ConfigError("invalid value '" + text + "' for key " + key);
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  return parse_number<std::size_t>(key, text);
}

template <typename Target>
using Setter = std::function<void(Target&, const std::string& key, const std::string& value)>;

template <typename Target>
using Table = std::map<std::string, std::map<std::string, Setter<Target>>>;

pt::ptree read_tree(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return tree;
}

template <typename Target>
void apply(const pt::ptree& tree, const Table<Target>& table, Target& target, const std::string& skip = "") {
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' must be inside a [section]");
    auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError("unknown config key " + full);
      if (full == skip) continue;
      it->second(target, full, value.data());
    }
  }
}

const Table<ViptConfig>& config_table() {
  static const Table<ViptConfig> table = {
      {"foundation",
       {
           {"preset", [](ViptConfig&, const std::string&, const std::string&) {}},
           {"dim", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.dim = parse_size(k, v); }},
           {"layers", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.layers = parse_size(k, v); }},
           {"heads", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.heads = parse_size(k, v); }},
           {"ffn_dim", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.ffn_dim = parse_size(k, v); }},
           {"patch", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.patch = parse_size(k, v); }},
           {"template_size", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.template_size = parse_size(k, v); }},
           {"search_size", [](ViptConfig& c, const std::string& k, const std::string& v) { c.foundation.search_size = parse_size(k, v); }},
           {"init_seed", [](ViptConfig& c, const std::string& k, const std::string& v) { c.init_seed = parse_number<std::uint64_t>(k, v); }},
           {"init_checkpoint", [](ViptConfig& c, const std::string&, const std::string& v) { c.init_checkpoint = v; }},
       }},
      {"prompt",
       {
           {"mode",
            [](ViptConfig& c, const std::string& k, const std::string& v) {
              if (v == "none") {
                c.prompted = false;
                return;
              }
              c.prompted = true;
              try {
                c.prompt.mode = parse_prompt_mode(v);
              } catch (const std::invalid_argument&) {
                throw ConfigError("invalid value '" + v + "' for key " + k + " (expected vipt, vpt_sum or none)");
              }
            }},
           {"placement", [](ViptConfig& c, const std::string&, const std::string& v) { c.placement = v; }},
           {"latent", [](ViptConfig& c, const std::string& k, const std::string& v) { c.prompt.latent = parse_size(k, v); }},
       }},
      {"schedule",
       {
           {"tune",
            [](ViptConfig& c, const std::string& k, const std::string& v) {
              try {
                c.tune = parse_tune_mode(v);
              } catch (const std::invalid_argument&) {
                throw ConfigError("invalid value '" + v + "' for key " + k);
              }
            }},
           {"epochs", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.epochs = parse_size(k, v); }},
           {"steps_per_epoch", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.steps_per_epoch = parse_size(k, v); }},
           {"base_lr", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.base_lr = parse_number<double>(k, v); }},
           {"weight_decay", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.weight_decay = parse_number<double>(k, v); }},
           {"decay_epoch", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.decay_epoch = parse_size(k, v); }},
           {"decay_factor", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.decay_factor = parse_number<double>(k, v); }},
           {"batch_size", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.batch_size = parse_size(k, v); }},
           {"seed", [](ViptConfig& c, const std::string& k, const std::string& v) { c.schedule.seed = parse_number<std::uint64_t>(k, v); }},
       }},
      {"loss",
       {
           {"lambda_iou", [](ViptConfig& c, const std::string& k, const std::string& v) { c.loss.lambda_iou = parse_number<double>(k, v); }},
           {"lambda_l1", [](ViptConfig& c, const std::string& k, const std::string& v) { c.loss.lambda_l1 = parse_number<double>(k, v); }},
       }},
      {"data",
       {
           {"max_gap", [](ViptConfig& c, const std::string& k, const std::string& v) { c.data.max_gap = parse_size(k, v); }},
           {"max_shift", [](ViptConfig& c, const std::string& k, const std::string& v) { c.data.max_shift = parse_number<double>(k, v); }},
           {"max_log_scale", [](ViptConfig& c, const std::string& k, const std::string& v) { c.data.max_log_scale = parse_number<double>(k, v); }},
           {"template_context", [](ViptConfig& c, const std::string& k, const std::string& v) { c.data.crop.template_context = parse_number<double>(k, v); }},
           {"search_context", [](ViptConfig& c, const std::string& k, const std::string& v) { c.data.crop.search_context = parse_number<double>(k, v); }},
       }},
  };
  return table;
}

void finalize(ViptConfig& c) {
  try {
    c.foundation.validate();
    c.prompt.placement = parse_placement(c.placement, c.foundation.layers);
    if (c.prompted) c.prompt.validate(c.foundation);
    c.schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(e.what());
  }
  if (c.loss.lambda_iou < 0 || c.loss.lambda_l1 < 0) throw ConfigError("loss weights must be non-negative");
  if (!(c.data.max_shift >= 0 && c.data.max_shift < 0.5)) throw ConfigError("data.max_shift must be in [0, 0.5)");
  if (!(c.data.max_log_scale >= 0)) throw ConfigError("data.max_log_scale must be non-negative");
  if (!(c.data.crop.template_context > 0 && c.data.crop.search_context > 0)) {
    throw ConfigError("crop contexts must be positive");
  }
  c.data.seed = c.schedule.seed;
  c.data.crop.template_size = c.foundation.template_size;
  c.data.crop.search_size = c.foundation.search_size;
}

}  // namespace

TrainModel ViptConfig::model() const {
  TrainModel m{foundation, std::nullopt};
  if (prompted) m.prompt = prompt;
  return m;
}

std::vector<std::size_t> parse_placement(const std::string& text, std::size_t layers) {
  if (text == "deep") return PromptConfig::interval_placement(1, layers);
  if (text == "shallow") return {1};
  if (text == "none") return {};
  if (text.rfind("interval:", 0) == 0) {
    return PromptConfig::interval_placement(parse_size("prompt.placement", text.substr(9)), layers);
  }
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    out.push_back(parse_size("prompt.placement", item));
  }
  if (out.empty()) throw ConfigError("invalid value '" + text + "' for key prompt.placement");
  std::sort(out.begin(), out.end());
  for (std::size_t l : out) {
    if (l < 1 || l > layers) {
      throw ConfigError("prompt.placement layer " + std::to_string(l) + " outside 1.." + std::to_string(layers));
    }
  }
  return out;
}

ViptConfig default_config(const std::string& preset) {
  ViptConfig c;
  c.preset = preset;
  if (preset == "paper") {
    c.foundation = FoundationConfig::paper();
    c.schedule = TrainSchedule::paper();
  } else if (preset == "toy") {
    c.foundation = FoundationConfig::toy();
  } else if (preset == "gradcheck") {
    c.foundation = FoundationConfig::gradcheck();
    c.prompt.latent = 4;
  } else {
    throw ConfigError("invalid value '" + preset + "' for key foundation.preset (expected paper, toy or gradcheck)");
  }
  finalize(c);
  return c;
}

ViptConfig parse_config(const std::string& text) {
  const pt::ptree tree = read_tree(text);
  std::string preset = "toy";
  if (auto p = tree.get_optional<std::string>("foundation.preset")) preset = *p;
  ViptConfig c = default_config(preset);
  apply(tree, config_table(), c, "foundation.preset");
  finalize(c);
  return c;
}

ViptConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_ini(const ViptConfig& c) {
  std::ostringstream o;
  std::string placement;
  for (std::size_t l : c.prompt.placement) placement += (placement.empty() ? "" : ",") + std::to_string(l);
  o << "[foundation]\n"
    << "preset = " << c.preset << "\n"
    << "dim = " << c.foundation.dim << "\n"
    << "layers = " << c.foundation.layers << "\n"
    << "heads = " << c.foundation.heads << "\n"
    << "ffn_dim = " << c.foundation.ffn_dim << "\n"
    << "patch = " << c.foundation.patch << "\n"
    << "template_size = " << c.foundation.template_size << "\n"
    << "search_size = " << c.foundation.search_size << "\n"
    << "init_seed = " << c.init_seed << "\n"
    << "init_checkpoint = " << c.init_checkpoint << "\n\n"
    << "[prompt]\n"
    << "mode = " << (c.prompted ? to_string(c.prompt.mode) : std::string("none")) << "\n"
    << "placement = " << (placement.empty() ? "none" : placement) << "\n"
    << "latent = " << c.prompt.latent << "\n\n"
    << "[schedule]\n"
    << "tune = " << to_string(c.tune) << "\n"
    << "epochs = " << c.schedule.epochs << "\n"
    << "steps_per_epoch = " << c.schedule.steps_per_epoch << "\n"
    << "base_lr = " << fmt(c.schedule.base_lr) << "\n"
    << "weight_decay = " << fmt(c.schedule.weight_decay) << "\n"
    << "decay_epoch = " << c.schedule.decay_epoch << "\n"
    << "decay_factor = " << fmt(c.schedule.decay_factor) << "\n"
    << "batch_size = " << c.schedule.batch_size << "\n"
    << "seed = " << c.schedule.seed << "\n\n"
    << "[loss]\n"
    << "lambda_iou = " << fmt(c.loss.lambda_iou) << "\n"
    << "lambda_l1 = " << fmt(c.loss.lambda_l1) << "\n\n"
    << "[data]\n"
    << "max_gap = " << c.data.max_gap << "\n"
    << "max_shift = " << fmt(c.data.max_shift) << "\n"
    << "max_log_scale = " << fmt(c.data.max_log_scale) << "\n"
    << "template_context = " << fmt(c.data.crop.template_context) << "\n"
    << "search_context = " << fmt(c.data.crop.search_context) << "\n";
  return o.str();
}

// ---- dataset specs ----------------------------------------------------------

namespace {

const Table<DatasetSpec>& dataset_table() {
  static const Table<DatasetSpec> table = {
      {"dataset",
       {
           {"sequences", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.sequences = parse_size(k, v); }},
           {"seed", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.seed = parse_number<std::uint64_t>(k, v); }},
           {"num_frames", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.num_frames = parse_size(k, v); }},
           {"height", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.height = parse_size(k, v); }},
           {"width", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.width = parse_size(k, v); }},
           {"shape",
            [](DatasetSpec& s, const std::string& k, const std::string& v) {
              if (v == "square") {
                s.scene.shape = TargetShape::kSquare;
              } else if (v == "disc") {
                s.scene.shape = TargetShape::kDisc;
              } else {
                throw ConfigError("invalid value '" + v + "' for key " + k + " (expected square or disc)");
              }
            }},
           {"min_size", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.min_size = parse_number<double>(k, v); }},
           {"max_size", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.max_size = parse_number<double>(k, v); }},
           {"rgb_corruption_rate", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.rgb_corruption_rate = parse_number<double>(k, v); }},
           {"aux_noise", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.aux_noise = parse_number<double>(k, v); }},
           {"distractors", [](DatasetSpec& s, const std::string& k, const std::string& v) { s.scene.distractors = parse_size(k, v); }},
       }},
  };
  return table;
}

}  // namespace

DatasetSpec parse_dataset_spec(const std::string& text) {
  DatasetSpec spec;
  apply(read_tree(text), dataset_table(), spec);
  if (spec.sequences == 0) throw ConfigError("dataset.sequences must be positive");
  try {
    spec.scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read dataset spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset_spec(ss.str());
}

std::string dataset_spec_to_ini(const DatasetSpec& s) {
  std::ostringstream o;
  o << "[dataset]\n"
    << "sequences = " << s.sequences << "\n"
    << "seed = " << s.scene.seed << "\n"
    << "num_frames = " << s.scene.num_frames << "\n"
    << "height = " << s.scene.height << "\n"
    << "width = " << s.scene.width << "\n"
    << "shape = " << (s.scene.shape == TargetShape::kSquare ? "square" : "disc") << "\n"
    << "min_size = " << fmt(s.scene.min_size) << "\n"
    << "max_size = " << fmt(s.scene.max_size) << "\n"
    << "rgb_corruption_rate = " << fmt(s.scene.rgb_corruption_rate) << "\n"
    << "aux_noise = " << fmt(s.scene.aux_noise) << "\n"
    << "distractors = " << s.scene.distractors << "\n";
  return o.str();
}

std::vector<Sequence> generate_dataset(const DatasetSpec& spec) {
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < spec.sequences; ++i) {
    SceneSpec scene = spec.scene;
    scene.seed = derive_seed(spec.scene.seed, i);
    char id[32];
    std::snprintf(id, sizeof(id), "seq%03zu", i);
    out.push_back(gen_sequence(scene, id));
  }
  return out;
}

}  // namespace vipt
