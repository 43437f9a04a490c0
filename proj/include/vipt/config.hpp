#pragma once

// INI-style configuration files (`key = value` under [section] headers).
// Every key has a default; unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "vipt/foundation.hpp"
#include "vipt/objective.hpp"
#include "vipt/prompt.hpp"
#include "vipt/synthdata.hpp"
#include "vipt/tuner.hpp"

namespace vipt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ViptConfig {
  std::string preset = "toy";  // foundation defaults: paper, toy or gradcheck
  FoundationConfig foundation = FoundationConfig::toy();
  std::uint64_t init_seed = 1;
  std::string init_checkpoint;  // optional pretrained foundation weights

  bool prompted = true;  // false: the RGB-only foundation tracker
  std::string placement = "deep";  // deep, shallow, none, interval:K or a list "1,4,7"
  PromptConfig prompt;

  TuneMode tune = TuneMode::kPromptTune;
  TrainSchedule schedule;
  LossWeights loss;
  PairSampler::Options data;  // data.seed follows schedule.seed

  TrainModel model() const;
};

// Resolves `placement` against the layer count.
std::vector<std::size_t> parse_placement(const std::string& text, std::size_t layers);

ViptConfig default_config(const std::string& preset = "toy");
ViptConfig parse_config(const std::string& text);
ViptConfig load_config(const std::filesystem::path& path);
std::string config_to_ini(const ViptConfig& cfg);

struct DatasetSpec {
  std::size_t sequences = 4;
  SceneSpec scene;
};

DatasetSpec parse_dataset_spec(const std::string& text);
DatasetSpec load_dataset_spec(const std::filesystem::path& path);
std::string dataset_spec_to_ini(const DatasetSpec& spec);
// Sequence i uses derive_seed(scene.seed, i) and id "seq%03d".
std::vector<Sequence> generate_dataset(const DatasetSpec& spec);

}  // namespace vipt
