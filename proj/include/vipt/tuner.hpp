#pragma once

// Prompt tuning: parameter partitioning, accounting, AdamW and the training
// loop. Only the trainable set receives gradients and optimizer state.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vipt/foundation.hpp"
#include "vipt/grad_check.hpp"
#include "vipt/objective.hpp"
#include "vipt/params.hpp"
#include "vipt/prompt.hpp"
#include "vipt/synthdata.hpp"

namespace vipt {

enum class TuneMode { kPromptTune, kFullTune, kFoundationOnly };

std::string to_string(TuneMode mode);
TuneMode parse_tune_mode(const std::string& text);

// prompt_tune: aux embedding, MCP blocks and prompt tables. full_tune:
// everything. foundation_only: nothing. Frozen entries lose their gradient
// and optimizer buffers.
void partition_params(ParamStore& store, TuneMode mode);

bool is_prompt_group(ParamGroup group);

enum class CountFilter { kTrainable, kFrozen, kAll };
std::size_t count_params(const ParamStore& store, CountFilter filter);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One update of every trainable entry. `step` is 1-based. Decay is decoupled
// and only touches entries whose spec asks for it.
void adamw_step(ParamStore& store, double lr, double weight_decay, std::size_t step, const AdamWOptions& opt = {});

struct TrainSchedule {
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 200;
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t decay_epoch = 8;
  double decay_factor = 10.0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;

  static TrainSchedule paper();
  std::size_t total_steps() const { return epochs * steps_per_epoch; }
  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

double lr_at(const TrainSchedule& schedule, std::size_t epoch);

// What gets trained. Without a prompt config the model is the RGB-only
// foundation tracker.
struct TrainModel {
  FoundationConfig foundation;
  std::optional<PromptConfig> prompt;
};

std::vector<ParamSpec> model_param_specs(const TrainModel& model);
// Declared and initialized store for `model`.
ParamStore build_store(const TrainModel& model, std::uint64_t init_seed);

// Tape loss for one sample.
LossParts sample_loss(ParamBinder& params, const TrainModel& model, const SamplePair& sample,
                      const LossWeights& weights);
// Inference on one sample (untracked tape).
BoxPrediction predict_sample(const ParamStore& store, const TrainModel& model, const SamplePair& sample);

// Tape gradient of the sample loss for every trainable entry against central
// differences taken directly on the store values. `worst_input` indexes the
// trainable entries in declaration order.
GradCheckReport model_grad_check(ParamStore& store, const TrainModel& model, const SamplePair& sample,
                                 const LossWeights& weights, double h = 1e-5);

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double cls = 0.0;
  double iou = 0.0;
  double l1 = 0.0;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::size_t step, std::size_t sample);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Sample `slot` of batch `step`; must be a pure function of its arguments.
using SampleSource = std::function<SamplePair(std::uint64_t step, std::uint64_t slot)>;

struct FitOptions {
  LossWeights weights;
  AdamWOptions adamw;
  std::function<void(const StepLog&)> on_step;  // called after each update
};

// Batch loss and mean gradient (written into the trainable entries' grad).
// Samples may run in parallel; the reduction is in slot order.
StepLog accumulate_batch(ParamStore& store, const TrainModel& model, const SampleSource& source, std::size_t step,
                         std::size_t batch_size, const LossWeights& weights);

std::vector<StepLog> fit(ParamStore& store, const TrainModel& model, const SampleSource& source,
                         const TrainSchedule& schedule, const FitOptions& options = {});

// Loss CSV: step,epoch,lr,loss,cls,iou,l1 with shortest round-trip reals.
std::string loss_csv_header();
std::string loss_csv_row(const StepLog& log);

}  // namespace vipt
