#pragma once

// `vipt gen|train|eval|gradcheck|audit`.
//
// Exit codes: 0 success, 2 usage / config / data error, 3 numeric failure.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vipt/config.hpp"
#include "vipt/metrics.hpp"
#include "vipt/params.hpp"
#include "vipt/synthdata.hpp"
#include "vipt/tuner.hpp"

namespace vipt {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr std::size_t kGradcheckParamLimit = 100000;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct TrackResult {
  std::string id;
  std::vector<std::optional<Rect>> boxes;  // pixels, one per frame
  std::vector<double> confidences;
};

// One-pass tracking: template from the frame-0 ground truth, each search
// crop centred on the previous estimate.
TrackResult track_sequence(const ParamStore& store, const TrainModel& model, const CropSettings& crop,
                           const Sequence& seq);
// Debug tracker that reports the ground truth.
TrackResult oracle_track(const Sequence& seq);

std::vector<FrameResult> frame_results(const Sequence& seq, const TrackResult& track);

struct DatasetEval {
  EvalReport overall;
  double corrupted_mean_iou = 0.0;  // mean IoU over frames flagged corrupted
  std::size_t corrupted_frames = 0;
  std::vector<TrackResult> tracks;
};

// Sequences may be tracked in parallel; results are merged in dataset order.
DatasetEval evaluate_dataset(const std::vector<Sequence>& sequences,
                             const std::function<TrackResult(const Sequence&)>& tracker);

// Parameter table for the given foundation under the standard prompt variants.
std::string audit_report(const FoundationConfig& foundation, std::size_t latent);
std::string store_table(const ParamStore& store);

// Shape-only store for `model` with flags set by `mode`.
ParamStore shape_store(const TrainModel& model, TuneMode mode);

}  // namespace vipt
