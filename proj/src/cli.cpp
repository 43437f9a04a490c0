#include "vipt/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <omp.h>

#include "vipt/checkpoint.hpp"

namespace vipt {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- tracking ---------------------------------------------------------------

namespace {

Rect sane_previous(const Rect& r, const Image8& frame) {
  const double W = static_cast<double>(frame.width), H = static_cast<double>(frame.height);
  const double w = std::clamp(r.w, 4.0, W), h = std::clamp(r.h, 4.0, H);
  const double cx = std::clamp(r.cx(), 0.0, W), cy = std::clamp(r.cy(), 0.0, H);
  return {cx - w / 2, cy - h / 2, w, h};
}

}  // namespace

TrackResult track_sequence(const ParamStore& store, const TrainModel& model, const CropSettings& crop,
                           const Sequence& seq) {
  TrackResult out;
  out.id = seq.id;
  if (seq.size() == 0) return out;
  const Rect init = seq.boxes[0];
  out.boxes.push_back(init);
  out.confidences.push_back(1.0);
  Rect prev = init;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const SamplePair pair = make_tracking_pair(seq, init, i, sane_previous(prev, seq.rgb[i]), crop);
    const BoxPrediction p = predict_sample(store, model, pair);
    const CropWindow& w = pair.search_window;
    const Rect r = to_rect(Box{w.x0 + p.box.cx * w.side, w.y0 + p.box.cy * w.side, p.box.w * w.side, p.box.h * w.side});
    out.boxes.push_back(r);
    out.confidences.push_back(p.score);
    prev = r;
  }
  return out;
}

TrackResult oracle_track(const Sequence& seq) {
  TrackResult out;
  out.id = seq.id;
  for (const Rect& r : seq.boxes) {
    out.boxes.push_back(r);
    out.confidences.push_back(1.0);
  }
  return out;
}

std::vector<FrameResult> frame_results(const Sequence& seq, const TrackResult& track) {
  if (track.boxes.size() != seq.size()) {
    throw std::invalid_argument("sequence " + seq.id + ": " + std::to_string(track.boxes.size()) + " results for " +
                                std::to_string(seq.size()) + " frames");
  }
  std::vector<FrameResult> out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    FrameResult r;
    r.pred = track.boxes[i];
    r.gt = seq.boxes[i];
    if (i < track.confidences.size()) r.confidence = track.confidences[i];
    out.push_back(r);
  }
  return out;
}

DatasetEval evaluate_dataset(const std::vector<Sequence>& sequences,
                             const std::function<TrackResult(const Sequence&)>& tracker) {
  if (sequences.empty()) throw std::invalid_argument("evaluation dataset is empty");
  DatasetEval ev;
  ev.tracks.resize(sequences.size());
  std::vector<std::string> errors(sequences.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    try {
      ev.tracks[s] = tracker(sequences[s]);
    } catch (const std::exception& e) {
      errors[s] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error(e);
  }
  std::vector<FrameResult> all;
  double corrupted_sum = 0.0;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto frames = frame_results(sequences[s], ev.tracks[s]);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (i < sequences[s].corrupted.size() && sequences[s].corrupted[i]) {
        corrupted_sum += iou(*frames[i].pred, *frames[i].gt);
        ++ev.corrupted_frames;
      }
    }
    all.insert(all.end(), frames.begin(), frames.end());
  }
  ev.overall = evaluate(all);
  ev.corrupted_mean_iou = ev.corrupted_frames ? corrupted_sum / static_cast<double>(ev.corrupted_frames) : 0.0;
  return ev;
}

// ---- audit ------------------------------------------------------------------

ParamStore shape_store(const TrainModel& model, TuneMode mode) {
  ParamStore store;
  store.declare(model_param_specs(model));
  partition_params(store, mode);
  return store;
}

std::string store_table(const ParamStore& store) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> groups;  // total, trainable
  std::vector<std::string> order;
  for (const auto& e : store) {
    const std::string g(group_name(e.spec.group));
    if (!groups.count(g)) order.push_back(g);
    groups[g].first += e.spec.numel();
    if (e.trainable) groups[g].second += e.spec.numel();
  }
  std::ostringstream o;
  o << std::left << std::setw(14) << "module" << std::right << std::setw(14) << "params" << std::setw(14)
    << "trainable" << "\n";
  for (const auto& g : order) {
    o << std::left << std::setw(14) << g << std::right << std::setw(14) << groups[g].first << std::setw(14)
      << groups[g].second << "\n";
  }
  const std::size_t total = count_params(store, CountFilter::kAll);
  const std::size_t trainable = count_params(store, CountFilter::kTrainable);
  o << std::left << std::setw(14) << "total" << std::right << std::setw(14) << total << std::setw(14) << trainable
    << "\n";
  return o.str();
}

std::string audit_report(const FoundationConfig& foundation, std::size_t latent) {
  struct Variant {
    const char* name;
    PromptConfig prompt;
    TuneMode mode;
  };
  const std::vector<Variant> variants = {
      {"vipt_deep", PromptConfig::deep(foundation.layers, latent), TuneMode::kPromptTune},
      {"vipt_shallow", PromptConfig::shallow(latent), TuneMode::kPromptTune},
      {"vpt_sum_shallow", PromptConfig::vpt_shallow(), TuneMode::kPromptTune},
      {"vpt_sum_deep", PromptConfig::vpt_deep(foundation.layers), TuneMode::kPromptTune},
      {"full", PromptConfig::deep(foundation.layers, latent), TuneMode::kFullTune},
  };
  std::ostringstream o;
  o << std::left << std::setw(18) << "variant" << std::right << std::setw(14) << "trainable" << std::setw(14)
    << "total" << std::setw(12) << "ratio" << "\n";
  for (const auto& v : variants) {
    const ParamStore s = shape_store(TrainModel{foundation, v.prompt}, v.mode);
    const std::size_t t = count_params(s, CountFilter::kTrainable), n = count_params(s, CountFilter::kAll);
    o << std::left << std::setw(18) << v.name << std::right << std::setw(14) << t << std::setw(14) << n
      << std::setw(11) << std::fixed << std::setprecision(4) << 100.0 * static_cast<double>(t) / static_cast<double>(n)
      << "%\n";
  }
  o << "\nvipt_deep by module\n"
    << store_table(shape_store(TrainModel{foundation, PromptConfig::deep(foundation.layers, latent)},
                               TuneMode::kPromptTune));
  return o.str();
}

// ---- commands ---------------------------------------------------------------

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

bool non_empty_dir(const fs::path& dir) { return fs::is_directory(dir) && !fs::is_empty(dir); }

int cmd_gen(const fs::path& spec_path, const fs::path& out_dir, bool force, std::ostream& out) {
  const DatasetSpec spec = load_dataset_spec(spec_path);
  if (fs::exists(out_dir) && !fs::is_directory(out_dir)) throw UsageError(out_dir.string() + " is not a directory");
  if (non_empty_dir(out_dir)) {
    if (!force) throw UsageError("output directory " + out_dir.string() + " is not empty (use --force)");
    fs::remove_all(out_dir);
  }
  const auto sequences = generate_dataset(spec);
  write_dataset(sequences, out_dir);
  write_text(out_dir / "dataset.ini", dataset_spec_to_ini(spec));
  out << "generated " << sequences.size() << " sequences, " << total_frames(sequences) << " frames in "
      << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const std::string& data_dir, const fs::path& out_dir,
              const std::string& mode_override, bool dry_run, std::ostream& out) {
  ViptConfig cfg = load_config(config_path);
  if (!mode_override.empty()) {
    try {
      cfg.tune = parse_tune_mode(mode_override);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const TrainModel model = cfg.model();
  if (cfg.tune == TuneMode::kFoundationOnly) throw UsageError("tune mode foundation_only leaves nothing to train");
  if (cfg.tune == TuneMode::kPromptTune && !cfg.prompted) {
    throw UsageError("prompt_tune needs a prompt mode (vipt or vpt_sum)");
  }

  const ParamStore shapes = shape_store(model, cfg.tune);
  const std::size_t trainable = count_params(shapes, CountFilter::kTrainable);
  const std::size_t total = count_params(shapes, CountFilter::kAll);
  if (dry_run) {
    out << "trainable " << trainable << " of " << total << " parameters (" << std::fixed << std::setprecision(4)
        << 100.0 * static_cast<double>(trainable) / static_cast<double>(total) << "%)\n";
    return kExitOk;
  }
  if (data_dir.empty()) throw UsageError("--data is required unless --dry-run is given");
  const auto sequences = read_dataset(data_dir);
  if (sequences.empty()) throw UsageError("dataset " + data_dir + " has no sequences");

  fs::create_directories(out_dir);
  write_text(out_dir / "config.ini", config_to_ini(cfg));

  ParamStore store = build_store(model, cfg.init_seed);
  if (!cfg.init_checkpoint.empty()) load_subset(store, cfg.init_checkpoint);
  partition_params(store, cfg.tune);
  write_text(out_dir / "audit.txt", store_table(store));

  const PairSampler sampler(sequences, cfg.data);
  std::ofstream csv(out_dir / "loss.csv", std::ios::binary);
  csv << loss_csv_header() << "\n";
  FitOptions opts;
  opts.weights = cfg.loss;
  opts.on_step = [&](const StepLog& log) {
    csv << loss_csv_row(log) << "\n";
    if (log.step % 100 == 0 || log.step + 1 == cfg.schedule.total_steps()) {
      out << "step " << log.step << " loss " << log.loss << "\n" << std::flush;
    }
  };
  const auto logs = fit(store, model, [&](std::uint64_t s, std::uint64_t k) { return sampler.sample(s, k); },
                        cfg.schedule, opts);
  csv.close();
  save_checkpoint(store, out_dir / "checkpoint.bin");
  out << "trained " << logs.size() << " steps; trainable " << trainable << " of " << total << "; final loss "
      << logs.back().loss << "\n";
  return kExitOk;
}

json curve_json(const Curve& c) { return json{{"thresholds", c.thresholds}, {"values", c.values}}; }

int cmd_eval(const fs::path& checkpoint, fs::path config_path, const std::string& data_dir, const fs::path& out_dir,
             bool oracle, bool rgb_only, std::ostream& out) {
  if (config_path.empty()) config_path = checkpoint.parent_path() / "config.ini";
  ViptConfig cfg = load_config(config_path);
  if (rgb_only) cfg.prompted = false;
  const auto sequences = read_dataset(data_dir);
  if (sequences.empty()) throw UsageError("dataset " + data_dir + " has no sequences");

  TrainModel model = cfg.model();
  ParamStore store;
  if (!oracle) {
    TrainModel full = model;
    if (rgb_only) full = load_config(config_path).model();  // the checkpoint may hold prompt entries
    store.declare(model_param_specs(full));
    load_into(store, checkpoint);
  }

  const DatasetEval ev = evaluate_dataset(sequences, [&](const Sequence& seq) {
    return oracle ? oracle_track(seq) : track_sequence(store, model, cfg.data.crop, seq);
  });

  fs::create_directories(out_dir / "results");
  write_text(out_dir / "config.ini", config_to_ini(cfg));
  json per_seq = json::array();
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const TrackResult& t = ev.tracks[s];
    write_results(out_dir / "results" / (t.id + ".txt"), t.boxes);
    write_confidences(out_dir / "results" / (t.id + "_confidence.txt"), t.confidences);
    const EvalReport r = evaluate(frame_results(sequences[s], t));
    per_seq.push_back({{"id", t.id}, {"precision_at_20", r.precision_at_20}, {"success_auc", r.success_auc},
                       {"mean_iou", r.mean_iou}});
  }
  const EvalReport& r = ev.overall;
  json report = {{"precision_at_20", r.precision_at_20},
                 {"success_auc", r.success_auc},
                 {"pr", r.pr},
                 {"re", r.re},
                 {"f_score", r.f_score},
                 {"mean_iou", r.mean_iou},
                 {"frames", r.frames},
                 {"corrupted_mean_iou", ev.corrupted_mean_iou},
                 {"corrupted_frames", ev.corrupted_frames},
                 {"precision_curve", curve_json(r.precision)},
                 {"success_curve", curve_json(r.success)},
                 {"sequences", per_seq}};
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  out << std::setprecision(6) << "precision@20 " << r.precision_at_20 << "  success AUC " << r.success_auc
      << "  F " << r.f_score << "  mean IoU " << r.mean_iou << "  corrupted-frame IoU " << ev.corrupted_mean_iou
      << "\n";
  return kExitOk;
}

int cmd_gradcheck(const fs::path& config_path, std::uint64_t seed, std::ostream& out) {
  const ViptConfig cfg = load_config(config_path);
  TrainModel model = cfg.model();
  if (!model.prompt) throw UsageError("gradcheck needs a prompted model");
  const std::size_t total = count_params(shape_store(model, TuneMode::kPromptTune), CountFilter::kAll);
  if (total > kGradcheckParamLimit) {
    throw UsageError("model has " + std::to_string(total) + " parameters; gradcheck is limited to " +
                     std::to_string(kGradcheckParamLimit));
  }
  ParamStore store = build_store(model, cfg.init_seed);
  partition_params(store, TuneMode::kPromptTune);
  const SamplePair sample = random_pair(cfg.data.crop, seed);
  const GradCheckReport rep = model_grad_check(store, model, sample, cfg.loss);
  const bool pass = rep.max_rel_error < 1e-4;
  out << "checked " << rep.coordinates << " coordinates; max relative error " << std::scientific
      << std::setprecision(3) << rep.max_rel_error << (pass ? "  PASS" : "  FAIL") << " (limit 1e-4)\n";
  return pass ? kExitOk : kExitNumeric;
}

int cmd_audit(const std::string& config_path, std::ostream& out) {
  const ViptConfig cfg = config_path.empty() ? default_config("toy") : load_config(config_path);
  out << audit_report(cfg.foundation, cfg.prompt.latent);
  const TrainModel model = cfg.model();
  if (cfg.prompted) {
    out << "\nconfigured model (" << to_string(cfg.tune) << ")\n" << store_table(shape_store(model, cfg.tune));
  }
  return kExitOk;
}

void apply_thread_cap(std::ostream& err) {
  const char* env = std::getenv("VIPT_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n <= 0) {
    err << "ignoring invalid VIPT_THREADS='" << env << "'\n";
    return;
  }
  omp_set_num_threads(static_cast<int>(n));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ViPT prompt tuning for multi-modal tracking"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, config_path, data_dir, mode, checkpoint;
  bool force = false, dry_run = false, oracle = false, rgb_only = false;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic RGB + auxiliary dataset");
  gen->add_option("--spec", spec_path, "dataset spec file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_flag("--force", force, "replace a non-empty output directory");

  auto* train = app.add_subcommand("train", "prompt-tune a model");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--data", data_dir, "dataset directory");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--mode", mode, "override schedule.tune");
  train->add_flag("--dry-run", dry_run, "print parameter accounting only");

  auto* eval = app.add_subcommand("eval", "track a dataset and report metrics");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--config", config_path, "config file (default: config.ini next to the checkpoint)");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_flag("--oracle", oracle, "report the ground truth (debug)");
  eval->add_flag("--rgb-only", rgb_only, "run the foundation tracker without prompts");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the prompt gradients");
  grad->add_option("--config", config_path, "config file")->required();
  grad->add_option("--seed", seed, "input seed");

  auto* audit = app.add_subcommand("audit", "parameter accounting");
  audit->add_option("--config", config_path, "config file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  apply_thread_cap(err);
  try {
    if (*gen) return cmd_gen(spec_path, out_dir, force, out);
    if (*train) {
      if (!dry_run && out_dir.empty()) throw UsageError("--out is required");
      return cmd_train(config_path, data_dir, out_dir, mode, dry_run, out);
    }
    if (*eval) {
      if (!oracle && checkpoint.empty()) throw UsageError("--checkpoint is required unless --oracle is given");
      if (oracle && config_path.empty() && checkpoint.empty()) {
        const fs::path tmp = fs::path(out_dir) / "config.ini";
        fs::create_directories(out_dir);
        write_text(tmp, config_to_ini(default_config("toy")));
        config_path = tmp.string();
      }
      return cmd_eval(checkpoint, config_path, data_dir, out_dir, oracle, rgb_only, out);
    }
    if (*grad) return cmd_gradcheck(config_path, seed, out);
    if (*audit) return cmd_audit(config_path, out);
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace vipt
