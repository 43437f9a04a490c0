// Acceptance run: one PASS/FAIL line per criterion, plus a non-gating report
// on held-out IoU against the number of MCP blocks.
//
//   vipt_acceptance --work DIR [--only 1,2,...] [--skip-blocks-report]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "metric_fixture.hpp"
#include "vipt/checkpoint.hpp"
#include "vipt/cli.hpp"
#include "vipt/config.hpp"
#include "vipt/kernels.hpp"
#include "vipt/prompt.hpp"
#include "vipt/tuner.hpp"

using namespace vipt;
namespace fs = std::filesystem;

namespace {

// Margin of prompted over RGB-only IoU on the corrupted held-out frames,
// observed on the first verified run and frozen here (rounded down).
constexpr double kFrozenMargin = 0.43;  // observed 0.4329

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

int run(const std::vector<std::string>& args) {
  std::ostringstream err;
  const int code = run_cli(args, std::cout, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

// ---- 1 ----------------------------------------------------------------------

Outcome parameter_budget() {
  const FoundationConfig f = FoundationConfig::paper();
  auto trainable = [&](const PromptConfig& p) {
    return count_params(shape_store({f, p}, TuneMode::kPromptTune), CountFilter::kTrainable);
  };
  const std::size_t deep = trainable(PromptConfig::deep(f.layers, 8));
  const std::size_t shallow = trainable(PromptConfig::shallow(8));
  const std::size_t vpt = trainable(PromptConfig::vpt_shallow());
  const std::size_t total = count_params(shape_store({f, PromptConfig::deep(f.layers, 8)}, TuneMode::kPromptTune),
                                         CountFilter::kAll);
  const double ratio = static_cast<double>(deep) / static_cast<double>(total);
  auto near = [](std::size_t v, double ref) { return std::abs(static_cast<double>(v) - ref) <= 0.05 * ref; };
  const bool ok = deep >= 800000 && deep <= 880000 && near(deep, 0.84e6) && near(shallow, 0.61e6) &&
                  near(vpt, 0.59e6) && ratio < 0.01;
  return {ok, "vipt deep " + std::to_string(deep) + ", vipt shallow " + std::to_string(shallow) +
                  ", vpt shallow " + std::to_string(vpt) + ", ratio " + fmt(100 * ratio, 4) + "% of " +
                  std::to_string(total)};
}

// ---- 2 ----------------------------------------------------------------------

Outcome zero_prompt_reduction() {
  const FoundationConfig f = FoundationConfig::toy();
  std::size_t identical = 0, trials = 0;
  for (const PromptConfig& prompt : {PromptConfig::deep(f.layers, 8)}) {
    ParamStore store = build_store({f, prompt}, 21);
    for (auto& e : store) {
      if (is_prompt_group(e.spec.group)) e.value.fill(0.0);
    }
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(-1, 1);
    auto rnd = [&](std::size_t side) {
      Tensor t({3, side, side});
      for (auto& v : t.values()) v = u(rng);
      return t;
    };
    for (int i = 0; i < 100; ++i) {
      const TrackerInputs in{rnd(f.template_size), rnd(f.search_size), rnd(f.template_size), rnd(f.search_size)};
      const BoxPrediction a = predict_prompted(store, f, prompt, in);
      const BoxPrediction b = predict_foundation(store, f, in.template_rgb, in.search_rgb);
      identical += a.cls_map.bitwise_equal(b.cls_map) && a.offset_map.bitwise_equal(b.offset_map) &&
                   a.size_map.bitwise_equal(b.size_map);
      ++trials;
    }
  }
  return {identical == trials, std::to_string(identical) + "/" + std::to_string(trials) + " bitwise identical"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const FoundationConfig f = FoundationConfig::gradcheck();
  CropSettings crop;
  crop.template_size = f.template_size;
  crop.search_size = f.search_size;
  double worst = 0.0;
  std::size_t coords = 0;
  std::string detail;
  for (const PromptConfig& prompt : {PromptConfig::deep(f.layers, 4), PromptConfig::vpt_deep(f.layers)}) {
    const TrainModel model{f, prompt};
    ParamStore store = build_store(model, 31);
    partition_params(store, TuneMode::kPromptTune);
    const GradCheckReport rep = model_grad_check(store, model, random_pair(crop, 32), {});
    worst = std::max(worst, rep.max_rel_error);
    coords += rep.coordinates;
    detail += to_string(prompt.mode) + " " + fmt(rep.max_rel_error, 3) + "; ";
  }
  return {worst < 1e-4, detail + std::to_string(coords) + " coordinates, max relative error " + fmt(worst, 3)};
}

// ---- 4 ----------------------------------------------------------------------

Outcome freezing_contract(const fs::path& work) {
  DatasetSpec spec;
  spec.sequences = 2;
  spec.scene.seed = 41;
  spec.scene.num_frames = 30;
  const auto sequences = generate_dataset(spec);
  ViptConfig cfg = default_config("toy");
  const TrainModel model = cfg.model();
  ParamStore store = build_store(model, 42);
  partition_params(store, TuneMode::kPromptTune);
  const ParamStore before = store;
  TrainSchedule sch;
  sch.epochs = 1;
  sch.steps_per_epoch = 100;
  sch.decay_epoch = 1;
  sch.batch_size = 2;
  const PairSampler sampler(sequences, cfg.data);
  fit(store, model, [&](std::uint64_t s, std::uint64_t k) { return sampler.sample(s, k); }, sch);
  save_checkpoint(store, work / "freezing.bin");

  std::size_t frozen_ok = 0, frozen = 0, moved = 0, trainable = 0;
  for (const auto& e : store) {
    const Tensor& old = before.at(e.spec.name).value;
    if (e.trainable) {
      ++trainable;
      moved += !e.value.bitwise_equal(old);
    } else {
      ++frozen;
      frozen_ok += e.value.bitwise_equal(old);
    }
  }
  return {frozen_ok == frozen && moved == trainable && trainable > 0,
          std::to_string(frozen_ok) + "/" + std::to_string(frozen) + " frozen entries unchanged, " +
              std::to_string(moved) + "/" + std::to_string(trainable) + " trainable entries changed"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome fovea_normalization() {
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<std::size_t> dim(1, 24);
  std::uniform_real_distribution<double> lam(-3, 3), val(-20, 20);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = dim(rng), h = dim(rng), w = dim(rng);
    const double lambda = lam(rng);
    Tensor m({d, h, w});
    for (auto& v : m.values()) v = val(rng);
    const Tensor mask = fovea_mask(m, lambda);
    // token-major kernel: attn is the unscaled softmax
    std::vector<double> tok(h * w * d), out(h * w * d), attn(h * w * d);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < h * w; ++i) tok[i * d + c] = m[c * h * w + i];
    kernels::fovea_forward(tok, lambda, out, attn, h * w, d);
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0, t = 0.0;
      for (std::size_t i = 0; i < h * w; ++i) {
        s += mask[c * h * w + i];
        t += lambda * attn[i * d + c];
      }
      worst = std::max({worst, std::abs(s - lambda), std::abs(t - lambda)});
    }
  }
  return {worst <= 1e-12, "1000 shapes, max |sum - lambda| " + fmt(worst, 3)};
}

// ---- 6 ----------------------------------------------------------------------

Outcome metric_fidelity() {
  using vipt::test::long_term_fixture;
  // Re 0.596, Pr 0.592: 1480 target frames at IoU 0.596 plus 10 false alarms
  const PrReF a = pr_re_f(long_term_fixture(1480, 1480, 0.596, 10), {1.0});
  // Re 0.506, Pr 0.560: 1265 of 1400 target frames reported at IoU 0.56
  const PrReF b = pr_re_f(long_term_fixture(1400, 1265, 0.56, 0), {1.0});
  const bool inputs = std::abs(a.re - 0.596) < 1e-9 && std::abs(a.pr - 0.592) < 1e-9 &&
                      std::abs(b.re - 0.506) < 1e-9 && std::abs(b.pr - 0.560) < 1e-9;
  const bool ok = inputs && std::abs(a.f - 0.594) <= 0.001 && std::abs(b.f - 0.532) <= 0.001 &&
                  std::abs(f_score(0.592, 0.596) - 0.594) <= 0.001 && std::abs(f_score(0.560, 0.506) - 0.532) <= 0.001;
  return {ok, "F " + fmt(a.f, 5) + " (Pr " + fmt(a.pr, 4) + ", Re " + fmt(a.re, 4) + "), F " + fmt(b.f, 5) +
                  " (Pr " + fmt(b.pr, 4) + ", Re " + fmt(b.re, 4) + ")"};
}

// ---- 7 / 8 ------------------------------------------------------------------

const char* kTrainSpec =
    "[dataset]\nsequences = 16\nseed = 2024\nnum_frames = 100\nrgb_corruption_rate = 0.5\n";
const char* kHeldOutSpec =
    "[dataset]\nsequences = 6\nseed = 999\nnum_frames = 100\nrgb_corruption_rate = 0.5\n";

std::string learning_config(const std::string& placement, std::size_t steps_per_epoch) {
  return "[foundation]\npreset = toy\ndim = 64\nlayers = 4\n"
         "[prompt]\nmode = vipt\nplacement = " +
         placement +
         "\n"
         "[schedule]\nepochs = 10\nsteps_per_epoch = " +
         std::to_string(steps_per_epoch) +
         "\ndecay_epoch = 8\nbatch_size = 8\nbase_lr = 1e-3\nseed = 7\n";
}

struct Datasets {
  fs::path train, held_out;
  bool ok = false;
};

Datasets make_datasets(const fs::path& work) {
  Datasets d{work / "train_data", work / "held_out", false};
  spit(work / "train_spec.ini", kTrainSpec);
  spit(work / "held_out_spec.ini", kHeldOutSpec);
  d.ok = run({"gen", "--spec", (work / "train_spec.ini").string(), "--out", d.train.string(), "--force"}) == 0 &&
         run({"gen", "--spec", (work / "held_out_spec.ini").string(), "--out", d.held_out.string(), "--force"}) == 0;
  return d;
}

std::vector<double> csv_losses(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (int i = 0; i < 4; ++i) std::getline(ss, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

bool train(const fs::path& config, const Datasets& data, const fs::path& out) {
  fs::remove_all(out);
  return run({"train", "--config", config.string(), "--data", data.train.string(), "--out", out.string()}) == 0;
}

// corrupted-frame mean IoU, overall mean IoU
std::pair<double, double> held_out_iou(const fs::path& run_dir, const Datasets& data, const fs::path& out,
                                       bool rgb_only) {
  std::vector<std::string> args = {"eval", "--checkpoint", (run_dir / "checkpoint.bin").string(), "--data",
                                   data.held_out.string(), "--out", out.string()};
  if (rgb_only) args.push_back("--rgb-only");
  if (run(args) != 0) return {-1, -1};
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  return {report["corrupted_mean_iou"].get<double>(), report["mean_iou"].get<double>()};
}

Outcome learning_behavior(const fs::path& work, const Datasets& data) {
  if (!data.ok) return {false, "dataset generation failed"};
  spit(work / "learning.ini", learning_config("interval:1", 200));
  if (!train(work / "learning.ini", data, work / "run1")) return {false, "training failed"};
  const auto losses = csv_losses(work / "run1" / "loss.csv");
  if (losses.size() != 2000) return {false, "expected 2000 logged steps, got " + std::to_string(losses.size())};
  const double drop = 1 - losses.back() / losses.front();
  const auto [vipt_c, vipt_all] = held_out_iou(work / "run1", data, work / "eval_vipt", false);
  const auto [rgb_c, rgb_all] = held_out_iou(work / "run1", data, work / "eval_rgb", true);
  const double margin = vipt_c - rgb_c;
  const bool a = losses.back() < 0.5 * losses.front();
  const bool b = vipt_c > rgb_c && margin >= kFrozenMargin;
  return {a && b, "(a) loss " + fmt(losses.front(), 5) + " -> " + fmt(losses.back(), 5) + " (" +
                      fmt(100 * drop, 4) + "% drop); (b) corrupted-frame IoU ViPT " + fmt(vipt_c, 4) +
                      " vs RGB-only " + fmt(rgb_c, 4) + ", margin " + fmt(margin, 4) + " (frozen >= " +
                      fmt(kFrozenMargin, 4) + "); all-frame IoU " + fmt(vipt_all, 4) + " vs " + fmt(rgb_all, 4)};
}

Outcome determinism(const fs::path& work, const Datasets& data) {
  if (!fs::exists(work / "run1" / "checkpoint.bin")) return {false, "criterion 7 run missing"};
  if (!train(work / "learning.ini", data, work / "run2")) return {false, "training failed"};
  const bool csv = slurp(work / "run1" / "loss.csv") == slurp(work / "run2" / "loss.csv");
  const bool ckpt = slurp(work / "run1" / "checkpoint.bin") == slurp(work / "run2" / "checkpoint.bin");
  return {csv && ckpt, std::string("loss.csv ") + (csv ? "identical" : "differs") + ", checkpoint.bin " +
                           (ckpt ? "identical" : "differs")};
}

// ---- 9 ----------------------------------------------------------------------

Outcome checkpoint_round_trip(const fs::path& work) {
  const TrainModel model{FoundationConfig::toy(), PromptConfig::deep(4, 8)};
  ParamStore store = build_store(model, 91);
  partition_params(store, TuneMode::kPromptTune);
  save_checkpoint(store, work / "rt_a.bin");
  save_checkpoint(load_checkpoint(work / "rt_a.bin"), work / "rt_b.bin");
  ParamStore fresh = build_store(model, 92);
  load_into(fresh, work / "rt_a.bin");
  save_checkpoint(fresh, work / "rt_c.bin");
  const std::string bytes = slurp(work / "rt_a.bin");
  bool same = bytes == slurp(work / "rt_b.bin") && bytes == slurp(work / "rt_c.bin");
  if (fs::exists(work / "run1" / "checkpoint.bin")) {
    const std::string trained = slurp(work / "run1" / "checkpoint.bin");
    same = same && checkpoint_bytes(parse_checkpoint(trained)) == trained;
  }

  std::size_t rejected = 0, cases = 0;
  auto expect = [&](const std::string& b, auto tag) {
    ++cases;
    try {
      parse_checkpoint(b);
    } catch (const decltype(tag)&) {
      ++rejected;
    } catch (...) {
    }
  };
  std::string bad = bytes;
  bad[0] ^= 0x20;
  expect(bad, CheckpointHeaderError(""));
  bad = bytes;
  bad[8] = 9;
  expect(bad, CheckpointHeaderError(""));
  expect(bytes + "x", CheckpointHeaderError(""));
  expect(bytes.substr(0, 10), CheckpointTruncatedError(""));
  expect(bytes.substr(0, bytes.size() / 2), CheckpointTruncatedError(""));
  expect(bytes.substr(0, bytes.size() - 4), CheckpointTruncatedError(""));

  ++cases;
  try {
    ParamStore other = build_store({FoundationConfig::toy(), PromptConfig::shallow(8)}, 1);
    load_into(other, work / "rt_a.bin");
  } catch (const CheckpointShapeError&) {
    ++rejected;
  }
  return {same && rejected == cases, std::string("save/load/save ") + (same ? "byte-identical" : "differs") + ", " +
                                         std::to_string(rejected) + "/" + std::to_string(cases) +
                                         " corruptions rejected with the documented class"};
}

// ---- non-gating -------------------------------------------------------------

void blocks_report(const fs::path& work, const Datasets& data) {
  std::cout << "report (non-gating): held-out IoU by MCP block count, 500 steps each\n";
  double last = -1;
  bool monotone = true;
  for (const auto& [blocks, placement] : std::vector<std::pair<int, std::string>>{
           {1, "shallow"}, {2, "interval:2"}, {4, "interval:1"}}) {
    const fs::path cfg = work / ("blocks_" + std::to_string(blocks) + ".ini");
    spit(cfg, learning_config(placement, 50));
    const fs::path dir = work / ("blocks_" + std::to_string(blocks));
    if (!train(cfg, data, dir)) {
      std::cout << "  " << blocks << " blocks: training failed\n";
      return;
    }
    const auto [c, all] = held_out_iou(dir, data, dir / "eval", false);
    std::cout << "  " << blocks << " blocks: corrupted-frame IoU " << fmt(c, 4) << ", all-frame IoU " << fmt(all, 4)
              << "\n";
    monotone = monotone && all >= last;
    last = all;
  }
  std::cout << "  trend " << (monotone ? "non-decreasing" : "not monotone") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance criteria");
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  bool skip_report = false;
  app.add_option("--work", work_dir, "scratch directory");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_flag("--skip-blocks-report", skip_report, "skip the non-gating block-count report");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

  Datasets data;
  if (want(7) || want(8) || (!skip_report && wanted.empty())) data = make_datasets(work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, parameter_budget},
      {2, zero_prompt_reduction},
      {3, gradient_correctness},
      {4, [&] { return freezing_contract(work); }},
      {5, fovea_normalization},
      {6, metric_fidelity},
      {7, [&] { return learning_behavior(work, data); }},
      {8, [&] { return determinism(work, data); }},
      {9, [&] { return checkpoint_round_trip(work); }},
  };
  const char* names[] = {"", "parameter budget", "zero-prompt reduction", "gradient correctness",
                         "freezing contract", "fovea normalization", "metric fidelity", "learning behavior",
                         "determinism", "checkpoint round trip"};

  std::vector<std::string> lines;
  bool all = true;
  for (const auto& [n, fn] : criteria) {
    if (!want(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << "criterion " << n << " [" << names[n] << "]: " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ("
         << fmt(secs, 3) << " s)";
    std::cout << line.str() << "\n" << std::flush;
    lines.push_back(line.str());
    all = all && o.pass;
  }
  if (!skip_report && wanted.empty()) blocks_report(work, data);

  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (all ? "ALL PASS" : "SOME CRITERIA FAILED") << "\n";
  return all ? 0 : 1;
}
