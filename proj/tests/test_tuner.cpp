#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <omp.h>

#include "test_util.hpp"
#include "vipt/tuner.hpp"

using namespace vipt;

namespace {

TrainModel small_model() {
  const FoundationConfig f = FoundationConfig::gradcheck();
  return {f, PromptConfig::deep(f.layers, 4)};
}

SampleSource random_source(const FoundationConfig& f) {
  CropSettings crop;
  crop.template_size = f.template_size;
  crop.search_size = f.search_size;
  return [crop](std::uint64_t step, std::uint64_t slot) { return random_pair(crop, step * 1000 + slot); };
}

}  // namespace

TEST(Partition, PromptTuneTrainsOnlyPromptGroups) {
  ParamStore s = build_store(small_model(), 1);
  partition_params(s, TuneMode::kPromptTune);
  std::size_t trainable = 0;
  for (const auto& e : s) {
    EXPECT_EQ(e.trainable, is_prompt_group(e.spec.group)) << e.spec.name;
    trainable += e.trainable;
  }
  EXPECT_GT(trainable, 0u);
  EXPECT_EQ(count_params(s, CountFilter::kTrainable) + count_params(s, CountFilter::kFrozen),
            count_params(s, CountFilter::kAll));
}

TEST(Partition, ModesAndFrozenBuffersCleared) {
  ParamStore s = build_store(small_model(), 1);
  partition_params(s, TuneMode::kFullTune);
  EXPECT_EQ(count_params(s, CountFilter::kFrozen), 0u);
  for (auto& e : s) e.grad = Tensor(e.spec.shape);
  partition_params(s, TuneMode::kFoundationOnly);
  EXPECT_EQ(count_params(s, CountFilter::kTrainable), 0u);
  for (const auto& e : s) EXPECT_TRUE(e.grad.empty());
  EXPECT_EQ(parse_tune_mode(to_string(TuneMode::kFullTune)), TuneMode::kFullTune);
  EXPECT_THROW(parse_tune_mode("half_tune"), std::invalid_argument);
}

TEST(AdamW, FirstStepClosedForm) {
  // After one step the bias-corrected moments are g and g^2, so each entry
  // moves by lr * g / (|g| + eps), after the decoupled decay w -= lr * wd * w.
  ParamStore s;
  s.declare(ParamSpec{"w", {3}, ParamGroup::kPrompter, ParamInit::kZeros, true});
  s.declare(ParamSpec{"b", {2}, ParamGroup::kPrompter, ParamInit::kZeros, false});
  s.initialize(0);
  s.set_value("w", Tensor({3}, {1.0, -2.0, 0.5}));
  s.set_value("b", Tensor({2}, {1.0, 1.0}));
  for (auto& e : s) e.trainable = true;
  s.at("w").grad = Tensor({3}, {0.1, -3.0, 0.0});
  s.at("b").grad = Tensor({2}, {2.0, -1e-3});
  const double lr = 0.01, wd = 0.5, eps = 1e-8;
  adamw_step(s, lr, wd, 1);
  const double w0[3] = {1.0, -2.0, 0.5}, g[3] = {0.1, -3.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    const double decayed = w0[i] * (1 - lr * wd);
    EXPECT_NEAR(s.at("w").value[i], decayed - lr * g[i] / (std::abs(g[i]) + eps), 1e-15);
  }
  // no decay on "b"
  EXPECT_NEAR(s.at("b").value[0], 1.0 - lr * 2.0 / (2.0 + eps), 1e-15);
  EXPECT_NEAR(s.at("b").value[1], 1.0 + lr * 1e-3 / (1e-3 + eps), 1e-15);
}

TEST(AdamW, SkipsFrozenAndRequiresGrad) {
  ParamStore s;
  s.declare(ParamSpec{"w", {2}, ParamGroup::kPrompter, ParamInit::kOnes, false});
  s.declare(ParamSpec{"f", {2}, ParamGroup::kEncoder, ParamInit::kOnes, false});
  s.initialize(0);
  s.at("w").trainable = true;
  EXPECT_THROW(adamw_step(s, 0.1, 0.0, 1), std::logic_error);
  s.at("w").grad = Tensor({2}, {1.0, 1.0});
  EXPECT_THROW(adamw_step(s, 0.1, 0.0, 0), std::invalid_argument);
  adamw_step(s, 0.1, 0.0, 1);
  EXPECT_EQ(s.at("f").value[0], 1.0);
  EXPECT_TRUE(s.at("f").adam_m.empty());
}

TEST(AdamW, MinimizesQuadratic) {
  ParamStore s;
  s.declare(ParamSpec{"x", {4}, ParamGroup::kPrompter, ParamInit::kZeros, false});
  s.initialize(0);
  s.at("x").trainable = true;
  const double target[4] = {1.0, -0.5, 0.25, 2.0};
  for (std::size_t step = 1; step <= 3000; ++step) {
    Tensor g({4});
    for (int i = 0; i < 4; ++i) g[i] = 2 * (s.at("x").value[i] - target[i]);
    s.at("x").grad = g;
    adamw_step(s, step < 2000 ? 0.01 : 0.001, 0.0, step);
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(s.at("x").value[i], target[i], 1e-3);
}

TEST(Schedule, StepDecay) {
  TrainSchedule s;
  s.epochs = 10;
  s.decay_epoch = 8;
  s.base_lr = 1e-3;
  s.decay_factor = 10;
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 7), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 8), 1e-4);
  EXPECT_THROW(lr_at(s, 10), std::out_of_range);
  const TrainSchedule p = TrainSchedule::paper();
  EXPECT_EQ(p.epochs, 60u);
  EXPECT_EQ(p.steps_per_epoch, 1000u);
  EXPECT_DOUBLE_EQ(p.base_lr, 4e-5);
  EXPECT_DOUBLE_EQ(p.weight_decay, 1e-4);
  EXPECT_EQ(p.decay_epoch, 48u);
  EXPECT_EQ(p.batch_size, 64u);
  s.decay_epoch = 11;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Batch, MeanOfPerSampleGradients) {
  const TrainModel m = small_model();
  ParamStore s = build_store(m, 2);
  partition_params(s, TuneMode::kPromptTune);
  const SampleSource src = random_source(m.foundation);
  const StepLog batch = accumulate_batch(s, m, src, 0, 3, {});
  std::vector<Tensor> mean;
  for (const auto& e : s)
    if (e.trainable) mean.push_back(e.grad);

  std::vector<Tensor> sum(mean.size());
  double loss = 0;
  for (std::uint64_t b = 0; b < 3; ++b) {
    const auto one = [&](std::uint64_t, std::uint64_t) { return src(0, b); };
    loss += accumulate_batch(s, m, one, 0, 1, {}).loss;
    std::size_t k = 0;
    for (const auto& e : s) {
      if (!e.trainable) continue;
      if (sum[k].empty()) sum[k] = Tensor(e.spec.shape);
      for (std::size_t i = 0; i < e.grad.size(); ++i) sum[k][i] += e.grad[i];
      ++k;
    }
  }
  EXPECT_NEAR(batch.loss, loss / 3, 1e-12);
  for (std::size_t k = 0; k < mean.size(); ++k)
    for (std::size_t i = 0; i < mean[k].size(); ++i) EXPECT_NEAR(mean[k][i], sum[k][i] / 3, 1e-12);
}

TEST(Batch, ThreadCountDoesNotChangeBits) {
  const TrainModel m = small_model();
  const SampleSource src = random_source(m.foundation);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    ParamStore s = build_store(m, 4);
    partition_params(s, TuneMode::kPromptTune);
    TrainSchedule sch;
    sch.epochs = 1;
    sch.steps_per_epoch = 3;
    sch.decay_epoch = 1;
    sch.batch_size = 4;
    const auto logs = fit(s, m, src, sch);
    std::string csv;
    for (const auto& l : logs) csv += loss_csv_row(l) + "\n";
    return std::make_pair(csv, s.at(s.begin()->spec.name).value);
  };
  const int saved = omp_get_max_threads();
  const auto a = run(1), b = run(4);
  omp_set_num_threads(saved);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Fit, FrozenUntouchedTrainableMoves) {
  const TrainModel m = small_model();
  ParamStore s = build_store(m, 5);
  partition_params(s, TuneMode::kPromptTune);
  const ParamStore before = s;
  TrainSchedule sch;
  sch.epochs = 2;
  sch.steps_per_epoch = 2;
  sch.decay_epoch = 1;
  sch.batch_size = 2;
  std::vector<std::size_t> seen;
  FitOptions opt;
  opt.on_step = [&](const StepLog& l) { seen.push_back(l.step); };
  const auto logs = fit(s, m, random_source(m.foundation), sch, opt);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(logs[3].lr, sch.base_lr / sch.decay_factor);
  EXPECT_EQ(logs[3].epoch, 1u);
  for (const auto& e : s) {
    if (e.trainable) {
      EXPECT_NE(e.value, before.at(e.spec.name).value) << e.spec.name;
    } else {
      EXPECT_EQ(e.value, before.at(e.spec.name).value) << e.spec.name;
    }
  }
}

TEST(Fit, NonFiniteLossReported) {
  const TrainModel m = small_model();
  ParamStore s = build_store(m, 6);
  partition_params(s, TuneMode::kPromptTune);
  for (auto& e : s)
    if (e.trainable) e.value = Tensor::full(e.spec.shape, std::numeric_limits<double>::quiet_NaN());
  TrainSchedule sch;
  sch.epochs = 1;
  sch.steps_per_epoch = 1;
  sch.decay_epoch = 1;
  sch.batch_size = 2;
  EXPECT_THROW(fit(s, m, random_source(m.foundation), sch), NonFiniteLossError);
  partition_params(s, TuneMode::kFoundationOnly);
  EXPECT_THROW(fit(s, m, random_source(m.foundation), sch), std::invalid_argument);
}

TEST(GradCheck, FullModelAllTrainableEntries) {
  const TrainModel m = small_model();
  ParamStore s = build_store(m, 7);
  partition_params(s, TuneMode::kPromptTune);
  CropSettings crop;
  crop.template_size = m.foundation.template_size;
  crop.search_size = m.foundation.search_size;
  const auto rep = model_grad_check(s, m, random_pair(crop, 3), {});
  EXPECT_LT(rep.max_rel_error, 1e-4);
  EXPECT_EQ(rep.coordinates, count_params(s, CountFilter::kTrainable));
}

TEST(LossCsv, ShortestRoundTripFormatting) {
  EXPECT_EQ(loss_csv_header(), "step,epoch,lr,loss,cls,iou,l1");
  StepLog l{12, 1, 1e-4, 0.1, 0.25, 1.0 / 3, 2};
  EXPECT_EQ(loss_csv_row(l), "12,1,1e-04,0.1,0.25,0.3333333333333333,2");
}
