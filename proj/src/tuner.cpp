#include "vipt/tuner.hpp"

#include <charconv>
#include <cmath>


namespace vipt {

std::string to_string(TuneMode mode) {
  switch (mode) {
    case TuneMode::kPromptTune: return "prompt_tune";
    case TuneMode::kFullTune: return "full_tune";
    case TuneMode::kFoundationOnly: return "foundation_only";
  }
  return "unknown";
}

TuneMode parse_tune_mode(const std::string& text) {
  if (text == "prompt_tune") return TuneMode::kPromptTune;
  if (text == "full_tune") return TuneMode::kFullTune;
  if (text == "foundation_only") return TuneMode::kFoundationOnly;
  throw std::invalid_argument("unknown tune mode '" + text + "' (expected prompt_tune, full_tune or foundation_only)");
}

bool is_prompt_group(ParamGroup group) {
  return group == ParamGroup::kAuxEmbed || group == ParamGroup::kPrompter || group == ParamGroup::kPromptTable;
}

void partition_params(ParamStore& store, TuneMode mode) {
  for (auto& e : store) {
    switch (mode) {
      case TuneMode::kPromptTune: e.trainable = is_prompt_group(e.spec.group); break;
      case TuneMode::kFullTune: e.trainable = true; break;
      case TuneMode::kFoundationOnly: e.trainable = false; break;
    }
    if (!e.trainable) {
      e.grad = Tensor();
      e.adam_m = Tensor();
      e.adam_v = Tensor();
    }
  }
}

std::size_t count_params(const ParamStore& store, CountFilter filter) {
  std::size_t n = 0;
  for (const auto& e : store) {
    if (filter == CountFilter::kAll || (filter == CountFilter::kTrainable) == e.trainable) n += e.spec.numel();
  }
  return n;
}

void adamw_step(ParamStore& store, double lr, double weight_decay, std::size_t step, const AdamWOptions& opt) {
  if (step == 0) throw std::invalid_argument("adamw_step: step index is 1-based");
  const double bc1 = 1 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1 - std::pow(opt.beta2, static_cast<double>(step));
  for (auto& e : store) {
    if (!e.trainable) continue;
    if (e.grad.empty() || e.grad.shape() != e.spec.shape) {
      throw std::logic_error("adamw_step: trainable entry '" + e.spec.name + "' has no gradient");
    }
    if (e.adam_m.empty()) {
      e.adam_m = Tensor(e.spec.shape);
      e.adam_v = Tensor(e.spec.shape);
    }
    const double decay = e.spec.decay ? lr * weight_decay : 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      e.adam_m[i] = opt.beta1 * e.adam_m[i] + (1 - opt.beta1) * g;
      e.adam_v[i] = opt.beta2 * e.adam_v[i] + (1 - opt.beta2) * g * g;
      const double m_hat = e.adam_m[i] / bc1;
      const double v_hat = e.adam_v[i] / bc2;
      if (decay != 0.0) e.value[i] -= decay * e.value[i];
      e.value[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
}

TrainSchedule TrainSchedule::paper() {
  TrainSchedule s;
  s.epochs = 60;
  s.steps_per_epoch = 1000;
  s.base_lr = 4e-5;
  s.weight_decay = 1e-4;
  s.decay_epoch = 48;
  s.decay_factor = 10;
  s.batch_size = 64;
  return s;
}

void TrainSchedule::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("schedule: " + m); };
  if (epochs == 0 || steps_per_epoch == 0) fail("epochs and steps_per_epoch must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (decay_epoch > epochs) fail("decay_epoch must not exceed epochs");
  if (!(base_lr >= 0) || !std::isfinite(base_lr)) fail("base_lr must be a finite non-negative value");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(decay_factor > 0)) fail("decay_factor must be positive");
}

double lr_at(const TrainSchedule& schedule, std::size_t epoch) {
  if (epoch >= schedule.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside 0.." +
                            std::to_string(schedule.epochs - 1));
  }
  return epoch < schedule.decay_epoch ? schedule.base_lr : schedule.base_lr / schedule.decay_factor;
}

std::vector<ParamSpec> model_param_specs(const TrainModel& model) {
  model.foundation.validate();
  auto specs = foundation_param_specs(model.foundation);
  if (model.prompt) {
    auto extra = prompt_param_specs(model.foundation, *model.prompt);
    specs.insert(specs.end(), extra.begin(), extra.end());
  }
  return specs;
}

ParamStore build_store(const TrainModel& model, std::uint64_t init_seed) {
  ParamStore store;
  store.declare(model_param_specs(model));
  store.initialize(init_seed);
  return store;
}

namespace {

TrackerOutput forward_sample(ParamBinder& params, const TrainModel& model, const SamplePair& s) {
  Tape& tape = params.tape();
  if (model.prompt) {
    return forward_prompted(params, model.foundation, *model.prompt,
                            TrackerInputs{s.template_rgb, s.search_rgb, s.template_aux, s.search_aux});
  }
  return forward_foundation(params, model.foundation, tape.constant(s.template_rgb), tape.constant(s.search_rgb));
}

}  // namespace

LossParts sample_loss(ParamBinder& params, const TrainModel& model, const SamplePair& sample,
                      const LossWeights& weights) {
  const TrackerOutput out = forward_sample(params, model, sample);
  return total_loss(out.maps, make_target(sample.gt, model.foundation.search_grid()), weights);
}

BoxPrediction predict_sample(const ParamStore& store, const TrainModel& model, const SamplePair& sample) {
  Tape tape;
  ParamBinder params(tape, store, Tracking::kNone);
  return forward_sample(params, model, sample).maps.prediction();
}

GradCheckReport model_grad_check(ParamStore& store, const TrainModel& model, const SamplePair& sample,
                                 const LossWeights& weights, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    ParamBinder params(tape, store, Tracking::kTrainable);
    const LossParts parts = sample_loss(params, model, sample, weights);
    tape.backward(parts.total);
    for (const auto& e : store) {
      if (!e.trainable) continue;
      auto it = params.bound().find(e.spec.name);
      Tensor g = it != params.bound().end() ? tape.grad(it->second.id()) : Tensor();
      analytic.push_back(g.empty() ? Tensor(e.spec.shape) : g);
    }
  }
  auto loss_value = [&]() {
    Tape tape;
    ParamBinder params(tape, store, Tracking::kNone);
    const double v = sample_loss(params, model, sample, weights).total.value()[0];
    if (!std::isfinite(v)) throw std::domain_error("model_grad_check: non-finite loss");
    return v;
  };

  GradCheckReport rep;
  std::size_t k = 0;
  for (auto& e : store) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double x = e.value[i];
      e.value[i] = x + h;
      const double up = loss_value();
      e.value[i] = x - h;
      const double down = loss_value();
      e.value[i] = x;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[k][i], numeric);
      ++rep.coordinates;
      if (err > rep.max_rel_error || rep.coordinates == 1) {
        rep.max_rel_error = err;
        rep.worst_input = k;
        rep.worst_index = i;
        rep.worst_analytic = analytic[k][i];
        rep.worst_numeric = numeric;
      }
    }
    ++k;
  }
  return rep;
}

NonFiniteLossError::NonFiniteLossError(std::size_t step, std::size_t sample)
    : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (sample " + std::to_string(sample) +
                         ")"),
      step_(step) {}

StepLog accumulate_batch(ParamStore& store, const TrainModel& model, const SampleSource& source, std::size_t step,
                         std::size_t batch_size, const LossWeights& weights) {
  std::vector<ParamEntry*> trainable;
  for (auto& e : store) {
    if (e.trainable) trainable.push_back(&e);
  }

  struct SampleResult {
    double loss = 0, cls = 0, iou = 0, l1 = 0;
    std::vector<Tensor> grads;  // per trainable entry; empty when unused
    std::string error;
  };
  std::vector<SampleResult> results(batch_size);
  const ParamStore& frozen_view = store;

#pragma omp parallel for schedule(static, 1)
  for (std::size_t b = 0; b < batch_size; ++b) {
    SampleResult& r = results[b];
    try {
      const SamplePair sample = source(step, b);
      Tape tape;
      ParamBinder params(tape, frozen_view, Tracking::kTrainable);
      const LossParts parts = sample_loss(params, model, sample, weights);
      r.loss = parts.total.value()[0];
      r.cls = parts.cls;
      r.iou = parts.iou;
      r.l1 = parts.l1;
      if (!std::isfinite(r.loss)) continue;
      tape.backward(parts.total);
      r.grads.resize(trainable.size());
      for (std::size_t k = 0; k < trainable.size(); ++k) {
        auto it = params.bound().find(trainable[k]->spec.name);
        if (it != params.bound().end()) r.grads[k] = tape.grad(it->second.id());
      }
    } catch (const std::exception& ex) {
      r.error = ex.what();
    }
  }

  StepLog log;
  log.step = step;
  for (std::size_t b = 0; b < batch_size; ++b) {
    if (!results[b].error.empty()) throw std::runtime_error(results[b].error);
    if (!std::isfinite(results[b].loss)) throw NonFiniteLossError(step, b);
  }
  for (auto* e : trainable) e->grad = Tensor(e->spec.shape);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const SampleResult& r = results[b];
    log.loss += r.loss;
    log.cls += r.cls;
    log.iou += r.iou;
    log.l1 += r.l1;
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      const Tensor& g = r.grads[k];
      if (g.empty()) continue;
      Tensor& acc = trainable[k]->grad;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch_size);
  for (auto* e : trainable) {
    for (auto& v : e->grad.values()) v *= inv;
  }
  log.loss *= inv;
  log.cls *= inv;
  log.iou *= inv;
  log.l1 *= inv;
  return log;
}

std::vector<StepLog> fit(ParamStore& store, const TrainModel& model, const SampleSource& source,
                         const TrainSchedule& schedule, const FitOptions& options) {
  schedule.validate();
  if (!store.materialized()) throw std::logic_error("fit: parameter store has no values");
  if (count_params(store, CountFilter::kTrainable) == 0) throw std::invalid_argument("fit: nothing is trainable");
  std::vector<StepLog> logs;
  logs.reserve(schedule.total_steps());
  for (std::size_t step = 0; step < schedule.total_steps(); ++step) {
    const std::size_t epoch = step / schedule.steps_per_epoch;
    const double lr = lr_at(schedule, epoch);
    StepLog log = accumulate_batch(store, model, source, step, schedule.batch_size, options.weights);
    log.epoch = epoch;
    log.lr = lr;
    adamw_step(store, lr, schedule.weight_decay, step + 1, options.adamw);
    logs.push_back(log);
    if (options.on_step) options.on_step(log);
  }
  return logs;
}

std::string loss_csv_header() { return "step,epoch,lr,loss,cls,iou,l1"; }

std::string loss_csv_row(const StepLog& log) {
  std::string out = std::to_string(log.step) + "," + std::to_string(log.epoch);
  char buf[64];
  for (double v : {log.lr, log.loss, log.cls, log.iou, log.l1}) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.push_back(',');
    out.append(buf, ptr);
  }
  return out;
}

}  // namespace vipt
