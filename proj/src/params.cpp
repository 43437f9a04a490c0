#include "vipt/params.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace vipt {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kRgbEmbed: return "rgb_embed";
    case ParamGroup::kPositional: return "positional";
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kFinalNorm: return "final_norm";
    case ParamGroup::kBoxHead: return "box_head";
    case ParamGroup::kAuxEmbed: return "aux_embed";
    case ParamGroup::kPrompter: return "prompter";
    case ParamGroup::kPromptTable: return "prompt_table";
  }
  return "unknown";
}

void ParamStore::declare(ParamSpec spec) {
  if (index_.count(spec.name)) throw std::invalid_argument("param store: duplicate entry '" + spec.name + "'");
  index_.emplace(spec.name, entries_.size());
  entries_.push_back(ParamEntry{std::move(spec), Tensor(), false, Tensor(), Tensor(), Tensor()});
}

void ParamStore::declare(const std::vector<ParamSpec>& specs) {
  for (const auto& s : specs) declare(s);
}

void ParamStore::set_value(std::string_view name, Tensor value) {
  ParamEntry& e = at(name);
  if (value.shape() != e.spec.shape) throw DimensionError("param '" + e.spec.name + "'", e.spec.shape, value.shape());
  e.value = std::move(value);
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

ParamEntry& ParamStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("param store: no entry '" + std::string(name) + "'");
  return entries_[it->second];
}

const ParamEntry& ParamStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("param store: no entry '" + std::string(name) + "'");
  return entries_[it->second];
}

bool ParamStore::materialized() const {
  for (const auto& e : entries_) {
    if (e.value.empty()) return false;
  }
  return true;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::pair<double, double> fans(const Shape& shape) {
  if (shape.size() == 2) return {static_cast<double>(shape[0]), static_cast<double>(shape[1])};
  if (shape.size() == 4) {
    const double rf = static_cast<double>(shape[2] * shape[3]);
    return {shape[1] * rf, shape[0] * rf};
  }
  const double n = static_cast<double>(shape_numel(shape));
  return {n, n};
}

}  // namespace

void ParamStore::initialize(std::uint64_t seed) {
  for (auto& e : entries_) {
    const std::uint64_t h = fnv1a(e.spec.name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    Tensor t(e.spec.shape);
    switch (e.spec.init) {
      case ParamInit::kZeros:
        break;
      case ParamInit::kOnes:
        t.fill(1.0);
        break;
      case ParamInit::kXavier: {
        const auto [fan_in, fan_out] = fans(e.spec.shape);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : t.values()) v = dist(rng);
        break;
      }
      case ParamInit::kNormal002: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : t.values()) v = dist(rng);
        break;
      }
    }
    e.value = std::move(t);
  }
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) {
    if (!e.grad.empty()) e.grad.fill(0.0);
  }
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const ParamEntry& e = store_.at(name);
  if (e.value.empty()) throw std::logic_error("param '" + name + "' has no values (shape-only store)");
  const bool tracked = tracking_ == Tracking::kAll || (tracking_ == Tracking::kTrainable && e.trainable);
  Var v = tape_.leaf(e.value, tracked);
  bound_.emplace(name, v);
  return v;
}

}  // namespace vipt
