#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

// Which part of the tracker a parameter belongs to.
enum class ParamGroup {
  kRgbEmbed,
  kPositional,
  kEncoder,
  kFinalNorm,
  kBoxHead,
  kAuxEmbed,
  kPrompter,
  kPromptTable,
};

enum class ParamInit { kXavier, kZeros, kOnes, kNormal002 };

std::string_view group_name(ParamGroup group);

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group = ParamGroup::kEncoder;
  ParamInit init = ParamInit::kZeros;
  bool decay = false;  // weight decay applies (weight matrices only)

  std::size_t numel() const { return shape_numel(shape); }
};

struct ParamEntry {
  ParamSpec spec;
  Tensor value;  // empty while the store only holds shapes
  bool trainable = false;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
};

// Named parameter registry, iterated in declaration order.
class ParamStore {
 public:
  // Shape-only entry; used for parameter accounting without allocation.
  void declare(ParamSpec spec);
  void declare(const std::vector<ParamSpec>& specs);
  void set_value(std::string_view name, Tensor value);

  bool contains(std::string_view name) const;
  ParamEntry& at(std::string_view name);
  const ParamEntry& at(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool materialized() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Fills every entry from its init rule. Each entry draws from its own
  // stream seeded by (seed, name), so adding entries never perturbs others.
  void initialize(std::uint64_t seed);

  void zero_grads();

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Tracking { kTrainable, kAll, kNone };

// Binds store entries onto a tape on first use. By default trainable entries
// become gradient-tracked leaves and frozen ones constants.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store, Tracking tracking = Tracking::kTrainable)
      : tape_(tape), store_(store), tracking_(tracking) {}

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }
  const ParamStore& store() const { return store_; }
  // Names bound so far, with their tape handles.
  const std::unordered_map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ParamStore& store_;
  Tracking tracking_;
  std::unordered_map<std::string, Var> bound_;
};

}  // namespace vipt
