#pragma once

// Binary checkpoints.
//
//   "VIPTCKPT"  u16 version  u32 count
//   count x { u32 name_len, name, u32 rank, u64 dims[rank], u8 trainable, u64 offset }
//   payloads: little-endian float32, each starting at its absolute byte offset
//
// Values are stored at 32-bit precision, so save -> load -> save is
// byte-identical.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "vipt/params.hpp"

namespace vipt {

constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad magic, unsupported version or an inconsistent manifest.
class CheckpointHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// File ends before the manifest or a payload does.
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Names or shapes disagree with the configured model.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
std::string checkpoint_bytes(const ParamStore& store);

// Entries come back with name, shape, trainable flag and values only.
ParamStore load_checkpoint(const std::filesystem::path& path);
ParamStore parse_checkpoint(const std::string& bytes);

// Copies values and trainable flags into `store`, which must declare exactly
// the same names and shapes.
void load_into(ParamStore& store, const std::filesystem::path& path);
// Copies only the entries present in the checkpoint (e.g. a foundation into
// a prompted model). Every checkpoint entry must exist with the same shape.
void load_subset(ParamStore& store, const std::filesystem::path& path);

}  // namespace vipt
