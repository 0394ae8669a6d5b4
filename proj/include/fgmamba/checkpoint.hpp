#pragma once

#include <string>

#include "fgmamba/model.hpp"

namespace fgmamba {

// Versioned little-endian binary archive of named float32 tensors plus the
// originating ModelConfig. Layout:
//   magic "FGMB" | version u32 | config record | tensor count u32 |
//   per tensor: name_len u32, name bytes, dtype u8 (0 = f32), rank u32,
//               extents i64 x rank, raw little-endian IEEE-754 values.
// Byte order is little-endian regardless of host. Non-finite values are
// rejected on both save and load.
struct NamedTensorF {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensorF> tensors;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Serialize the in-memory checkpoint to bytes (used by tests and golden-file
// generation as well as save_checkpoint).
std::vector<uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes);

Checkpoint snapshot_model(FgMamba<float>& model);
FgMamba<float> model_from_checkpoint(const Checkpoint& ck);

}  // namespace fgmamba
