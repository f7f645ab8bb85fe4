#ifndef NATSEG_CHECKPOINT_H_
#define NATSEG_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "natseg/adam.h"
#include "natseg/model.h"

namespace natseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Where a training run stands. batch_in_epoch > 0 marks a mid-epoch save.
struct TrainCursor {
  std::int64_t epoch = 0;  // index of the epoch in progress (or next to run)
  std::int64_t batch_in_epoch = 0;
  std::int64_t step = 0;  // optimizer steps taken so far
  double epoch_loss_sum = 0.0;
  std::uint64_t seed = 0;  // shuffle seed; epoch order is mix_seed(seed, epoch)
  std::string loss = "bce";
};

struct CheckpointEntry {
  std::string name;  // "param/...", "buffer/...", "adam.m/...", "adam.v/..."
  Shape shape;
  std::vector<Real> values;
};

// Layout (all integers little-endian):
//   "NSEG" | u32 version | u32 bytes per value (4 or 8)
//   u32 metadata length | metadata: "key=value\n" lines, sorted by key
//   u32 entry count | per entry: u32 name length, name, 4 x i32 shape,
//                                u64 data offset, u64 data length
//   data section (offsets relative to its start)
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t value_bytes = kRealBytes;
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointEntry> entries;

  ModelConfig model_config() const;
  TrainCursor cursor() const;
  bool has_optimizer() const { return metadata.count("adam.t") != 0; }
  const CheckpointEntry* find(const std::string& name) const;
};

// Snapshot of a model (and optionally optimizer and cursor).
Checkpoint capture_checkpoint(Model& model, const AdamState* adam, const TrainCursor* cursor);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);

// Writes to "<path>.tmp" and renames, so a crash never leaves a half file.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
void save_checkpoint(const std::string& path, Model& model, const AdamState* adam,
                     const TrainCursor* cursor);
Checkpoint load_checkpoint(const std::string& path);

// Copies tensors into `model` (and `adam` when given). Every name and shape is
// checked first; on any mismatch a StateError is thrown and nothing changes.
void apply_checkpoint(const Checkpoint& ck, Model& model, AdamState* adam);

}  // namespace natseg

#endif  // NATSEG_CHECKPOINT_H_
