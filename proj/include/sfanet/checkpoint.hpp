#pragma once

#include "sfanet/model.hpp"
#include "sfanet/training.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfanet {

// File layout (little-endian):
//   "SFAC" | u32 version | u32 record count
//   per record: u32 name length | name bytes | u32 rank | u64 extents[rank] | f32 payload[]
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<CheckpointRecord> read_checkpoint_records(const std::filesystem::path& path);
void write_checkpoint_records(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);

/// Parameters, batch-norm running statistics ("<layer>.bn.running_mean",
/// ".running_var", ".num_batches_tracked") and, if given, Adam state under
/// "optimizer.".
template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const AdamState<Scalar>* optimizer,
                     const std::filesystem::path& path);

/// Strict loading requires exactly the model's names and shapes; otherwise
/// only names present on both sides are copied. Any error leaves the model
/// and optimizer untouched.
template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, Model<Scalar>& model, bool strict,
                     AdamState<Scalar>* optimizer = nullptr);

}  // namespace sfanet
