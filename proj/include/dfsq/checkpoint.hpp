#pragma once

// Single-file checkpoint:
//   "DFSQ" | u32 version | u32 json length | json (run config, step, rng state)
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank, u64 extents, raw values
// Integers and floats are little-endian; values are f32 or f64 per the model precision.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dfsq/config_io.hpp"
#include "dfsq/model.hpp"

namespace dfsq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;  // exactly representable at the stored precision
};

struct Checkpoint {
  RunConfig run;
  std::size_t step = 0;
  std::string rng_state;
  std::vector<StoredTensor> tensors;
};

template <typename T>
Checkpoint make_checkpoint(const Seq2SeqModel<T>& model, const RunConfig& run, std::size_t step,
                           std::string rng_state);

// Copies every stored tensor into an identically configured model. Throws ConfigError on a
// missing, extra or mis-shaped tensor.
template <typename T>
void restore(Seq2SeqModel<T>& model, const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dfsq
