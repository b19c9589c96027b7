#pragma once

#include <cstdint>
#include <vector>

#include "dfsq/ops.hpp"

namespace dfsq {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kFirstToken = 3;

// One padded minibatch. Keep flags are laid out like the ids; padding only at tails.
struct Batch {
  TokenGrid src;                   // [b, ts], sentence + EOS
  TokenGrid tgt_in;                // [b, tt], BOS + sentence
  std::vector<int> tgt_out;        // [b, tt], sentence + EOS
  std::vector<std::uint8_t> src_keep;
  std::vector<std::uint8_t> tgt_keep;

  std::size_t size() const { return src.shape.at(0); }
  std::size_t src_len() const { return src.shape.at(1); }
  std::size_t tgt_len() const { return tgt_in.shape.at(1); }
};

}  // namespace dfsq
