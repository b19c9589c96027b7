#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfsq/batch.hpp"
#include "dfsq/config.hpp"
#include "dfsq/fusion.hpp"

namespace dfsq {

struct ModelHooks {
  bool positional_encoding = true;
  bool dense_zero_history = false;
};

template <typename T>
struct Encoded {
  LayerStates<T> states;
  Tensor<T> memory;  // the encoder's designated final output
  Mask cross_mask;   // [b,1,1,ts]
  std::vector<std::uint8_t> keep;
};

template <typename T>
struct Decoded {
  LayerStates<T> states;
  Tensor<T> logits;  // [b, tt, V_tgt]
};

// Encoder-decoder with the configured fusion strategy on each side.
template <typename T>
class Seq2SeqModel {
 public:
  explicit Seq2SeqModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const StackParams<T>& encoder() const { return enc_; }
  const StackParams<T>& decoder() const { return dec_; }

  Encoded<T> encode(const TokenGrid& src, std::span<const std::uint8_t> keep) const;
  // Teacher-forced decoding over the whole target prefix with a causal mask.
  Decoded<T> decode(const Encoded<T>& enc, const TokenGrid& tgt_in,
                    std::span<const std::uint8_t> keep) const;
  // One incremental step: `last` holds one token per batch row at `position`.
  // Returns logits [b, 1, V_tgt] and the decoder states of that position.
  Decoded<T> decode_step(const Encoded<T>& enc, std::span<const int> last, std::size_t position,
                         SelfKvCache<T>& cache) const;

  struct Forward {
    Encoded<T> enc;
    Decoded<T> dec;
  };
  Forward forward(const Batch& batch) const;

  ModelHooks hooks;

 private:
  LayerOptions options() const { return {cfg_.n_heads, cfg_.ln_eps}; }
  Tensor<T> project(const Tensor<T>& h) const;

  ModelConfig cfg_;
  ParamStore<T> store_;
  Tensor<T> src_embed_, tgt_embed_, out_w_, out_b_;
  StackParams<T> enc_, dec_;
};

}  // namespace dfsq
