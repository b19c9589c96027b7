#pragma once

// Embeddings, multi-head attention and the post-norm encoder/decoder layers.
//
// Layer functions take their query/residual input and their self-attention key/value source
// separately so that fusion strategies can rewire either one.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfsq/ops.hpp"
#include "dfsq/params.hpp"

namespace dfsq {

template <typename T>
struct AttentionParams {
  Tensor<T> wq;  // may be undefined for key/value-only sets (shared query)
  Tensor<T> wk;
  Tensor<T> wv;
  Tensor<T> wo;

  static AttentionParams create(ParamStore<T>& store, const std::string& prefix, std::size_t d,
                                bool with_query = true);
};

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  static NormParams create(ParamStore<T>& store, const std::string& prefix, std::size_t d);
};

template <typename T>
struct LayerParams {
  AttentionParams<T> self;
  std::optional<AttentionParams<T>> cross;  // decoder layers only
  Tensor<T> w1, b1, w2, b2;
  std::vector<NormParams<T>> norms;  // 2 for encoder layers, 3 for decoder layers

  static LayerParams create(ParamStore<T>& store, const std::string& prefix, std::size_t d_model,
                            std::size_t d_ff, bool decoder);
  bool is_decoder() const { return cross.has_value(); }
};

struct LayerOptions {
  std::size_t n_heads = 1;
  double ln_eps = 1e-6;
};

// Sinusoidal encoding: sin(pos / 10000^(2i/d)) at even index 2i, cos at 2i+1.
double positional_encoding(std::size_t pos, std::size_t index, std::size_t d_model);

// table[id] * sqrt(d_model) + positional encoding at (position_offset + t).
template <typename T>
Tensor<T> embed(const TokenGrid& tokens, const Tensor<T>& table, std::size_t position_offset = 0,
                bool add_positions = true);

// Attention masks, from per-token keep flags laid out [batch, time].
Mask key_padding_mask(std::span<const std::uint8_t> keep, std::size_t batch, std::size_t time);
Mask causal_mask(std::span<const std::uint8_t> keep, std::size_t batch, std::size_t time);

// [b,t,d] <-> [b,h,t,d/h]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t n_heads);
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

// Attention with already-projected, head-split queries; uses p.wk, p.wv, p.wo.
template <typename T>
Tensor<T> attend(const Tensor<T>& q_heads, const Tensor<T>& k_in, const Tensor<T>& v_in,
                 const Mask* mask, const AttentionParams<T>& p, std::size_t n_heads);

// Scaled dot-product attention per head (scale 1/sqrt(d/h)), heads concatenated and projected.
// No residual and no normalization.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in,
                               const Tensor<T>& v_in, const Mask* mask,
                               const AttentionParams<T>& p, std::size_t n_heads);

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const LayerParams<T>& p);

// LN(sublayer + residual)
template <typename T>
Tensor<T> residual_norm(const Tensor<T>& sublayer, const Tensor<T>& residual,
                        const NormParams<T>& norm, double eps);

// First sub-layer: C = LN(Att(input, self_kv, self_kv) + input).
template <typename T>
Tensor<T> self_attention_block(const Tensor<T>& input, const Tensor<T>& self_kv,
                               const Mask* self_mask, const LayerParams<T>& p,
                               const LayerOptions& opt);

// Remaining sub-layers given C: encoder H = LN(Ffn(C) + C); decoder adds
// D = LN(Att(C, memory, memory) + C) before the feed-forward block.
template <typename T>
Tensor<T> finish_layer(const Tensor<T>& c, const Tensor<T>* memory, const Mask* cross_mask,
                       const LayerParams<T>& p, const LayerOptions& opt);

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& input, const Tensor<T>& self_kv, const Mask* pad_mask,
                        const LayerParams<T>& p, const LayerOptions& opt);

template <typename T>
Tensor<T> decoder_layer(const Tensor<T>& input, const Tensor<T>& self_kv,
                        const Tensor<T>& enc_memory, const Mask* self_mask,
                        const Mask* cross_mask, const LayerParams<T>& p, const LayerOptions& opt);

}  // namespace dfsq
