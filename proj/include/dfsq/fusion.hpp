#pragma once

// Layer fusion: stack executors that wire backbone layers, aggregation nodes and
// attention key sources for each strategy.
//
//   Vanilla       H^l = Layer(H^{l-1}); output H^L
//   Dense         H^l = Layer(H^{l-1}) + sum_{i=1}^{l-1} H^i; output H^L
//   Linear        backbone as Vanilla; output sum_l H^l W_l
//   Iterative     backbone as Vanilla; Hhat^1 = H^1, Hhat^l = Agg(H^l, Hhat^{l-1}); output Hhat^L
//   Hierarchical  two-layer sub-trees, Hhat^1 = Agg(H^2, H^1),
//                 Hhat^i = Agg(H^{2i}, H^{2i-1}, Hhat^{i-1}); Hhat^{i-1} feeds layer 2i-1;
//                 output Hhat^{L/2}
//   MultiLayerAttention  self-attention of layer l also reads H^{l-2}..H^{l-k} through
//                 separate key/value/output projections sharing the layer's query, merged by Agg.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dfsq/config.hpp"
#include "dfsq/transformer.hpp"

namespace dfsq {

// One aggregation node: Agg(x_1..x_m) = LN(F([x_1;..;x_m]) + R).
template <typename T>
struct AggParams {
  std::size_t arity = 0;
  std::size_t d_model = 0;
  AggFn fn = AggFn::kSigmoidFfn;
  ResidualMode residual = ResidualMode::kAll;
  // Feed-forward variants. Rows [j*d, (j+1)*d) of ffn_in are the block W_j for input j.
  Tensor<T> ffn_in, b_in, ffn_out, b_out;
  // Self-attention variant.
  AttentionParams<T> attn;
  NormParams<T> norm;

  static AggParams create(ParamStore<T>& store, const std::string& prefix, std::size_t arity,
                          std::size_t d_model, std::size_t hidden, AggFn fn,
                          ResidualMode residual);

  bool has_blocks() const { return fn != AggFn::kSelfAttention; }
  // Values of block W_j, row-major d_model x hidden.
  std::vector<T> block(std::size_t j) const;
};

template <typename T>
Tensor<T> aggregate(std::span<const Tensor<T>> inputs, const AggParams<T>& p, double ln_eps);

// Two- and three-input forms; the first argument is the deeper input ("Top" residual).
template <typename T>
Tensor<T> agg2(const Tensor<T>& x, const Tensor<T>& y, const AggParams<T>& p, double ln_eps);
template <typename T>
Tensor<T> agg3(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& z, const AggParams<T>& p,
               double ln_eps);

// Extra parameters of one multi-layer-attention layer.
template <typename T>
struct MlaLayerParams {
  std::vector<AttentionParams<T>> extra;  // key/value/output sets for H^{l-2}, H^{l-3}, ...
  std::optional<AggParams<T>> agg;        // present when more than one layer is attended
};

// Number of layers attended by layer l (1-based): l-1 down to max(l-k, 0).
std::size_t mla_sources(std::size_t layer, std::size_t k);

template <typename T>
struct StackParams {
  FusionStrategy strategy;  // effective strategy for this side
  std::vector<LayerParams<T>> layers;
  // Iterative: node l at index l-2 (l = 2..L). Hierarchical: node i at index i-1.
  std::vector<AggParams<T>> agg_nodes;
  std::vector<Tensor<T>> linear;          // W_1..W_L
  std::vector<MlaLayerParams<T>> mla;     // one per layer

  static StackParams create(ParamStore<T>& store, const std::string& prefix,
                            const ModelConfig& cfg, bool encoder);
  std::size_t depth() const { return layers.size(); }
};

enum class FinalSource { kBackboneTop, kAggregate };

template <typename T>
struct LayerStates {
  std::vector<Tensor<T>> backbone;   // H^0..H^L
  std::vector<Tensor<T>> agg_nodes;  // Hhat^1.. (Linear: the single combination)
  FinalSource final_source = FinalSource::kBackboneTop;
  Tensor<T> final;
};

// History of self-attention key/value sources for incremental decoding.
// Slot s holds the rows of whatever tensor feeds layer s's keys (source H^j uses slot j+1).
template <typename T>
class SelfKvCache {
 public:
  // Marks the start of a decoding step; each slot is extended at most once per step.
  void begin_step() { extended_.clear(); }
  // Appends `current` along time to the stored rows and returns the full history.
  Tensor<T> extend(int slot, const Tensor<T>& current);
  std::size_t length() const;
  void clear() {
    rows_.clear();
    extended_.clear();
  }

 private:
  std::map<int, Tensor<T>> rows_;
  std::set<int> extended_;
};

struct StackHooks {
  bool dense_zero_history = false;  // Dense adds 0 * H^i instead of H^i
};

template <typename T>
struct StackContext {
  const Mask* self_mask = nullptr;
  const Tensor<T>* memory = nullptr;  // decoder only
  const Mask* cross_mask = nullptr;
  SelfKvCache<T>* cache = nullptr;    // incremental decoding only
  LayerOptions opt;
  StackHooks hooks;
};

template <typename T>
LayerStates<T> run_stack(const Tensor<T>& h0, const StackParams<T>& params,
                         const StackContext<T>& ctx);

template <typename T>
LayerStates<T> run_encoder_stack(const Tensor<T>& h0, const StackParams<T>& params,
                                 const Mask* pad_mask, const LayerOptions& opt,
                                 StackHooks hooks = {});

template <typename T>
LayerStates<T> run_decoder_stack(const Tensor<T>& h0, const StackParams<T>& params,
                                 const Tensor<T>& memory, const Mask* self_mask,
                                 const Mask* cross_mask, const LayerOptions& opt,
                                 StackHooks hooks = {}, SelfKvCache<T>* cache = nullptr);

// C^l for layer l (1-based) under multi-layer attention, given H^0..H^{l-1} in `backbone`.
// With one attended layer this is exactly the vanilla first sub-layer.
template <typename T>
Tensor<T> wire_multi_layer_attention(std::size_t layer, std::span<const Tensor<T>> backbone,
                                     std::size_t k, const LayerParams<T>& layer_params,
                                     const MlaLayerParams<T>& mla, const StackContext<T>& ctx);

// Parameter counts from closed-form expressions, keyed by component:
// src_embed, tgt_embed, out_proj, encoder.layers, encoder.fusion, decoder.layers,
// decoder.fusion, total.
std::map<std::string, std::size_t> count_params(const ModelConfig& cfg);

// total(cfg) - total(cfg with the Vanilla strategy)
long long param_delta(const ModelConfig& cfg);

// The same breakdown obtained by walking allocated tensor names.
template <typename T>
std::map<std::string, std::size_t> enumerate_params(const ParamStore<T>& store);

}  // namespace dfsq
