#include "dfsq/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "dfsq/errors.hpp"

namespace dfsq {

template <typename T>
AggParams<T> AggParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                  std::size_t arity, std::size_t d_model, std::size_t hidden,
                                  AggFn fn, ResidualMode residual) {
  AggParams p;
  p.arity = arity;
  p.d_model = d_model;
  p.fn = fn;
  p.residual = residual;
  if (fn == AggFn::kSelfAttention) {
    p.attn = AttentionParams<T>::create(store, prefix + ".attn", d_model);
  } else {
    p.ffn_in = store.create(prefix + ".ffn_in", {arity * d_model, hidden}, Init::kXavier);
    p.b_in = store.create(prefix + ".b_in", {hidden}, Init::kZeros);
    p.ffn_out = store.create(prefix + ".ffn_out", {hidden, d_model}, Init::kXavier);
    p.b_out = store.create(prefix + ".b_out", {d_model}, Init::kZeros);
  }
  p.norm = NormParams<T>::create(store, prefix + ".ln", d_model);
  return p;
}

template <typename T>
std::vector<T> AggParams<T>::block(std::size_t j) const {
  if (!has_blocks()) throw ConfigError("self-attention aggregation has no input weight blocks");
  if (j >= arity) throw DimensionError("block index out of range");
  const std::size_t hidden = ffn_in.dim(1);
  auto v = ffn_in.data();
  return std::vector<T>(v.begin() + static_cast<std::ptrdiff_t>(j * d_model * hidden),
                        v.begin() + static_cast<std::ptrdiff_t>((j + 1) * d_model * hidden));
}

template <typename T>
Tensor<T> aggregate(std::span<const Tensor<T>> inputs, const AggParams<T>& p, double ln_eps) {
  if (inputs.size() != p.arity) {
    throw DimensionError("aggregation node of arity " + std::to_string(p.arity) + " given " +
                         std::to_string(inputs.size()) + " inputs");
  }
  const Shape& shape = inputs[0].shape();
  for (const auto& x : inputs) {
    if (x.shape() != shape) throw DimensionError("aggregation inputs disagree in shape");
  }
  const std::size_t d = shape.back();
  Tensor<T> transformed;
  if (p.fn == AggFn::kSelfAttention) {
    // The m inputs of each position form a length-m sequence; attend, then mean-pool.
    const std::size_t positions = inputs[0].numel() / d;
    auto seq = reshape(concat_last(inputs), {positions, p.arity, d});
    auto q = matmul(seq, p.attn.wq);
    auto k = matmul(seq, p.attn.wk);
    auto v = matmul(seq, p.attn.wv);
    auto w = softmax_masked(
        scale(matmul_transposed(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))),
        static_cast<const Mask*>(nullptr));
    auto pooled = mean_rows(matmul(matmul(w, v), p.attn.wo));
    transformed = reshape(pooled, shape);
  } else {
    auto hidden = add_bias(matmul(concat_last(inputs), p.ffn_in), p.b_in);
    hidden = p.fn == AggFn::kSigmoidFfn ? sigmoid(hidden) : relu(hidden);
    transformed = add_bias(matmul(hidden, p.ffn_out), p.b_out);
  }
  Tensor<T> pre = transformed;
  switch (p.residual) {
    case ResidualMode::kNone:
      break;
    case ResidualMode::kTop:
      pre = add(pre, inputs[0]);
      break;
    case ResidualMode::kAll:
      for (const auto& x : inputs) pre = add(pre, x);
      break;
  }
  return layer_norm(pre, p.norm.gain, p.norm.bias, static_cast<T>(ln_eps));
}

template <typename T>
Tensor<T> agg2(const Tensor<T>& x, const Tensor<T>& y, const AggParams<T>& p, double ln_eps) {
  if (p.arity != 2) throw DimensionError("agg2 needs an arity-2 node, got " + std::to_string(p.arity));
  const Tensor<T> in[] = {x, y};
  return aggregate<T>(in, p, ln_eps);
}

template <typename T>
Tensor<T> agg3(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& z, const AggParams<T>& p,
               double ln_eps) {
  if (p.arity != 3) throw DimensionError("agg3 needs an arity-3 node, got " + std::to_string(p.arity));
  const Tensor<T> in[] = {x, y, z};
  return aggregate<T>(in, p, ln_eps);
}

std::size_t mla_sources(std::size_t layer, std::size_t k) { return std::min(k, layer); }

template <typename T>
StackParams<T> StackParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                      const ModelConfig& cfg, bool encoder) {
  StackParams p;
  p.strategy = cfg.side_strategy(encoder);
  const std::size_t depth = encoder ? cfg.L_enc : cfg.L_dec;
  const std::size_t d = cfg.d_model;
  const std::size_t hidden = cfg.agg_hidden();
  const auto& s = p.strategy;
  if (s.tag == StrategyTag::kHierarchical && depth % 2 != 0) {
    throw ConfigError("hierarchical aggregation needs an even layer count, got " +
                      std::to_string(depth));
  }
  if (s.tag == StrategyTag::kMultiLayerAttention && (s.k < 1 || s.k > depth)) {
    throw ConfigError("multi-layer attention needs 1 <= k <= L, got k=" + std::to_string(s.k));
  }
  for (std::size_t l = 1; l <= depth; ++l) {
    p.layers.push_back(LayerParams<T>::create(store, prefix + ".layer" + std::to_string(l), d,
                                              cfg.d_ff, !encoder));
  }
  auto node = [&](const std::string& name, std::size_t arity) {
    return AggParams<T>::create(store, prefix + "." + name, arity, d, hidden, s.agg_fn,
                                s.residual_mode);
  };
  switch (s.tag) {
    case StrategyTag::kVanilla:
    case StrategyTag::kDense:
      break;
    case StrategyTag::kLinear:
      for (std::size_t l = 1; l <= depth; ++l) {
        p.linear.push_back(store.create(prefix + ".linear" + std::to_string(l), {d, d},
                                        Init::kIdentity, static_cast<T>(1.0 / double(depth))));
      }
      break;
    case StrategyTag::kIterative:
      for (std::size_t l = 2; l <= depth; ++l) p.agg_nodes.push_back(node("agg" + std::to_string(l), 2));
      break;
    case StrategyTag::kHierarchical:
      for (std::size_t i = 1; i <= depth / 2; ++i)
        p.agg_nodes.push_back(node("agg" + std::to_string(i), i == 1 ? 2 : 3));
      break;
    case StrategyTag::kMultiLayerAttention:
      for (std::size_t l = 1; l <= depth; ++l) {
        MlaLayerParams<T> layer;
        const std::size_t m = mla_sources(l, s.k);
        const std::string base = prefix + ".mla.layer" + std::to_string(l);
        for (std::size_t i = 2; i <= m; ++i) {
          layer.extra.push_back(
              AttentionParams<T>::create(store, base + ".att" + std::to_string(i), d, false));
        }
        if (m >= 2) layer.agg = node("mla.layer" + std::to_string(l) + ".agg", m);
        p.mla.push_back(std::move(layer));
      }
      break;
  }
  return p;
}

template <typename T>
Tensor<T> SelfKvCache<T>::extend(int slot, const Tensor<T>& current) {
  auto it = rows_.find(slot);
  if (!extended_.insert(slot).second) return it->second;
  if (it == rows_.end()) {
    rows_.emplace(slot, current);
    return current;
  }
  const Tensor<T> parts[] = {it->second, current};
  it->second = concat<T>(parts, 1);
  return it->second;
}

template <typename T>
std::size_t SelfKvCache<T>::length() const {
  return rows_.empty() ? 0 : rows_.begin()->second.dim(1);
}

namespace {

template <typename T>
Tensor<T> kv_source(const StackContext<T>& ctx, int slot, const Tensor<T>& current) {
  return ctx.cache ? ctx.cache->extend(slot, current) : current;
}

// Backbone layer l (1-based) fed with `input`, which is also its key/value source.
template <typename T>
Tensor<T> apply_layer(std::size_t l, const Tensor<T>& input, const StackParams<T>& p,
                      const StackContext<T>& ctx) {
  const auto& lp = p.layers[l - 1];
  auto kv = kv_source(ctx, static_cast<int>(l), input);
  auto c = self_attention_block(input, kv, ctx.self_mask, lp, ctx.opt);
  return finish_layer(c, ctx.memory, ctx.cross_mask, lp, ctx.opt);
}

}  // namespace

template <typename T>
Tensor<T> wire_multi_layer_attention(std::size_t layer, std::span<const Tensor<T>> backbone,
                                     std::size_t k, const LayerParams<T>& layer_params,
                                     const MlaLayerParams<T>& mla, const StackContext<T>& ctx) {
  if (k < 1) throw ConfigError("multi-layer attention needs k >= 1");
  if (layer < 1 || backbone.size() < layer) {
    throw DimensionError("multi-layer attention for layer " + std::to_string(layer) + " needs " +
                         std::to_string(layer) + " lower states, have " +
                         std::to_string(backbone.size()));
  }
  const std::size_t m = mla_sources(layer, k);
  const Tensor<T>& below = backbone[layer - 1];
  if (m == 1) {
    auto kv = kv_source(ctx, static_cast<int>(layer), below);
    return self_attention_block(below, kv, ctx.self_mask, layer_params, ctx.opt);
  }
  if (mla.extra.size() != m - 1 || !mla.agg) {
    throw ConfigError("multi-layer attention parameters do not match k for layer " +
                      std::to_string(layer));
  }
  const std::size_t h = ctx.opt.n_heads;
  auto q = split_heads(matmul(below, layer_params.self.wq), h);
  std::vector<Tensor<T>> contexts;
  contexts.reserve(m);
  for (std::size_t i = 1; i <= m; ++i) {
    const std::size_t src = layer - i;
    auto kv = kv_source(ctx, static_cast<int>(src + 1), backbone[src]);
    const auto& ap = i == 1 ? layer_params.self : mla.extra[i - 2];
    contexts.push_back(attend(q, kv, kv, ctx.self_mask, ap, h));
  }
  auto merged = aggregate<T>(contexts, *mla.agg, ctx.opt.ln_eps);
  return residual_norm(merged, below, layer_params.norms[0], ctx.opt.ln_eps);
}

template <typename T>
LayerStates<T> run_stack(const Tensor<T>& h0, const StackParams<T>& p, const StackContext<T>& ctx) {
  const std::size_t depth = p.depth();
  const auto& s = p.strategy;
  const double eps = ctx.opt.ln_eps;
  if (ctx.cache) ctx.cache->begin_step();
  LayerStates<T> st;
  st.backbone.reserve(depth + 1);
  st.backbone.push_back(h0);
  auto& H = st.backbone;

  switch (s.tag) {
    case StrategyTag::kVanilla:
    case StrategyTag::kLinear:
    case StrategyTag::kIterative:
      for (std::size_t l = 1; l <= depth; ++l) H.push_back(apply_layer(l, H[l - 1], p, ctx));
      break;
    case StrategyTag::kDense:
      for (std::size_t l = 1; l <= depth; ++l) {
        auto out = apply_layer(l, H[l - 1], p, ctx);
        for (std::size_t i = 1; i < l; ++i) {
          out = add(out, ctx.hooks.dense_zero_history ? scale(H[i], T{0}) : H[i]);
        }
        H.push_back(out);
      }
      break;
    case StrategyTag::kHierarchical: {
      if (depth % 2 != 0) throw ConfigError("hierarchical aggregation needs an even layer count");
      H.push_back(apply_layer(1, H[0], p, ctx));
      H.push_back(apply_layer(2, H[1], p, ctx));
      st.agg_nodes.push_back(agg2(H[2], H[1], p.agg_nodes[0], eps));
      for (std::size_t i = 2; i <= depth / 2; ++i) {
        const Tensor<T> prev = st.agg_nodes.back();
        H.push_back(apply_layer(2 * i - 1, prev, p, ctx));
        H.push_back(apply_layer(2 * i, H[2 * i - 1], p, ctx));
        st.agg_nodes.push_back(agg3(H[2 * i], H[2 * i - 1], prev, p.agg_nodes[i - 1], eps));
      }
      break;
    }
    case StrategyTag::kMultiLayerAttention:
      for (std::size_t l = 1; l <= depth; ++l) {
        auto c = wire_multi_layer_attention<T>(l, std::span<const Tensor<T>>(H.data(), l), s.k,
                                               p.layers[l - 1], p.mla[l - 1], ctx);
        H.push_back(finish_layer(c, ctx.memory, ctx.cross_mask, p.layers[l - 1], ctx.opt));
      }
      break;
  }

  switch (s.tag) {
    case StrategyTag::kVanilla:
    case StrategyTag::kDense:
    case StrategyTag::kMultiLayerAttention:
      st.final_source = FinalSource::kBackboneTop;
      st.final = H[depth];
      break;
    case StrategyTag::kLinear: {
      Tensor<T> acc = matmul(H[1], p.linear[0]);
      for (std::size_t l = 2; l <= depth; ++l) acc = add(acc, matmul(H[l], p.linear[l - 1]));
      st.agg_nodes.push_back(acc);
      st.final_source = FinalSource::kAggregate;
      st.final = acc;
      break;
    }
    case StrategyTag::kIterative: {
      st.agg_nodes.push_back(H[1]);
      for (std::size_t l = 2; l <= depth; ++l)
        st.agg_nodes.push_back(agg2(H[l], st.agg_nodes.back(), p.agg_nodes[l - 2], eps));
      st.final_source = FinalSource::kAggregate;
      st.final = st.agg_nodes.back();
      break;
    }
    case StrategyTag::kHierarchical:
      st.final_source = FinalSource::kAggregate;
      st.final = st.agg_nodes.back();
      break;
  }
  return st;
}

template <typename T>
LayerStates<T> run_encoder_stack(const Tensor<T>& h0, const StackParams<T>& params,
                                 const Mask* pad_mask, const LayerOptions& opt, StackHooks hooks) {
  StackContext<T> ctx;
  ctx.self_mask = pad_mask;
  ctx.opt = opt;
  ctx.hooks = hooks;
  return run_stack(h0, params, ctx);
}

template <typename T>
LayerStates<T> run_decoder_stack(const Tensor<T>& h0, const StackParams<T>& params,
                                 const Tensor<T>& memory, const Mask* self_mask,
                                 const Mask* cross_mask, const LayerOptions& opt,
                                 StackHooks hooks, SelfKvCache<T>* cache) {
  StackContext<T> ctx;
  ctx.self_mask = self_mask;
  ctx.memory = &memory;
  ctx.cross_mask = cross_mask;
  ctx.cache = cache;
  ctx.opt = opt;
  ctx.hooks = hooks;
  return run_stack(h0, params, ctx);
}

namespace {

std::size_t agg_count(std::size_t arity, std::size_t d, std::size_t hidden, AggFn fn) {
  const std::size_t norm = 2 * d;
  if (fn == AggFn::kSelfAttention) return 4 * d * d + norm;
  return arity * d * hidden + hidden + hidden * d + d + norm;
}

std::size_t fusion_count(const FusionStrategy& s, std::size_t depth, std::size_t d,
                         std::size_t hidden) {
  switch (s.tag) {
    case StrategyTag::kVanilla:
    case StrategyTag::kDense:
      return 0;
    case StrategyTag::kLinear:
      return depth * d * d;
    case StrategyTag::kIterative:
      return (depth - 1) * agg_count(2, d, hidden, s.agg_fn);
    case StrategyTag::kHierarchical:
      return agg_count(2, d, hidden, s.agg_fn) +
             (depth / 2 - 1) * agg_count(3, d, hidden, s.agg_fn);
    case StrategyTag::kMultiLayerAttention: {
      std::size_t n = 0;
      for (std::size_t l = 1; l <= depth; ++l) {
        const std::size_t m = std::min(s.k, l);
        if (m >= 2) n += (m - 1) * 3 * d * d + agg_count(m, d, hidden, s.agg_fn);
      }
      return n;
    }
  }
  return 0;
}

}  // namespace

std::map<std::string, std::size_t> count_params(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t ffn = d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;
  const std::size_t enc_layer = 4 * d * d + ffn + 2 * 2 * d;
  const std::size_t dec_layer = 8 * d * d + ffn + 3 * 2 * d;
  std::map<std::string, std::size_t> out;
  out["src_embed"] = cfg.vocab_src * d;
  out["tgt_embed"] = cfg.vocab_tgt * d;
  out["out_proj"] = d * cfg.vocab_tgt + cfg.vocab_tgt;
  out["encoder.layers"] = cfg.L_enc * enc_layer;
  out["decoder.layers"] = cfg.L_dec * dec_layer;
  out["encoder.fusion"] = fusion_count(cfg.side_strategy(true), cfg.L_enc, d, cfg.agg_hidden());
  out["decoder.fusion"] = fusion_count(cfg.side_strategy(false), cfg.L_dec, d, cfg.agg_hidden());
  std::size_t total = 0;
  for (const auto& [k, v] : out) total += v;
  out["total"] = total;
  return out;
}

long long param_delta(const ModelConfig& cfg) {
  ModelConfig vanilla = cfg;
  vanilla.strategy.tag = StrategyTag::kVanilla;
  return static_cast<long long>(count_params(cfg).at("total")) -
         static_cast<long long>(count_params(vanilla).at("total"));
}

template <typename T>
std::map<std::string, std::size_t> enumerate_params(const ParamStore<T>& store) {
  std::map<std::string, std::size_t> out{{"src_embed", 0},      {"tgt_embed", 0},
                                         {"out_proj", 0},       {"encoder.layers", 0},
                                         {"decoder.layers", 0}, {"encoder.fusion", 0},
                                         {"decoder.fusion", 0}};
  auto starts = [](const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; };
  std::size_t total = 0;
  for (const auto& [name, t] : store.entries()) {
    std::string key;
    if (starts(name, "src_embed")) key = "src_embed";
    else if (starts(name, "tgt_embed")) key = "tgt_embed";
    else if (starts(name, "out_proj")) key = "out_proj";
    else if (starts(name, "enc.layer")) key = "encoder.layers";
    else if (starts(name, "dec.layer")) key = "decoder.layers";
    else if (starts(name, "enc.")) key = "encoder.fusion";
    else if (starts(name, "dec.")) key = "decoder.fusion";
    else throw ConfigError("unclassified parameter '" + name + "'");
    out[key] += t.numel();
    total += t.numel();
  }
  out["total"] = total;
  return out;
}

#define DFSQ_INSTANTIATE(T)                                                                       \
  template struct AggParams<T>;                                                                  \
  template struct StackParams<T>;                                                                \
  template class SelfKvCache<T>;                                                                 \
  template Tensor<T> aggregate(std::span<const Tensor<T>>, const AggParams<T>&, double);         \
  template Tensor<T> agg2(const Tensor<T>&, const Tensor<T>&, const AggParams<T>&, double);       \
  template Tensor<T> agg3(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                          const AggParams<T>&, double);                                          \
  template Tensor<T> wire_multi_layer_attention(std::size_t, std::span<const Tensor<T>>,         \
                                                std::size_t, const LayerParams<T>&,              \
                                                const MlaLayerParams<T>&, const StackContext<T>&); \
  template LayerStates<T> run_stack(const Tensor<T>&, const StackParams<T>&,                     \
                                    const StackContext<T>&);                                     \
  template LayerStates<T> run_encoder_stack(const Tensor<T>&, const StackParams<T>&,             \
                                            const Mask*, const LayerOptions&, StackHooks);       \
  template LayerStates<T> run_decoder_stack(const Tensor<T>&, const StackParams<T>&,             \
                                            const Tensor<T>&, const Mask*, const Mask*,          \
                                            const LayerOptions&, StackHooks, SelfKvCache<T>*);   \
  template std::map<std::string, std::size_t> enumerate_params(const ParamStore<T>&);

DFSQ_INSTANTIATE(float)
DFSQ_INSTANTIATE(double)
DFSQ_INSTANTIATE(long double)

}  // namespace dfsq
