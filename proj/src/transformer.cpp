#include "dfsq/transformer.hpp"

#include <cmath>

#include "dfsq/errors.hpp"

namespace dfsq {

template <typename T>
AttentionParams<T> AttentionParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                              std::size_t d, bool with_query) {
  AttentionParams p;
  if (with_query) p.wq = store.create(prefix + ".wq", {d, d}, Init::kXavier);
  p.wk = store.create(prefix + ".wk", {d, d}, Init::kXavier);
  p.wv = store.create(prefix + ".wv", {d, d}, Init::kXavier);
  p.wo = store.create(prefix + ".wo", {d, d}, Init::kXavier);
  return p;
}

template <typename T>
NormParams<T> NormParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                    std::size_t d) {
  return {store.create(prefix + ".gain", {d}, Init::kOnes),
          store.create(prefix + ".bias", {d}, Init::kZeros)};
}

template <typename T>
LayerParams<T> LayerParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                      std::size_t d_model, std::size_t d_ff, bool decoder) {
  LayerParams p;
  p.self = AttentionParams<T>::create(store, prefix + ".self", d_model);
  if (decoder) p.cross = AttentionParams<T>::create(store, prefix + ".cross", d_model);
  p.w1 = store.create(prefix + ".ffn.w1", {d_model, d_ff}, Init::kXavier);
  p.b1 = store.create(prefix + ".ffn.b1", {d_ff}, Init::kZeros);
  p.w2 = store.create(prefix + ".ffn.w2", {d_ff, d_model}, Init::kXavier);
  p.b2 = store.create(prefix + ".ffn.b2", {d_model}, Init::kZeros);
  const std::size_t n_norms = decoder ? 3 : 2;
  for (std::size_t i = 0; i < n_norms; ++i)
    p.norms.push_back(NormParams<T>::create(store, prefix + ".ln" + std::to_string(i + 1), d_model));
  return p;
}

double positional_encoding(std::size_t pos, std::size_t index, std::size_t d_model) {
  const double pair = static_cast<double>(index - index % 2);
  const double angle =
      static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d_model));
  return index % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

template <typename T>
Tensor<T> embed(const TokenGrid& tokens, const Tensor<T>& table, std::size_t position_offset,
                bool add_positions) {
  if (tokens.shape.size() != 2) {
    throw DimensionError("embed expects [batch, time] tokens, got " + shape_string(tokens.shape));
  }
  const std::size_t d = table.dim(1);
  auto x = scale(embedding(tokens, table), static_cast<T>(std::sqrt(static_cast<double>(d))));
  if (!add_positions) return x;
  const std::size_t b = tokens.shape[0], t = tokens.shape[1];
  std::vector<T> pe(b * t * d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t p = 0; p < t; ++p)
      for (std::size_t j = 0; j < d; ++j)
        pe[(i * t + p) * d + j] = static_cast<T>(positional_encoding(position_offset + p, j, d));
  return add(x, Tensor<T>::from(x.shape(), std::move(pe)));
}

Mask key_padding_mask(std::span<const std::uint8_t> keep, std::size_t batch, std::size_t time) {
  if (keep.size() != batch * time) throw DimensionError("key_padding_mask: keep size mismatch");
  return Mask{{batch, 1, 1, time}, std::vector<std::uint8_t>(keep.begin(), keep.end())};
}

Mask causal_mask(std::span<const std::uint8_t> keep, std::size_t batch, std::size_t time) {
  if (keep.size() != batch * time) throw DimensionError("causal_mask: keep size mismatch");
  Mask m{{batch, 1, time, time}, std::vector<std::uint8_t>(batch * time * time, 0)};
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < time; ++q)
      for (std::size_t k = 0; k <= q; ++k) m.keep[(b * time + q) * time + k] = keep[b * time + k];
  return m;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t n_heads) {
  if (x.rank() != 3 || x.dim(2) % n_heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_string(x.shape()) + " into " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  return transpose12(reshape(x, {b, t, n_heads, d / n_heads}));
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t b = x.dim(0), h = x.dim(1), t = x.dim(2), dh = x.dim(3);
  return reshape(transpose12(x), {b, t, h * dh});
}

template <typename T>
Tensor<T> attend(const Tensor<T>& q_heads, const Tensor<T>& k_in, const Tensor<T>& v_in,
                 const Mask* mask, const AttentionParams<T>& p, std::size_t n_heads) {
  if (k_in.shape() != v_in.shape() || k_in.rank() != 3 || q_heads.dim(0) != k_in.dim(0)) {
    throw DimensionError("attention: incompatible key/value/query shapes " +
                         shape_string(k_in.shape()) + ", " + shape_string(v_in.shape()) + ", " +
                         shape_string(q_heads.shape()));
  }
  const std::size_t dh = q_heads.dim(3);
  auto k = split_heads(matmul(k_in, p.wk), n_heads);
  auto v = split_heads(matmul(v_in, p.wv), n_heads);
  auto scores = scale(matmul_transposed(q_heads, k), static_cast<T>(1.0 / std::sqrt(double(dh))));
  auto weights = softmax_masked(scores, mask);
  return matmul(merge_heads(matmul(weights, v)), p.wo);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in,
                               const Tensor<T>& v_in, const Mask* mask,
                               const AttentionParams<T>& p, std::size_t n_heads) {
  return attend(split_heads(matmul(q_in, p.wq), n_heads), k_in, v_in, mask, p, n_heads);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const LayerParams<T>& p) {
  return add_bias(matmul(relu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename T>
Tensor<T> residual_norm(const Tensor<T>& sublayer, const Tensor<T>& residual,
                        const NormParams<T>& norm, double eps) {
  return layer_norm(add(sublayer, residual), norm.gain, norm.bias, static_cast<T>(eps));
}

template <typename T>
Tensor<T> self_attention_block(const Tensor<T>& input, const Tensor<T>& self_kv,
                               const Mask* self_mask, const LayerParams<T>& p,
                               const LayerOptions& opt) {
  auto att = multi_head_attention(input, self_kv, self_kv, self_mask, p.self, opt.n_heads);
  return residual_norm(att, input, p.norms[0], opt.ln_eps);
}

template <typename T>
Tensor<T> finish_layer(const Tensor<T>& c, const Tensor<T>* memory, const Mask* cross_mask,
                       const LayerParams<T>& p, const LayerOptions& opt) {
  Tensor<T> x = c;
  std::size_t next_norm = 1;
  if (p.is_decoder()) {
    if (!memory) throw DimensionError("decoder layer called without encoder memory");
    auto cross = multi_head_attention(c, *memory, *memory, cross_mask, *p.cross, opt.n_heads);
    x = residual_norm(cross, c, p.norms[next_norm++], opt.ln_eps);
  }
  return residual_norm(feed_forward(x, p), x, p.norms[next_norm], opt.ln_eps);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& input, const Tensor<T>& self_kv, const Mask* pad_mask,
                        const LayerParams<T>& p, const LayerOptions& opt) {
  return finish_layer(self_attention_block(input, self_kv, pad_mask, p, opt),
                      static_cast<const Tensor<T>*>(nullptr), nullptr, p, opt);
}

template <typename T>
Tensor<T> decoder_layer(const Tensor<T>& input, const Tensor<T>& self_kv,
                        const Tensor<T>& enc_memory, const Mask* self_mask,
                        const Mask* cross_mask, const LayerParams<T>& p, const LayerOptions& opt) {
  return finish_layer(self_attention_block(input, self_kv, self_mask, p, opt), &enc_memory,
                      cross_mask, p, opt);
}

#define DFSQ_INSTANTIATE(T)                                                                       \
  template struct AttentionParams<T>;                                                            \
  template struct NormParams<T>;                                                                 \
  template struct LayerParams<T>;                                                                \
  template Tensor<T> embed(const TokenGrid&, const Tensor<T>&, std::size_t, bool);               \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> merge_heads(const Tensor<T>&);                                              \
  template Tensor<T> attend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Mask*,   \
                            const AttentionParams<T>&, std::size_t);                             \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                          const Mask*, const AttentionParams<T>&, std::size_t);  \
  template Tensor<T> feed_forward(const Tensor<T>&, const LayerParams<T>&);                      \
  template Tensor<T> residual_norm(const Tensor<T>&, const Tensor<T>&, const NormParams<T>&,     \
                                   double);                                                      \
  template Tensor<T> self_attention_block(const Tensor<T>&, const Tensor<T>&, const Mask*,       \
                                          const LayerParams<T>&, const LayerOptions&);           \
  template Tensor<T> finish_layer(const Tensor<T>&, const Tensor<T>*, const Mask*,               \
                                  const LayerParams<T>&, const LayerOptions&);                   \
  template Tensor<T> encoder_layer(const Tensor<T>&, const Tensor<T>&, const Mask*,              \
                                   const LayerParams<T>&, const LayerOptions&);                  \
  template Tensor<T> decoder_layer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                   const Mask*, const Mask*, const LayerParams<T>&,              \
                                   const LayerOptions&);

DFSQ_INSTANTIATE(float)
DFSQ_INSTANTIATE(double)
DFSQ_INSTANTIATE(long double)

}  // namespace dfsq
