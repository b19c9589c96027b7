#include "dfsq/model.hpp"

#include "dfsq/errors.hpp"

namespace dfsq {

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  src_embed_ = store_.create("src_embed", {cfg_.vocab_src, d}, Init::kXavier);
  tgt_embed_ = store_.create("tgt_embed", {cfg_.vocab_tgt, d}, Init::kXavier);
  enc_ = StackParams<T>::create(store_, "enc", cfg_, true);
  dec_ = StackParams<T>::create(store_, "dec", cfg_, false);
  out_w_ = store_.create("out_proj.w", {d, cfg_.vocab_tgt}, Init::kXavier);
  out_b_ = store_.create("out_proj.b", {cfg_.vocab_tgt}, Init::kZeros);
}

template <typename T>
Tensor<T> Seq2SeqModel<T>::project(const Tensor<T>& h) const {
  return add_bias(matmul(h, out_w_), out_b_);
}

template <typename T>
Encoded<T> Seq2SeqModel<T>::encode(const TokenGrid& src, std::span<const std::uint8_t> keep) const {
  if (src.shape.size() != 2) throw DimensionError("source must be [batch, time]");
  const std::size_t b = src.shape[0], t = src.shape[1];
  if (t > cfg_.max_len) {
    throw DimensionError("source length " + std::to_string(t) + " exceeds max_len " +
                         std::to_string(cfg_.max_len));
  }
  Encoded<T> out;
  out.keep.assign(keep.begin(), keep.end());
  if (out.keep.empty()) out.keep.assign(b * t, 1);
  out.cross_mask = key_padding_mask(out.keep, b, t);
  auto h0 = embed(src, src_embed_, 0, hooks.positional_encoding);
  out.states = run_encoder_stack(h0, enc_, &out.cross_mask, options(),
                                 StackHooks{hooks.dense_zero_history});
  out.memory = out.states.final;
  return out;
}

template <typename T>
Decoded<T> Seq2SeqModel<T>::decode(const Encoded<T>& enc, const TokenGrid& tgt_in,
                                   std::span<const std::uint8_t> keep) const {
  if (tgt_in.shape.size() != 2) throw DimensionError("target must be [batch, time]");
  const std::size_t b = tgt_in.shape[0], t = tgt_in.shape[1];
  if (t > cfg_.max_len) {
    throw DimensionError("target length " + std::to_string(t) + " exceeds max_len " +
                         std::to_string(cfg_.max_len));
  }
  std::vector<std::uint8_t> k(keep.begin(), keep.end());
  if (k.empty()) k.assign(b * t, 1);
  const Mask self_mask = causal_mask(k, b, t);
  auto h0 = embed(tgt_in, tgt_embed_, 0, hooks.positional_encoding);
  Decoded<T> out;
  out.states = run_decoder_stack(h0, dec_, enc.memory, &self_mask, &enc.cross_mask, options(),
                                 StackHooks{hooks.dense_zero_history});
  out.logits = project(out.states.final);
  return out;
}

template <typename T>
Decoded<T> Seq2SeqModel<T>::decode_step(const Encoded<T>& enc, std::span<const int> last,
                                        std::size_t position, SelfKvCache<T>& cache) const {
  if (position >= cfg_.max_len) throw DimensionError("decode position exceeds max_len");
  if (cache.length() != position) throw DimensionError("decode cache is out of step");
  TokenGrid tokens{{last.size(), 1}, std::vector<int>(last.begin(), last.end())};
  auto h0 = embed(tokens, tgt_embed_, position, hooks.positional_encoding);
  Decoded<T> out;
  out.states = run_decoder_stack(h0, dec_, enc.memory, nullptr, &enc.cross_mask, options(),
                                 StackHooks{hooks.dense_zero_history}, &cache);
  out.logits = project(out.states.final);
  return out;
}

template <typename T>
typename Seq2SeqModel<T>::Forward Seq2SeqModel<T>::forward(const Batch& batch) const {
  Forward f;
  f.enc = encode(batch.src, batch.src_keep);
  f.dec = decode(f.enc, batch.tgt_in, batch.tgt_keep);
  return f;
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template class Seq2SeqModel<long double>;

}  // namespace dfsq
