#include "dfsq/config.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "dfsq/errors.hpp"

namespace dfsq {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const Enum (&values)[N], const char* what) {
  const std::string want = lower(s);
  for (Enum v : values) {
    if (lower(to_string(v)) == want) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(StrategyTag tag) {
  switch (tag) {
    case StrategyTag::kVanilla: return "vanilla";
    case StrategyTag::kDense: return "dense";
    case StrategyTag::kLinear: return "linear";
    case StrategyTag::kIterative: return "iterative";
    case StrategyTag::kHierarchical: return "hierarchical";
    case StrategyTag::kMultiLayerAttention: return "multi_layer_attention";
  }
  return "?";
}

std::string_view to_string(AggFn fn) {
  switch (fn) {
    case AggFn::kSigmoidFfn: return "sigmoid_ffn";
    case AggFn::kReluFfn: return "relu_ffn";
    case AggFn::kSelfAttention: return "self_attention";
  }
  return "?";
}

std::string_view to_string(ResidualMode mode) {
  switch (mode) {
    case ResidualMode::kNone: return "none";
    case ResidualMode::kTop: return "top";
    case ResidualMode::kAll: return "all";
  }
  return "?";
}

std::string_view to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

StrategyTag parse_strategy(std::string_view s) {
  static constexpr StrategyTag all[] = {StrategyTag::kVanilla,   StrategyTag::kDense,
                                        StrategyTag::kLinear,    StrategyTag::kIterative,
                                        StrategyTag::kHierarchical,
                                        StrategyTag::kMultiLayerAttention};
  return parse_enum(s, all, "strategy");
}

AggFn parse_agg_fn(std::string_view s) {
  static constexpr AggFn all[] = {AggFn::kSigmoidFfn, AggFn::kReluFfn, AggFn::kSelfAttention};
  return parse_enum(s, all, "agg_fn");
}

ResidualMode parse_residual_mode(std::string_view s) {
  static constexpr ResidualMode all[] = {ResidualMode::kNone, ResidualMode::kTop,
                                         ResidualMode::kAll};
  return parse_enum(s, all, "residual_mode");
}

Precision parse_precision(std::string_view s) {
  static constexpr Precision all[] = {Precision::kF32, Precision::kF64};
  return parse_enum(s, all, "precision");
}

bool FusionStrategy::uses_agg_nodes() const {
  return tag == StrategyTag::kIterative || tag == StrategyTag::kHierarchical ||
         tag == StrategyTag::kMultiLayerAttention;
}

FusionStrategy ModelConfig::side_strategy(bool encoder) const {
  if (encoder ? fuse_encoder : fuse_decoder) return strategy;
  FusionStrategy plain = strategy;
  plain.tag = StrategyTag::kVanilla;
  return plain;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d_model == 0 || n_heads == 0 || d_ff == 0) fail("d_model, n_heads and d_ff must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
         std::to_string(n_heads) + ")");
  }
  if (L_enc == 0 || L_dec == 0) fail("L_enc and L_dec must be positive");
  if (vocab_src < 4 || vocab_tgt < 4) fail("vocabularies need at least 4 ids (PAD, BOS, EOS, one token)");
  if (max_len < 3) fail("max_len must be at least 3");
  if (!(lambda_div >= 0.0)) fail("lambda_div must be non-negative");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
  if (dropout != 0.0) fail("dropout is reserved and must be 0");
  if (lambda_div > 0.0 && (L_enc < 2 || L_dec < 2)) {
    fail("diversity regularization needs at least 2 layers per stack");
  }
  for (bool enc : {true, false}) {
    const auto s = side_strategy(enc);
    const std::size_t depth = enc ? L_enc : L_dec;
    const std::string side = enc ? "L_enc" : "L_dec";
    if (s.tag == StrategyTag::kHierarchical && depth % 2 != 0) {
      fail("hierarchical aggregation needs an even layer count, got " + side + "=" +
           std::to_string(depth));
    }
    if (s.tag == StrategyTag::kMultiLayerAttention && (s.k < 1 || s.k > depth)) {
      fail("multi-layer attention needs 1 <= k <= " + side + " (k=" + std::to_string(s.k) + ")");
    }
  }
}

}  // namespace dfsq
