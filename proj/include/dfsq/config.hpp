#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace dfsq {

enum class StrategyTag { kVanilla, kDense, kLinear, kIterative, kHierarchical, kMultiLayerAttention };
enum class AggFn { kSigmoidFfn, kReluFfn, kSelfAttention };
enum class ResidualMode { kNone, kTop, kAll };
enum class Precision { kF32, kF64 };

std::string_view to_string(StrategyTag tag);
std::string_view to_string(AggFn fn);
std::string_view to_string(ResidualMode mode);
std::string_view to_string(Precision p);

// Parsers accept the names produced by to_string (case-insensitive); throw ConfigError otherwise.
StrategyTag parse_strategy(std::string_view s);
AggFn parse_agg_fn(std::string_view s);
ResidualMode parse_residual_mode(std::string_view s);
Precision parse_precision(std::string_view s);

struct FusionStrategy {
  StrategyTag tag = StrategyTag::kVanilla;
  std::size_t k = 2;  // layers attended by multi-layer attention
  AggFn agg_fn = AggFn::kSigmoidFfn;
  ResidualMode residual_mode = ResidualMode::kAll;

  bool uses_agg_nodes() const;
  bool operator==(const FusionStrategy&) const = default;
};

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t d_ff_agg = 0;  // 0 means d_model
  std::size_t L_enc = 4;
  std::size_t L_dec = 4;
  std::size_t vocab_src = 16;
  std::size_t vocab_tgt = 16;
  std::size_t max_len = 16;
  FusionStrategy strategy;
  bool fuse_encoder = true;
  bool fuse_decoder = true;
  double lambda_div = 0.0;
  double ln_eps = 1e-6;
  double dropout = 0.0;  // reserved; must stay 0
  std::uint64_t seed = 1;
  Precision precision = Precision::kF32;

  std::size_t agg_hidden() const { return d_ff_agg == 0 ? d_model : d_ff_agg; }
  // Strategy actually run by one side; an unfused side runs Vanilla.
  FusionStrategy side_strategy(bool encoder) const;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace dfsq
