#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfsq/diversity.hpp"
#include "dfsq/grad_check.hpp"
#include "dfsq/model.hpp"
#include "dfsq/tasks.hpp"

namespace dfsq {

// ------------------------------------------------------------------ optimizer

struct AdamHyper {
  double peak_lr = 3e-3;
  std::size_t warmup = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  bool operator==(const AdamHyper&) const = default;
};

// peak * sqrt(warmup) * min(step^-0.5, step * warmup^-1.5); equals peak at step == warmup.
double learning_rate(std::size_t step, const AdamHyper& h);

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m, v;  // one pair per parameter, in store order
  std::size_t step = 0;
};

// One Adam update over every tensor of the store. A parameter without a gradient counts as
// having a zero gradient. Throws NumericalError naming the first non-finite gradient.
template <typename T>
void adam_step(ParamStore<T>& params, OptimState<T>& state, const AdamHyper& h);

// ------------------------------------------------------------------ loss

template <typename T>
struct LossParts {
  Tensor<T> total, nll, div_enc, div_dec;  // diversity terms are undefined for 1-layer stacks
};

template <typename T>
LossParts<T> compute_loss(const Seq2SeqModel<T>& model, const Batch& batch);

// ------------------------------------------------------------------ decoding

struct DecodeHooks {
  // When > 0, the EOS logit is forced to +inf at this (1-based) generation step.
  std::size_t force_eos_at_step = 0;
};

// Argmax decoding from BOS with the incremental cache; stops at EOS or after max_len tokens.
// Returned sequences exclude BOS and EOS.
template <typename T>
std::vector<Sequence> greedy_decode(const Seq2SeqModel<T>& model, const TokenGrid& src,
                                    std::span<const std::uint8_t> src_keep, std::size_t max_len,
                                    DecodeHooks hooks = {});

// ------------------------------------------------------------------ metrics

struct Metrics {
  double token_accuracy = 0.0;
  double sequence_accuracy = 0.0;
  double bleu = 0.0;  // 0..100
  std::string warning;
};

// Token accuracy: matches at aligned positions / sum of max(|hyp|, |ref|).
// BLEU: corpus-level clipped 1..4-gram precisions, geometric mean, brevity penalty, no smoothing.
Metrics compute_metrics(const std::vector<Sequence>& hyps, const std::vector<Sequence>& refs);

// Decodes every pair's source (batches of batch_size; DFSQ-style thread cap `threads`) and
// scores against the targets. Results do not depend on `threads`.
template <typename T>
Metrics evaluate(const Seq2SeqModel<T>& model, const std::vector<Pair>& pairs,
                 std::size_t batch_size = 128, std::size_t threads = 1,
                 std::vector<Sequence>* hyps_out = nullptr);

// ------------------------------------------------------------------ training

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t steps = 3000;
  std::size_t eval_every = 200;
  AdamHyper adam;
  // Stop after an evaluation whose dev sequence accuracy reaches this value (0 disables).
  double target_seq_acc = 0.0;
  // Dev token accuracy that must also be reached for early stopping.
  double target_tok_acc = 0.0;
  std::size_t eval_threads = 1;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0, nll = 0.0, div_enc = 0.0, div_dec = 0.0;
  double dev_tok_acc = 0.0, dev_seq_acc = 0.0, dev_bleu = 0.0;
  bool operator==(const TrainRecord&) const = default;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  std::size_t best_step = 0;
  double best_dev_seq_acc = -1.0;
  double wall_seconds = 0.0;
};

template <typename T>
struct TrainCallbacks {
  std::function<void(const TrainRecord&)> on_record;
  // Every optimization step, before the update, with that step's loss terms.
  std::function<void(std::size_t step, const LossParts<T>&)> on_step;
  // Called whenever dev sequence accuracy improves; `rng_state` is the data-order RNG.
  std::function<void(const Seq2SeqModel<T>&, std::size_t step, const std::string& rng_state)>
      on_best;
};

// Trains in place. Deterministic for a fixed model seed, task and thread count.
// A non-finite loss throws NumericalError; the last on_best snapshot remains valid.
template <typename T>
TrainReport train(Seq2SeqModel<T>& model, const Dataset& data, const TrainConfig& tc,
                  const TrainCallbacks<T>& callbacks = {});

std::string train_csv_header();
std::string train_csv_row(const TrainRecord& r);

// ------------------------------------------------------------------ gradient check

// Gradient check of the full training loss of a float64 model over every trainable tensor.
// The finite differences run on a long double copy holding the same parameter values.
GradCheckReport model_grad_check(const ModelConfig& cfg, const Batch& batch, double eps = 1e-5);

}  // namespace dfsq
