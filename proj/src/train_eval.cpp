#include "dfsq/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <omp.h>

#include "dfsq/errors.hpp"

namespace dfsq {

double learning_rate(std::size_t step, const AdamHyper& h) {
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(std::max<std::size_t>(h.warmup, 1));
  return h.peak_lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

template <typename T>
void adam_step(ParamStore<T>& params, OptimState<T>& state, const AdamHyper& h) {
  const auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(t.numel(), T{0});
      state.v.emplace_back(t.numel(), T{0});
    }
  }
  if (state.m.size() != entries.size()) throw DimensionError("optimizer state does not match parameters");
  for (const auto& [name, t] : entries) {
    for (T g : t.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("non-finite gradient in parameter '" + name + "'");
      }
    }
  }
  ++state.step;
  const double lr = learning_rate(state.step, h);
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor<T> t = entries[p].second;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const bool has = t.has_grad();
    auto g = t.grad();
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + h.eps);
      x[i] = static_cast<T>(static_cast<double>(x[i]) - update);
    }
  }
}

template <typename T>
LossParts<T> compute_loss(const Seq2SeqModel<T>& model, const Batch& batch) {
  const auto f = model.forward(batch);
  LossParts<T> out;
  out.nll = cross_entropy(f.dec.logits, batch.tgt_out, batch.tgt_keep);
  const auto& cfg = model.config();
  if (cfg.L_enc >= 2) out.div_enc = diversity_loss(f.enc.states, batch.src_keep);
  if (cfg.L_dec >= 2) out.div_dec = diversity_loss(f.dec.states, batch.tgt_keep);
  out.total = cfg.lambda_div == 0.0 ? out.nll
                                    : total_loss(out.nll, out.div_enc, out.div_dec, cfg.lambda_div);
  return out;
}

template <typename T>
std::vector<Sequence> greedy_decode(const Seq2SeqModel<T>& model, const TokenGrid& src,
                                    std::span<const std::uint8_t> src_keep, std::size_t max_len,
                                    DecodeHooks hooks) {
  NoGradGuard no_grad;
  const auto enc = model.encode(src, src_keep);
  const std::size_t b = src.shape.at(0);
  const std::size_t cap = std::min(max_len, model.config().max_len);
  SelfKvCache<T> cache;
  std::vector<int> last(b, kBos);
  std::vector<bool> done(b, false);
  std::vector<Sequence> out(b);
  for (std::size_t pos = 0; pos < cap; ++pos) {
    const auto step = model.decode_step(enc, last, pos, cache);
    const std::size_t V = step.logits.dim(2);
    const auto logits = step.logits.data();
    bool all_done = true;
    for (std::size_t i = 0; i < b; ++i) {
      int tok = kEos;
      if (hooks.force_eos_at_step != pos + 1) {
        const auto row = logits.subspan(i * V, V);
        tok = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      }
      if (!done[i]) {
        if (tok == kEos) done[i] = true;
        else out[i].push_back(tok);
      }
      last[i] = tok;
      all_done = all_done && done[i];
    }
    if (all_done) break;
  }
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<int>, std::size_t>;

NgramCounts ngrams(const Sequence& s, std::size_t n) {
  NgramCounts c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Sequence(s.begin() + i, s.begin() + i + n)];
  return c;
}

}  // namespace

Metrics compute_metrics(const std::vector<Sequence>& hyps, const std::vector<Sequence>& refs) {
  if (hyps.size() != refs.size()) throw DimensionError("metrics: hypothesis and reference counts differ");
  if (refs.empty()) throw ConfigError("metrics need a nonempty corpus");
  Metrics m;
  std::size_t matches = 0, denom = 0, exact = 0, hyp_len = 0, ref_len = 0;
  std::size_t clipped[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    for (std::size_t i = 0; i < std::min(h.size(), r.size()); ++i) matches += h[i] == r[i];
    denom += std::max(h.size(), r.size());
    exact += h == r;
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = ngrams(h, n);
      const auto rc = ngrams(r, n);
      for (const auto& [g, c] : hc) {
        total[n - 1] += c;
        const auto it = rc.find(g);
        if (it != rc.end()) clipped[n - 1] += std::min(c, it->second);
      }
    }
  }
  m.token_accuracy = denom == 0 ? 1.0 : static_cast<double>(matches) / static_cast<double>(denom);
  m.sequence_accuracy = static_cast<double>(exact) / static_cast<double>(hyps.size());
  if (hyp_len == 0) {
    m.warning = "empty hypothesis corpus; BLEU is 0";
    return m;
  }
  double log_prec = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (clipped[n] == 0) return m;
    log_prec += std::log(static_cast<double>(clipped[n]) / static_cast<double>(total[n]));
  }
  const double c = static_cast<double>(hyp_len), r = static_cast<double>(ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  m.bleu = 100.0 * bp * std::exp(log_prec / 4.0);
  return m;
}

template <typename T>
Metrics evaluate(const Seq2SeqModel<T>& model, const std::vector<Pair>& pairs,
                 std::size_t batch_size, std::size_t threads, std::vector<Sequence>* hyps_out) {
  const auto batches = batchify(pairs, batch_size);
  std::vector<std::vector<Sequence>> decoded(batches.size());
  std::vector<std::exception_ptr> errors(batches.size());
  const int n = static_cast<int>(batches.size());
#pragma omp parallel for schedule(static) num_threads(static_cast<int>(std::max<std::size_t>(threads, 1)))
  for (int i = 0; i < n; ++i) {
    try {
      decoded[i] = greedy_decode(model, batches[i].src, batches[i].src_keep, model.config().max_len);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<Sequence> hyps, refs;
  for (auto& d : decoded)
    for (auto& s : d) hyps.push_back(std::move(s));
  for (const auto& p : pairs) refs.push_back(p.tgt);
  auto m = compute_metrics(hyps, refs);
  if (hyps_out) *hyps_out = std::move(hyps);
  return m;
}

namespace {

template <typename T>
double value_or_zero(const Tensor<T>& t) {
  return t.defined() ? static_cast<double>(t.item()) : 0.0;
}

}  // namespace

template <typename T>
TrainReport train(Seq2SeqModel<T>& model, const Dataset& data, const TrainConfig& tc,
                  const TrainCallbacks<T>& callbacks) {
  if (data.train.empty()) throw ConfigError("training set is empty");
  if (data.dev.empty()) throw ConfigError("dev set is empty");
  if (tc.eval_every == 0) throw ConfigError("eval_every must be positive");
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 order_rng(model.config().seed * 0x9E3779B97F4A7C15ULL + 0x5EEDULL);
  std::vector<Batch> epoch;
  std::size_t cursor = 0;
  auto next_batch = [&]() -> const Batch& {
    if (cursor == epoch.size()) {
      std::vector<std::size_t> idx(data.train.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), order_rng);
      std::vector<Pair> shuffled;
      shuffled.reserve(idx.size());
      for (auto i : idx) shuffled.push_back(data.train[i]);
      epoch = batchify(shuffled, tc.batch_size);
      cursor = 0;
    }
    return epoch[cursor++];
  };
  auto rng_state = [&] {
    std::ostringstream s;
    s << order_rng;
    return s.str();
  };

  TrainReport report;
  OptimState<T> state;
  double sums[4] = {0, 0, 0, 0};
  std::size_t count = 0;

  auto emit = [&](std::size_t step, const double* means) {
    TrainRecord r;
    r.step = step;
    r.loss = means[0];
    r.nll = means[1];
    r.div_enc = means[2];
    r.div_dec = means[3];
    const auto m = evaluate(model, data.dev, 128, tc.eval_threads);
    r.dev_tok_acc = m.token_accuracy;
    r.dev_seq_acc = m.sequence_accuracy;
    r.dev_bleu = m.bleu;
    report.records.push_back(r);
    if (callbacks.on_record) callbacks.on_record(r);
    if (r.dev_seq_acc > report.best_dev_seq_acc) {
      report.best_dev_seq_acc = r.dev_seq_acc;
      report.best_step = step;
      if (callbacks.on_best) callbacks.on_best(model, step, rng_state());
    }
    return r;
  };
  auto reached = [&](const TrainRecord& r) {
    return tc.target_seq_acc > 0.0 && r.dev_seq_acc >= tc.target_seq_acc &&
           r.dev_tok_acc >= tc.target_tok_acc;
  };

  {
    // Step 0: loss of the first batch without an update.
    NoGradGuard no_grad;
    const auto lp = compute_loss(model, next_batch());
    cursor = 0;
    const double m0[4] = {value_or_zero(lp.total), value_or_zero(lp.nll),
                          value_or_zero(lp.div_enc), value_or_zero(lp.div_dec)};
    if (reached(emit(0, m0))) {
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return report;
    }
  }

  for (std::size_t step = 1; step <= tc.steps; ++step) {
    const Batch& batch = next_batch();
    model.params().zero_grad();
    const auto lp = compute_loss(model, batch);
    const double loss = static_cast<double>(lp.total.item());
    if (!std::isfinite(loss)) {
      throw NumericalError("non-finite loss at step " + std::to_string(step));
    }
    if (callbacks.on_step) callbacks.on_step(step, lp);
    backward(lp.total);
    adam_step(model.params(), state, tc.adam);
    sums[0] += loss;
    sums[1] += value_or_zero(lp.nll);
    sums[2] += value_or_zero(lp.div_enc);
    sums[3] += value_or_zero(lp.div_dec);
    ++count;
    if (step % tc.eval_every == 0 || step == tc.steps) {
      double means[4];
      for (int i = 0; i < 4; ++i) means[i] = sums[i] / static_cast<double>(count);
      std::fill(sums, sums + 4, 0.0);
      count = 0;
      if (reached(emit(step, means))) break;
    }
  }
  model.params().zero_grad();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string train_csv_header() { return "step,loss,nll,div_enc,div_dec,dev_tok_acc,dev_seq_acc,dev_bleu"; }

std::string train_csv_row(const TrainRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.loss, r.nll,
                r.div_enc, r.div_dec, r.dev_tok_acc, r.dev_seq_acc, r.dev_bleu);
  return buf;
}

GradCheckReport model_grad_check(const ModelConfig& cfg, const Batch& batch, double eps) {
  ModelConfig c = cfg;
  c.precision = Precision::kF64;
  Seq2SeqModel<double> model(c);
  Seq2SeqModel<long double> mirror(c);
  std::vector<NamedTensor> named;
  ExtendedOracle oracle;
  const auto& wide = mirror.params().entries();
  for (std::size_t i = 0; i < model.params().entries().size(); ++i) {
    const auto& [name, t] = model.params().entries()[i];
    Tensor<long double> w = wide.at(i).second;
    if (wide.at(i).first != name || w.numel() != t.numel()) {
      throw DimensionError("model_grad_check: mirror layout differs at '" + name + "'");
    }
    auto dst = w.mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
    named.push_back({name, t});
    oracle.values.push_back(dst);
  }
  oracle.loss = [&] {
    NoGradGuard guard;
    return compute_loss(mirror, batch).total.item();
  };
  return grad_check_report([&] { return compute_loss(model, batch).total; }, named, oracle, eps);
}

#define DFSQ_INSTANTIATE(T)                                                                       \
  template void adam_step(ParamStore<T>&, OptimState<T>&, const AdamHyper&);                     \
  template LossParts<T> compute_loss(const Seq2SeqModel<T>&, const Batch&);                      \
  template std::vector<Sequence> greedy_decode(const Seq2SeqModel<T>&, const TokenGrid&,        \
                                               std::span<const std::uint8_t>, std::size_t,      \
                                               DecodeHooks);                                    \
  template Metrics evaluate(const Seq2SeqModel<T>&, const std::vector<Pair>&, std::size_t,       \
                            std::size_t, std::vector<Sequence>*);                               \
  template TrainReport train(Seq2SeqModel<T>&, const Dataset&, const TrainConfig&,               \
                             const TrainCallbacks<T>&);

DFSQ_INSTANTIATE(float)
DFSQ_INSTANTIATE(double)
DFSQ_INSTANTIATE(long double)

}  // namespace dfsq
