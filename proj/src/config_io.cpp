#include "dfsq/config_io.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "dfsq/errors.hpp"

namespace dfsq {

void RunConfig::validate() const {
  model.validate();
  task.validate(model.max_len);
  if (task.vocab_size > model.vocab_src || task.vocab_size > model.vocab_tgt) {
    throw ConfigError("task vocabulary exceeds the model vocabulary");
  }
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.eval_every == 0) throw ConfigError("eval_every must be positive");
  if (!(train.adam.peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view v, const std::string& key) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view v, const std::string& key) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + std::string(v) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"d_model", [](RunConfig& c, auto v, auto& k) { c.model.d_model = to_size(v, k); }},
      {"n_heads", [](RunConfig& c, auto v, auto& k) { c.model.n_heads = to_size(v, k); }},
      {"d_ff", [](RunConfig& c, auto v, auto& k) { c.model.d_ff = to_size(v, k); }},
      {"d_ff_agg", [](RunConfig& c, auto v, auto& k) { c.model.d_ff_agg = to_size(v, k); }},
      {"L_enc", [](RunConfig& c, auto v, auto& k) { c.model.L_enc = to_size(v, k); }},
      {"L_dec", [](RunConfig& c, auto v, auto& k) { c.model.L_dec = to_size(v, k); }},
      {"vocab_src", [](RunConfig& c, auto v, auto& k) { c.model.vocab_src = to_size(v, k); }},
      {"vocab_tgt", [](RunConfig& c, auto v, auto& k) { c.model.vocab_tgt = to_size(v, k); }},
      {"max_len", [](RunConfig& c, auto v, auto& k) { c.model.max_len = to_size(v, k); }},
      {"strategy", [](RunConfig& c, auto v, auto&) { c.model.strategy.tag = parse_strategy(v); }},
      {"k", [](RunConfig& c, auto v, auto& k) { c.model.strategy.k = to_size(v, k); }},
      {"agg_fn", [](RunConfig& c, auto v, auto&) { c.model.strategy.agg_fn = parse_agg_fn(v); }},
      {"residual_mode",
       [](RunConfig& c, auto v, auto&) { c.model.strategy.residual_mode = parse_residual_mode(v); }},
      {"fuse_encoder", [](RunConfig& c, auto v, auto& k) { c.model.fuse_encoder = to_bool(v, k); }},
      {"fuse_decoder", [](RunConfig& c, auto v, auto& k) { c.model.fuse_decoder = to_bool(v, k); }},
      {"lambda_div", [](RunConfig& c, auto v, auto& k) { c.model.lambda_div = to_double(v, k); }},
      {"ln_eps", [](RunConfig& c, auto v, auto& k) { c.model.ln_eps = to_double(v, k); }},
      {"dropout", [](RunConfig& c, auto v, auto& k) { c.model.dropout = to_double(v, k); }},
      {"seed", [](RunConfig& c, auto v, auto& k) { c.model.seed = to_size(v, k); }},
      {"precision", [](RunConfig& c, auto v, auto&) { c.model.precision = parse_precision(v); }},
      {"batch_size", [](RunConfig& c, auto v, auto& k) { c.train.batch_size = to_size(v, k); }},
      {"steps", [](RunConfig& c, auto v, auto& k) { c.train.steps = to_size(v, k); }},
      {"eval_every", [](RunConfig& c, auto v, auto& k) { c.train.eval_every = to_size(v, k); }},
      {"peak_lr", [](RunConfig& c, auto v, auto& k) { c.train.adam.peak_lr = to_double(v, k); }},
      {"warmup", [](RunConfig& c, auto v, auto& k) { c.train.adam.warmup = to_size(v, k); }},
      {"beta1", [](RunConfig& c, auto v, auto& k) { c.train.adam.beta1 = to_double(v, k); }},
      {"beta2", [](RunConfig& c, auto v, auto& k) { c.train.adam.beta2 = to_double(v, k); }},
      {"adam_eps", [](RunConfig& c, auto v, auto& k) { c.train.adam.eps = to_double(v, k); }},
      {"target_seq_acc", [](RunConfig& c, auto v, auto& k) { c.train.target_seq_acc = to_double(v, k); }},
      {"target_tok_acc", [](RunConfig& c, auto v, auto& k) { c.train.target_tok_acc = to_double(v, k); }},
      {"task", [](RunConfig& c, auto v, auto&) { c.task.kind = parse_task(v); }},
      {"task_vocab", [](RunConfig& c, auto v, auto& k) { c.task.vocab_size = to_size(v, k); }},
      {"len_min", [](RunConfig& c, auto v, auto& k) { c.task.len_min = to_size(v, k); }},
      {"len_max", [](RunConfig& c, auto v, auto& k) { c.task.len_max = to_size(v, k); }},
      {"n_train", [](RunConfig& c, auto v, auto& k) { c.task.n_train = to_size(v, k); }},
      {"n_dev", [](RunConfig& c, auto v, auto& k) { c.task.n_dev = to_size(v, k); }},
      {"n_test", [](RunConfig& c, auto v, auto& k) { c.task.n_test = to_size(v, k); }},
      {"data_seed", [](RunConfig& c, auto v, auto& k) { c.task.seed = to_size(v, k); }},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, fn] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::string_view text) {
  std::map<std::string, const Setter*> lookup;
  for (const auto& [name, fn] : setters()) lookup[name] = &fn;
  RunConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    if (value.empty()) throw ConfigError(where + "key '" + key + "' has no value");
    try {
      (*it->second)(cfg, value, key);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  const auto& m = c.model;
  o << "d_model = " << m.d_model << "\nn_heads = " << m.n_heads << "\nd_ff = " << m.d_ff
    << "\nd_ff_agg = " << m.d_ff_agg << "\nL_enc = " << m.L_enc << "\nL_dec = " << m.L_dec
    << "\nvocab_src = " << m.vocab_src << "\nvocab_tgt = " << m.vocab_tgt
    << "\nmax_len = " << m.max_len << "\nstrategy = " << to_string(m.strategy.tag)
    << "\nk = " << m.strategy.k << "\nagg_fn = " << to_string(m.strategy.agg_fn)
    << "\nresidual_mode = " << to_string(m.strategy.residual_mode)
    << "\nfuse_encoder = " << (m.fuse_encoder ? "true" : "false")
    << "\nfuse_decoder = " << (m.fuse_decoder ? "true" : "false")
    << "\nlambda_div = " << m.lambda_div << "\nln_eps = " << m.ln_eps << "\ndropout = " << m.dropout
    << "\nseed = " << m.seed << "\nprecision = " << to_string(m.precision) << "\n";
  const auto& t = c.train;
  o << "batch_size = " << t.batch_size << "\nsteps = " << t.steps << "\neval_every = " << t.eval_every
    << "\npeak_lr = " << t.adam.peak_lr << "\nwarmup = " << t.adam.warmup << "\nbeta1 = " << t.adam.beta1
    << "\nbeta2 = " << t.adam.beta2 << "\nadam_eps = " << t.adam.eps
    << "\ntarget_seq_acc = " << t.target_seq_acc << "\ntarget_tok_acc = " << t.target_tok_acc << "\n";
  const auto& s = c.task;
  o << "task = " << to_string(s.kind) << "\ntask_vocab = " << s.vocab_size << "\nlen_min = " << s.len_min
    << "\nlen_max = " << s.len_max << "\nn_train = " << s.n_train << "\nn_dev = " << s.n_dev
    << "\nn_test = " << s.n_test << "\ndata_seed = " << s.seed << "\n";
  return o.str();
}

nlohmann::json to_json(const ModelConfig& m) {
  return {{"d_model", m.d_model},
          {"n_heads", m.n_heads},
          {"d_ff", m.d_ff},
          {"d_ff_agg", m.d_ff_agg},
          {"L_enc", m.L_enc},
          {"L_dec", m.L_dec},
          {"vocab_src", m.vocab_src},
          {"vocab_tgt", m.vocab_tgt},
          {"max_len", m.max_len},
          {"strategy", to_string(m.strategy.tag)},
          {"k", m.strategy.k},
          {"agg_fn", to_string(m.strategy.agg_fn)},
          {"residual_mode", to_string(m.strategy.residual_mode)},
          {"fuse_encoder", m.fuse_encoder},
          {"fuse_decoder", m.fuse_decoder},
          {"lambda_div", m.lambda_div},
          {"ln_eps", m.ln_eps},
          {"dropout", m.dropout},
          {"seed", m.seed},
          {"precision", to_string(m.precision)}};
}

nlohmann::json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},     {"steps", t.steps},
          {"eval_every", t.eval_every},     {"peak_lr", t.adam.peak_lr},
          {"warmup", t.adam.warmup},        {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},          {"adam_eps", t.adam.eps},
          {"target_seq_acc", t.target_seq_acc}, {"target_tok_acc", t.target_tok_acc}};
}

nlohmann::json to_json(const TaskSpec& s) {
  return {{"task", to_string(s.kind)}, {"task_vocab", s.vocab_size}, {"len_min", s.len_min},
          {"len_max", s.len_max},      {"n_train", s.n_train},       {"n_dev", s.n_dev},
          {"n_test", s.n_test},        {"data_seed", s.seed}};
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"task", to_json(c.task)}};
}

namespace {

template <typename V>
V field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing config field '") + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.d_model = field<std::size_t>(j, "d_model");
  m.n_heads = field<std::size_t>(j, "n_heads");
  m.d_ff = field<std::size_t>(j, "d_ff");
  m.d_ff_agg = field<std::size_t>(j, "d_ff_agg");
  m.L_enc = field<std::size_t>(j, "L_enc");
  m.L_dec = field<std::size_t>(j, "L_dec");
  m.vocab_src = field<std::size_t>(j, "vocab_src");
  m.vocab_tgt = field<std::size_t>(j, "vocab_tgt");
  m.max_len = field<std::size_t>(j, "max_len");
  m.strategy.tag = parse_strategy(field<std::string>(j, "strategy"));
  m.strategy.k = field<std::size_t>(j, "k");
  m.strategy.agg_fn = parse_agg_fn(field<std::string>(j, "agg_fn"));
  m.strategy.residual_mode = parse_residual_mode(field<std::string>(j, "residual_mode"));
  m.fuse_encoder = field<bool>(j, "fuse_encoder");
  m.fuse_decoder = field<bool>(j, "fuse_decoder");
  m.lambda_div = field<double>(j, "lambda_div");
  m.ln_eps = field<double>(j, "ln_eps");
  m.dropout = field<double>(j, "dropout");
  m.seed = field<std::uint64_t>(j, "seed");
  m.precision = parse_precision(field<std::string>(j, "precision"));
  return m;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.batch_size = field<std::size_t>(j, "batch_size");
  t.steps = field<std::size_t>(j, "steps");
  t.eval_every = field<std::size_t>(j, "eval_every");
  t.adam.peak_lr = field<double>(j, "peak_lr");
  t.adam.warmup = field<std::size_t>(j, "warmup");
  t.adam.beta1 = field<double>(j, "beta1");
  t.adam.beta2 = field<double>(j, "beta2");
  t.adam.eps = field<double>(j, "adam_eps");
  t.target_seq_acc = field<double>(j, "target_seq_acc");
  t.target_tok_acc = field<double>(j, "target_tok_acc");
  return t;
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  TaskSpec s;
  s.kind = parse_task(field<std::string>(j, "task"));
  s.vocab_size = field<std::size_t>(j, "task_vocab");
  s.len_min = field<std::size_t>(j, "len_min");
  s.len_max = field<std::size_t>(j, "len_max");
  s.n_train = field<std::size_t>(j, "n_train");
  s.n_dev = field<std::size_t>(j, "n_dev");
  s.n_test = field<std::size_t>(j, "n_test");
  s.seed = field<std::uint64_t>(j, "data_seed");
  return s;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  return {model_config_from_json(field<nlohmann::json>(j, "model")),
          train_config_from_json(field<nlohmann::json>(j, "train")),
          task_spec_from_json(field<nlohmann::json>(j, "task"))};
}

}  // namespace dfsq
