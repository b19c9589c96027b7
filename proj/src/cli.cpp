#include "dfsq/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "dfsq/analysis.hpp"
#include "dfsq/checkpoint.hpp"
#include "dfsq/config_io.hpp"
#include "dfsq/errors.hpp"
#include "dfsq/kernels.hpp"
#include "dfsq/train_eval.hpp"

namespace dfsq {
namespace {

namespace fs = std::filesystem;

std::size_t env_threads() {
  const char* v = std::getenv("DFSQ_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("DFSQ_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

template <typename T>
int run_train(RunConfig run, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto data = generate(run.task);
  Seq2SeqModel<T> model(run.model);
  std::ofstream csv(out_dir / "train.csv", std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + (out_dir / "train.csv").string());
  csv << train_csv_header() << '\n';
  const std::string ckpt_path = (out_dir / "best.ckpt").string();
  TrainCallbacks<T> cb;
  cb.on_record = [&](const TrainRecord& r) {
    csv << train_csv_row(r) << '\n';
    csv.flush();
    std::cerr << "step " << r.step << "  loss " << r.loss << "  dev tok " << r.dev_tok_acc << "  dev seq "
              << r.dev_seq_acc << "  bleu " << r.dev_bleu << '\n';
  };
  cb.on_best = [&](const Seq2SeqModel<T>& m, std::size_t step, const std::string& rng) {
    save_checkpoint(ckpt_path, make_checkpoint(m, run, step, rng));
  };
  std::ofstream(out_dir / "config.txt") << format_config(run);
  const auto report = train(model, data, run.train, cb);
  std::cout << nlohmann::json{{"best_step", report.best_step},
                              {"best_dev_seq_acc", report.best_dev_seq_acc},
                              {"checkpoint", ckpt_path},
                              {"log", (out_dir / "train.csv").string()}}
                   .dump(2)
            << '\n';
  return 0;
}

template <typename T>
Seq2SeqModel<T> load_model(const Checkpoint& ckpt) {
  Seq2SeqModel<T> model(ckpt.run.model);
  restore(model, ckpt);
  return model;
}

template <typename T>
int run_eval(const Checkpoint& ckpt, TaskSpec task, const std::string& split) {
  const auto model = load_model<T>(ckpt);
  const auto data = generate(task);
  const auto& pairs = split == "test" ? data.test : data.dev;
  if (pairs.empty()) throw ConfigError("the " + split + " split is empty");
  const auto m = evaluate(model, pairs, 128, env_threads());
  if (!m.warning.empty()) std::cerr << "warning: " << m.warning << '\n';
  std::cout << nlohmann::json{{"split", split},
                              {"task", to_string(task.kind)},
                              {"pairs", pairs.size()},
                              {"token_accuracy", m.token_accuracy},
                              {"sequence_accuracy", m.sequence_accuracy},
                              {"bleu", m.bleu}}
                   .dump(2)
            << '\n';
  return 0;
}

template <typename T>
int run_decode(const Checkpoint& ckpt, const std::string& input) {
  const auto model = load_model<T>(ckpt);
  std::ifstream in(input);
  if (!in) throw ConfigError("cannot open input '" + input + "'");
  std::vector<Pair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    pairs.push_back(parse_pair_line(line));
  }
  for (const auto& p : pairs) {
    for (int id : p.src) {
      if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_src) {
        throw ConfigError("token id " + std::to_string(id) + " is outside the source vocabulary");
      }
    }
    if (p.src.size() + 1 > model.config().max_len) throw ConfigError("input line longer than max_len");
  }
  for (const auto& b : batchify(pairs, 64)) {
    for (const auto& seq : greedy_decode(model, b.src, b.src_keep, model.config().max_len)) {
      for (std::size_t i = 0; i < seq.size(); ++i) std::cout << (i ? " " : "") << seq[i];
      std::cout << '\n';
    }
  }
  return 0;
}

Batch gradcheck_batch(const RunConfig& run) {
  std::mt19937_64 rng(run.model.seed);
  const int hi = static_cast<int>(std::min(run.model.vocab_src, run.model.vocab_tgt)) - 1;
  std::uniform_int_distribution<int> tok(kFirstToken, hi);
  std::vector<Pair> pairs(2);
  for (auto& p : pairs) {
    p.src.resize(4);
    for (auto& t : p.src) t = tok(rng);
    p.tgt = apply_task(run.task.kind, p.src);
  }
  return batchify(pairs, 2).front();
}

int run_gradcheck(RunConfig run, double tolerance) {
  run.model.precision = Precision::kF64;
  const auto& m = run.model;
  if (m.d_model > 8 || m.L_enc > 4 || m.L_dec > 4) {
    throw ConfigError("gradcheck needs a tiny config (d_model <= 8, L_enc and L_dec <= 4)");
  }
  m.validate();
  const auto report = model_grad_check(run.model, gradcheck_batch(run));
  nlohmann::json worst = nlohmann::json::array();
  for (const auto& e : report.worst(5)) {
    worst.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"index", e.worst_index},
                     {"analytic", e.analytic}, {"numeric", e.numeric}});
  }
  const bool ok = report.max_rel_error < tolerance;
  std::cout << nlohmann::json{{"strategy", to_string(m.strategy.tag)},
                              {"lambda_div", m.lambda_div},
                              {"tensors", report.per_tensor.size()},
                              {"max_rel_error", report.max_rel_error},
                              {"tolerance", tolerance},
                              {"passed", ok},
                              {"worst", worst}}
                   .dump(2)
            << '\n';
  return ok ? 0 : 2;
}

int run_inspect_dag(const RunConfig& run) {
  run.model.validate();
  const auto& m = run.model;
  std::cout << nlohmann::json{{"encoder", to_json(describe_dag(m.L_enc, m.side_strategy(true)))},
                              {"decoder", to_json(describe_dag(m.L_dec, m.side_strategy(false)))}}
                   .dump(2)
            << '\n';
  return 0;
}

template <typename T>
int run_inspect_exploitation(const Checkpoint& ckpt, const std::string& out) {
  const auto model = load_model<T>(ckpt);
  const auto csv = exploitation_csv(exploitation_scores(model));
  if (out.empty() || out == "-") {
    std::cout << csv;
  } else {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw ConfigError("cannot write '" + out + "'");
    f << csv;
  }
  return 0;
}

int run_inspect_params(const RunConfig& run) {
  run.model.validate();
  const auto closed = count_params(run.model);
  const Seq2SeqModel<float> model(run.model);
  const auto counted = enumerate_params(model.params());
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [k, v] : closed) rows[k] = {{"closed_form", v}, {"enumerated", counted.at(k)}};
  std::cout << nlohmann::json{{"strategy", to_string(run.model.strategy.tag)},
                              {"components", rows},
                              {"delta_vs_vanilla", param_delta(run.model)},
                              {"consistent", closed == counted}}
                   .dump(2)
            << '\n';
  return closed == counted ? 0 : 2;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Layer-fusion Transformer toolkit: train, evaluate and inspect encoder-decoder models"};
  app.require_subcommand(1);

  std::string config_path, task_name, out, ckpt_path, split = "dev", input;
  std::size_t steps = 0;
  double tolerance = 1e-4;

  auto* train_cmd = app.add_subcommand("train", "Train on a synthetic task");
  train_cmd->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--task", task_name, "copy | reverse | sort");
  train_cmd->add_option("--steps", steps, "training steps (overrides the config)");
  train_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with greedy decoding");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--task", task_name, "copy | reverse | sort");
  eval_cmd->add_option("--split", split, "dev | test")->check(CLI::IsMember({"dev", "test"}));

  auto* decode_cmd = app.add_subcommand("decode", "Greedy-decode source lines");
  decode_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--input", input, "file of space-separated ids, one source per line")
      ->required()
      ->check(CLI::ExistingFile);

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  grad_cmd->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  grad_cmd->add_option("--tolerance", tolerance, "maximum relative error");

  auto* inspect = app.add_subcommand("inspect", "Structure and parameter reports");
  inspect->require_subcommand(1);
  auto* dag_cmd = inspect->add_subcommand("dag", "Fusion DAG of both stacks as JSON");
  dag_cmd->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  auto* expl_cmd = inspect->add_subcommand("exploitation", "Per-input aggregation scores as CSV");
  expl_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  expl_cmd->add_option("--out", out, "CSV path (stdout when omitted)");
  auto* params_cmd = inspect->add_subcommand("params", "Parameter counts per component");
  params_cmd->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const std::size_t threads = env_threads();
    kernels::set_thread_count(static_cast<int>(threads));
    if (*train_cmd) {
      auto run = load_config_file(config_path);
      if (!task_name.empty()) run.task.kind = parse_task(task_name);
      if (steps > 0) run.train.steps = steps;
      run.train.eval_threads = threads;
      run.validate();
      return run.model.precision == Precision::kF64 ? run_train<double>(run, out) : run_train<float>(run, out);
    }
    if (*eval_cmd) {
      const auto ckpt = load_checkpoint(ckpt_path);
      auto task = ckpt.run.task;
      if (!task_name.empty()) task.kind = parse_task(task_name);
      return ckpt.run.model.precision == Precision::kF64 ? run_eval<double>(ckpt, task, split)
                                                         : run_eval<float>(ckpt, task, split);
    }
    if (*decode_cmd) {
      const auto ckpt = load_checkpoint(ckpt_path);
      return ckpt.run.model.precision == Precision::kF64 ? run_decode<double>(ckpt, input)
                                                         : run_decode<float>(ckpt, input);
    }
    if (*grad_cmd) return run_gradcheck(load_config_file(config_path), tolerance);
    if (*dag_cmd) return run_inspect_dag(load_config_file(config_path));
    if (*expl_cmd) {
      const auto ckpt = load_checkpoint(ckpt_path);
      return ckpt.run.model.precision == Precision::kF64 ? run_inspect_exploitation<double>(ckpt, out)
                                                         : run_inspect_exploitation<float>(ckpt, out);
    }
    if (*params_cmd) return run_inspect_params(load_config_file(config_path));
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace dfsq
