#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dfsq/batch.hpp"

namespace dfsq {

enum class TaskKind { kCopy, kReverse, kSort };

std::string_view to_string(TaskKind kind);
TaskKind parse_task(std::string_view s);

struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  std::size_t vocab_size = 16;  // including the reserved PAD/BOS/EOS ids
  std::size_t len_min = 3;
  std::size_t len_max = 10;
  std::size_t n_train = 2048;
  std::size_t n_dev = 256;
  std::size_t n_test = 256;
  std::uint64_t seed = 1;

  // Throws ConfigError. max_len is the model's, which must leave room for BOS/EOS.
  void validate(std::size_t max_len) const;
  bool operator==(const TaskSpec&) const = default;
};

using Sequence = std::vector<int>;

struct Pair {
  Sequence src;
  Sequence tgt;
  bool operator==(const Pair&) const = default;
};

struct Dataset {
  std::vector<Pair> train, dev, test;
};

Sequence apply_task(TaskKind kind, const Sequence& src);

// Held-out sequences are drawn first and unique; train pairs never repeat a held-out source.
Dataset generate(const TaskSpec& spec);

// Consecutive chunks of batch_size pairs, each padded to its own longest sequence.
std::vector<Batch> batchify(const std::vector<Pair>& pairs, std::size_t batch_size, int pad_id = kPad);

// "src ||| tgt" lines of space-separated ids.
void write_pairs(std::ostream& out, const std::vector<Pair>& pairs);
std::vector<Pair> read_pairs(std::istream& in);
// Parses one line; the " ||| tgt" half is optional (empty target).
Pair parse_pair_line(std::string_view line);

}  // namespace dfsq
