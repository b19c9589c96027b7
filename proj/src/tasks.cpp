#include "dfsq/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "dfsq/errors.hpp"

namespace dfsq {

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy:
      return "copy";
    case TaskKind::kReverse:
      return "reverse";
    case TaskKind::kSort:
      return "sort";
  }
  return "?";
}

TaskKind parse_task(std::string_view s) {
  for (auto k : {TaskKind::kCopy, TaskKind::kReverse, TaskKind::kSort})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected copy, reverse or sort)");
}

void TaskSpec::validate(std::size_t max_len) const {
  if (vocab_size < 4) throw ConfigError("task vocab_size must be at least 4");
  if (len_min < 1 || len_min > len_max) throw ConfigError("task lengths need 1 <= len_min <= len_max");
  if (len_max + 2 > max_len) {
    throw ConfigError("task len_max " + std::to_string(len_max) + " leaves no room for BOS/EOS in max_len " +
                      std::to_string(max_len));
  }
  if (n_train == 0) throw ConfigError("task n_train must be positive");
}

Sequence apply_task(TaskKind kind, const Sequence& src) {
  Sequence out = src;
  if (kind == TaskKind::kReverse) std::reverse(out.begin(), out.end());
  if (kind == TaskKind::kSort) std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Number of distinct sequences, saturating at `cap`.
std::size_t sequence_space(const TaskSpec& s, std::size_t cap) {
  const double symbols = static_cast<double>(s.vocab_size - kFirstToken);
  double total = 0;
  for (std::size_t len = s.len_min; len <= s.len_max; ++len) {
    total += std::pow(symbols, static_cast<double>(len));
    if (total >= static_cast<double>(cap)) return cap;
  }
  return static_cast<std::size_t>(total);
}

}  // namespace

Dataset generate(const TaskSpec& spec) {
  spec.validate(spec.len_max + 2);
  const std::size_t held_out = spec.n_dev + spec.n_test;
  const std::size_t space = sequence_space(spec, 4 * (held_out + spec.n_train) + 16);
  if (held_out + 1 > space || (held_out > 0 && 2 * held_out > space)) {
    throw ConfigError("only " + std::to_string(space) + " distinct sequences exist for " +
                      std::to_string(held_out) +
                      " held-out pairs; increase vocab_size or the length range");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> len_dist(spec.len_min, spec.len_max);
  std::uniform_int_distribution<int> tok_dist(kFirstToken, static_cast<int>(spec.vocab_size) - 1);
  auto draw = [&] {
    Sequence s(len_dist(rng));
    for (auto& t : s) t = tok_dist(rng);
    return s;
  };
  Dataset ds;
  std::set<Sequence> seen;
  auto fill_unique = [&](std::vector<Pair>& out, std::size_t n) {
    while (out.size() < n) {
      auto s = draw();
      if (seen.insert(s).second) out.push_back({s, apply_task(spec.kind, s)});
    }
  };
  fill_unique(ds.dev, spec.n_dev);
  fill_unique(ds.test, spec.n_test);
  const std::size_t budget = 1000 * spec.n_train + 1000;
  std::size_t attempts = 0;
  while (ds.train.size() < spec.n_train) {
    if (++attempts > budget) {
      throw ConfigError("could not draw training pairs disjoint from held-out data; "
                        "increase vocab_size or the length range");
    }
    auto s = draw();
    if (seen.count(s) == 0) ds.train.push_back({s, apply_task(spec.kind, s)});
  }
  return ds;
}

std::vector<Batch> batchify(const std::vector<Pair>& pairs, std::size_t batch_size, int pad_id) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, pairs.size() - start);
    std::size_t ts = 1, tt = 1;
    for (std::size_t i = 0; i < n; ++i) {
      ts = std::max(ts, pairs[start + i].src.size() + 1);
      tt = std::max(tt, pairs[start + i].tgt.size() + 1);
    }
    Batch b;
    b.src = {{n, ts}, std::vector<int>(n * ts, pad_id)};
    b.tgt_in = {{n, tt}, std::vector<int>(n * tt, pad_id)};
    b.tgt_out.assign(n * tt, pad_id);
    b.src_keep.assign(n * ts, 0);
    b.tgt_keep.assign(n * tt, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = pairs[start + i];
      for (std::size_t t = 0; t < p.src.size(); ++t) b.src.ids[i * ts + t] = p.src[t];
      b.src.ids[i * ts + p.src.size()] = kEos;
      for (std::size_t t = 0; t <= p.src.size(); ++t) b.src_keep[i * ts + t] = 1;
      b.tgt_in.ids[i * tt] = kBos;
      for (std::size_t t = 0; t < p.tgt.size(); ++t) {
        b.tgt_in.ids[i * tt + t + 1] = p.tgt[t];
        b.tgt_out[i * tt + t] = p.tgt[t];
      }
      b.tgt_out[i * tt + p.tgt.size()] = kEos;
      for (std::size_t t = 0; t <= p.tgt.size(); ++t) b.tgt_keep[i * tt + t] = 1;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

namespace {

void write_seq(std::ostream& out, const Sequence& s) {
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
}

Sequence parse_seq(std::string_view text, std::size_t line_no) {
  Sequence s;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v < 0) {
      throw ConfigError("line " + std::to_string(line_no) + ": '" + tok + "' is not a token id");
    }
    s.push_back(v);
  }
  return s;
}

}  // namespace

void write_pairs(std::ostream& out, const std::vector<Pair>& pairs) {
  for (const auto& p : pairs) {
    write_seq(out, p.src);
    out << " ||| ";
    write_seq(out, p.tgt);
    out << '\n';
  }
}

Pair parse_pair_line(std::string_view line) {
  const auto sep = line.find("|||");
  if (sep == std::string_view::npos) return {parse_seq(line, 1), {}};
  return {parse_seq(line.substr(0, sep), 1), parse_seq(line.substr(sep + 3), 1)};
}

std::vector<Pair> read_pairs(std::istream& in) {
  std::vector<Pair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto sep = line.find("|||");
    if (sep == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": missing '|||' separator");
    }
    pairs.push_back({parse_seq(std::string_view(line).substr(0, sep), line_no),
                     parse_seq(std::string_view(line).substr(sep + 3), line_no)});
  }
  return pairs;
}

}  // namespace dfsq
