#include "dfsq/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dfsq/errors.hpp"

namespace dfsq {

template <typename T>
Checkpoint make_checkpoint(const Seq2SeqModel<T>& model, const RunConfig& run, std::size_t step,
                           std::string rng_state) {
  Checkpoint c;
  c.run = run;
  c.run.model = model.config();
  c.step = step;
  c.rng_state = std::move(rng_state);
  for (const auto& [name, t] : model.params().entries()) {
    c.tensors.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
  return c;
}

template <typename T>
void restore(Seq2SeqModel<T>& model, const Checkpoint& ckpt) {
  const auto& entries = model.params().entries();
  if (entries.size() != ckpt.tensors.size()) {
    throw ConfigError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model expects " + std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = entries[i];
    const auto& s = ckpt.tensors[i];
    if (s.name != name) throw ConfigError("checkpoint tensor '" + s.name + "' where model expects '" + name + "'");
    if (s.shape != t.shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_string(s.shape) +
                        ", model expects " + shape_string(t.shape()));
    }
    auto dst = Tensor<T>(t).mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(s.values[j]);
  }
}

namespace {

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view b) : bytes_(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ConfigError("checkpoint is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  const bool f64 = c.run.model.precision == Precision::kF64;
  nlohmann::json meta = to_json(c.run);
  meta["step"] = c.step;
  meta["rng_state"] = c.rng_state;
  const std::string json = meta.dump();
  std::string out = "DFSQ";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(json.size()));
  out += json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) put<std::uint64_t>(out, e);
    if (t.values.size() != numel(t.shape)) throw DimensionError("checkpoint tensor '" + t.name + "' size mismatch");
    for (double v : t.values) {
      if (f64) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      else put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "DFSQ") throw ConfigError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto json_len = r.get<std::uint32_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.take(json_len));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  c.run = run_config_from_json(meta);
  c.step = meta.value("step", std::size_t{0});
  c.rng_state = meta.value("rng_state", std::string{});
  const bool f64 = c.run.model.precision == Precision::kF64;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = std::string(r.take(r.get<std::uint32_t>()));
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint64_t>());
    std::size_t n = 1;
    for (auto e : t.shape) {
      if (e != 0 && n > r.remaining() / e) throw ConfigError("checkpoint is truncated");
      n *= e;
    }
    if (n > r.remaining() / (f64 ? 8 : 4)) throw ConfigError("checkpoint is truncated");
    t.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      t.values[j] = f64 ? std::bit_cast<double>(r.get<std::uint64_t>())
                        : static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
    }
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ConfigError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  // Write beside the target, then rename, so an interrupted save keeps the old file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ConfigError("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template Checkpoint make_checkpoint(const Seq2SeqModel<float>&, const RunConfig&, std::size_t, std::string);
template Checkpoint make_checkpoint(const Seq2SeqModel<double>&, const RunConfig&, std::size_t, std::string);
template void restore(Seq2SeqModel<float>&, const Checkpoint&);
template void restore(Seq2SeqModel<double>&, const Checkpoint&);

}  // namespace dfsq
