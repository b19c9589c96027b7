#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dfsq/checkpoint.hpp"
#include "dfsq/errors.hpp"
#include "dfsq/train_eval.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

namespace dfsq {
namespace {

using testing::scramble;
using testing::small_config;
using testing::to_vector;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dfsq_ckpt_" + name)).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <typename T>
void expect_same_params(const Seq2SeqModel<T>& a, const Seq2SeqModel<T>& b) {
  ASSERT_EQ(a.params().entries().size(), b.params().entries().size());
  for (std::size_t i = 0; i < a.params().entries().size(); ++i)
    EXPECT_EQ(to_vector(a.params().entries()[i].second), to_vector(b.params().entries()[i].second))
        << a.params().entries()[i].first;
}

template <typename T>
class RoundTrip : public ::testing::Test {};
using Precisions = ::testing::Types<float, double>;
TYPED_TEST_SUITE(RoundTrip, Precisions);

TYPED_TEST(RoundTrip, ByteAndMetricIdentical) {
  using T = TypeParam;
  auto c = small_config(StrategyTag::kHierarchical);
  c.precision = std::is_same_v<T, double> ? Precision::kF64 : Precision::kF32;
  RunConfig run;
  run.model = c;
  run.task.vocab_size = 11;
  run.task.len_max = 6;
  run.task.n_train = 40;
  run.task.n_dev = 24;
  run.task.n_test = 8;
  Seq2SeqModel<T> model(c);
  std::mt19937_64 rng(1);
  scramble(model.params(), rng);
  const auto data = generate(run.task);

  const auto path = temp_path(std::string("a_") + typeid(T).name());
  const auto path2 = temp_path(std::string("b_") + typeid(T).name());
  save_checkpoint(path, make_checkpoint(model, run, 42, "rng-state-text"));
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.step, 42u);
  EXPECT_EQ(loaded.rng_state, "rng-state-text");
  EXPECT_EQ(loaded.run.model, c);
  EXPECT_EQ(loaded.run.task, run.task);
  save_checkpoint(path2, loaded);
  EXPECT_EQ(read_file(path), read_file(path2));
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));

  Seq2SeqModel<T> fresh(loaded.run.model);
  restore(fresh, loaded);
  expect_same_params(model, fresh);
  EXPECT_EQ(encode_checkpoint(make_checkpoint(fresh, loaded.run, 42, "rng-state-text")),
            read_file(path));
  std::vector<Sequence> h1, h2;
  const auto m1 = evaluate(model, data.dev, 8, 1, &h1);
  const auto m2 = evaluate(fresh, data.dev, 8, 1, &h2);
  EXPECT_EQ(h1, h2);
  EXPECT_EQ(m1.bleu, m2.bleu);
  EXPECT_EQ(m1.token_accuracy, m2.token_accuracy);
  EXPECT_EQ(m1.sequence_accuracy, m2.sequence_accuracy);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

Checkpoint small_checkpoint(Precision p = Precision::kF32) {
  RunConfig run;
  run.model = small_config(StrategyTag::kVanilla, 1);
  run.model.precision = p;
  run.task.vocab_size = 11;
  run.task.len_max = 6;
  if (p == Precision::kF64) return make_checkpoint(Seq2SeqModel<double>(run.model), run, 3, "s");
  return make_checkpoint(Seq2SeqModel<float>(run.model), run, 3, "s");
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(small_checkpoint());
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "DFSQ");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  const std::uint32_t len = static_cast<unsigned char>(bytes[8]) |
                            static_cast<unsigned char>(bytes[9]) << 8 |
                            static_cast<unsigned char>(bytes[10]) << 16 |
                            static_cast<unsigned char>(bytes[11]) << 24;
  const auto meta = nlohmann::json::parse(bytes.substr(12, len));
  EXPECT_EQ(meta.at("model").at("d_model"), 8);
  EXPECT_EQ(meta.at("step"), 3);
}

TEST(Checkpoint, StoredPrecisionSetsSize) {
  const auto c32 = small_checkpoint(Precision::kF32), c64 = small_checkpoint(Precision::kF64);
  std::size_t values = 0;
  for (const auto& t : c32.tensors) values += t.values.size();
  const auto b32 = encode_checkpoint(c32), b64 = encode_checkpoint(c64);
  const auto json32 = to_json(c32.run).dump(), json64 = to_json(c64.run).dump();
  EXPECT_EQ(static_cast<long>(b64.size()) - static_cast<long>(b32.size()),
            static_cast<long>(4 * values) + static_cast<long>(json64.size()) -
                static_cast<long>(json32.size()));
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  const auto good = encode_checkpoint(small_checkpoint());
  EXPECT_THROW(decode_checkpoint("XXXX" + good.substr(4)), ConfigError);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), ConfigError);
  for (std::size_t cut : {3u, 10u, 40u})
    EXPECT_THROW(decode_checkpoint(good.substr(0, cut)), ConfigError);
  EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 1)), ConfigError);
  EXPECT_THROW(decode_checkpoint(good + "x"), ConfigError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), ConfigError);
}

TEST(Checkpoint, RestoreChecksLayout) {
  const auto ckpt = small_checkpoint();
  auto other = small_config(StrategyTag::kVanilla, 2);
  other.precision = Precision::kF32;
  Seq2SeqModel<float> deeper(other);
  EXPECT_THROW(restore(deeper, ckpt), ConfigError);
  auto wide = small_config(StrategyTag::kVanilla, 1);
  wide.d_ff = 32;
  Seq2SeqModel<float> m(wide);
  EXPECT_THROW(restore(m, ckpt), ConfigError);
  auto renamed = ckpt;
  renamed.tensors[0].name = "src_embedding";
  Seq2SeqModel<float> same(ckpt.run.model);
  EXPECT_THROW(restore(same, renamed), ConfigError);
  EXPECT_NO_THROW(restore(same, ckpt));
}

}  // namespace
}  // namespace dfsq
