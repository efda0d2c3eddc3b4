#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "dualvd/params.hpp"

using namespace dualvd;

namespace {

std::vector<ParamSpec> specs() {
  return {{"enc.W", {4, 6}}, {"enc.b", {4}, InitKind::Zero}, {"embed", {10, 8}, InitKind::HashedEmbedding}};
}

}  // namespace

TEST(Init, DeterministicAndSeedSensitive) {
  EXPECT_EQ(init_params(specs(), 3), init_params(specs(), 3));
  EXPECT_FALSE(init_params(specs(), 3) == init_params(specs(), 4));
}

TEST(Init, IndependentOfDeclarationOrder) {
  auto s = specs();
  std::reverse(s.begin(), s.end());
  EXPECT_EQ(init_params(s, 9), init_params(specs(), 9));
}

TEST(Init, XavierBoundsZeroBiasesAndPadRow) {
  ParamStore p = init_params(specs(), 1);
  const double bound = std::sqrt(6.0 / (4 + 6));
  for (double v : p.at("enc.W").values()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.at("enc.b").values()) EXPECT_EQ(v, 0.0);
  const Tensor& e = p.at("embed");
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(e(0, c), 0.0);
  const double eb = std::sqrt(3.0 / 8.0);
  double nonzero = 0;
  for (std::size_t r = 1; r < 10; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_LE(std::abs(e(r, c)), eb);
      nonzero += e(r, c) != 0.0;
    }
  EXPECT_EQ(nonzero, 72);
}

TEST(Init, DuplicateNamesRejected) {
  auto s = specs();
  s.push_back({"enc.W", {1, 1}});
  EXPECT_THROW(init_params(s, 0), ConfigError);
  ParamStore p;
  EXPECT_THROW(p.at("missing"), ConfigError);
}

TEST(Params, OneLeafPerNamePerTape) {
  ParamStore store = init_params(specs(), 2);
  Tape t;
  Params p(t, store);
  Var a = p("enc.W");
  Var b = p("enc.W");
  EXPECT_EQ(a.id(), b.id());
  t.backward(sum_all(add(a, b)));
  ParamStore g = p.gradients();
  for (double v : g.at("enc.W").values()) EXPECT_EQ(v, 2.0);
  EXPECT_FALSE(g.contains("enc.b"));
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  ParamStore store = init_params(specs(), 5);
  const std::string bytes = checkpoint_bytes(store);
  std::istringstream is(bytes);
  ParamStore back = read_checkpoint(is);
  EXPECT_EQ(back, store);
  EXPECT_EQ(checkpoint_bytes(back), bytes);

  const auto path = (std::filesystem::temp_directory_path() / "dualvd_ckpt_test.dvd").string();
  save_checkpoint(path, store);
  EXPECT_EQ(checkpoint_bytes(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LayoutHeader) {
  ParamStore s;
  s.set("a", Tensor::row({1.5}));
  const std::string bytes = checkpoint_bytes(s);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "DVD1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  // magic 4 + count 4 + name len 2 + name 1 + rank 1 + dims 2·4 + payload 8
  EXPECT_EQ(bytes.size(), 4u + 4 + 2 + 1 + 1 + 8 + 8);
}

TEST(Checkpoint, MalformedInputIsAFormatError) {
  std::istringstream bad_magic("XXXX");
  EXPECT_THROW(read_checkpoint(bad_magic), FormatError);
  ParamStore s;
  s.set("a", Tensor::row({1.5, 2.5}));
  std::string bytes = checkpoint_bytes(s);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.dvd"), FormatError);
}

TEST(Hashing, StableValues) {
  EXPECT_EQ(splitmix64(0), splitmix64(0));
  EXPECT_NE(hash_string("a", 1), hash_string("b", 1));
  EXPECT_NE(hash_string("a", 1), hash_string("a", 2));
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double u = unit_uniform(splitmix64(i));
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
