// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include <gtest/gtest.h>

#include "paft/dataset.hpp"
#include "test_util.hpp"

namespace paft {
namespace {

BenchmarkConfig small_config() {
  BenchmarkConfig c;
  c.sft_train = 40;
  c.pref_train = 30;
  c.sft_eval = 20;
  c.pref_eval = 10;
  return c;
}

TEST(Benchmark, SizesAndRanges) {
  BenchmarkConfig c = small_config();
  c.copies = 2;
  const Benchmark bm = make_benchmark(c, 1);
  EXPECT_EQ(bm.sft_train.size(), 40u);
  EXPECT_EQ(bm.pref_train.size(), 30u);
  EXPECT_EQ(bm.sft_eval.size(), 20u);
  EXPECT_EQ(bm.pref_eval.size(), 10u);
  for (const auto& e : bm.sft_train) {
    EXPECT_EQ(e.x.size(), input_dim(c));
    EXPECT_LT(e.label, c.classes);
  }
  for (const auto& p : bm.pref_train) {
    EXPECT_EQ(p.x.size(), 16u);
    EXPECT_LT(p.winner, c.classes);
    EXPECT_LT(p.loser, c.classes);
    EXPECT_NE(p.winner, p.loser);
  }
}

TEST(Benchmark, DeterministicInSeed) {
  const auto a = make_benchmark(small_config(), 5), b = make_benchmark(small_config(), 5);
  const auto c = make_benchmark(small_config(), 6);
  EXPECT_EQ(format_sft_dataset(a.sft_train, 4), format_sft_dataset(b.sft_train, 4));
  EXPECT_EQ(format_pref_dataset(a.pref_eval, 4), format_pref_dataset(b.pref_eval, 4));
  EXPECT_NE(format_sft_dataset(a.sft_train, 4), format_sft_dataset(c.sft_train, 4));
}

TEST(Benchmark, NoiselessCopiesAreIdentical) {
  BenchmarkConfig c = small_config();
  c.copies = 3;
  const auto bm = make_benchmark(c, 2);
  for (const auto& e : bm.sft_eval) {
    for (std::size_t f = 0; f < c.latent_dim; ++f) {
      EXPECT_EQ(e.x[f], e.x[c.latent_dim + f]);
      EXPECT_EQ(e.x[f], e.x[2 * c.latent_dim + f]);
    }
  }
}

TEST(Benchmark, ConflictChangesSliceLosers) {
  BenchmarkConfig c = small_config();
  c.conflict = 1.0;
  c.sft_eval = 0;
  c.pref_train = 400;
  const auto bm = make_benchmark(c, 3);
  std::size_t slice = 0;
  for (const auto& p : bm.pref_train) slice += p.x[0] > c.slice_threshold;
  EXPECT_GT(slice, 120u);
  EXPECT_LT(slice, 280u);
  BenchmarkConfig none = c;
  none.conflict = 0.0;
  const auto plain = make_benchmark(none, 3);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < plain.pref_train.size(); ++i) {
    differ += plain.pref_train[i].loser != bm.pref_train[i].loser;
  }
  EXPECT_GT(differ, 0u);
}

TEST(Benchmark, RejectsBadConfig) {
  auto bad = [](auto mutate) {
    BenchmarkConfig c = small_config();
    mutate(c);
    EXPECT_THROW(validate_benchmark_config(c), Error);
  };
  bad([](BenchmarkConfig& c) { c.latent_dim = 0; });
  bad([](BenchmarkConfig& c) { c.copies = 0; });
  bad([](BenchmarkConfig& c) { c.classes = 2; });
  bad([](BenchmarkConfig& c) { c.sft_features = 9; });
  bad([](BenchmarkConfig& c) { c.pref_features = 0; });
  bad([](BenchmarkConfig& c) { c.conflict = 1.5; });
  bad([](BenchmarkConfig& c) { c.label_noise = -0.1; });
  bad([](BenchmarkConfig& c) { c.copy_noise = -1.0; });
}

TEST(DatasetText, RoundTripsExactly) {
  BenchmarkConfig c = small_config();
  c.copy_noise = 0.3;
  const auto bm = make_benchmark(c, 4);
  const std::string sft = format_sft_dataset(bm.sft_train, c.classes);
  const auto sft_back = parse_sft_dataset(sft);
  ASSERT_EQ(sft_back.size(), bm.sft_train.size());
  for (std::size_t i = 0; i < sft_back.size(); ++i) {
    EXPECT_EQ(sft_back[i].x, bm.sft_train[i].x);
    EXPECT_EQ(sft_back[i].label, bm.sft_train[i].label);
  }
  EXPECT_EQ(format_sft_dataset(sft_back, c.classes), sft);
  const std::string pref = format_pref_dataset(bm.pref_train, c.classes);
  const auto pref_back = parse_pref_dataset(pref);
  ASSERT_EQ(pref_back.size(), bm.pref_train.size());
  for (std::size_t i = 0; i < pref_back.size(); ++i) {
    EXPECT_EQ(pref_back[i].x, bm.pref_train[i].x);
    EXPECT_EQ(pref_back[i].winner, bm.pref_train[i].winner);
    EXPECT_EQ(pref_back[i].loser, bm.pref_train[i].loser);
  }
}

TEST(DatasetText, KnownLayout) {
  const std::vector<SftExample> sft = {{{0.5, -1.0}, 2}};
  EXPECT_EQ(format_sft_dataset(sft, 3), "paft-sft v1 dim=2 classes=3 count=1\n2 0.5 -1\n");
  const std::vector<PreferencePair> pref = {{{0.25}, 0, 1}};
  EXPECT_EQ(format_pref_dataset(pref, 2), "paft-pref v1 dim=1 classes=2 count=1\n0 1 0.25\n");
}

TEST(DatasetText, RejectsMalformedInput) {
  auto sft_bad = [](const std::string& text) {
    try {
      parse_sft_dataset(text);
    } catch (const Error& e) {
      return e.code() == ErrorCode::kFormatError;
    }
    return false;
  };
  EXPECT_TRUE(sft_bad(""));
  EXPECT_TRUE(sft_bad("paft-pref v1 dim=1 classes=2 count=0\n"));
  EXPECT_TRUE(sft_bad("paft-sft v2 dim=1 classes=2 count=0\n"));
  EXPECT_TRUE(sft_bad("paft-sft v1 dim=x classes=2 count=0\n"));
  EXPECT_TRUE(sft_bad("paft-sft v1 dim=1 classes=2 count=1\n2 0.5\n"));
  EXPECT_TRUE(sft_bad("paft-sft v1 dim=1 classes=2 count=1\n1 nan\n"));
  EXPECT_TRUE(sft_bad("paft-sft v1 dim=1 classes=2 count=1\n1 0.5 0.7\n"));
  EXPECT_TRUE(sft_bad("paft-sft v1 dim=2 classes=2 count=1\n1 0.5\n"));
  EXPECT_TRUE(sft_bad("paft-sft v1 dim=1 classes=2 count=2\n1 0.5\n"));
  EXPECT_THROW(parse_pref_dataset("paft-pref v1 dim=1 classes=2 count=1\n1 1 0.5\n"), Error);
}

TEST(DatasetText, LoadsFromFile) {
  test::TempDir dir;
  const std::string path = dir.file("d.txt");
  std::ofstream(path) << "paft-sft v1 dim=1 classes=3 count=2\n0 1.5\n2 -3\n";
  const auto data = load_sft_dataset(path);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[1].label, 2u);
  EXPECT_EQ(data[1].x, std::vector<double>{-3});
  try {
    load_pref_dataset(dir.file("missing.txt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

}  // namespace
}  // namespace paft
