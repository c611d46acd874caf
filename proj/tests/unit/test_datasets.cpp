// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "test_util.hpp"

using namespace uni4eye;
using test::TempDir;

namespace {

std::string slurp(const std::filesystem::path &p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Manifest of `n2` 2D and `n3` 3D in-memory entries, all in train.
Manifest fake_manifest(int n2, int n3) {
  Manifest m;
  for (int i = 0; i < n2 + n3; ++i) {
    ManifestEntry e;
    e.id = "s" + std::to_string(i);
    e.path = e.id;
    e.dims = i < n2 ? 2 : 3;
    m.entries.push_back(e);
  }
  return m;
}

} // namespace

TEST(Synth, SameSeedGivesByteIdenticalCorpora) {
  TempDir a, b;
  SynthOptions o;
  o.seed = 7;
  o.n_2d = 10;
  o.n_3d = 2;
  Manifest ma = synth_corpus(o, a.path());
  synth_corpus(o, b.path());
  ASSERT_EQ(ma.entries.size(), 12u);
  for (const auto &e : ma.entries) {
    EXPECT_EQ(slurp(a / e.path), slurp(b / e.path)) << e.path;
    if (e.dims == 3)
      EXPECT_EQ(slurp(sidecar_path(a / e.path)), slurp(sidecar_path(b / e.path)));
  }
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
}

TEST(Synth, EmptyCountsWriteNothing) {
  TempDir dir;
  SynthOptions o;
  Manifest m = synth_corpus(o, dir / "c");
  EXPECT_TRUE(m.entries.empty());
  EXPECT_TRUE(std::filesystem::is_empty(dir / "c"));
}

TEST(Synth, LabelCountsAreBalanced) {
  TempDir dir;
  SynthOptions o;
  o.seed = 7;
  o.n_2d = 200;
  Manifest m = synth_corpus(o, dir.path());
  int ones = 0;
  for (const auto &e : m.entries)
    ones += *e.label;
  EXPECT_GE(ones, 60);
  EXPECT_LE(200 - ones, 140);
  EXPECT_LE(ones, 140);
  EXPECT_GE(200 - ones, 60);
}

TEST(Synth, SamplesLoadAndCarryVesselEdges) {
  TempDir dir;
  SynthOptions o;
  o.seed = 1;
  o.n_2d = 3;
  o.n_3d = 1;
  synth_corpus(o, dir.path());
  Manifest m = read_manifest(dir / "manifest.json");
  SampleStore store(m, o.geometry);
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ImageSample &s = store.get(i);
    EXPECT_NO_THROW(validate(s));
    EXPECT_EQ(s.dims, m.entries[i].dims);
    ImageSample e = edge_target(s);
    double mean = 0;
    for (float v : e.data)
      mean += v;
    EXPECT_GT(mean / e.data.size(), 0.01) << "edge target is nearly empty";
  }
}

TEST(Synth, ExplicitSplitCountsAssignByIndex) {
  TempDir dir;
  SynthOptions o;
  o.n_2d = 10;
  o.split_counts = std::array<int, 3>{6, 1, 3};
  Manifest m = synth_corpus(o, dir.path());
  EXPECT_EQ(m.select(Split::train).size(), 6u);
  EXPECT_EQ(m.select(Split::val).size(), 1u);
  EXPECT_EQ(m.select(Split::test).size(), 3u);
  EXPECT_EQ(m.entries[6].split, Split::val);
}

TEST(Synth, NegativeCountsAreRejected) {
  TempDir dir;
  SynthOptions o;
  o.n_2d = -1;
  EXPECT_THROW(synth_corpus(o, dir.path()), ConfigError);
}

TEST(Split, DependsOnlyOnIdAndIsRoughly701515) {
  std::map<Split, int> counts;
  for (int i = 0; i < 10000; ++i) {
    std::string id = "sample-" + std::to_string(i);
    Split s = split_for_id(id);
    EXPECT_EQ(s, split_for_id(std::string(id)));
    ++counts[s];
  }
  EXPECT_NEAR(counts[Split::train], 7000, 300);
  EXPECT_NEAR(counts[Split::val], 1500, 200);
  EXPECT_NEAR(counts[Split::test], 1500, 200);
}

TEST(Split, StableUnderCorpusSize) {
  TempDir a, b;
  SynthOptions small, large;
  small.n_2d = 5;
  large.n_2d = 40;
  Manifest ms = synth_corpus(small, a.path());
  Manifest ml = synth_corpus(large, b.path());
  for (std::size_t i = 0; i < ms.entries.size(); ++i)
    EXPECT_EQ(ms.entries[i].split, ml.entries[i].split);
}

TEST(Manifest, JsonRoundTrip) {
  TempDir dir;
  Manifest m = fake_manifest(2, 1);
  m.class_names = {"a", "b"};
  m.entries[0].label = 1;
  m.entries[2].split = Split::test;
  write_manifest(dir / "manifest.json", m);
  Manifest r = read_manifest(dir / "manifest.json");
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.class_names, m.class_names);
  EXPECT_EQ(r.entries[0].label, std::optional<int>(1));
  EXPECT_FALSE(r.entries[1].label);
  EXPECT_EQ(r.entries[2].split, Split::test);
  EXPECT_EQ(r.entries[2].dims, 3);
  EXPECT_EQ(r.resolve(r.entries[0]), dir / "s0");
}

TEST(Manifest, InvariantViolationsAreConfigErrors) {
  Manifest m = fake_manifest(2, 0);
  m.entries[1].id = m.entries[0].id;
  EXPECT_THROW(m.check(), ConfigError);
  m = fake_manifest(1, 0);
  m.class_names = {"only"};
  m.entries[0].label = 1;
  EXPECT_THROW(m.check(), ConfigError);
  m = fake_manifest(1, 0);
  m.entries[0].dims = 4;
  EXPECT_THROW(m.check(), ConfigError);
  EXPECT_THROW(manifest_from_json(nlohmann::json{{"entries", {{{"id", 1}}}}}, "."),
               ConfigError);
  EXPECT_THROW(parse_split("dev"), ConfigError);
}

TEST(Manifest, UnresolvablePathFailsAtLoad) {
  TempDir dir;
  Manifest m = fake_manifest(1, 0);
  m.root = dir.path();
  SampleStore store(m, Geometry{});
  EXPECT_THROW(store.get(0), IoError);
}

TEST(Schedule, TwoFullBatchesForOneTwentyEight) {
  Manifest m = fake_manifest(128, 0);
  Rng rng(0);
  auto b = schedule_batches(m, BatchSpec{64, 4}, rng);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].indices.size(), 64u);
}

TEST(Schedule, MixedCorpusGivesOneTwoDAndTwoThreeDBatches) {
  Manifest m = fake_manifest(64, 8);
  Rng rng(5);
  auto b = schedule_batches(m, BatchSpec{64, 4}, rng);
  ASSERT_EQ(b.size(), 3u);
  int n2 = 0, n3 = 0;
  for (const auto &batch : b) {
    (batch.dims == 2 ? n2 : n3)++;
    for (auto i : batch.indices)
      EXPECT_EQ(m.entries[i].dims, batch.dims);
  }
  EXPECT_EQ(n2, 1);
  EXPECT_EQ(n3, 2);
}

TEST(Schedule, EpochCoverageHomogeneityAndDeterminism) {
  Manifest m = fake_manifest(37, 11);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    auto x = schedule_batches(m, BatchSpec{5, 3}, a);
    auto y = schedule_batches(m, BatchSpec{5, 3}, b);
    std::vector<std::size_t> seen;
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(x[k].indices, y[k].indices);
      EXPECT_EQ(x[k].dims, y[k].dims);
      EXPECT_LE(x[k].indices.size(), x[k].dims == 2 ? 5u : 3u);
      for (auto i : x[k].indices) {
        EXPECT_EQ(m.entries[i].dims, x[k].dims);
        seen.push_back(i);
      }
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(48);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(seen, all);
    // 8 ragged 2D batches (7 full + 1 of two) and 4 3D batches (3 + 1 of two).
    EXPECT_EQ(x.size(), 12u);
  }
}

TEST(Schedule, ProportionalMergeSpreadsThreeDBatches) {
  // With 10 2D and 10 3D batches, the 3D batches should not all sit at the
  // end on average; phased ordering puts them last.
  Manifest m = fake_manifest(10, 10);
  double mean_pos = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    auto b = schedule_batches(m, BatchSpec{1, 1}, rng);
    for (std::size_t k = 0; k < b.size(); ++k)
      if (b[k].dims == 3)
        mean_pos += static_cast<double>(k) / (10.0 * 200.0);
  }
  EXPECT_NEAR(mean_pos, 9.5, 0.5);

  Rng rng(1);
  auto phased = schedule_batches(
      m, BatchSpec{1, 1, Interleave::phased}, rng);
  for (std::size_t k = 0; k < phased.size(); ++k)
    EXPECT_EQ(phased[k].dims, k < 10 ? 2 : 3);
}

TEST(Schedule, OnlyTheRequestedSplitIsScheduled) {
  Manifest m = fake_manifest(6, 0);
  m.entries[1].split = Split::val;
  m.entries[2].split = Split::test;
  Rng rng(0);
  auto b = schedule_batches(m, BatchSpec{10, 1}, rng);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].indices.size(), 4u);
}

TEST(Schedule, EmptyPoolAndBadSpecAreErrors) {
  Manifest m;
  Rng rng(0);
  EXPECT_THROW(schedule_batches(m, BatchSpec{}, rng), ConfigError);
  Manifest one = fake_manifest(1, 0);
  EXPECT_THROW(schedule_batches(one, BatchSpec{0, 1}, rng), ConfigError);
  EXPECT_THROW(parse_interleave("random"), ConfigError);
}
