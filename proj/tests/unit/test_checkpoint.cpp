// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "test_util.hpp"

using namespace uni4eye;

namespace {

std::string read_bytes(const std::filesystem::path &p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path &p, const std::string &s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// One optimizer step so the checkpoint carries non-trivial moments.
Checkpoint trained_checkpoint(Model<float> &m, AdamW<float> &opt) {
  Rng rng(3);
  auto seq = patchify<float>(test::random_image(rng, 3, 16, 16), m.config.patch);
  Mat<float> et = patchify<float>(edge_target(test::random_image(rng, 3, 16, 16)),
                                  m.config.patch)
                      .tokens;
  auto plan = sample_mask(static_cast<int>(seq.tokens.rows()), 0.5, rng);
  m.zero_grad();
  reconstruction_pass(m, seq, et, plan, LossWeights{}, 1.0);
  opt.step(m.params(), 1e-3);
  return make_checkpoint(m, nlohmann::json{{"epochs", 1}}, 1,
                         rng_state_string(rng), &opt);
}

std::set<std::string> names_with_prefix(const std::vector<std::string> &v,
                                        const std::string &prefix) {
  std::set<std::string> out;
  for (const auto &n : v)
    if (n.rfind(prefix, 0) == 0)
      out.insert(n);
  return out;
}

} // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  test::TempDir dir;
  auto m = Model<float>::create(test::small_config(), 7);
  AdamW<float> opt;
  Checkpoint c = trained_checkpoint(m, opt);
  save_checkpoint(c, dir / "a.ckpt");
  Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
  EXPECT_EQ(back.tensors, c.tensors);
  EXPECT_EQ(back.step, 1u);
  EXPECT_EQ(back.config, c.config);
}

TEST(Checkpoint, ModelRebuildsExactly) {
  auto m = Model<float>::create(test::small_config(), 8);
  Checkpoint c = make_checkpoint(m, nlohmann::json::object(), 0, "");
  auto r = model_from_checkpoint<float>(deserialize(serialize(c)));
  auto a = m.params();
  auto b = r.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
}

TEST(Checkpoint, OptimizerMomentsAreStored) {
  auto m = Model<float>::create(test::small_config(), 9);
  AdamW<float> opt;
  Checkpoint c = trained_checkpoint(m, opt);
  const std::size_t n = m.params().size();
  EXPECT_EQ(c.tensors.size(), 3 * n);
  const Tensor *mw = c.find("adam.m.upe.2d.proj.w");
  ASSERT_NE(mw, nullptr);
  EXPECT_GT(*std::max_element(mw->data.begin(), mw->data.end()), 0.0f);
  EXPECT_NE(c.find("adam.v.upe.3d.pos"), nullptr);
  EXPECT_NE(c.find("adam.m.dec_e.head.3d.b"), nullptr);
}

TEST(Checkpoint, RngStateRoundTrips) {
  Rng rng(1234);
  for (int i = 0; i < 17; ++i)
    rng();
  Rng back = rng_from_state(rng_state_string(rng));
  for (int i = 0; i < 100; ++i)
    ASSERT_EQ(back(), rng());
  EXPECT_THROW(rng_from_state("not a state"), IoError);
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto m = Model<float>::create(test::small_config(), 10);
  const std::string good = serialize(make_checkpoint(m, nlohmann::json::object(), 4, "s"));

  std::string flipped = good;
  flipped[flipped.size() - 3] ^= 0x10;
  EXPECT_THROW(deserialize(flipped), IoError);

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize(magic), IoError);

  EXPECT_THROW(deserialize(good.substr(0, good.size() / 2)), IoError);
  EXPECT_THROW(deserialize(good + "x"), IoError);
  EXPECT_THROW(deserialize(""), IoError);

  std::string version = good;
  version[8] = 2;
  EXPECT_THROW(deserialize(version), IoError);
}

TEST(Checkpoint, HashMismatchMessageAndMissingFile) {
  test::TempDir dir;
  auto m = Model<float>::create(test::small_config(), 11);
  save_checkpoint(make_checkpoint(m, nlohmann::json::object(), 0, ""), dir / "c.ckpt");
  std::string bytes = read_bytes(dir / "c.ckpt");
  bytes[bytes.size() - 1] ^= 0x01;
  write_bytes(dir / "c.ckpt", bytes);
  try {
    load_checkpoint(dir / "c.ckpt");
    FAIL() << "expected IoError";
  } catch (const IoError &e) {
    EXPECT_NE(std::string(e.what()).find("hash mismatch"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Transfer, ReportListsLoadedDroppedAndFresh) {
  auto m = Model<float>::create(test::small_config(), 12);
  AdamW<float> opt;
  Checkpoint c = trained_checkpoint(m, opt);
  TransferReport rep;
  auto d = transfer<float>(c, 2, 99, &rep);

  std::set<std::string> want_loaded;
  for (auto *p : m.params())
    if (transferable(p->name))
      want_loaded.insert(p->name);
  EXPECT_EQ(std::set<std::string>(rep.loaded.begin(), rep.loaded.end()), want_loaded);

  std::set<std::string> dropped(rep.dropped.begin(), rep.dropped.end());
  EXPECT_TRUE(dropped.count("mask_token"));
  EXPECT_FALSE(names_with_prefix(rep.dropped, "dec_i.").empty());
  EXPECT_FALSE(names_with_prefix(rep.dropped, "dec_e.").empty());
  EXPECT_TRUE(names_with_prefix(rep.dropped, "adam.").empty());
  EXPECT_TRUE(names_with_prefix(rep.dropped, "upe.").empty());
  EXPECT_TRUE(names_with_prefix(rep.dropped, "encoder.").empty());

  EXPECT_EQ(std::set<std::string>(rep.fresh.begin(), rep.fresh.end()),
            (std::set<std::string>{"head.w", "head.b"}));

  EXPECT_FALSE(d.dec_i || d.dec_e || d.mask_token || d.mask_token_e);
  ASSERT_TRUE(d.head);
  EXPECT_EQ(d.head->w.value.cols(), 2);
  EXPECT_EQ(d.config.num_classes, 2);
}

TEST(Transfer, EncoderWeightsAreBitwiseEqual) {
  auto m = Model<float>::create(test::small_config(), 13);
  Checkpoint c = make_checkpoint(m, nlohmann::json::object(), 0, "");
  auto d = transfer<float>(deserialize(serialize(c)), 3, 5);
  std::map<std::string, Mat<float>> src;
  for (auto *p : m.params())
    src[p->name] = p->value;
  int compared = 0;
  for (auto *p : d.params())
    if (transferable(p->name)) {
      EXPECT_EQ(p->value, src.at(p->name)) << p->name;
      ++compared;
    }
  EXPECT_GT(compared, 0);
}

TEST(Transfer, EncoderOutputMatchesUnmaskedStagePModel) {
  auto m = Model<float>::create(test::small_config(), 14);
  auto d = transfer<float>(make_checkpoint(m, nlohmann::json::object(), 0, ""), 2, 1);
  Rng rng(15);
  for (int dims : {2, 3}) {
    ImageSample s = dims == 2 ? test::random_image(rng, 3, 16, 16)
                              : test::random_volume(rng, 8, 16, 8);
    auto seq = patchify<float>(s, m.config.patch);
    auto plan = MaskPlan::none(static_cast<int>(seq.tokens.rows()));
    Mat<float> a = encode(m, gather_visible(embed(seq, m.upe).embeddings, plan));
    Mat<float> b = encode(d, embed(seq, d.upe).embeddings);
    EXPECT_EQ(a, b) << dims;
  }
}

TEST(Transfer, IncompatibleEncoderNamesTensor) {
  auto m = Model<float>::create(test::small_config(), 16);
  Checkpoint c = make_checkpoint(m, nlohmann::json::object(), 0, "");
  ModelConfig req = test::small_config();
  req.patch = {8, 8, 768};
  req.encoder = EncoderConfig::preset("vit-base");
  try {
    transfer<float>(c, 2, 0, nullptr, req);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError &e) {
    EXPECT_NE(std::string(e.what()).find("upe.2d.proj.w"), std::string::npos)
        << e.what();
  }
}

TEST(Transfer, MissingEncoderTensorIsError) {
  auto m = Model<float>::create(test::small_config(), 17);
  Checkpoint c = make_checkpoint(m, nlohmann::json::object(), 0, "");
  c.tensors.erase(std::remove_if(c.tensors.begin(), c.tensors.end(),
                                 [](const Tensor &t) { return t.name == "upe.3d.pos"; }),
                  c.tensors.end());
  EXPECT_THROW(transfer<float>(c, 2, 0), ShapeError);
  EXPECT_THROW(model_from_checkpoint<float>(c), ShapeError);
}
