// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace uni4eye;

namespace {

ModelConfig stage_d_config() {
  ModelConfig c = tiny_config();
  c.intensity_decoder = false;
  c.edge_decoder = false;
  c.num_classes = 3;
  return c;
}

/// Fourth-order central difference of the classification loss for one
/// element.
double numeric_ce_grad(Model<double> &m, const TokenSequence<double> &seq,
                       int label, Param<double> &p, Eigen::Index i) {
  const double h = 1e-4;
  double &v = p.value.data()[i];
  const double saved = v;
  auto at = [&](double off) {
    v = saved + off;
    double l = classification_pass(m, seq, label).loss;
    v = saved;
    return l;
  };
  return (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
}

} // namespace

TEST(Linear, GradientMatchesClosedForm) {
  Rng rng(0);
  Linear<double> lin;
  lin.init("lin", 5, 3, rng);
  const int n = 11;
  Mat<double> x = test::random_mat<double>(rng, n, 5);
  Mat<double> y = test::random_mat<double>(rng, n, 3);
  typename Linear<double>::Cache c;
  Mat<double> out = lin.forward(x, c);
  lin.w.zero_grad();
  lin.backward(2.0 / n * (out - y), c);
  Mat<double> want = 2.0 / n * x.transpose() * (x * lin.w.value - y);
  EXPECT_LT((lin.w.grad - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerNorm, NormalisesRows) {
  Rng rng(1);
  LayerNorm<double> ln;
  ln.init("ln", 6);
  Mat<double> x = test::random_mat<double>(rng, 4, 6) * 10.0;
  Mat<double> y = ln.forward(x);
  for (int r = 0; r < 4; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 6.0, 1.0, 1e-6);
  }
}

TEST(Gelu, ExactErfForm) {
  Mat<double> x(1, 3);
  x << -1.0, 0.0, 2.0;
  typename Gelu<double>::Cache c;
  Mat<double> y = Gelu<double>::forward(x, c);
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(y(0, i), 0.5 * x(0, i) * (1.0 + std::erf(x(0, i) / std::sqrt(2.0))),
                1e-15);
}

TEST(Encoder, PreservesSequenceLength) {
  ModelConfig cfg = tiny_config();
  auto m = Model<double>::create(cfg, 1);
  Rng rng(2);
  Mat<double> x = test::random_mat<double>(rng, 98, 16);
  Mat<double> y = encode(m, x);
  EXPECT_EQ(y.rows(), 98);
  EXPECT_EQ(y.cols(), 16);
  EXPECT_THROW(encode(m, Mat<double>(test::random_mat<double>(rng, 4, 8))), ShapeError);
}

TEST(Encoder, PermutationEquivariant) {
  auto m = Model<double>::create(tiny_config(), 3);
  Rng rng(4);
  Mat<double> x = test::random_mat<double>(rng, 9, 16);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat<double> xp = gather_rows(x, perm);
  Mat<double> y = encode(m, x);
  Mat<double> yp = encode(m, xp);
  for (int i = 0; i < 9; ++i)
    EXPECT_LT((yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, DeterministicForward) {
  auto a = Model<float>::create(tiny_config(), 5);
  auto b = Model<float>::create(tiny_config(), 5);
  Rng rng(6);
  Mat<float> x = test::random_mat<float>(rng, 8, 16);
  EXPECT_EQ(encode(a, x), encode(b, x));
  EXPECT_EQ(encode(a, x), encode(a, x));
}

TEST(ModelConfig, InvalidConfigsAreRejected) {
  ModelConfig c = tiny_config();
  c.encoder.depth = 0;
  EXPECT_THROW(Model<float>::create(c, 0), ConfigError);
  c = tiny_config();
  c.encoder.heads = 3;
  EXPECT_THROW(Model<float>::create(c, 0), ConfigError);
  c = tiny_config();
  c.decoder.depth = 0;
  EXPECT_THROW(Model<float>::create(c, 0), ConfigError);
  c = tiny_config();
  c.pooling = "cls";
  EXPECT_THROW(Model<float>::create(c, 0), ConfigError);
  c = tiny_config();
  c.num_classes = 1;
  EXPECT_THROW(Model<float>::create(c, 0), ConfigError);
  EXPECT_THROW(EncoderConfig::preset("vit-huge"), ConfigError);
}

TEST(ModelConfig, PresetsAndJsonRoundTrip) {
  EXPECT_EQ(EncoderConfig::preset("vit-tiny"), (EncoderConfig{12, 192, 3, 4}));
  EXPECT_EQ(EncoderConfig::preset("vit-base"), (EncoderConfig{12, 768, 12, 4}));
  EXPECT_EQ(EncoderConfig::preset("vit-large"), (EncoderConfig{24, 1024, 16, 4}));
  ModelConfig c = test::small_config();
  c.edge_decoder = false;
  c.num_classes = 4;
  nlohmann::json j = c;
  ModelConfig r = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(r), j);
}

TEST(Decoders, OutputLengthsForCanonicalPatches) {
  ModelConfig c;
  c.geometry = Geometry{{32, 32}, {16, 16, 16}, 3, 1};
  c.encoder = {1, 8, 2, 2};
  c.decoder = {1, 8, 2, 2};
  auto m = Model<float>::create(c, 0);
  EXPECT_EQ(m.dec_i->output_length(2), 768);
  EXPECT_EQ(m.dec_e->output_length(2), 256);
  EXPECT_EQ(m.dec_i->output_length(3), 4096);
  EXPECT_EQ(m.dec_e->output_length(3), 4096);
  Rng rng(1);
  Mat<float> full = test::random_mat<float>(rng, 4, 8);
  Mat<float> out = decode_intensity(m, full, 2);
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 768);
  EXPECT_EQ(decode_edge(m, full, 2).cols(), 256);
  EXPECT_THROW(decode_edge(m, Mat<float>(test::random_mat<float>(rng, 5, 8)), 2),
               ShapeError);
}

TEST(Decoders, SameArchitectureDisjointParameters) {
  auto m = Model<float>::create(tiny_config(), 2);
  EXPECT_EQ(m.dec_i->architecture(), m.dec_e->architecture());
  std::set<std::string> names_i, names_e;
  std::set<const void *> ptr_i;
  m.dec_i->visit([&](Param<float> &p) {
    names_i.insert(p.name);
    ptr_i.insert(&p);
  });
  m.dec_e->visit([&](Param<float> &p) {
    names_e.insert(p.name);
    EXPECT_FALSE(ptr_i.count(&p));
  });
  for (const auto &n : names_e)
    EXPECT_FALSE(names_i.count(n)) << n;
  EXPECT_EQ(names_i.size(), names_e.size());
}

TEST(Decoders, IndependentParametersGiveDifferentOutputs) {
  ModelConfig c = tiny_config();
  c.geometry.channels_2d = 1;
  auto m = Model<double>::create(c, 3);
  Rng rng(4);
  Mat<double> full = test::random_mat<double>(rng, 8, 16);
  Mat<double> a = decode_intensity(m, full, 2);
  Mat<double> b = decode_edge(m, full, 2);
  ASSERT_EQ(a.cols(), b.cols());
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Classify, ZeroHeadReturnsBias) {
  auto m = Model<double>::create(stage_d_config(), 5);
  m.head->w.value.setZero();
  m.head->b.value << 0.5, -1.0, 2.0;
  Rng rng(6);
  Mat<double> enc = test::random_mat<double>(rng, 8, 16);
  EXPECT_EQ(classify(enc, m.head), RowVec<double>(m.head->b.value.row(0)));
}

TEST(Classify, DuplicatedTokensLeaveLogitsUnchanged) {
  auto m = Model<double>::create(stage_d_config(), 7);
  Rng rng(8);
  Mat<double> enc = test::random_mat<double>(rng, 8, 16);
  Mat<double> twice(16, 16);
  twice << enc, enc;
  EXPECT_LT((classify(twice, m.head) - classify(enc, m.head)).cwiseAbs().maxCoeff(),
            1e-14);
  EXPECT_EQ(classify(enc, m.head).cols(), 3);
}

TEST(Classify, HeadAbsentIsError) {
  auto m = Model<double>::create(tiny_config(), 0);
  auto seq = patchify<double>(make_image(3, 8, 16), m.config.patch);
  EXPECT_THROW(classification_pass(m, seq, 0), Error);
  EXPECT_THROW(classify(Mat<double>(Mat<double>::Zero(2, 16)), m.head), Error);
}

TEST(Backward, ZeroLossGivesZeroGradients) {
  // Decoders whose heads output the exact target: a constant image
  // reconstructs to its value and its Sobel target is zero.
  auto m = Model<double>::create(tiny_config(), 9);
  const double c = 0.3;
  for (auto *dec : {&*m.dec_i, &*m.dec_e})
    for (auto *head : {&dec->head2, &dec->head3}) {
      head->w.value.setZero();
      head->b.value.setConstant(dec == &*m.dec_i ? c : 0.0);
    }
  ImageSample s = make_image(3, 8, 16, static_cast<float>(c));
  auto seq = patchify<double>(s, m.config.patch);
  seq.tokens.setConstant(c);
  auto et = patchify<double>(edge_target(s), m.config.patch).tokens;
  Rng rng(10);
  auto plan = sample_mask(8, 0.5, rng);
  m.zero_grad();
  auto r = reconstruction_pass(m, seq, et, plan, LossWeights{}, 1.0);
  EXPECT_EQ(r.loss_ssl, 0.0);
  for (auto *p : m.params())
    EXPECT_EQ(p->grad.cwiseAbs().maxCoeff(), 0.0) << p->name;
}

TEST(Backward, ReconstructionGradientsMatchFiniteDifferences64) {
  GradCheckOptions o;
  o.seed = 11;
  auto rep = gradcheck<double>(o);
  EXPECT_EQ(rep.entries.size(), 50u);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(Backward, ReconstructionGradientsMatchFiniteDifferences32) {
  GradCheckOptions o;
  o.seed = 12;
  EXPECT_LT(gradcheck<float>(o).max_rel_error, 1e-3);
}

TEST(Backward, UnsharedMaskTokenAndSingleDecoderVariants) {
  ModelConfig c = tiny_config();
  c.share_mask_token = false;
  GradCheckOptions o;
  o.seed = 13;
  o.n_params = 30;
  EXPECT_LT(gradcheck<double>(o, c).max_rel_error, 1e-6);
  c = tiny_config();
  c.edge_decoder = false;
  o.weights = {1.0, 0.0};
  EXPECT_LT(gradcheck<double>(o, c).max_rel_error, 1e-6);
}

TEST(Backward, ClassificationGradientsMatchFiniteDifferences) {
  auto m = Model<double>::create(stage_d_config(), 14);
  Rng rng(15);
  auto seq = patchify<double>(test::random_image(rng, 3, 8, 16), m.config.patch);
  m.zero_grad();
  classification_pass(m, seq, 2, 1.0);
  double worst = 0;
  for (auto *p : m.params()) {
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    for (int k = 0; k < 3; ++k) {
      Eigen::Index i = pick(rng);
      double a = p->grad.data()[i];
      double n = numeric_ce_grad(m, seq, 2, *p, i);
      worst = std::max(worst, relative_error(a, n, 1e-5));
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Backward, FrozenEncoderOnlyTrainsHead) {
  auto m = Model<double>::create(stage_d_config(), 16);
  Rng rng(17);
  auto seq = patchify<double>(test::random_image(rng, 3, 8, 16), m.config.patch);
  m.zero_grad();
  classification_pass(m, seq, 0, 1.0, true);
  for (auto *p : m.params()) {
    double g = p->grad.cwiseAbs().maxCoeff();
    if (p->name.rfind("head.", 0) == 0)
      EXPECT_GT(g, 0.0) << p->name;
    else
      EXPECT_EQ(g, 0.0) << p->name;
  }
}

TEST(Model, AssignFromCopiesAcrossScalarTypes) {
  auto f = Model<float>::create(tiny_config(), 18);
  auto d = Model<double>::create(tiny_config(), 19);
  d.assign_from(f);
  auto pf = f.params();
  auto pd = d.params();
  for (std::size_t i = 0; i < pf.size(); ++i)
    EXPECT_EQ(pd[i]->value.cast<float>(), pf[i]->value);
  auto other = Model<double>::create(stage_d_config(), 0);
  EXPECT_THROW(other.assign_from(f), ShapeError);
}
