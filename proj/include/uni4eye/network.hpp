// SPDX-License-Identifier: Apache-2.0
/**
 * @file   network.hpp
 * @brief  Shared ViT encoder, twin reconstruction decoders (intensity and
 *         edge), classification head, and the stage-P / stage-D
 *         forward-backward passes over one sample.
 */
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uni4eye/common.hpp"
#include "uni4eye/imaging.hpp"
#include "uni4eye/layers.hpp"
#include "uni4eye/masking.hpp"
#include "uni4eye/objective.hpp"
#include "uni4eye/patching.hpp"

namespace uni4eye {

struct EncoderConfig {
  int depth = 12;
  int dim = 192;
  int heads = 3;
  int mlp_ratio = 4;

  static EncoderConfig preset(const std::string &name) {
    if (name == "vit-tiny")
      return {12, 192, 3, 4};
    if (name == "vit-base")
      return {12, 768, 12, 4};
    if (name == "vit-large")
      return {24, 1024, 16, 4};
    throw ConfigError("unknown encoder preset '" + name +
                      "' (expected vit-tiny, vit-base or vit-large)");
  }

  void check() const {
    if (depth < 1)
      throw ConfigError("encoder depth must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0)
      throw ConfigError("encoder dim must be divisible by heads");
    if (mlp_ratio < 1)
      throw ConfigError("encoder mlp_ratio must be >= 1");
  }
  bool operator==(const EncoderConfig &) const = default;
};

struct DecoderConfig {
  int depth = 4;
  int dim = 256;
  int heads = 8;
  int mlp_ratio = 4;

  void check() const {
    if (depth < 1)
      throw ConfigError("decoder depth must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0)
      throw ConfigError("decoder dim must be divisible by heads");
    if (mlp_ratio < 1)
      throw ConfigError("decoder mlp_ratio must be >= 1");
  }
  bool operator==(const DecoderConfig &) const = default;
};

/// Everything needed to rebuild a model's parameter shapes.
struct ModelConfig {
  Geometry geometry;
  PatchGridConfig patch;
  EncoderConfig encoder;
  DecoderConfig decoder;
  bool intensity_decoder = true;
  bool edge_decoder = true;
  bool share_mask_token = true;
  int num_classes = 0; ///< 0 = no classification head (stage P)
  std::string pooling = "mean"; ///< classification features; only "mean"

  bool stage_p() const { return intensity_decoder || edge_decoder; }

  PatchGrid grid(int dims) const {
    return canonical_grid(dims, geometry, patch, geometry.channels(dims));
  }

  void check() const {
    encoder.check();
    decoder.check();
    PatchGridConfig p = patch;
    p.embed_dim = encoder.dim;
    p.check(geometry);
    if (geometry.channels_2d != 1 && geometry.channels_2d != 3)
      throw ConfigError("channels_2d must be 1 or 3");
    if (geometry.channels_3d != 1)
      throw ConfigError("channels_3d must be 1");
    if (num_classes < 0 || num_classes == 1)
      throw ConfigError("num_classes must be 0 (no head) or >= 2");
    if (pooling != "mean")
      throw ConfigError("pooling must be \"mean\" (no class token exists)");
  }
};

inline void to_json(nlohmann::json &j, const ModelConfig &c) {
  j = {{"geometry",
        {{"image", c.geometry.image},
         {"volume", c.geometry.volume},
         {"channels_2d", c.geometry.channels_2d},
         {"channels_3d", c.geometry.channels_3d}}},
       {"patch", {{"patch_2d", c.patch.patch_2d}, {"patch_3d", c.patch.patch_3d}}},
       {"encoder",
        {{"depth", c.encoder.depth},
         {"dim", c.encoder.dim},
         {"heads", c.encoder.heads},
         {"mlp_ratio", c.encoder.mlp_ratio}}},
       {"decoder",
        {{"depth", c.decoder.depth},
         {"dim", c.decoder.dim},
         {"heads", c.decoder.heads},
         {"mlp_ratio", c.decoder.mlp_ratio}}},
       {"intensity_decoder", c.intensity_decoder},
       {"edge_decoder", c.edge_decoder},
       {"share_mask_token", c.share_mask_token},
       {"num_classes", c.num_classes},
       {"pooling", c.pooling}};
}

inline void from_json(const nlohmann::json &j, ModelConfig &c) {
  const auto &g = j.at("geometry");
  c.geometry.image = g.at("image").get<std::array<int, 2>>();
  c.geometry.volume = g.at("volume").get<std::array<int, 3>>();
  c.geometry.channels_2d = g.at("channels_2d").get<int>();
  c.geometry.channels_3d = g.at("channels_3d").get<int>();
  c.patch.patch_2d = j.at("patch").at("patch_2d").get<int>();
  c.patch.patch_3d = j.at("patch").at("patch_3d").get<int>();
  const auto &e = j.at("encoder");
  c.encoder = {e.at("depth").get<int>(), e.at("dim").get<int>(),
               e.at("heads").get<int>(), e.at("mlp_ratio").get<int>()};
  const auto &d = j.at("decoder");
  c.decoder = {d.at("depth").get<int>(), d.at("dim").get<int>(),
               d.at("heads").get<int>(), d.at("mlp_ratio").get<int>()};
  c.intensity_decoder = j.at("intensity_decoder").get<bool>();
  c.edge_decoder = j.at("edge_decoder").get<bool>();
  c.share_mask_token = j.at("share_mask_token").get<bool>();
  c.num_classes = j.at("num_classes").get<int>();
  c.pooling = j.value("pooling", std::string("mean"));
  c.patch.embed_dim = c.encoder.dim;
}

/// Reconstruction decoder: encoder->decoder projection, per-dimension
/// positional tables, transformer stack, per-dimension output heads.
template <class S> struct Decoder {
  std::string name;
  DecoderConfig cfg;
  Linear<S> embed;
  Param<S> pos2, pos3;
  TransformerStack<S> stack;
  Linear<S> head2, head3;

  struct Cache {
    int dims = 2;
    typename Linear<S>::Cache embed, head;
    typename TransformerStack<S>::Cache stack;
  };

  void init(std::string prefix, const DecoderConfig &c, int enc_dim,
            const PatchGrid &g2, const PatchGrid &g3, int out2, int out3,
            Rng &rng) {
    name = std::move(prefix);
    cfg = c;
    embed.init(name + ".embed", enc_dim, c.dim, rng);
    pos2.init(name + ".pos.2d", g2.token_count(), c.dim);
    pos2.init_normal(rng);
    pos3.init(name + ".pos.3d", g3.token_count(), c.dim);
    pos3.init_normal(rng);
    stack.init(name, c.depth, c.dim, c.heads, c.mlp_ratio, rng);
    head2.init(name + ".head.2d", c.dim, out2, rng);
    head3.init(name + ".head.3d", c.dim, out3, rng);
  }

  int output_length(int dims) const {
    return dims == 2 ? head2.out() : head3.out();
  }

  Mat<S> forward(const Mat<S> &full, int dims, Cache &c) const {
    const auto &pos = dims == 2 ? pos2 : pos3;
    if (full.rows() != pos.value.rows())
      throw ShapeError(name + ": expected " +
                       std::to_string(pos.value.rows()) + " tokens, got " +
                       std::to_string(full.rows()));
    c.dims = dims;
    Mat<S> h = embed.forward(full, c.embed);
    h += pos.value;
    h = stack.forward(h, c.stack);
    return (dims == 2 ? head2 : head3).forward(h, c.head);
  }
  Mat<S> forward(const Mat<S> &full, int dims) const {
    Cache c;
    return forward(full, dims, c);
  }

  Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    Mat<S> d = (c.dims == 2 ? head2 : head3).backward(dy, c.head);
    d = stack.backward(d, c.stack);
    (c.dims == 2 ? pos2 : pos3).grad += d;
    return embed.backward(d, c.embed);
  }

  void visit(const ParamVisitor<S> &f) {
    embed.visit(f);
    f(pos2);
    f(pos3);
    stack.visit(f);
    head2.visit(f);
    head3.visit(f);
  }

  /// (depth, dim, heads) as a comparable descriptor.
  std::array<int, 3> architecture() const {
    return {static_cast<int>(stack.blocks.size()), embed.out(),
            stack.blocks.empty() ? 0 : stack.blocks[0].attn.heads};
  }
};

template <class S> class Model {
public:
  ModelConfig config;
  UnifiedPatchEmbedding<S> upe;
  TransformerStack<S> encoder;
  std::optional<Decoder<S>> dec_i, dec_e;
  std::optional<Param<S>> mask_token, mask_token_e;
  std::optional<Linear<S>> head;

  static Model create(ModelConfig cfg, std::uint64_t seed) {
    cfg.check();
    cfg.patch.embed_dim = cfg.encoder.dim;
    Model m;
    m.config = cfg;
    Rng rng(seed);
    const PatchGrid g2 = cfg.grid(2);
    const PatchGrid g3 = cfg.grid(3);
    const int d = cfg.encoder.dim;
    m.upe.init(g2, g3, d, rng);
    m.encoder.init("encoder", cfg.encoder.depth, d, cfg.encoder.heads,
                   cfg.encoder.mlp_ratio, rng);
    if (cfg.stage_p()) {
      m.mask_token.emplace();
      m.mask_token->init("mask_token", 1, d);
      m.mask_token->init_normal(rng);
      if (!cfg.share_mask_token && cfg.intensity_decoder && cfg.edge_decoder) {
        m.mask_token_e.emplace();
        m.mask_token_e->init("mask_token_e", 1, d);
        m.mask_token_e->init_normal(rng);
      }
    }
    if (cfg.intensity_decoder) {
      m.dec_i.emplace();
      m.dec_i->init("dec_i", cfg.decoder, d, g2, g3, g2.token_length(),
                    g3.token_length(), rng);
    }
    if (cfg.edge_decoder) {
      m.dec_e.emplace();
      m.dec_e->init("dec_e", cfg.decoder, d, g2, g3, g2.patch_volume(),
                    g3.patch_volume(), rng);
    }
    if (cfg.num_classes > 0)
      m.add_head(cfg.num_classes, rng);
    return m;
  }

  void add_head(int classes, Rng &rng) {
    head.emplace();
    head->init("head", config.encoder.dim, classes, rng);
    config.num_classes = classes;
  }

  /// Parameters in canonical (checkpoint) order.
  void visit(const ParamVisitor<S> &f) {
    upe.visit(f);
    encoder.visit(f);
    if (mask_token)
      f(*mask_token);
    if (mask_token_e)
      f(*mask_token_e);
    if (dec_i)
      dec_i->visit(f);
    if (dec_e)
      dec_e->visit(f);
    if (head)
      head->visit(f);
  }

  std::vector<Param<S> *> params() {
    std::vector<Param<S> *> out;
    visit([&](Param<S> &p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() {
    visit([](Param<S> &p) { p.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](Param<S> &p) { n += static_cast<std::size_t>(p.value.size()); });
    return n;
  }

  /// Copies values from a model of another scalar type with identical
  /// structure.
  template <class T> void assign_from(Model<T> &other) {
    auto src = other.params();
    auto dst = params();
    if (src.size() != dst.size())
      throw ShapeError("assign_from: parameter count mismatch");
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i]->value = src[i]->value.template cast<S>();
  }
};

// ---------------------------------------------------------------------------
// Forward / backward passes

/// Encoder over an already embedded sequence.
template <class S> Mat<S> encode(const Model<S> &m, const Mat<S> &embedded) {
  if (embedded.cols() != m.config.encoder.dim)
    throw ShapeError("encode: width " + std::to_string(embedded.cols()) +
                     " does not match encoder dim " +
                     std::to_string(m.config.encoder.dim));
  return m.encoder.forward(embedded);
}

template <class S> Mat<S> decode_intensity(const Model<S> &m, const Mat<S> &full, int dims) {
  if (!m.dec_i)
    throw Error("model has no intensity decoder");
  return m.dec_i->forward(full, dims);
}

template <class S> Mat<S> decode_edge(const Model<S> &m, const Mat<S> &full, int dims) {
  if (!m.dec_e)
    throw Error("model has no edge decoder");
  return m.dec_e->forward(full, dims);
}

/// Mean-pooled features times the head.
template <class S>
RowVec<S> classify(const Mat<S> &encoded, const std::optional<Linear<S>> &head) {
  if (!head)
    throw Error("classify: model has no classification head");
  Mat<S> pooled = encoded.colwise().mean();
  return head->forward(pooled).row(0);
}

template <class S> struct ReconstructionResult {
  Mat<S> intensity; ///< n x L_i (empty without intensity decoder)
  Mat<S> edge;      ///< n x L_e (empty without edge decoder)
  double loss_intensity = 0.0;
  double loss_edge = 0.0;
  double loss_ssl = 0.0;
};

/// Stage-P pass over one sample: embed -> gather visible -> encode ->
/// scatter with mask tokens -> both decoders -> masked MSE -> L_ssl.
/// With `grad_scale` > 0 the gradients of grad_scale * L_ssl are accumulated
/// into the model.
template <class S>
ReconstructionResult<S>
reconstruction_pass(Model<S> &m, const TokenSequence<S> &seq,
                    const Mat<S> &edge_target, const MaskPlan &plan,
                    const LossWeights &w, double grad_scale = 0.0) {
  if (!m.config.stage_p())
    throw Error("reconstruction_pass: model has no decoders");
  if (plan.n_tokens != seq.tokens.rows())
    throw ShapeError("reconstruction_pass: plan/sequence length mismatch");
  const bool train = grad_scale > 0.0;
  ReconstructionResult<S> r;

  typename UnifiedPatchEmbedding<S>::Cache upe_c;
  Mat<S> emb = m.upe.forward(seq.tokens, seq.positions, seq.dims, upe_c);
  Mat<S> vis = gather_visible(emb, plan);
  typename TransformerStack<S>::Cache enc_c;
  Mat<S> g = m.encoder.forward(vis, enc_c);

  RowVec<S> tok_i = m.mask_token->value.row(0);
  RowVec<S> tok_e = m.mask_token_e ? RowVec<S>(m.mask_token_e->value.row(0)) : tok_i;
  Mat<S> dg = Mat<S>::Zero(g.rows(), g.cols());

  auto run = [&](Decoder<S> &dec, const RowVec<S> &tok, Param<S> &tok_param,
                 const Mat<S> &target, double weight, Mat<S> &pred,
                 double &loss) {
    Mat<S> full = scatter_with_mask_tokens(g, plan, tok);
    typename Decoder<S>::Cache c;
    pred = dec.forward(full, seq.dims, c);
    loss = masked_mse(pred, target, plan);
    if (!train || weight == 0.0)
      return;
    Mat<S> dpred = masked_mse_grad(pred, target, plan, weight * grad_scale);
    Mat<S> dfull = dec.backward(dpred, c);
    for (std::size_t i = 0; i < plan.visible_idx.size(); ++i)
      dg.row(static_cast<Eigen::Index>(i)) += dfull.row(plan.visible_idx[i]);
    for (int k : plan.masked_idx)
      tok_param.grad.row(0) += dfull.row(k);
  };

  if (m.dec_i) {
    if (edge_target.rows() != seq.tokens.rows() && m.dec_e)
      throw ShapeError("reconstruction_pass: edge target length mismatch");
    run(*m.dec_i, tok_i, *m.mask_token, seq.tokens, w.lambda_i, r.intensity,
        r.loss_intensity);
  }
  if (m.dec_e) {
    if (edge_target.rows() != seq.tokens.rows() ||
        edge_target.cols() != m.dec_e->output_length(seq.dims))
      throw ShapeError("reconstruction_pass: edge target shape mismatch");
    Param<S> &tp = m.mask_token_e ? *m.mask_token_e : *m.mask_token;
    run(*m.dec_e, tok_e, tp, edge_target, w.lambda_e, r.edge, r.loss_edge);
  }
  r.loss_ssl = ssl_loss(r.loss_intensity, r.loss_edge, w);

  if (train) {
    Mat<S> dvis = m.encoder.backward(dg, enc_c);
    Mat<S> demb = Mat<S>::Zero(emb.rows(), emb.cols());
    for (std::size_t i = 0; i < plan.visible_idx.size(); ++i)
      demb.row(plan.visible_idx[i]) = dvis.row(static_cast<Eigen::Index>(i));
    m.upe.backward(demb, upe_c);
  }
  return r;
}

template <class S> struct ClassificationResult {
  RowVec<S> logits;
  double loss = 0.0;
};

/// Stage-D pass: full sequence -> encode -> mean pool -> head -> softmax CE.
/// Gradients of grad_scale * CE are accumulated when grad_scale > 0 and a
/// label is given; `freeze_encoder` stops them at the head.
template <class S>
ClassificationResult<S>
classification_pass(Model<S> &m, const TokenSequence<S> &seq,
                    std::optional<int> label, double grad_scale = 0.0,
                    bool freeze_encoder = false) {
  if (!m.head)
    throw Error("classification_pass: model has no classification head");
  typename UnifiedPatchEmbedding<S>::Cache upe_c;
  Mat<S> emb = m.upe.forward(seq.tokens, seq.positions, seq.dims, upe_c);
  typename TransformerStack<S>::Cache enc_c;
  Mat<S> g = m.encoder.forward(emb, enc_c);
  Mat<S> pooled = g.colwise().mean();
  typename Linear<S>::Cache head_c;
  ClassificationResult<S> r;
  r.logits = m.head->forward(pooled, head_c).row(0);
  if (!label)
    return r;
  RowVec<S> dlogits;
  r.loss = softmax_cross_entropy(r.logits, *label, dlogits);
  if (grad_scale <= 0.0)
    return r;
  dlogits *= static_cast<S>(grad_scale);
  Mat<S> dpooled = m.head->backward(Mat<S>(dlogits), head_c);
  if (freeze_encoder)
    return r;
  Mat<S> dg = dpooled.replicate(g.rows(), 1) / static_cast<S>(g.rows());
  Mat<S> demb = m.encoder.backward(dg, enc_c);
  m.upe.backward(demb, upe_c);
  return r;
}

} // namespace uni4eye
