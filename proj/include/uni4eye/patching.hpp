// SPDX-License-Identifier: Apache-2.0
/**
 * @file   patching.hpp
 * @brief  Unified patch embedding: dimension-switched patchify/unpatchify and
 *         the per-dimension projection + positional tables feeding one shared
 *         encoder.
 */
#pragma once

#include <array>
#include <string>
#include <vector>

#include "uni4eye/common.hpp"
#include "uni4eye/imaging.hpp"
#include "uni4eye/layers.hpp"

namespace uni4eye {

struct PatchGridConfig {
  int patch_2d = 16; ///< square side in pixels
  int patch_3d = 16; ///< cube edge in voxels
  int embed_dim = 768;

  int patch(int dims) const { return dims == 2 ? patch_2d : patch_3d; }

  void check(const Geometry &g) const {
    if (patch_2d < 1 || patch_3d < 1 || embed_dim < 1)
      throw ConfigError("patch sizes and embed_dim must be positive");
    for (int e : g.image)
      if (e % patch_2d != 0)
        throw ConfigError("image extent " + std::to_string(e) +
                          " not divisible by patch_2d " +
                          std::to_string(patch_2d));
    for (int e : g.volume)
      if (e % patch_3d != 0)
        throw ConfigError("volume extent " + std::to_string(e) +
                          " not divisible by patch_3d " +
                          std::to_string(patch_3d));
  }
};

/// Patch layout of one sample: grid extents (gz == 1 for 2D), patch edge and
/// channel count.
struct PatchGrid {
  int dims = 2;
  int channels = 1;
  int patch = 16;
  int gz = 1, gy = 0, gx = 0;

  int token_count() const { return gz * gy * gx; }
  int patch_volume() const {
    return dims == 2 ? patch * patch : patch * patch * patch;
  }
  int token_length() const { return channels * patch_volume(); }
  int depth() const { return dims == 2 ? 1 : gz * patch; }
  int height() const { return gy * patch; }
  int width() const { return gx * patch; }
  std::array<int, 3> coords(int position) const {
    return {position / (gy * gx), (position / gx) % gy, position % gx};
  }
  bool operator==(const PatchGrid &) const = default;
};

inline PatchGrid patch_grid(int dims, int channels, int depth, int height,
                            int width, const PatchGridConfig &cfg) {
  PatchGrid g;
  g.dims = dims;
  g.channels = channels;
  g.patch = cfg.patch(dims);
  if (dims != 2 && dims != 3)
    throw ShapeError("patch_grid: dimensionality must be 2 or 3");
  if (height % g.patch || width % g.patch || (dims == 3 && depth % g.patch))
    throw ShapeError("patch_grid: spatial shape not divisible by patch " +
                     std::to_string(g.patch));
  g.gz = dims == 2 ? 1 : depth / g.patch;
  g.gy = height / g.patch;
  g.gx = width / g.patch;
  return g;
}

inline PatchGrid patch_grid(const ImageSample &s, const PatchGridConfig &cfg) {
  return patch_grid(s.dims, s.channels, s.depth, s.height, s.width, cfg);
}

/// Canonical grid for a geometry and dimensionality.
inline PatchGrid canonical_grid(int dims, const Geometry &g,
                                const PatchGridConfig &cfg, int channels) {
  if (dims == 2)
    return patch_grid(2, channels, 1, g.image[0], g.image[1], cfg);
  return patch_grid(3, channels, g.volume[0], g.volume[1], g.volume[2], cfg);
}

template <class S> struct TokenSequence {
  int dims = 2;
  PatchGrid grid;
  Mat<S> tokens;              ///< n x L flattened patch values
  std::vector<int> positions; ///< flat grid index per row
  Mat<S> embeddings;          ///< n x D once embedded
};

/// Row-major patch order (y-major in 2D, z,y,x-major in 3D); inside a patch
/// values are channel-major then spatially row-major.
template <class S = float>
TokenSequence<S> patchify(const ImageSample &s, const PatchGridConfig &cfg) {
  TokenSequence<S> seq;
  seq.dims = s.dims;
  seq.grid = patch_grid(s, cfg);
  const auto &g = seq.grid;
  const int p = g.patch;
  const int pz = s.dims == 2 ? 1 : p;
  const int n = g.token_count();
  seq.tokens.resize(n, g.token_length());
  seq.positions.resize(n);
  for (int t = 0; t < n; ++t) {
    seq.positions[t] = t;
    auto [tz, ty, tx] = g.coords(t);
    int k = 0;
    for (int c = 0; c < s.channels; ++c)
      for (int z = 0; z < pz; ++z)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            seq.tokens(t, k++) = static_cast<S>(
                s.at(c, tz * pz + z, ty * p + y, tx * p + x));
  }
  return seq;
}

/// Exact inverse of patchify over a complete, grid-ordered sequence.
template <class S>
ImageSample unpatchify(const TokenSequence<S> &seq,
                       const PatchGridConfig &cfg) {
  const auto &g = seq.grid;
  if (g.patch != cfg.patch(seq.dims) || g.dims != seq.dims)
    throw ShapeError("unpatchify: sequence grid does not match config");
  if (seq.tokens.rows() != g.token_count())
    throw ShapeError("unpatchify: expected " + std::to_string(g.token_count()) +
                     " tokens, got " + std::to_string(seq.tokens.rows()));
  if (seq.tokens.cols() != g.token_length())
    throw ShapeError("unpatchify: expected token length " +
                     std::to_string(g.token_length()) + ", got " +
                     std::to_string(seq.tokens.cols()));
  ImageSample s = seq.dims == 2
                      ? make_image(g.channels, g.height(), g.width())
                      : make_volume(g.channels, g.depth(), g.height(),
                                    g.width());
  const int p = g.patch;
  const int pz = seq.dims == 2 ? 1 : p;
  for (int r = 0; r < g.token_count(); ++r) {
    int t = seq.positions.empty() ? r : seq.positions[r];
    auto [tz, ty, tx] = g.coords(t);
    int k = 0;
    for (int c = 0; c < g.channels; ++c)
      for (int z = 0; z < pz; ++z)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            s.at(c, tz * pz + z, ty * p + y, tx * p + x) =
                static_cast<float>(seq.tokens(r, k++));
  }
  return s;
}

/// Separate 2D and 3D branches: projection W_d (L_d x D), bias b_d and a
/// learned positional table pos_d (n_d x D). The branch is chosen solely by
/// the sequence dimensionality.
template <class S> struct UnifiedPatchEmbedding {
  Linear<S> proj2, proj3;
  Param<S> pos2, pos3;

  struct Cache {
    int dims = 2;
    typename Linear<S>::Cache proj;
    std::vector<int> positions;
  };

  void init(const PatchGrid &grid2, const PatchGrid &grid3, int dim,
            Rng &rng) {
    proj2.init("upe.2d.proj", grid2.token_length(), dim, rng);
    pos2.init("upe.2d.pos", grid2.token_count(), dim);
    pos2.init_normal(rng);
    proj3.init("upe.3d.proj", grid3.token_length(), dim, rng);
    pos3.init("upe.3d.pos", grid3.token_count(), dim);
    pos3.init_normal(rng);
  }

  int dim() const { return proj2.out(); }

  Linear<S> &branch(int dims) { return dims == 2 ? proj2 : proj3; }
  const Linear<S> &branch(int dims) const { return dims == 2 ? proj2 : proj3; }
  Param<S> &table(int dims) { return dims == 2 ? pos2 : pos3; }
  const Param<S> &table(int dims) const { return dims == 2 ? pos2 : pos3; }

  Mat<S> forward(const Mat<S> &tokens, const std::vector<int> &positions,
                 int dims, Cache &c) const {
    if (dims != 2 && dims != 3)
      throw ShapeError("embed: no branch for dimensionality " +
                       std::to_string(dims));
    const auto &pr = branch(dims);
    const auto &pos = table(dims);
    if (tokens.cols() != pr.in())
      throw ShapeError("embed: token length " + std::to_string(tokens.cols()) +
                       " does not match " + std::to_string(dims) +
                       "D branch input " + std::to_string(pr.in()));
    c.dims = dims;
    c.positions = positions;
    Mat<S> e = pr.forward(tokens, c.proj);
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      int p = positions[i];
      if (p < 0 || p >= pos.value.rows())
        throw ShapeError("embed: position out of range");
      e.row(i) += pos.value.row(p);
    }
    return e;
  }

  void backward(const Mat<S> &de, const Cache &c) {
    auto &pos = table(c.dims);
    for (Eigen::Index i = 0; i < de.rows(); ++i)
      pos.grad.row(c.positions[i]) += de.row(i);
    branch(c.dims).backward(de, c.proj);
  }

  void visit(const ParamVisitor<S> &f) {
    proj2.visit(f);
    f(pos2);
    proj3.visit(f);
    f(pos3);
  }
};

/// embeddings = tokens * W_d + b_d + pos_d[positions].
template <class S>
TokenSequence<S> embed(TokenSequence<S> seq,
                       const UnifiedPatchEmbedding<S> &upe) {
  typename UnifiedPatchEmbedding<S>::Cache c;
  seq.embeddings = upe.forward(seq.tokens, seq.positions, seq.dims, c);
  return seq;
}

} // namespace uni4eye
