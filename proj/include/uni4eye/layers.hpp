// SPDX-License-Identifier: Apache-2.0
/**
 * @file   layers.hpp
 * @brief  Transformer building blocks with hand-written backward passes.
 *
 * Every layer follows the same protocol: `forward(x, cache)` records what the
 * backward pass needs into a caller-owned cache, `backward(dy, cache)`
 * accumulates parameter gradients into `Param::grad` and returns dL/dx.
 * Inputs are token-major (one token per row).
 */
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "uni4eye/common.hpp"

namespace uni4eye {

template <class S> struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool decay = false; ///< AdamW weight decay applies

  void init(std::string n, Eigen::Index rows, Eigen::Index cols,
            bool weight_decay = false) {
    name = std::move(n);
    value = Mat<S>::Zero(rows, cols);
    grad = Mat<S>::Zero(rows, cols);
    decay = weight_decay;
  }
  void init_normal(Rng &rng, double sigma = 0.02) {
    for (Eigen::Index i = 0; i < value.size(); ++i)
      value.data()[i] = static_cast<S>(truncated_normal(rng, sigma));
  }
  void zero_grad() { grad.setZero(); }
};

template <class S> using ParamVisitor = std::function<void(Param<S> &)>;

// ---------------------------------------------------------------------------

template <class S> struct Linear {
  Param<S> w; ///< in x out
  Param<S> b; ///< 1 x out

  struct Cache {
    Mat<S> x;
  };

  void init(const std::string &name, int in, int out, Rng &rng) {
    w.init(name + ".w", in, out, true);
    b.init(name + ".b", 1, out);
    w.init_normal(rng);
  }
  int in() const { return static_cast<int>(w.value.rows()); }
  int out() const { return static_cast<int>(w.value.cols()); }

  Mat<S> forward(const Mat<S> &x) const {
    require_shape(x.cols() == w.value.rows(),
                  w.name + ": input width mismatch");
    Mat<S> y = x * w.value;
    y.rowwise() += b.value.row(0);
    return y;
  }
  Mat<S> forward(const Mat<S> &x, Cache &c) const {
    c.x = x;
    return forward(x);
  }
  Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    w.grad.noalias() += c.x.transpose() * dy;
    b.grad += dy.colwise().sum();
    return dy * w.value.transpose();
  }
  void visit(const ParamVisitor<S> &f) {
    f(w);
    f(b);
  }
};

template <class S> struct LayerNorm {
  Param<S> gamma;
  Param<S> beta;
  static constexpr double eps = 1e-6;

  struct Cache {
    Mat<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
  };

  void init(const std::string &name, int dim) {
    gamma.init(name + ".gamma", 1, dim);
    beta.init(name + ".beta", 1, dim);
    gamma.value.setOnes();
  }

  Mat<S> forward(const Mat<S> &x, Cache &c) const {
    const auto n = x.rows();
    const auto d = x.cols();
    c.xhat.resize(n, d);
    c.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      S mean = x.row(i).mean();
      auto centred = (x.row(i).array() - mean).eval();
      S var = centred.square().mean();
      S r = S(1) / std::sqrt(var + static_cast<S>(eps));
      c.rstd(i) = r;
      c.xhat.row(i) = centred * r;
    }
    Mat<S> y = (c.xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
    y.rowwise() += beta.value.row(0);
    return y;
  }
  Mat<S> forward(const Mat<S> &x) const {
    Cache c;
    return forward(x, c);
  }
  Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    gamma.grad += (dy.array() * c.xhat.array()).matrix().colwise().sum();
    beta.grad += dy.colwise().sum();
    Mat<S> dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      S m1 = dxhat.row(i).mean();
      S m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
      dx.row(i) = c.rstd(i) *
                  (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2)
                      .matrix();
    }
    return dx;
  }
  void visit(const ParamVisitor<S> &f) {
    f(gamma);
    f(beta);
  }
};

/// Exact (erf-based) GELU.
template <class S> struct Gelu {
  struct Cache {
    Mat<S> x;
  };
  static Mat<S> forward(const Mat<S> &x, Cache &c) {
    c.x = x;
    return x.unaryExpr([](S v) {
      return static_cast<S>(0.5) * v *
             (S(1) + std::erf(v * static_cast<S>(0.7071067811865476)));
    });
  }
  static Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    const S inv_sqrt_2pi = static_cast<S>(0.3989422804014327);
    Mat<S> d = c.x.unaryExpr([inv_sqrt_2pi](S v) {
      S cdf = static_cast<S>(0.5) *
              (S(1) + std::erf(v * static_cast<S>(0.7071067811865476)));
      return cdf + v * inv_sqrt_2pi * std::exp(static_cast<S>(-0.5) * v * v);
    });
    return (dy.array() * d.array()).matrix();
  }
};

template <class S> struct MultiHeadAttention {
  Linear<S> qkv;
  Linear<S> proj;
  int heads = 1;

  struct Cache {
    typename Linear<S>::Cache qkv, proj;
    Mat<S> qkv_out;
    std::vector<Mat<S>> attn; ///< per head, n x n softmax weights
  };

  void init(const std::string &name, int dim, int n_heads, Rng &rng) {
    if (n_heads < 1 || dim % n_heads != 0)
      throw ConfigError(name + ": width " + std::to_string(dim) +
                        " not divisible by " + std::to_string(n_heads) +
                        " heads");
    heads = n_heads;
    qkv.init(name + ".qkv", dim, 3 * dim, rng);
    proj.init(name + ".proj", dim, dim, rng);
  }

  Mat<S> forward(const Mat<S> &x, Cache &c) const {
    const auto n = x.rows();
    const int dim = proj.in();
    const int dh = dim / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    c.qkv_out = qkv.forward(x, c.qkv);
    c.attn.resize(heads);
    Mat<S> o(n, dim);
    for (int h = 0; h < heads; ++h) {
      auto q = c.qkv_out.middleCols(h * dh, dh);
      auto k = c.qkv_out.middleCols(dim + h * dh, dh);
      auto v = c.qkv_out.middleCols(2 * dim + h * dh, dh);
      Mat<S> s = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        S mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp().matrix();
        s.row(i) /= s.row(i).sum();
      }
      o.middleCols(h * dh, dh).noalias() = s * v;
      c.attn[h] = std::move(s);
    }
    return proj.forward(o, c.proj);
  }

  Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    const auto n = dy.rows();
    const int dim = proj.in();
    const int dh = dim / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Mat<S> d_o = proj.backward(dy, c.proj);
    Mat<S> d_qkv(n, 3 * dim);
    for (int h = 0; h < heads; ++h) {
      auto q = c.qkv_out.middleCols(h * dh, dh);
      auto k = c.qkv_out.middleCols(dim + h * dh, dh);
      auto v = c.qkv_out.middleCols(2 * dim + h * dh, dh);
      const Mat<S> &a = c.attn[h];
      auto doh = d_o.middleCols(h * dh, dh);
      Mat<S> da = doh * v.transpose();
      d_qkv.middleCols(2 * dim + h * dh, dh).noalias() = a.transpose() * doh;
      Mat<S> ds(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        S dot = (da.row(i).array() * a.row(i).array()).sum();
        ds.row(i) = (a.row(i).array() * (da.row(i).array() - dot)).matrix();
      }
      ds *= scale;
      d_qkv.middleCols(h * dh, dh).noalias() = ds * k;
      d_qkv.middleCols(dim + h * dh, dh).noalias() = ds.transpose() * q;
    }
    return qkv.backward(d_qkv, c.qkv);
  }

  void visit(const ParamVisitor<S> &f) {
    qkv.visit(f);
    proj.visit(f);
  }
};

/// Pre-norm block: x + attn(ln1(x)), then h + mlp(ln2(h)).
template <class S> struct TransformerBlock {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Linear<S> fc1, fc2;

  struct Cache {
    typename LayerNorm<S>::Cache ln1, ln2;
    typename MultiHeadAttention<S>::Cache attn;
    typename Linear<S>::Cache fc1, fc2;
    typename Gelu<S>::Cache act;
  };

  void init(const std::string &name, int dim, int heads, int mlp_ratio,
            Rng &rng) {
    ln1.init(name + ".ln1", dim);
    attn.init(name + ".attn", dim, heads, rng);
    ln2.init(name + ".ln2", dim);
    fc1.init(name + ".fc1", dim, dim * mlp_ratio, rng);
    fc2.init(name + ".fc2", dim * mlp_ratio, dim, rng);
  }

  Mat<S> forward(const Mat<S> &x, Cache &c) const {
    Mat<S> h = x + attn.forward(ln1.forward(x, c.ln1), c.attn);
    Mat<S> m = fc1.forward(ln2.forward(h, c.ln2), c.fc1);
    m = fc2.forward(Gelu<S>::forward(m, c.act), c.fc2);
    return h + m;
  }

  Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    Mat<S> dm = fc2.backward(dy, c.fc2);
    dm = fc1.backward(Gelu<S>::backward(dm, c.act), c.fc1);
    Mat<S> dh = dy + ln2.backward(dm, c.ln2);
    Mat<S> da = attn.backward(dh, c.attn);
    return dh + ln1.backward(da, c.ln1);
  }

  void visit(const ParamVisitor<S> &f) {
    ln1.visit(f);
    attn.visit(f);
    ln2.visit(f);
    fc1.visit(f);
    fc2.visit(f);
  }
};

/// Stack of blocks followed by a final layer norm.
template <class S> struct TransformerStack {
  std::vector<TransformerBlock<S>> blocks;
  LayerNorm<S> norm;

  struct Cache {
    std::vector<typename TransformerBlock<S>::Cache> blocks;
    typename LayerNorm<S>::Cache norm;
  };

  void init(const std::string &name, int depth, int dim, int heads,
            int mlp_ratio, Rng &rng) {
    blocks.resize(depth);
    for (int i = 0; i < depth; ++i)
      blocks[i].init(name + ".blocks." + std::to_string(i), dim, heads,
                     mlp_ratio, rng);
    norm.init(name + ".norm", dim);
  }

  Mat<S> forward(const Mat<S> &x, Cache &c) const {
    c.blocks.resize(blocks.size());
    Mat<S> h = x;
    for (std::size_t i = 0; i < blocks.size(); ++i)
      h = blocks[i].forward(h, c.blocks[i]);
    return norm.forward(h, c.norm);
  }
  Mat<S> forward(const Mat<S> &x) const {
    Cache c;
    return forward(x, c);
  }

  Mat<S> backward(const Mat<S> &dy, const Cache &c) {
    Mat<S> d = norm.backward(dy, c.norm);
    for (std::size_t i = blocks.size(); i-- > 0;)
      d = blocks[i].backward(d, c.blocks[i]);
    return d;
  }

  void visit(const ParamVisitor<S> &f) {
    for (auto &b : blocks)
      b.visit(f);
    norm.visit(f);
  }
};

} // namespace uni4eye
