// SPDX-License-Identifier: Apache-2.0
/**
 * @file   objective.hpp
 * @brief  Masked reconstruction losses and the combined pre-training
 *         objective L_ssl = lambda_i * L_i + lambda_e * L_e.
 */
#pragma once

#include <cmath>
#include <string>

#include "uni4eye/common.hpp"
#include "uni4eye/masking.hpp"

namespace uni4eye {

struct LossWeights {
  double lambda_i = 0.5;
  double lambda_e = 0.5;

  void check() const {
    if (!(lambda_i >= 0.0) || !(lambda_e >= 0.0))
      throw ConfigError("loss weights must be non-negative");
  }
};

/// Mean squared error over the masked rows only (|masked| * L elements).
/// Zero masked rows gives 0.
template <class S>
double masked_mse(const Mat<S> &pred, const Mat<S> &target,
                  const MaskPlan &plan) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError("masked_mse: prediction and target shapes differ");
  if (pred.rows() != plan.n_tokens)
    throw ShapeError("masked_mse: plan covers " +
                     std::to_string(plan.n_tokens) + " tokens, prediction has " +
                     std::to_string(pred.rows()));
  if (plan.masked_idx.empty())
    return 0.0;
  double sum = 0.0;
  for (int r : plan.masked_idx)
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      double d = static_cast<double>(pred(r, c)) - static_cast<double>(target(r, c));
      sum += d * d;
    }
  return sum / (static_cast<double>(plan.masked_idx.size()) * pred.cols());
}

/// d masked_mse / d pred, scaled by `weight`. Visible rows are exactly zero.
template <class S>
Mat<S> masked_mse_grad(const Mat<S> &pred, const Mat<S> &target,
                       const MaskPlan &plan, double weight = 1.0) {
  Mat<S> g = Mat<S>::Zero(pred.rows(), pred.cols());
  if (plan.masked_idx.empty())
    return g;
  const S k = static_cast<S>(
      2.0 * weight /
      (static_cast<double>(plan.masked_idx.size()) * pred.cols()));
  for (int r : plan.masked_idx)
    g.row(r) = k * (pred.row(r) - target.row(r));
  return g;
}

inline double ssl_loss(double l_i, double l_e, const LossWeights &w) {
  if (!std::isfinite(l_i) || !std::isfinite(l_e))
    throw DivergenceError("non-finite reconstruction loss (L_i=" +
                          std::to_string(l_i) + ", L_e=" + std::to_string(l_e) +
                          ")");
  return w.lambda_i * l_i + w.lambda_e * l_e;
}

/// Softmax cross-entropy of one logit row; returns the loss and writes
/// dL/dlogits into `grad`.
template <class S>
double softmax_cross_entropy(const RowVec<S> &logits, int label,
                             RowVec<S> &grad) {
  if (label < 0 || label >= logits.cols())
    throw ShapeError("cross-entropy: label out of range");
  S mx = logits.maxCoeff();
  RowVec<S> e = (logits.array() - mx).exp().matrix();
  S z = e.sum();
  grad = e / z;
  double loss = -(static_cast<double>(logits(label) - mx) -
                  std::log(static_cast<double>(z)));
  grad(label) -= S(1);
  return loss;
}

template <class S> RowVec<S> softmax(const RowVec<S> &logits) {
  S mx = logits.maxCoeff();
  RowVec<S> e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

} // namespace uni4eye
