// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  AdamW with decoupled weight decay and the linear-warmup + cosine
 *         learning-rate schedule.
 */
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "uni4eye/common.hpp"
#include "uni4eye/layers.hpp"

namespace uni4eye {

/// Linear warmup from 0 over the first ceil(warmup_fraction * total) steps,
/// then cosine decay towards 0 at step `total`.
inline double learning_rate(long step, long total, double lr0,
                            double warmup_fraction) {
  if (total <= 0)
    return lr0;
  const long warm = static_cast<long>(
      std::ceil(std::clamp(warmup_fraction, 0.0, 1.0) * static_cast<double>(total)));
  if (step < warm)
    return lr0 * static_cast<double>(step) / static_cast<double>(warm);
  if (warm >= total)
    return lr0;
  double progress = static_cast<double>(step - warm) /
                    static_cast<double>(total - warm);
  progress = std::clamp(progress, 0.0, 1.0);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

template <class S> class AdamW {
public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter from its accumulated gradient. Decay is
  /// applied only to parameters flagged `decay` (linear weights).
  void step(const std::vector<Param<S> *> &params, double lr) {
    if (m_.empty()) {
      for (auto *p : params) {
        m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != params.size())
      throw ShapeError("AdamW: parameter list changed between steps");
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const S lr_s = static_cast<S>(lr);
    const S eps = static_cast<S>(cfg_.eps);
    const S decay = static_cast<S>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto &p = *params[i];
      if (p.decay && cfg_.weight_decay != 0.0)
        p.value *= decay;
      m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr_s * (m_[i].array() / c1) /
                         ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  long steps_taken() const { return t_; }
  const std::vector<Mat<S>> &first_moments() const { return m_; }
  const std::vector<Mat<S>> &second_moments() const { return v_; }

  void restore(std::vector<Mat<S>> m, std::vector<Mat<S>> v, long t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

private:
  AdamWConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  long t_ = 0;
};

} // namespace uni4eye
