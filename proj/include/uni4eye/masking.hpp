// SPDX-License-Identifier: Apache-2.0
/**
 * @file   masking.hpp
 * @brief  Random mask plans, visible-token gathering and full-sequence
 *         reassembly with mask tokens.
 */
#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "uni4eye/common.hpp"

namespace uni4eye {

struct MaskPlan {
  int n_tokens = 0;
  double alpha = 0.0;
  std::vector<int> masked_idx;  ///< sorted
  std::vector<int> visible_idx; ///< sorted complement

  /// Builds a plan from an explicit masked set (sorted, unique, in range).
  static MaskPlan from_masked(int n, std::vector<int> masked) {
    std::sort(masked.begin(), masked.end());
    masked.erase(std::unique(masked.begin(), masked.end()), masked.end());
    MaskPlan p;
    p.n_tokens = n;
    p.alpha = n > 0 ? static_cast<double>(masked.size()) / n : 0.0;
    std::vector<char> is_masked(n, 0);
    for (int i : masked) {
      if (i < 0 || i >= n)
        throw ShapeError("mask index out of range");
      is_masked[i] = 1;
    }
    p.masked_idx = std::move(masked);
    for (int i = 0; i < n; ++i)
      if (!is_masked[i])
        p.visible_idx.push_back(i);
    return p;
  }

  static MaskPlan none(int n) { return from_masked(n, {}); }
};

/// round(alpha * n) with ties rounded up.
inline int masked_count(int n_tokens, double alpha) {
  return static_cast<int>(std::floor(alpha * n_tokens + 0.5));
}

/// Uniform random subset of round(alpha * n) tokens, without replacement.
inline MaskPlan sample_mask(int n_tokens, double alpha, Rng &rng) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw ConfigError("mask ratio must lie in [0,1), got " +
                      std::to_string(alpha));
  if (n_tokens < 1)
    throw ConfigError("sample_mask: need at least one token");
  int k = masked_count(n_tokens, alpha);
  std::vector<int> idx(n_tokens);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n_tokens - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  MaskPlan p = MaskPlan::from_masked(n_tokens, std::move(idx));
  p.alpha = alpha;
  return p;
}

/// Rows of `x` at the plan's visible indices, ascending.
template <class S> Mat<S> gather_rows(const Mat<S> &x, const std::vector<int> &rows) {
  Mat<S> out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

template <class S> Mat<S> gather_visible(const Mat<S> &x, const MaskPlan &plan) {
  if (x.rows() != plan.n_tokens)
    throw ShapeError("gather_visible: sequence has " + std::to_string(x.rows()) +
                     " rows but plan covers " + std::to_string(plan.n_tokens));
  return gather_rows(x, plan.visible_idx);
}

inline std::vector<int> gather_positions(const std::vector<int> &positions,
                                         const MaskPlan &plan) {
  if (static_cast<int>(positions.size()) != plan.n_tokens)
    throw ShapeError("gather_positions: length mismatch");
  std::vector<int> out;
  out.reserve(plan.visible_idx.size());
  for (int i : plan.visible_idx)
    out.push_back(positions[i]);
  return out;
}

/// Full n x D sequence: encoded rows at visible indices, the mask token at
/// masked indices. When `positions` is non-empty (n x D) it is added to every
/// row.
template <class S>
Mat<S> scatter_with_mask_tokens(const Mat<S> &encoded, const MaskPlan &plan,
                                const RowVec<S> &mask_token,
                                const Mat<S> &positions = Mat<S>()) {
  if (encoded.rows() != static_cast<Eigen::Index>(plan.visible_idx.size()))
    throw ShapeError("scatter: encoded length " +
                     std::to_string(encoded.rows()) + " != visible count " +
                     std::to_string(plan.visible_idx.size()));
  if (mask_token.cols() != encoded.cols() && !plan.masked_idx.empty())
    throw ShapeError("scatter: mask token width mismatch");
  Mat<S> full(plan.n_tokens, encoded.cols());
  for (std::size_t i = 0; i < plan.visible_idx.size(); ++i)
    full.row(plan.visible_idx[i]) = encoded.row(static_cast<Eigen::Index>(i));
  for (int m : plan.masked_idx)
    full.row(m) = mask_token;
  if (positions.size() > 0) {
    if (positions.rows() != plan.n_tokens || positions.cols() != full.cols())
      throw ShapeError("scatter: positional table shape mismatch");
    full += positions;
  }
  return full;
}

} // namespace uni4eye
