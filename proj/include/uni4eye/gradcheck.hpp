// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central finite-difference verification of the analytic gradients
 *         of the full pre-training objective on a tiny model.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "uni4eye/network.hpp"

namespace uni4eye {

/// Depth 2, width 16, eight tokens per sample (8x16 RGB images and 8x8x8
/// volumes, patch 4), both decoders.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.geometry = Geometry{{8, 16}, {8, 8, 8}, 3, 1};
  c.patch = {4, 4, 16};
  c.encoder = {2, 16, 2, 4};
  c.decoder = {2, 16, 2, 4};
  return c;
}

struct GradCheckOptions {
  int n_params = 50;
  std::uint64_t seed = 0;
  double alpha = 0.5;
  LossWeights weights{};
  double step = 1e-4;  ///< finite-difference step
  double floor = 1e-5; ///< denominator floor of the relative error
};

struct GradCheckEntry {
  std::string param;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

namespace detail {

struct GradCheckProblem {
  ImageSample image, volume;
  MaskPlan plan2, plan3;
};

inline GradCheckProblem gradcheck_problem(const ModelConfig &cfg,
                                          const GradCheckOptions &o) {
  Rng rng(o.seed ^ 0x9e3779b97f4a7c15ULL);
  GradCheckProblem p;
  const auto &g = cfg.geometry;
  p.image = make_image(g.channels_2d, g.image[0], g.image[1]);
  p.volume = make_volume(1, g.volume[0], g.volume[1], g.volume[2]);
  for (float &v : p.image.data)
    v = static_cast<float>(uniform01(rng));
  for (float &v : p.volume.data)
    v = static_cast<float>(uniform01(rng));
  p.plan2 = sample_mask(cfg.grid(2).token_count(), o.alpha, rng);
  p.plan3 = sample_mask(cfg.grid(3).token_count(), o.alpha, rng);
  return p;
}

/// L_ssl(image) + L_ssl(volume); accumulates gradients when `grad`.
template <class S>
double gradcheck_loss(Model<S> &m, const GradCheckProblem &p,
                      const LossWeights &w, bool grad) {
  double total = 0.0;
  auto one = [&](const ImageSample &s, const MaskPlan &plan) {
    auto seq = patchify<S>(s, m.config.patch);
    auto et = patchify<S>(edge_target(s), m.config.patch).tokens;
    total += reconstruction_pass(m, seq, et, plan, w, grad ? 1.0 : 0.0).loss_ssl;
  };
  one(p.image, p.plan2);
  one(p.volume, p.plan3);
  return total;
}

} // namespace detail

/// Compares analytic gradients of a model in scalar type S against central
/// differences of a 64-bit copy with identical parameter values. Parameters
/// are drawn by picking a tensor uniformly, then an element uniformly.
template <class S>
GradCheckReport gradcheck(const GradCheckOptions &o = {},
                          const ModelConfig &cfg = tiny_config()) {
  Model<S> model = Model<S>::create(cfg, o.seed);
  Model<double> ref = Model<double>::create(cfg, o.seed);
  ref.assign_from(model);
  const auto problem = detail::gradcheck_problem(cfg, o);

  model.zero_grad();
  detail::gradcheck_loss(model, problem, o.weights, true);

  auto analytic = model.params();
  auto numeric = ref.params();
  Rng rng(o.seed + 1);
  std::uniform_int_distribution<std::size_t> pick_tensor(0, analytic.size() - 1);
  GradCheckReport rep;
  for (int k = 0; k < o.n_params; ++k) {
    std::size_t t = pick_tensor(rng);
    std::uniform_int_distribution<Eigen::Index> pick_elem(
        0, analytic[t]->value.size() - 1);
    Eigen::Index i = pick_elem(rng);
    double &v = numeric[t]->value.data()[i];
    const double saved = v;
    auto at = [&](double offset) {
      v = saved + offset;
      double l = detail::gradcheck_loss(ref, problem, o.weights, false);
      v = saved;
      return l;
    };
    const double h = o.step;
    // Fourth-order central stencil.
    const double d1 = at(h) - at(-h);
    const double d2 = at(2 * h) - at(-2 * h);
    GradCheckEntry e;
    e.param = analytic[t]->name;
    e.index = i;
    e.analytic = static_cast<double>(analytic[t]->grad.data()[i]);
    e.numeric = (8.0 * d1 - d2) / (12.0 * h);
    e.rel_error = relative_error(e.analytic, e.numeric, o.floor);
    rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

} // namespace uni4eye
