// SPDX-License-Identifier: Apache-2.0
/**
 * @file   pipeline.hpp
 * @brief  Stage P pre-training, stage D fine-tuning, prediction and
 *         reconstruction panels.
 */
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uni4eye/checkpoint.hpp"
#include "uni4eye/datasets.hpp"
#include "uni4eye/evaluation.hpp"
#include "uni4eye/imaging.hpp"
#include "uni4eye/masking.hpp"
#include "uni4eye/network.hpp"
#include "uni4eye/objective.hpp"
#include "uni4eye/optim.hpp"
#include "uni4eye/patching.hpp"

namespace uni4eye {

enum class Stage { P, D };

struct TrainConfig {
  Stage stage = Stage::P;
  int epochs = 50;
  long steps = 0; ///< > 0 overrides epochs with an exact step budget
  double lr = 5e-4;
  double weight_decay = 0.05;
  double warmup_fraction = 0.05;
  double alpha = 0.5;
  BatchSpec batch;
  std::uint64_t seed = 0;
  LossWeights loss;
  AugmentationPolicy augment;
  bool augment_enabled = true;
  bool use_2d = true;
  bool use_3d = true;
  int slice_axis = 0;
  long checkpoint_every = 0; ///< steps; 0 = only at the end
  bool freeze_encoder = false;

  static TrainConfig pretrain_defaults() { return {}; }

  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.stage = Stage::D;
    c.epochs = 10;
    c.lr = 1e-4;
    c.alpha = 0.0;
    c.batch = {8, 1, Interleave::proportional};
    return c;
  }

  void check() const {
    if (!(lr >= 0.0) || !std::isfinite(lr))
      throw ConfigError("lr must be a finite non-negative number");
    if (!(weight_decay >= 0.0))
      throw ConfigError("weight_decay must be >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
      throw ConfigError("warmup_fraction must lie in [0,1]");
    if (!(alpha >= 0.0 && alpha < 1.0))
      throw ConfigError("alpha must lie in [0,1)");
    if (epochs < 1 && steps < 1)
      throw ConfigError("need epochs >= 1 or steps >= 1");
    if (!use_2d && !use_3d)
      throw ConfigError("at least one of use_2d / use_3d must be set");
    if (slice_axis < 0 || slice_axis > 2)
      throw ConfigError("slice_axis must be 0, 1 or 2");
    if (checkpoint_every < 0)
      throw ConfigError("checkpoint_every must be >= 0");
    batch.check();
    loss.check();
    augment.check();
  }
};

inline std::string to_string(Stage s) { return s == Stage::P ? "P" : "D"; }

inline Stage parse_stage(const std::string &s) {
  if (s == "P")
    return Stage::P;
  if (s == "D")
    return Stage::D;
  throw ConfigError("stage must be \"P\" or \"D\", got '" + s + "'");
}

inline nlohmann::json to_json(const AugmentationPolicy &p) {
  return {{"jitter_strength", p.jitter_strength},
          {"grayscale_prob", p.grayscale_prob},
          {"crop_scale", p.crop_scale},
          {"hflip_prob", p.hflip_prob},
          {"jitter_enabled", p.jitter_enabled},
          {"grayscale_enabled", p.grayscale_enabled},
          {"crop_enabled", p.crop_enabled},
          {"hflip_enabled", p.hflip_enabled}};
}

inline nlohmann::json to_json(const TrainConfig &c) {
  return {{"stage", to_string(c.stage)},
          {"epochs", c.epochs},
          {"steps", c.steps},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup_fraction", c.warmup_fraction},
          {"alpha", c.alpha},
          {"batch_size_2d", c.batch.batch_size_2d},
          {"batch_size_3d", c.batch.batch_size_3d},
          {"interleave", to_string(c.batch.interleave)},
          {"seed", c.seed},
          {"lambda_i", c.loss.lambda_i},
          {"lambda_e", c.loss.lambda_e},
          {"augment", to_json(c.augment)},
          {"augment_enabled", c.augment_enabled},
          {"use_2d", c.use_2d},
          {"use_3d", c.use_3d},
          {"slice_axis", c.slice_axis},
          {"checkpoint_every", c.checkpoint_every},
          {"freeze_encoder", c.freeze_encoder}};
}

// ---------------------------------------------------------------------------
// Logs

struct LossRow {
  long step = 0;
  int dims = 2;
  double loss_intensity = 0.0;
  double loss_edge = 0.0;
  double loss_ssl = 0.0;
  double lr = 0.0;
  bool operator==(const LossRow &) const = default;
};

struct EpochRow {
  int epoch = 0;
  double train_ce = 0.0;
  double lr = 0.0;
  std::optional<MetricsReport> val;
};

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string loss_log_csv(const std::vector<LossRow> &rows) {
  std::string out = "step,dims,loss_intensity,loss_edge,loss_ssl,lr\n";
  for (const auto &r : rows)
    out += std::to_string(r.step) + "," + std::to_string(r.dims) + "," +
           fmt_double(r.loss_intensity) + "," + fmt_double(r.loss_edge) + "," +
           fmt_double(r.loss_ssl) + "," + fmt_double(r.lr) + "\n";
  return out;
}

inline std::string metric_log_csv(const std::vector<EpochRow> &rows) {
  std::string out = "epoch,train_ce,lr,val_auc,val_accuracy,val_precision,"
                    "val_recall,val_f1,val_kappa\n";
  for (const auto &r : rows) {
    out += std::to_string(r.epoch) + "," + fmt_double(r.train_ce) + "," +
           fmt_double(r.lr);
    if (r.val) {
      const auto &m = *r.val;
      out += "," + (m.auc ? fmt_double(*m.auc) : std::string()) + "," +
             fmt_double(m.accuracy) + "," + fmt_double(m.precision) + "," +
             fmt_double(m.recall) + "," + fmt_double(m.f1) + "," +
             fmt_double(m.kappa);
    } else {
      out += ",,,,,,";
    }
    out += "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path &path,
                       const std::string &text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f)
    throw IoError("cannot write " + path.string());
  f << text;
  if (!f)
    throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Stage P

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<LossRow> log;
  std::vector<std::filesystem::path> written; ///< interval checkpoints
};

struct PretrainHooks {
  std::function<void(const LossRow &)> on_step;
};

/// Number of optimizer steps a run will take.
inline long planned_steps(const TrainConfig &cfg, std::size_t batches_per_epoch) {
  if (cfg.steps > 0)
    return cfg.steps;
  return static_cast<long>(cfg.epochs) * static_cast<long>(batches_per_epoch);
}

/// Masked image modelling with both reconstruction decoders. Updates `model`
/// in place. With `out_dir`, interval checkpoints are written there as
/// `step-<k>.u4e`.
inline PretrainResult pretrain(const TrainConfig &cfg, const Manifest &manifest,
                               Model<float> &model,
                               const std::optional<std::filesystem::path> &out_dir = {},
                               const PretrainHooks &hooks = {}) {
  if (cfg.stage != Stage::P)
    throw ConfigError("pretrain requires a stage P config");
  cfg.check();
  if (!model.config.stage_p())
    throw ConfigError("pretrain requires a model with at least one decoder");
  const auto pool = manifest.select(Split::train, cfg.use_2d, cfg.use_3d);
  if (pool.empty())
    throw ConfigError("manifest has no train samples for the selected dimensions");

  Rng rng(cfg.seed);
  SampleStore store(manifest, model.config.geometry);
  AdamW<float> opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  auto params = model.params();
  const nlohmann::json train_json = to_json(cfg);

  PretrainResult res;
  std::vector<Batch> epoch = schedule_batches(manifest, pool, cfg.batch, rng);
  const long total = planned_steps(cfg, epoch.size());
  std::size_t cursor = 0;
  std::string last_good = "none";

  for (long step = 0; step < total; ++step) {
    if (cursor == epoch.size()) {
      epoch = schedule_batches(manifest, pool, cfg.batch, rng);
      cursor = 0;
    }
    const Batch &b = epoch[cursor++];
    model.zero_grad();
    const double scale = 1.0 / static_cast<double>(b.indices.size());
    LossRow row;
    row.step = step;
    row.dims = b.dims;
    for (auto idx : b.indices) {
      const ImageSample &raw = store.get(idx);
      ImageSample s = cfg.augment_enabled ? augment(raw, cfg.augment, rng) : raw;
      TokenSequence<float> seq = patchify<float>(s, model.config.patch);
      Mat<float> et;
      if (model.dec_e)
        et = patchify<float>(edge_target(s, cfg.slice_axis), model.config.patch)
                 .tokens;
      MaskPlan plan = sample_mask(seq.grid.token_count(), cfg.alpha, rng);
      ReconstructionResult<float> r;
      try {
        r = reconstruction_pass(model, seq, et, plan, cfg.loss, scale);
      } catch (const DivergenceError &e) {
        throw DivergenceError(std::string(e.what()) + " at step " +
                              std::to_string(step) +
                              "; last good checkpoint: " + last_good);
      }
      row.loss_intensity += r.loss_intensity * scale;
      row.loss_edge += r.loss_edge * scale;
      row.loss_ssl += r.loss_ssl * scale;
    }
    for (auto *p : params)
      if (!p->grad.allFinite())
        throw DivergenceError("non-finite gradient in '" + p->name +
                              "' at step " + std::to_string(step) +
                              "; last good checkpoint: " + last_good);
    row.lr = learning_rate(step, total, cfg.lr, cfg.warmup_fraction);
    opt.step(params, row.lr);
    res.log.push_back(row);
    if (hooks.on_step)
      hooks.on_step(row);

    if (out_dir && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total) {
      auto path = *out_dir / ("step-" + std::to_string(step + 1) + ".u4e");
      save_checkpoint(make_checkpoint(model, train_json, step + 1,
                                      rng_state_string(rng), &opt),
                      path);
      res.written.push_back(path);
      last_good = path.string();
    }
  }
  res.checkpoint =
      make_checkpoint(model, train_json, total, rng_state_string(rng), &opt);
  return res;
}

// ---------------------------------------------------------------------------
// Stage D

/// Softmax class probabilities of the full (unmasked) sequence of each entry.
inline PredictionSet predict(Model<float> &model, SampleStore &store,
                             const std::vector<std::size_t> &indices) {
  PredictionSet ps;
  ps.class_names = store.manifest().class_names;
  for (auto idx : indices) {
    const ImageSample &s = store.get(idx);
    if (!s.label)
      throw ConfigError("sample '" + s.id + "' has no label");
    auto seq = patchify<float>(s, model.config.patch);
    auto r = classification_pass(model, seq, std::nullopt);
    RowVec<float> p = softmax(r.logits);
    std::vector<double> row(static_cast<std::size_t>(p.cols()));
    double sum = 0;
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      sum += row[static_cast<std::size_t>(c)] = static_cast<double>(p(c));
    for (auto &v : row)
      v /= sum;
    ps.probabilities.push_back(std::move(row));
    ps.labels.push_back(*s.label);
  }
  return ps;
}

struct FinetuneResult {
  Model<float> best;
  int best_epoch = 0;
  std::vector<EpochRow> log;
  Checkpoint checkpoint; ///< of `best`
};

/// Supervised fine-tuning on the train split with softmax cross-entropy.
/// Each epoch is scored on the val split; the best-by-AUC model is kept
/// (ties keep the earlier epoch). Without a val split the last epoch is kept.
inline FinetuneResult finetune(TrainConfig cfg, const Manifest &manifest,
                               Model<float> model) {
  if (cfg.stage != Stage::D)
    throw ConfigError("finetune requires a stage D config");
  cfg.alpha = 0.0;
  cfg.check();
  if (!model.head)
    throw ConfigError("finetune requires a model with a classification head");
  const auto train = manifest.select(Split::train, cfg.use_2d, cfg.use_3d);
  const auto val = manifest.select(Split::val, cfg.use_2d, cfg.use_3d);
  if (train.empty())
    throw ConfigError("manifest has no train samples for the selected dimensions");
  for (auto i : train)
    if (!manifest.entries[i].label)
      throw ConfigError("train sample '" + manifest.entries[i].id +
                        "' has no label");

  Rng rng(cfg.seed);
  SampleStore store(manifest, model.config.geometry);
  AdamW<float> opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  auto params = model.params();

  std::vector<std::vector<Batch>> epochs;
  std::vector<Batch> first = schedule_batches(manifest, train, cfg.batch, rng);
  const long total = cfg.steps > 0
                         ? cfg.steps
                         : static_cast<long>(cfg.epochs) *
                               static_cast<long>(first.size());
  const int n_epochs =
      cfg.steps > 0 ? static_cast<int>((cfg.steps + first.size() - 1) / first.size())
                    : cfg.epochs;

  FinetuneResult res{model, 0, {}, {}};
  double best_auc = -1.0;
  long step = 0;
  for (int ep = 1; ep <= n_epochs && step < total; ++ep) {
    std::vector<Batch> sched =
        ep == 1 ? first : schedule_batches(manifest, train, cfg.batch, rng);
    EpochRow row;
    row.epoch = ep;
    double ce_sum = 0;
    std::size_t ce_n = 0;
    for (const auto &b : sched) {
      if (step >= total)
        break;
      model.zero_grad();
      const double scale = 1.0 / static_cast<double>(b.indices.size());
      for (auto idx : b.indices) {
        const ImageSample &raw = store.get(idx);
        ImageSample s =
            cfg.augment_enabled ? augment(raw, cfg.augment, rng) : raw;
        auto seq = patchify<float>(s, model.config.patch);
        auto r = classification_pass(model, seq, raw.label, scale,
                                     cfg.freeze_encoder);
        if (!std::isfinite(r.loss))
          throw DivergenceError("non-finite cross-entropy at step " +
                                std::to_string(step));
        ce_sum += r.loss;
        ++ce_n;
      }
      row.lr = learning_rate(step, total, cfg.lr, cfg.warmup_fraction);
      opt.step(params, row.lr);
      ++step;
    }
    row.train_ce = ce_n ? ce_sum / static_cast<double>(ce_n) : 0.0;
    if (!val.empty()) {
      row.val = compute_metrics(predict(model, store, val));
      double auc = row.val->auc.value_or(-1.0);
      if (auc > best_auc || res.best_epoch == 0) {
        best_auc = auc;
        res.best = model;
        res.best_epoch = ep;
      }
    } else {
      res.best = model;
      res.best_epoch = ep;
    }
    res.log.push_back(std::move(row));
  }
  res.checkpoint = make_checkpoint(res.best, to_json(cfg),
                                   static_cast<std::uint64_t>(step),
                                   rng_state_string(rng));
  return res;
}

// ---------------------------------------------------------------------------
// Reconstruction panels

struct ReconstructionPanels {
  double alpha = 0.0;
  ImageSample original;
  ImageSample masked;                  ///< masked patches mid-gray
  std::optional<ImageSample> intensity; ///< prediction at masked patches
  std::optional<ImageSample> edge;      ///< [reconstruction | target]
  double loss_intensity = 0.0;
  double loss_edge = 0.0;
};

/// Two equally tall single-channel or RGB images side by side.
inline ImageSample hconcat(const ImageSample &a, const ImageSample &b) {
  if (a.dims != 2 || b.dims != 2 || a.height != b.height ||
      a.channels != b.channels)
    throw ShapeError("hconcat: incompatible panels");
  ImageSample out = make_image(a.channels, a.height, a.width + b.width);
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x)
        out.at(c, y, x) = a.at(c, y, x);
      for (int x = 0; x < b.width; ++x)
        out.at(c, y, a.width + x) = b.at(c, y, x);
    }
  return out;
}

/// 2D view of a panel: the sample itself, or the central slice along
/// `slice_axis` for volumes.
inline ImageSample panel_view(const ImageSample &s, int slice_axis) {
  if (s.dims == 2)
    return s;
  const std::array<int, 3> ext{s.depth, s.height, s.width};
  return volume_slice(s, slice_axis, ext[slice_axis] / 2);
}

template <class S>
ReconstructionPanels reconstruct(Model<S> &model, const ImageSample &sample,
                                 double alpha, Rng &rng, int slice_axis = 0) {
  if (!model.config.stage_p())
    throw ConfigError("reconstruct needs a stage P checkpoint with decoders");
  const auto &pc = model.config.patch;
  ImageSample s = resize_to_canonical(sample, model.config.geometry);
  auto seq = patchify<S>(s, pc);
  ImageSample edge = edge_target(s, slice_axis);
  auto eseq = patchify<S>(edge, pc);
  MaskPlan plan = sample_mask(seq.grid.token_count(), alpha, rng);
  auto r = reconstruction_pass(model, seq, eseq.tokens, plan, LossWeights{}, 0.0);

  ReconstructionPanels out;
  out.alpha = alpha;
  out.loss_intensity = r.loss_intensity;
  out.loss_edge = r.loss_edge;
  out.original = panel_view(s, slice_axis);

  auto composite = [&](TokenSequence<S> base, const Mat<S> *pred, double fill) {
    for (int k : plan.masked_idx) {
      if (pred)
        base.tokens.row(k) = pred->row(k).cwiseMax(S(0)).cwiseMin(S(1));
      else
        base.tokens.row(k).setConstant(static_cast<S>(fill));
    }
    return panel_view(unpatchify(base, pc), slice_axis);
  };
  out.masked = composite(seq, nullptr, 0.5);
  if (model.dec_i)
    out.intensity = composite(seq, &r.intensity, 0.0);
  if (model.dec_e)
    out.edge = hconcat(composite(eseq, &r.edge, 0.0),
                       panel_view(edge, slice_axis));
  return out;
}

} // namespace uni4eye
