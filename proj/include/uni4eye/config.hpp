// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Run configuration document: strict JSON reading (unknown keys are
 *         errors), defaults for every field, and the resolved echo.
 */
#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "uni4eye/network.hpp"
#include "uni4eye/pipeline.hpp"

namespace uni4eye {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string manifest;         ///< corpus manifest.json
  std::string runs_dir = "runs"; ///< parent of timestamped run directories
  int num_classes = 2;
  ModelConfig model;
  TrainConfig pretrain = TrainConfig::pretrain_defaults();
  TrainConfig finetune = TrainConfig::finetune_defaults();

  /// Propagates the run seed into both training sections.
  void sync_seed() {
    pretrain.seed = seed;
    finetune.seed = seed;
  }

  void check() const {
    model.check();
    pretrain.check();
    finetune.check();
    if (num_classes < 2)
      throw ConfigError("num_classes must be >= 2");
  }
};

namespace detail {

/// Reads the keys of one JSON object, remembering which were consumed so
/// that leftovers can be reported.
class StrictObject {
public:
  StrictObject(const nlohmann::json &j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(where() + " must be a JSON object");
  }

  template <class T> void get(const char *key, T &out) {
    auto it = j_.find(key);
    seen_.insert(key);
    if (it == j_.end())
      return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception &) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }

  const nlohmann::json *child(const char *key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string &key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown config key '" + qualified(it.key()) + "'");
  }

private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  const nlohmann::json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_layers(const nlohmann::json &j, const std::string &path,
                        int &depth, int &dim, int &heads, int &mlp_ratio) {
  StrictObject o(j, path);
  o.get("depth", depth);
  o.get("dim", dim);
  o.get("heads", heads);
  o.get("mlp_ratio", mlp_ratio);
  o.finish();
}

inline void read_model(const nlohmann::json &j, ModelConfig &m) {
  StrictObject o(j, "model");
  if (auto *p = o.child("encoder_preset"))
    m.encoder = EncoderConfig::preset(p->get<std::string>());
  if (auto *g = o.child("geometry")) {
    StrictObject go(*g, "model.geometry");
    go.get("image", m.geometry.image);
    go.get("volume", m.geometry.volume);
    go.get("channels_2d", m.geometry.channels_2d);
    go.get("channels_3d", m.geometry.channels_3d);
    go.finish();
  }
  if (auto *p = o.child("patch")) {
    StrictObject po(*p, "model.patch");
    po.get("patch_2d", m.patch.patch_2d);
    po.get("patch_3d", m.patch.patch_3d);
    po.finish();
  }
  if (auto *e = o.child("encoder"))
    read_layers(*e, "model.encoder", m.encoder.depth, m.encoder.dim,
                m.encoder.heads, m.encoder.mlp_ratio);
  if (auto *d = o.child("decoder"))
    read_layers(*d, "model.decoder", m.decoder.depth, m.decoder.dim,
                m.decoder.heads, m.decoder.mlp_ratio);
  o.get("intensity_decoder", m.intensity_decoder);
  o.get("edge_decoder", m.edge_decoder);
  o.get("share_mask_token", m.share_mask_token);
  o.get("pooling", m.pooling);
  o.finish();
  m.patch.embed_dim = m.encoder.dim;
}

inline void read_augment(const nlohmann::json &j, const std::string &path,
                         AugmentationPolicy &p) {
  StrictObject o(j, path);
  o.get("jitter_strength", p.jitter_strength);
  o.get("grayscale_prob", p.grayscale_prob);
  o.get("crop_scale", p.crop_scale);
  o.get("hflip_prob", p.hflip_prob);
  o.get("jitter_enabled", p.jitter_enabled);
  o.get("grayscale_enabled", p.grayscale_enabled);
  o.get("crop_enabled", p.crop_enabled);
  o.get("hflip_enabled", p.hflip_enabled);
  o.finish();
}

inline void read_train(const nlohmann::json &j, const std::string &path,
                       TrainConfig &c) {
  StrictObject o(j, path);
  o.get("epochs", c.epochs);
  o.get("steps", c.steps);
  o.get("lr", c.lr);
  o.get("weight_decay", c.weight_decay);
  o.get("warmup_fraction", c.warmup_fraction);
  if (c.stage == Stage::P)
    o.get("alpha", c.alpha);
  o.get("batch_size_2d", c.batch.batch_size_2d);
  o.get("batch_size_3d", c.batch.batch_size_3d);
  std::string interleave = to_string(c.batch.interleave);
  o.get("interleave", interleave);
  c.batch.interleave = parse_interleave(interleave);
  if (c.stage == Stage::P) {
    o.get("lambda_i", c.loss.lambda_i);
    o.get("lambda_e", c.loss.lambda_e);
    o.get("slice_axis", c.slice_axis);
    o.get("checkpoint_every", c.checkpoint_every);
  } else {
    o.get("freeze_encoder", c.freeze_encoder);
  }
  if (auto *a = o.child("augment"))
    read_augment(*a, path + ".augment", c.augment);
  o.get("augment_enabled", c.augment_enabled);
  o.get("use_2d", c.use_2d);
  o.get("use_3d", c.use_3d);
  o.finish();
}

inline nlohmann::json train_section(const TrainConfig &c) {
  nlohmann::json j = to_json(c);
  j.erase("stage");
  j.erase("seed");
  if (c.stage == Stage::D) {
    for (const char *k : {"alpha", "lambda_i", "lambda_e", "slice_axis",
                          "checkpoint_every"})
      j.erase(k);
  } else {
    j.erase("freeze_encoder");
  }
  return j;
}

} // namespace detail

/// Overlays a JSON document onto `base`. Every key is optional; unknown keys
/// raise ConfigError naming the dotted path.
inline RunConfig apply_config(const nlohmann::json &j, RunConfig base = {}) {
  detail::StrictObject o(j, "");
  o.get("seed", base.seed);
  o.get("manifest", base.manifest);
  o.get("runs_dir", base.runs_dir);
  o.get("num_classes", base.num_classes);
  if (auto *m = o.child("model"))
    detail::read_model(*m, base.model);
  if (auto *p = o.child("pretrain"))
    detail::read_train(*p, "pretrain", base.pretrain);
  if (auto *f = o.child("finetune"))
    detail::read_train(*f, "finetune", base.finetune);
  o.finish();
  base.sync_seed();
  return base;
}

inline RunConfig read_run_config(const std::filesystem::path &path,
                                 RunConfig base = {}) {
  std::ifstream f(path);
  if (!f)
    throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error &e) {
    throw ConfigError("config file '" + path.string() +
                      "' is not valid JSON: " + e.what());
  }
  return apply_config(j, std::move(base));
}

/// Fully resolved document; feeding it back through apply_config yields the
/// same RunConfig.
inline nlohmann::json to_json(const RunConfig &c) {
  nlohmann::json model = c.model;
  model.erase("num_classes");
  model["patch"].erase("embed_dim");
  return {{"seed", c.seed},
          {"manifest", c.manifest},
          {"runs_dir", c.runs_dir},
          {"num_classes", c.num_classes},
          {"model", model},
          {"pretrain", detail::train_section(c.pretrain)},
          {"finetune", detail::train_section(c.finetune)}};
}

} // namespace uni4eye
