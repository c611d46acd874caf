// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Binary checkpoint container and stage P -> stage D weight transfer.
 *
 * Layout (all integers little-endian; see docs/formats.md):
 *
 *   "U4EYECKP"                 8-byte magic
 *   u32 version
 *   u64 n, n bytes             config JSON (compact)
 *   u64 n, n bytes             state JSON {"step", "rng"}
 *   u64 hash                   FNV-1a 64 over config, state and all blocks
 *   u32 count
 *   count x block:
 *     u32 n, n bytes           tensor name
 *     u32 rank, rank x u64     shape
 *     prod(shape) x f32        values, row-major
 */
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uni4eye/common.hpp"
#include "uni4eye/network.hpp"
#include "uni4eye/optim.hpp"

namespace uni4eye {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : shape)
      n *= d;
    return n;
  }
  bool operator==(const Tensor &) const = default;
};

struct Checkpoint {
  static constexpr char kMagic[8] = {'U', '4', 'E', 'Y', 'E', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json config; ///< {"model": ModelConfig, "train": ...}
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<Tensor> tensors; ///< model tensors then "adam.m.*"/"adam.v.*"

  ModelConfig model_config() const {
    return config.at("model").get<ModelConfig>();
  }

  const Tensor *find(const std::string &name) const {
    for (const auto &t : tensors)
      if (t.name == name)
        return &t;
    return nullptr;
  }
};

namespace detail {

template <class T> void put(std::string &out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
public:
  Reader(const std::string &buf, std::string what)
      : buf_(buf), what_(std::move(what)) {}

  template <class T> T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

private:
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_)
      throw IoError(what_ + ": truncated checkpoint");
  }
  const std::string &buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string encode_blocks(const std::vector<Tensor> &ts) {
  std::string out;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  for (const auto &t : ts) {
    if (t.data.size() != t.numel())
      throw ShapeError("tensor '" + t.name + "' payload does not match shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape)
      put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char *>(t.data.data()),
               t.data.size() * sizeof(float));
  }
  return out;
}

} // namespace detail

inline std::string serialize(const Checkpoint &c) {
  const std::string cfg = c.config.dump();
  const std::string state =
      nlohmann::json{{"step", c.step}, {"rng", c.rng_state}}.dump();
  const std::string blocks = detail::encode_blocks(c.tensors);
  Fnv1a64 h;
  h.update(cfg);
  h.update(state);
  h.update(blocks);

  std::string out(Checkpoint::kMagic, sizeof(Checkpoint::kMagic));
  detail::put<std::uint32_t>(out, Checkpoint::kVersion);
  detail::put<std::uint64_t>(out, cfg.size());
  out += cfg;
  detail::put<std::uint64_t>(out, state.size());
  out += state;
  detail::put<std::uint64_t>(out, h.digest());
  out += blocks;
  return out;
}

inline Checkpoint deserialize(const std::string &buf,
                              const std::string &what = "checkpoint") {
  detail::Reader r(buf, what);
  if (r.bytes(8) != std::string(Checkpoint::kMagic, 8))
    throw IoError(what + ": bad magic (not a checkpoint file)");
  auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw IoError(what + ": unsupported checkpoint version " +
                  std::to_string(version));
  const std::string cfg = r.bytes(r.get<std::uint64_t>());
  const std::string state = r.bytes(r.get<std::uint64_t>());
  const auto stored_hash = r.get<std::uint64_t>();
  const std::size_t blocks_at = r.pos();

  Checkpoint c;
  auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k)
      t.shape.push_back(r.get<std::uint64_t>());
    std::string raw = r.bytes(t.numel() * sizeof(float));
    t.data.resize(t.numel());
    std::memcpy(t.data.data(), raw.data(), raw.size());
    c.tensors.push_back(std::move(t));
  }
  if (!r.done())
    throw IoError(what + ": trailing bytes after tensor blocks");

  Fnv1a64 h;
  h.update(cfg);
  h.update(state);
  h.update(std::string_view(buf).substr(blocks_at));
  if (h.digest() != stored_hash)
    throw IoError(what + ": hash mismatch (file corrupted or edited)");

  try {
    c.config = nlohmann::json::parse(cfg);
    auto s = nlohmann::json::parse(state);
    c.step = s.at("step").get<std::uint64_t>();
    c.rng_state = s.at("rng").get<std::string>();
  } catch (const nlohmann::json::exception &e) {
    throw IoError(what + ": malformed header JSON: " + e.what());
  }
  return c;
}

inline void save_checkpoint(const Checkpoint &c,
                            const std::filesystem::path &path) {
  const std::string bytes = serialize(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw IoError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f)
    throw IoError("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str(), path.string());
}

inline std::string shape_string(const Tensor &t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(t.shape[i]);
  return s + "]";
}

template <class S> Tensor to_tensor(const std::string &name, const Mat<S> &m) {
  Tensor t;
  t.name = name;
  t.shape = {static_cast<std::uint64_t>(m.rows()),
             static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

template <class S> void assign_tensor(Mat<S> &dst, const Tensor &t) {
  if (t.shape.size() != 2 || t.shape[0] != static_cast<std::uint64_t>(dst.rows()) ||
      t.shape[1] != static_cast<std::uint64_t>(dst.cols()))
    throw ShapeError("tensor '" + t.name + "' has shape " + shape_string(t) +
                     ", expected [" + std::to_string(dst.rows()) + "," +
                     std::to_string(dst.cols()) + "]");
  for (Eigen::Index i = 0; i < dst.size(); ++i)
    dst.data()[i] = static_cast<S>(t.data[static_cast<std::size_t>(i)]);
}

/// Snapshot of a model (and optionally its optimizer moments).
template <class S>
Checkpoint make_checkpoint(Model<S> &m, const nlohmann::json &train_config,
                           std::uint64_t step, const std::string &rng_state,
                           const AdamW<S> *opt = nullptr) {
  Checkpoint c;
  c.config = {{"model", m.config}, {"train", train_config}};
  c.step = step;
  c.rng_state = rng_state;
  auto ps = m.params();
  for (auto *p : ps)
    c.tensors.push_back(to_tensor(p->name, p->value));
  if (opt && !opt->first_moments().empty()) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      c.tensors.push_back(to_tensor("adam.m." + ps[i]->name, opt->first_moments()[i]));
    for (std::size_t i = 0; i < ps.size(); ++i)
      c.tensors.push_back(to_tensor("adam.v." + ps[i]->name, opt->second_moments()[i]));
  }
  return c;
}

/// Rebuilds the exact model stored in a checkpoint.
template <class S> Model<S> model_from_checkpoint(const Checkpoint &c) {
  Model<S> m = Model<S>::create(c.model_config(), 0);
  for (auto *p : m.params()) {
    const Tensor *t = c.find(p->name);
    if (!t)
      throw ShapeError("checkpoint is missing tensor '" + p->name + "'");
    assign_tensor(p->value, *t);
  }
  return m;
}

inline std::string rng_state_string(const Rng &rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

inline Rng rng_from_state(const std::string &s) {
  Rng rng;
  std::istringstream ss(s);
  ss >> rng;
  if (!ss)
    throw IoError("malformed RNG state in checkpoint");
  return rng;
}

struct TransferReport {
  std::vector<std::string> loaded;
  std::vector<std::string> dropped;
  std::vector<std::string> fresh;
};

inline bool transferable(const std::string &name) {
  return name.rfind("upe.", 0) == 0 || name.rfind("encoder.", 0) == 0;
}

/// Stage-D model from a stage-P checkpoint: UPE and encoder copied bitwise,
/// decoders and mask tokens dropped, a new head of `num_classes` outputs.
/// `requested` defaults to the checkpoint's own geometry and encoder.
template <class S>
Model<S> transfer(const Checkpoint &ckpt, int num_classes, std::uint64_t seed,
                  TransferReport *report = nullptr,
                  std::optional<ModelConfig> requested = std::nullopt) {
  ModelConfig cfg = requested ? *requested : ckpt.model_config();
  cfg.intensity_decoder = false;
  cfg.edge_decoder = false;
  cfg.num_classes = num_classes;
  Model<S> m = Model<S>::create(cfg, seed);
  TransferReport rep;
  for (auto *p : m.params()) {
    if (!transferable(p->name)) {
      rep.fresh.push_back(p->name);
      continue;
    }
    const Tensor *t = ckpt.find(p->name);
    if (!t)
      throw ShapeError("transfer: checkpoint has no tensor '" + p->name + "'");
    assign_tensor(p->value, *t);
    rep.loaded.push_back(p->name);
  }
  for (const auto &t : ckpt.tensors)
    if (!transferable(t.name) && t.name.rfind("adam.", 0) != 0)
      rep.dropped.push_back(t.name);
  if (report)
    *report = std::move(rep);
  return m;
}

} // namespace uni4eye
