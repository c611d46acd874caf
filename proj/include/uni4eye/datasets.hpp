// SPDX-License-Identifier: Apache-2.0
/**
 * @file   datasets.hpp
 * @brief  Corpus manifests, the synthetic fundus-like corpus generator and
 *         the dimension-homogeneous batch scheduler.
 */
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uni4eye/common.hpp"
#include "uni4eye/imaging.hpp"

namespace uni4eye {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
  case Split::train:
    return "train";
  case Split::val:
    return "val";
  case Split::test:
    return "test";
  }
  return "train";
}

inline Split parse_split(const std::string &s) {
  if (s == "train")
    return Split::train;
  if (s == "val")
    return Split::val;
  if (s == "test")
    return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

/// 70/15/15 split from the id alone.
inline Split split_for_id(const std::string &id) {
  auto bucket = fnv1a64(id) % 100;
  if (bucket < 70)
    return Split::train;
  if (bucket < 85)
    return Split::val;
  return Split::test;
}

struct ManifestEntry {
  std::string id;
  std::string path; ///< relative to the manifest directory unless absolute
  int dims = 2;
  std::optional<int> label;
  Split split = Split::train;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;
  std::filesystem::path root; ///< directory relative paths resolve against

  std::filesystem::path resolve(const ManifestEntry &e) const {
    std::filesystem::path p(e.path);
    return p.is_absolute() ? p : root / p;
  }

  std::vector<std::size_t> select(Split split, bool use_2d = true,
                                  bool use_3d = true) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto &e = entries[i];
      if (e.split == split && ((e.dims == 2 && use_2d) || (e.dims == 3 && use_3d)))
        out.push_back(i);
    }
    return out;
  }

  void check() const {
    std::set<std::string> ids;
    for (const auto &e : entries) {
      if (!ids.insert(e.id).second)
        throw ConfigError("manifest: duplicate id '" + e.id + "'");
      if (e.dims != 2 && e.dims != 3)
        throw ConfigError("manifest: entry '" + e.id +
                          "' has dimensionality other than 2 or 3");
      if (e.label && !class_names.empty() &&
          (*e.label < 0 || *e.label >= static_cast<int>(class_names.size())))
        throw ConfigError("manifest: label of '" + e.id +
                          "' does not index class_names");
    }
  }
};

inline nlohmann::json to_json(const Manifest &m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto &e : m.entries) {
    nlohmann::json j = {{"id", e.id},
                        {"path", e.path},
                        {"dimensionality", e.dims},
                        {"split", to_string(e.split)}};
    j["label"] = e.label ? nlohmann::json(*e.label) : nlohmann::json(nullptr);
    entries.push_back(std::move(j));
  }
  return {{"class_names", m.class_names}, {"entries", entries}};
}

inline Manifest manifest_from_json(const nlohmann::json &j,
                                   const std::filesystem::path &root) {
  Manifest m;
  m.root = root;
  try {
    if (j.contains("class_names"))
      m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto &je : j.at("entries")) {
      ManifestEntry e;
      e.id = je.at("id").get<std::string>();
      e.path = je.at("path").get<std::string>();
      e.dims = je.at("dimensionality").get<int>();
      if (je.contains("label") && !je.at("label").is_null())
        e.label = je.at("label").get<int>();
      e.split = parse_split(je.value("split", "train"));
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  m.check();
  return m;
}

inline Manifest read_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("manifest '" + path.string() + "' is not JSON: " +
                      e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void write_manifest(const std::filesystem::path &path,
                           const Manifest &m) {
  std::ofstream out(path);
  out << to_json(m).dump(2) << "\n";
  if (!out)
    throw IoError("cannot write manifest '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthOptions {
  std::uint64_t seed = 0;
  int n_2d = 0;
  int n_3d = 0;
  Geometry geometry{{64, 64}, {32, 64, 32}, 3, 1};
  double lesion_prob = 0.5;
  /// When set, the first n entries (2D then 3D, by index) go to train, the
  /// next to val, the rest to test. Otherwise splits come from id hashes.
  std::optional<std::array<int, 3>> split_counts;
};

namespace detail {

inline Rng sample_rng(std::uint64_t seed, int kind, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(kind),
                    static_cast<std::uint32_t>(index)};
  return Rng(seq);
}

struct Rgb {
  float r, g, b;
};

inline void blend(ImageSample &img, int y, int x, Rgb c, float a) {
  if (y < 0 || x < 0 || y >= img.height || x >= img.width || a <= 0.0f)
    return;
  a = std::min(a, 1.0f);
  const float cv[3] = {c.r, c.g, c.b};
  for (int ch = 0; ch < img.channels; ++ch) {
    float &v = img.at(ch, y, x);
    v = v * (1.0f - a) + cv[ch % 3] * a;
  }
}

/// Soft-edged filled disc.
inline void stamp_disc(ImageSample &img, double cy, double cx, double radius,
                       Rgb c, float opacity) {
  int y0 = static_cast<int>(std::floor(cy - radius - 1));
  int y1 = static_cast<int>(std::ceil(cy + radius + 1));
  int x0 = static_cast<int>(std::floor(cx - radius - 1));
  int x1 = static_cast<int>(std::ceil(cx + radius + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
      float cover = static_cast<float>(std::clamp(radius + 0.5 - d, 0.0, 1.0));
      blend(img, y, x, c, cover * opacity);
    }
}

/// Darkens pixels along a cubic Bezier curve of the given half-width.
inline void draw_vessel(ImageSample &img, std::array<double, 8> pts,
                        double half_width, float darkness) {
  const int steps = 4 * (img.height + img.width);
  std::vector<float> mask(static_cast<std::size_t>(img.height) * img.width,
                          0.0f);
  for (int s = 0; s <= steps; ++s) {
    double t = static_cast<double>(s) / steps;
    double u = 1.0 - t;
    double b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t,
           b3 = t * t * t;
    double y = b0 * pts[0] + b1 * pts[2] + b2 * pts[4] + b3 * pts[6];
    double x = b0 * pts[1] + b1 * pts[3] + b2 * pts[5] + b3 * pts[7];
    double w = half_width * (1.0 - 0.5 * t);
    int yi0 = static_cast<int>(std::floor(y - w - 1));
    int xi0 = static_cast<int>(std::floor(x - w - 1));
    for (int yy = yi0; yy <= yi0 + static_cast<int>(2 * w + 3); ++yy)
      for (int xx = xi0; xx <= xi0 + static_cast<int>(2 * w + 3); ++xx) {
        if (yy < 0 || xx < 0 || yy >= img.height || xx >= img.width)
          continue;
        double d = std::hypot(yy + 0.5 - y, xx + 0.5 - x);
        float cover = static_cast<float>(std::clamp(w + 0.5 - d, 0.0, 1.0));
        float &m = mask[static_cast<std::size_t>(yy) * img.width + xx];
        m = std::max(m, cover);
      }
  }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float m = mask[static_cast<std::size_t>(y) * img.width + x];
      if (m <= 0.0f)
        continue;
      for (int c = 0; c < img.channels; ++c)
        img.at(c, y, x) *= 1.0f - darkness * m;
    }
}

/// Fundus-like RGB picture: illuminated disc, dark vessels, optional bright
/// lesion. Returns whether a lesion was drawn.
inline bool paint_fundus(ImageSample &img, Rng &rng, double lesion_prob) {
  const int h = img.height, w = img.width;
  const double cy = h / 2.0 + uniform(rng, -0.03, 0.03) * h;
  const double cx = w / 2.0 + uniform(rng, -0.03, 0.03) * w;
  const double radius = 0.46 * std::min(h, w) * uniform(rng, 0.92, 1.0);
  Rgb base{static_cast<float>(uniform(rng, 0.65, 0.85)),
           static_cast<float>(uniform(rng, 0.28, 0.42)),
           static_cast<float>(uniform(rng, 0.08, 0.18))};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx) / radius;
      float cover = static_cast<float>(
          std::clamp((1.0 - d) * radius + 0.5, 0.0, 1.0));
      float shade = static_cast<float>(1.0 - 0.45 * d * d);
      blend(img, y, x, {base.r * shade, base.g * shade, base.b * shade},
            cover);
    }

  const double scale = std::min(h, w) / 64.0;
  std::uniform_int_distribution<int> n_vessels(3, 12);
  int nv = n_vessels(rng);
  for (int v = 0; v < nv; ++v) {
    double a0 = uniform(rng, 0.0, 2.0 * 3.14159265358979);
    double r0 = uniform(rng, 0.0, 0.25) * radius;
    std::array<double, 8> pts{};
    pts[0] = cy + r0 * std::sin(a0);
    pts[1] = cx + r0 * std::cos(a0);
    for (int k = 1; k < 4; ++k) {
      double a = a0 + uniform(rng, -0.6, 0.6);
      double r = radius * (0.25 + 0.3 * k) * uniform(rng, 0.8, 1.1);
      pts[2 * k] = cy + r * std::sin(a);
      pts[2 * k + 1] = cx + r * std::cos(a);
    }
    draw_vessel(img, pts, uniform(rng, 0.5, 1.3) * scale,
                static_cast<float>(uniform(rng, 0.45, 0.7)));
  }

  bool lesion = bernoulli(rng, lesion_prob);
  if (lesion) {
    double lr = uniform(rng, 0.07, 0.11) * std::min(h, w);
    double ang = uniform(rng, 0.0, 2.0 * 3.14159265358979);
    double dist = uniform(rng, 0.0, 0.6) * radius;
    stamp_disc(img, cy + dist * std::sin(ang), cx + dist * std::cos(ang), lr,
               {0.97f, 0.9f, 0.45f}, 1.0f);
  }
  for (float &v : img.data)
    v = std::clamp(v + static_cast<float>(uniform(rng, -0.015, 0.015)), 0.0f,
                   1.0f);
  return lesion;
}

/// Volume made of perturbed copies of one generated grayscale slice.
inline bool paint_volume(ImageSample &vol, Rng &rng, double lesion_prob) {
  ImageSample rgb = make_image(3, vol.height, vol.width);
  bool lesion = paint_fundus(rgb, rng, lesion_prob);
  for (int z = 0; z < vol.depth; ++z) {
    int dy = static_cast<int>(std::lround(uniform(rng, -1.0, 1.0)));
    int dx = static_cast<int>(std::lround(uniform(rng, -1.0, 1.0)));
    float gain = static_cast<float>(uniform(rng, 0.9, 1.1));
    for (int y = 0; y < vol.height; ++y)
      for (int x = 0; x < vol.width; ++x) {
        int sy = std::clamp(y + dy, 0, vol.height - 1);
        int sx = std::clamp(x + dx, 0, vol.width - 1);
        float l = luma(rgb.at(0, sy, sx), rgb.at(1, sy, sx), rgb.at(2, sy, sx));
        float n = static_cast<float>(uniform(rng, -0.02, 0.02));
        vol.at(0, z, y, x) = std::clamp(l * gain + n, 0.0f, 1.0f);
      }
  }
  return lesion;
}

inline std::string padded(const char *prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d", prefix, i);
  return buf;
}

} // namespace detail

/// Writes `<out_dir>/images/*.png`, `<out_dir>/volumes/*.{raw,json}` and
/// `<out_dir>/manifest.json`. Sample k depends only on (seed, kind, k).
inline Manifest synth_corpus(const SynthOptions &opt,
                             const std::filesystem::path &out_dir) {
  if (opt.n_2d < 0 || opt.n_3d < 0)
    throw ConfigError("synth_corpus: counts must be non-negative");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  Manifest m;
  m.root = out_dir;
  m.class_names = {"no_lesion", "lesion"};
  if (opt.n_2d > 0)
    fs::create_directories(out_dir / "images");
  if (opt.n_3d > 0)
    fs::create_directories(out_dir / "volumes");

  const auto &g = opt.geometry;
  for (int i = 0; i < opt.n_2d; ++i) {
    Rng rng = detail::sample_rng(opt.seed, 2, i);
    ImageSample img = make_image(3, g.image[0], g.image[1]);
    bool lesion = detail::paint_fundus(img, rng, opt.lesion_prob);
    ManifestEntry e;
    e.id = detail::padded("img", i);
    e.path = "images/" + e.id + ".png";
    e.dims = 2;
    e.label = lesion ? 1 : 0;
    write_png(out_dir / e.path, img);
    m.entries.push_back(std::move(e));
  }
  for (int i = 0; i < opt.n_3d; ++i) {
    Rng rng = detail::sample_rng(opt.seed, 3, i);
    ImageSample vol = make_volume(1, g.volume[0], g.volume[1], g.volume[2]);
    bool lesion = detail::paint_volume(vol, rng, opt.lesion_prob);
    ManifestEntry e;
    e.id = detail::padded("vol", i);
    e.path = "volumes/" + e.id + ".raw";
    e.dims = 3;
    e.label = lesion ? 1 : 0;
    write_raw_volume(out_dir / e.path, vol);
    m.entries.push_back(std::move(e));
  }

  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    auto &e = m.entries[i];
    if (opt.split_counts) {
      auto [tr, va, te] = *opt.split_counts;
      (void)te;
      int k = static_cast<int>(i);
      e.split = k < tr ? Split::train : k < tr + va ? Split::val : Split::test;
    } else {
      e.split = split_for_id(e.id);
    }
  }
  if (!m.entries.empty())
    write_manifest(out_dir / "manifest.json", m);
  return m;
}

// ---------------------------------------------------------------------------
// Batch scheduling

enum class Interleave { proportional, phased };

inline Interleave parse_interleave(const std::string &s) {
  if (s == "proportional")
    return Interleave::proportional;
  if (s == "phased")
    return Interleave::phased;
  throw ConfigError("unknown interleave '" + s +
                    "' (expected proportional or phased)");
}

inline std::string to_string(Interleave i) {
  return i == Interleave::proportional ? "proportional" : "phased";
}

struct BatchSpec {
  int batch_size_2d = 64;
  int batch_size_3d = 4;
  Interleave interleave = Interleave::proportional;

  void check() const {
    if (batch_size_2d < 1 || batch_size_3d < 1)
      throw ConfigError("batch sizes must be >= 1");
  }
};

struct Batch {
  int dims = 2;
  std::vector<std::size_t> indices; ///< into Manifest::entries
};

/// One epoch of dimension-homogeneous batches over `pool` (manifest entry
/// indices). Each entry appears exactly once; ragged tail batches are kept.
inline std::vector<Batch> schedule_batches(const Manifest &m,
                                           const std::vector<std::size_t> &pool,
                                           const BatchSpec &spec, Rng &rng) {
  spec.check();
  std::vector<std::size_t> two, three;
  for (auto i : pool)
    (m.entries.at(i).dims == 2 ? two : three).push_back(i);
  if (two.empty() && three.empty())
    throw ConfigError("schedule_batches: no samples to schedule");
  std::shuffle(two.begin(), two.end(), rng);
  std::shuffle(three.begin(), three.end(), rng);

  auto chunk = [](const std::vector<std::size_t> &ids, int size, int dims) {
    std::vector<Batch> out;
    for (std::size_t s = 0; s < ids.size(); s += size) {
      Batch b;
      b.dims = dims;
      b.indices.assign(ids.begin() + s,
                       ids.begin() + std::min(ids.size(), s + size));
      out.push_back(std::move(b));
    }
    return out;
  };
  auto b2 = chunk(two, spec.batch_size_2d, 2);
  auto b3 = chunk(three, spec.batch_size_3d, 3);

  std::vector<Batch> out;
  out.reserve(b2.size() + b3.size());
  if (spec.interleave == Interleave::phased) {
    out = std::move(b2);
    std::move(b3.begin(), b3.end(), std::back_inserter(out));
    return out;
  }
  // Uniformly random merge: every ordering of the two batch lists is
  // equally likely, so the mix stays proportional throughout the epoch.
  std::size_t i2 = 0, i3 = 0;
  while (i2 < b2.size() || i3 < b3.size()) {
    std::size_t r2 = b2.size() - i2, r3 = b3.size() - i3;
    bool take2 = r3 == 0 ||
                 (r2 > 0 && uniform01(rng) * static_cast<double>(r2 + r3) <
                                static_cast<double>(r2));
    out.push_back(take2 ? std::move(b2[i2++]) : std::move(b3[i3++]));
  }
  return out;
}

inline std::vector<Batch> schedule_batches(const Manifest &m,
                                           const BatchSpec &spec, Rng &rng,
                                           Split split = Split::train) {
  return schedule_batches(m, m.select(split), spec, rng);
}

/// Loads manifest samples on demand and keeps them in memory.
class SampleStore {
public:
  SampleStore(const Manifest &m, Geometry g) : manifest_(&m), geometry_(g) {}

  const ImageSample &get(std::size_t index) {
    auto it = cache_.find(index);
    if (it != cache_.end())
      return it->second;
    const auto &e = manifest_->entries.at(index);
    ImageSample s = load_sample(manifest_->resolve(e), e.dims, geometry_);
    s.id = e.id;
    s.label = e.label;
    return cache_.emplace(index, std::move(s)).first->second;
  }

  const Manifest &manifest() const { return *manifest_; }
  const Geometry &geometry() const { return geometry_; }

private:
  const Manifest *manifest_;
  Geometry geometry_;
  std::map<std::size_t, ImageSample> cache_;
};

} // namespace uni4eye
