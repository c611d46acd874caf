// SPDX-License-Identifier: Apache-2.0
/**
 * @file   imaging.hpp
 * @brief  Image / volume samples, file loading, augmentation and the Sobel
 *         gradient-map reconstruction target.
 *
 * Samples store voxels as C x D x H x W floats in [0, 1]. A 2D image is the
 * D == 1 case with dims == 2.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "uni4eye/common.hpp"

namespace uni4eye {

struct ImageSample {
  int dims = 2; ///< 2 for images, 3 for volumes
  int channels = 1;
  int depth = 1; ///< always 1 when dims == 2
  int height = 0;
  int width = 0;
  std::vector<float> data;
  std::optional<int> label;
  std::string id;

  std::size_t voxels() const {
    return static_cast<std::size_t>(depth) * height * width;
  }
  std::size_t index(int c, int z, int y, int x) const {
    return ((static_cast<std::size_t>(c) * depth + z) * height + y) * width +
           x;
  }
  float &at(int c, int z, int y, int x) { return data[index(c, z, y, x)]; }
  float at(int c, int z, int y, int x) const {
    return data[index(c, z, y, x)];
  }
  float &at(int c, int y, int x) { return at(c, 0, y, x); }
  float at(int c, int y, int x) const { return at(c, 0, y, x); }

  bool same_shape(const ImageSample &o) const {
    return dims == o.dims && channels == o.channels && depth == o.depth &&
           height == o.height && width == o.width;
  }
};

inline ImageSample make_image(int channels, int height, int width,
                              float fill = 0.0f) {
  ImageSample s;
  s.dims = 2;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.data.assign(static_cast<std::size_t>(channels) * height * width, fill);
  return s;
}

inline ImageSample make_volume(int channels, int depth, int height, int width,
                               float fill = 0.0f) {
  ImageSample s;
  s.dims = 3;
  s.channels = channels;
  s.depth = depth;
  s.height = height;
  s.width = width;
  s.data.assign(static_cast<std::size_t>(channels) * depth * height * width,
                fill);
  return s;
}

/// Throws if the sample violates its invariants (finite values in [0,1],
/// dimensionality tag consistent with the grid).
inline void validate(const ImageSample &s) {
  if (s.dims != 2 && s.dims != 3)
    throw ShapeError("sample '" + s.id + "': dimensionality must be 2 or 3");
  if (s.dims == 2 && s.depth != 1)
    throw ShapeError("sample '" + s.id + "': 2D sample with depth != 1");
  if (s.channels < 1 || s.depth < 1 || s.height < 1 || s.width < 1)
    throw ShapeError("sample '" + s.id + "': empty grid");
  if (s.data.size() != s.voxels() * s.channels)
    throw ShapeError("sample '" + s.id + "': payload size mismatch");
  for (float v : s.data)
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw Error("sample '" + s.id + "': value outside [0,1] or non-finite");
}

/// Canonical spatial shapes every loaded sample is resized to.
struct Geometry {
  std::array<int, 2> image{224, 224};      ///< H, W
  std::array<int, 3> volume{112, 224, 112}; ///< D, H, W
  int channels_2d = 3;
  int channels_3d = 1;

  int channels(int dims) const { return dims == 2 ? channels_2d : channels_3d; }
};

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

/// Linear resampling of one axis. `src_start`/`src_len` select a window of
/// the source axis that is stretched onto `dst_len` output positions using
/// half-pixel centres.
struct AxisMap {
  std::vector<int> lo, hi;
  std::vector<float> w;
};

inline AxisMap axis_map(int src_size, double src_start, double src_len,
                        int dst_len) {
  AxisMap m;
  m.lo.resize(dst_len);
  m.hi.resize(dst_len);
  m.w.resize(dst_len);
  double scale = src_len / dst_len;
  for (int i = 0; i < dst_len; ++i) {
    double src = src_start + (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(src_size - 1));
    int l = static_cast<int>(std::floor(src));
    int h = std::min(l + 1, src_size - 1);
    m.lo[i] = l;
    m.hi[i] = h;
    m.w[i] = static_cast<float>(src - l);
  }
  return m;
}

inline bool is_identity(const AxisMap &m, int src_size) {
  if (static_cast<int>(m.lo.size()) != src_size)
    return false;
  for (int i = 0; i < src_size; ++i)
    if (m.lo[i] != i || m.w[i] != 0.0f)
      return false;
  return true;
}

/// Resample along axis `axis` (1 = D, 2 = H, 3 = W of C x D x H x W).
inline ImageSample resample_axis(const ImageSample &in, int axis,
                                 const AxisMap &m) {
  ImageSample out = in;
  int n = static_cast<int>(m.lo.size());
  if (axis == 1)
    out.depth = n;
  else if (axis == 2)
    out.height = n;
  else
    out.width = n;
  out.data.assign(out.voxels() * out.channels, 0.0f);
  for (int c = 0; c < out.channels; ++c)
    for (int z = 0; z < out.depth; ++z)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
          int i = axis == 1 ? z : axis == 2 ? y : x;
          int zl = z, zh = z, yl = y, yh = y, xl = x, xh = x;
          if (axis == 1) {
            zl = m.lo[i];
            zh = m.hi[i];
          } else if (axis == 2) {
            yl = m.lo[i];
            yh = m.hi[i];
          } else {
            xl = m.lo[i];
            xh = m.hi[i];
          }
          float a = in.at(c, zl, yl, xl);
          float b = in.at(c, zh, yh, xh);
          out.at(c, z, y, x) = a + (b - a) * m.w[i];
        }
  return out;
}

/// Separable linear resampling of a window [start, start+len) per axis.
inline ImageSample resample_window(const ImageSample &in,
                                   std::array<double, 3> start,
                                   std::array<double, 3> len,
                                   std::array<int, 3> out_shape) {
  ImageSample cur = in;
  std::array<int, 3> src{in.depth, in.height, in.width};
  for (int a = 0; a < 3; ++a) {
    AxisMap m = axis_map(src[a], start[a], len[a], out_shape[a]);
    if (is_identity(m, src[a]))
      continue;
    cur = resample_axis(cur, a + 1, m);
  }
  return cur;
}

} // namespace detail

/// Bilinear (2D) / trilinear (3D) resize with half-pixel centres.
inline ImageSample resize(const ImageSample &in, int depth, int height,
                          int width) {
  if (in.dims == 2 && depth != 1)
    throw ShapeError("resize: 2D sample cannot gain depth");
  return detail::resample_window(
      in, {0.0, 0.0, 0.0},
      {static_cast<double>(in.depth), static_cast<double>(in.height),
       static_cast<double>(in.width)},
      {depth, height, width});
}

inline ImageSample resize_to_canonical(const ImageSample &in,
                                       const Geometry &g) {
  if (in.dims == 2)
    return resize(in, 1, g.image[0], g.image[1]);
  return resize(in, g.volume[0], g.volume[1], g.volume[2]);
}

// ---------------------------------------------------------------------------
// File formats

/// Reads an 8-bit PNG as `channels` (1 or 3) planes scaled to [0,1].
inline ImageSample read_png(const std::filesystem::path &path,
                            int channels = 3) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  ImageSample s = make_image(channels, static_cast<int>(img.height),
                             static_cast<int>(img.width));
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < channels; ++c)
        s.at(c, y, x) =
            buf[(static_cast<std::size_t>(y) * s.width + x) * channels + c] /
            255.0f;
  return s;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Writes a 2D sample with 1 or 3 channels as an 8-bit PNG.
inline void write_png(const std::filesystem::path &path,
                      const ImageSample &s) {
  if (s.dims != 2 || (s.channels != 1 && s.channels != 3))
    throw ShapeError("write_png: need a 2D sample with 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(s.width);
  img.height = static_cast<png_uint_32>(s.height);
  img.format = s.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(static_cast<std::size_t>(s.width) * s.height *
                            s.channels);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c)
        buf[(static_cast<std::size_t>(y) * s.width + x) * s.channels + c] =
            to_byte(s.at(c, y, x));
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0,
                               nullptr))
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
}

inline std::filesystem::path sidecar_path(const std::filesystem::path &raw) {
  auto p = raw;
  return p.replace_extension(".json");
}

namespace detail {
inline float load_le_f32(const unsigned char *p) {
  std::uint32_t u;
  std::memcpy(&u, p, 4);
  if constexpr (std::endian::native == std::endian::big)
    u = ((u & 0xffu) << 24) | ((u & 0xff00u) << 8) | ((u >> 8) & 0xff00u) |
        (u >> 24);
  return std::bit_cast<float>(u);
}
inline void store_le_f32(float v, unsigned char *p) {
  auto u = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big)
    u = ((u & 0xffu) << 24) | ((u & 0xff00u) << 8) | ((u >> 8) & 0xff00u) |
        (u >> 24);
  std::memcpy(p, &u, 4);
}
} // namespace detail

/// Reads a raw little-endian float32 volume plus its JSON sidecar
/// `{"shape":[D,H,W],"dtype":"f32","order":"row-major"}`. Values already in
/// [0,1] are kept; otherwise the volume is min-max rescaled.
inline ImageSample read_raw_volume(const std::filesystem::path &raw) {
  auto meta_path = sidecar_path(raw);
  std::ifstream meta_in(meta_path);
  if (!meta_in)
    throw IoError("missing volume sidecar '" + meta_path.string() + "'");
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception &e) {
    throw IoError("malformed sidecar '" + meta_path.string() +
                  "': " + e.what());
  }
  if (!meta.contains("shape") || !meta["shape"].is_array() ||
      meta["shape"].size() != 3)
    throw IoError("sidecar '" + meta_path.string() +
                  "': shape must be [D,H,W]");
  if (meta.value("dtype", "f32") != "f32" ||
      meta.value("order", "row-major") != "row-major")
    throw IoError("sidecar '" + meta_path.string() +
                  "': only f32 row-major payloads are supported");
  std::array<long long, 3> shape{};
  for (int i = 0; i < 3; ++i) {
    shape[i] = meta["shape"][i].get<long long>();
    if (shape[i] < 1)
      throw IoError("sidecar '" + meta_path.string() +
                    "': non-positive extent");
  }

  std::ifstream in(raw, std::ios::binary);
  if (!in)
    throw IoError("cannot open volume '" + raw.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  auto expected = static_cast<std::size_t>(shape[0] * shape[1] * shape[2]);
  if (bytes.size() != expected * 4)
    throw ShapeError("volume '" + raw.string() + "': header declares " +
                     std::to_string(expected) + " floats but payload holds " +
                     std::to_string(bytes.size() / 4) +
                     (bytes.size() % 4 ? " (plus a partial float)" : ""));

  ImageSample s =
      make_volume(1, static_cast<int>(shape[0]), static_cast<int>(shape[1]),
                  static_cast<int>(shape[2]));
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (std::size_t i = 0; i < expected; ++i) {
    float v = detail::load_le_f32(bytes.data() + 4 * i);
    if (!std::isfinite(v))
      throw Error("volume '" + raw.string() + "': non-finite value at index " +
                  std::to_string(i));
    s.data[i] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo < 0.0f || hi > 1.0f) {
    float span = hi - lo;
    for (float &v : s.data)
      v = span > 0.0f ? (v - lo) / span : 0.0f;
  }
  return s;
}

/// Writes channel 0 of a volume as raw float32 plus JSON sidecar.
inline void write_raw_volume(const std::filesystem::path &raw,
                             const ImageSample &s) {
  if (s.dims != 3 || s.channels != 1)
    throw ShapeError("write_raw_volume: need a single-channel 3D sample");
  std::vector<unsigned char> bytes(s.data.size() * 4);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    detail::store_le_f32(s.data[i], bytes.data() + 4 * i);
  std::ofstream out(raw, std::ios::binary);
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("cannot write volume '" + raw.string() + "'");
  nlohmann::json meta = {{"shape", {s.depth, s.height, s.width}},
                         {"dtype", "f32"},
                         {"order", "row-major"}};
  std::ofstream m(sidecar_path(raw));
  m << meta.dump() << "\n";
  if (!m)
    throw IoError("cannot write sidecar for '" + raw.string() + "'");
}

/// Loads a PNG (target_dim 2) or raw volume (target_dim 3) and resizes it to
/// the canonical shape.
inline ImageSample load_sample(const std::filesystem::path &path,
                               int target_dim, const Geometry &geometry = {}) {
  if (!std::filesystem::exists(path))
    throw IoError("no such file '" + path.string() + "'");
  ImageSample s;
  if (target_dim == 2) {
    s = read_png(path, geometry.channels_2d);
  } else if (target_dim == 3) {
    s = read_raw_volume(path);
    if (geometry.channels_3d != 1)
      throw ConfigError("raw volumes carry exactly one channel");
  } else {
    throw ConfigError("target dimensionality must be 2 or 3");
  }
  s.id = path.stem().string();
  s = resize_to_canonical(s, geometry);
  for (float &v : s.data)
    v = std::clamp(v, 0.0f, 1.0f);
  return s;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentationPolicy {
  double jitter_strength = 0.4;
  double grayscale_prob = 0.2;
  std::array<double, 2> crop_scale{0.6, 1.0};
  double hflip_prob = 0.5;
  bool jitter_enabled = true;
  bool grayscale_enabled = true;
  bool crop_enabled = true;
  bool hflip_enabled = true;

  static AugmentationPolicy identity() {
    AugmentationPolicy p;
    p.jitter_strength = 0.0;
    p.grayscale_prob = 0.0;
    p.crop_scale = {1.0, 1.0};
    p.hflip_prob = 0.0;
    return p;
  }

  void check() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(jitter_strength) || !prob(grayscale_prob) || !prob(hflip_prob))
      throw ConfigError("augmentation probabilities must lie in [0,1]");
    if (!(crop_scale[0] > 0.0 && crop_scale[1] <= 1.0 &&
          crop_scale[0] <= crop_scale[1]))
      throw ConfigError("crop_scale must satisfy 0 < low <= high <= 1");
  }
};

constexpr double kLumaR = 0.299;
constexpr double kLumaG = 0.587;
constexpr double kLumaB = 0.114;

inline float luma(float r, float g, float b) {
  return static_cast<float>(kLumaR * r + kLumaG * g + kLumaB * b);
}

/// Horizontal flip (mirrors the W axis).
inline ImageSample hflip(const ImageSample &in) {
  ImageSample out = in;
  for (int c = 0; c < in.channels; ++c)
    for (int z = 0; z < in.depth; ++z)
      for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
          out.at(c, z, y, x) = in.at(c, z, y, in.width - 1 - x);
  return out;
}

inline ImageSample to_grayscale_rgb(const ImageSample &in) {
  ImageSample out = in;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      float l = luma(in.at(0, y, x), in.at(1, y, x), in.at(2, y, x));
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = l;
    }
  return out;
}

/// Random crop (resized back), horizontal flip, colour jitter and
/// grayscaling. Colour transforms apply to 2D RGB samples only.
inline ImageSample augment(const ImageSample &in, const AugmentationPolicy &p,
                           Rng &rng) {
  ImageSample out = in;
  bool crop = p.crop_enabled && p.crop_scale[0] < 1.0;
  if (crop) {
    double area = uniform(rng, p.crop_scale[0], p.crop_scale[1]);
    if (p.crop_scale[0] == p.crop_scale[1])
      area = p.crop_scale[0];
    int spatial = in.dims == 2 ? 2 : 3;
    double side = std::pow(area, 1.0 / spatial);
    std::array<int, 3> ext{in.depth, in.height, in.width};
    std::array<double, 3> start{0, 0, 0};
    std::array<double, 3> len{static_cast<double>(ext[0]),
                              static_cast<double>(ext[1]),
                              static_cast<double>(ext[2])};
    for (int a = 3 - spatial; a < 3; ++a) {
      len[a] = std::max(1.0, std::round(ext[a] * side));
      start[a] = std::floor(uniform01(rng) * (ext[a] - len[a] + 1));
    }
    out = detail::resample_window(out, start, len, ext);
  }
  if (p.hflip_enabled && p.hflip_prob > 0.0 && bernoulli(rng, p.hflip_prob))
    out = hflip(out);

  bool colour = in.dims == 2 && in.channels == 3;
  if (colour && p.jitter_enabled && p.jitter_strength > 0.0) {
    double s = p.jitter_strength;
    float bright = static_cast<float>(uniform(rng, 1.0 - s, 1.0 + s));
    float contrast = static_cast<float>(uniform(rng, 1.0 - s, 1.0 + s));
    float sat = static_cast<float>(uniform(rng, 1.0 - s, 1.0 + s));
    for (float &v : out.data)
      v = std::clamp(v * bright, 0.0f, 1.0f);
    double mean = 0.0;
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        mean += luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
    float m = static_cast<float>(mean / (out.height * out.width));
    for (float &v : out.data)
      v = std::clamp((v - m) * contrast + m, 0.0f, 1.0f);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        float l = luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
        for (int c = 0; c < 3; ++c)
          out.at(c, y, x) =
              std::clamp(l + (out.at(c, y, x) - l) * sat, 0.0f, 1.0f);
      }
  }
  if (colour && p.grayscale_enabled && p.grayscale_prob > 0.0 &&
      bernoulli(rng, p.grayscale_prob))
    out = to_grayscale_rgb(out);
  return out;
}

// ---------------------------------------------------------------------------
// Sobel gradient maps

/// Single-channel H x W grid.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float &operator()(int y, int x) {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  float operator()(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
};

struct SobelKernels {
  using Kernel = std::array<std::array<int, 3>, 3>;
  static constexpr Kernel gx{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
  static constexpr Kernel gy{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};
};

/// Sobel magnitude sqrt(Gx^2 + Gy^2) with replicate padding, divided by its
/// per-image maximum (an all-zero response stays zero).
inline Plane sobel_gradient_map(const Plane &img) {
  if (img.height < 3 || img.width < 3)
    throw ShapeError("sobel_gradient_map: image must be at least 3x3, got " +
                     std::to_string(img.height) + "x" +
                     std::to_string(img.width));
  const int h = img.height;
  const int w = img.width;
  std::vector<double> mag(static_cast<std::size_t>(h) * w);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    const int rows[3] = {std::max(y - 1, 0), y, std::min(y + 1, h - 1)};
    for (int x = 0; x < w; ++x) {
      const int cols[3] = {std::max(x - 1, 0), x, std::min(x + 1, w - 1)};
      double gx = 0.0;
      double gy = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double v = img(rows[i], cols[j]);
          gx += SobelKernels::gx[i][j] * v;
          gy += SobelKernels::gy[i][j] * v;
        }
      double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y) * w + x] = m;
      peak = std::max(peak, m);
    }
  }
  Plane out{h, w, std::vector<float>(mag.size(), 0.0f)};
  if (peak > 0.0)
    for (std::size_t i = 0; i < mag.size(); ++i)
      out.values[i] = static_cast<float>(mag[i] / peak);
  return out;
}

/// Edge-decoder target: single-channel gradient map of the luminance image
/// (2D), or per-slice gradient maps along `slice_axis` (3D; 0 = D).
inline ImageSample edge_target(const ImageSample &s, int slice_axis = 0) {
  if (slice_axis < 0 || slice_axis > 2)
    throw ConfigError("slice_axis must be 0, 1 or 2");
  if (s.channels != 1 && s.channels != 3)
    throw ShapeError("edge_target: expected 1 or 3 channels");
  ImageSample gray = s;
  gray.channels = 1;
  gray.data.assign(s.voxels(), 0.0f);
  for (int z = 0; z < s.depth; ++z)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        gray.at(0, z, y, x) =
            s.channels == 3
                ? luma(s.at(0, z, y, x), s.at(1, z, y, x), s.at(2, z, y, x))
                : s.at(0, z, y, x);

  if (s.dims == 2) {
    Plane p{s.height, s.width, gray.data};
    gray.data = sobel_gradient_map(p).values;
    return gray;
  }

  // Slice grid extents for each axis choice: (count, rows, cols).
  const std::array<int, 3> ext{s.depth, s.height, s.width};
  const int a = slice_axis;
  const int r = a == 0 ? 1 : 0;
  const int c = a == 2 ? 1 : 2;
  ImageSample out = gray;
  std::array<int, 3> idx{};
  for (int k = 0; k < ext[a]; ++k) {
    Plane p{ext[r], ext[c],
            std::vector<float>(static_cast<std::size_t>(ext[r]) * ext[c])};
    idx[a] = k;
    for (int i = 0; i < ext[r]; ++i)
      for (int j = 0; j < ext[c]; ++j) {
        idx[r] = i;
        idx[c] = j;
        p(i, j) = gray.at(0, idx[0], idx[1], idx[2]);
      }
    Plane g = sobel_gradient_map(p);
    for (int i = 0; i < ext[r]; ++i)
      for (int j = 0; j < ext[c]; ++j) {
        idx[r] = i;
        idx[c] = j;
        out.at(0, idx[0], idx[1], idx[2]) = g(i, j);
      }
  }
  return out;
}

/// Extracts slice `index` along `axis` of channel `channel` as a 2D sample.
inline ImageSample volume_slice(const ImageSample &v, int axis, int index) {
  if (v.dims != 3)
    throw ShapeError("volume_slice: sample is not a volume");
  const std::array<int, 3> ext{v.depth, v.height, v.width};
  const int r = axis == 0 ? 1 : 0;
  const int c = axis == 2 ? 1 : 2;
  ImageSample out = make_image(v.channels, ext[r], ext[c]);
  out.id = v.id;
  std::array<int, 3> idx{};
  idx[axis] = index;
  for (int ch = 0; ch < v.channels; ++ch)
    for (int i = 0; i < ext[r]; ++i)
      for (int j = 0; j < ext[c]; ++j) {
        idx[r] = i;
        idx[c] = j;
        out.at(ch, i, j) = v.at(ch, idx[0], idx[1], idx[2]);
      }
  return out;
}

} // namespace uni4eye
