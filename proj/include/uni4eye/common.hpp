// SPDX-License-Identifier: Apache-2.0
/**
 * @file   common.hpp
 * @brief  Shared aliases, error types and small utilities used by every
 *         uni4eye module.
 */
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace uni4eye {

/// Row-major dynamic matrix; token sequences are stored one token per row.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

/// Base class of everything thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor or grid dimensions disagree with a contract.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// File system or decoding failure.
class IoError : public Error {
public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

inline void require(bool cond, std::string_view msg) {
  if (!cond)
    throw Error(std::string(msg));
}

inline void require_shape(bool cond, std::string_view msg) {
  if (!cond)
    throw ShapeError(std::string(msg));
}

/// 64-bit FNV-1a; stable across platforms, used for split assignment and
/// checkpoint integrity.
class Fnv1a64 {
public:
  void update(std::span<const unsigned char> bytes) {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update(std::span(reinterpret_cast<const unsigned char *>(s.data()),
                     s.size()));
  }
  std::uint64_t digest() const { return state_; }

private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  Fnv1a64 h;
  h.update(s);
  return h.digest();
}

/// Uniform draw in [0, 1).
inline double uniform01(Rng &rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double uniform(Rng &rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(Rng &rng, double p) { return uniform01(rng) < p; }

/// Normal(0, sigma) truncated at +-2 sigma by rejection.
inline double truncated_normal(Rng &rng, double sigma) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (;;) {
    double z = dist(rng);
    if (std::abs(z) <= 2.0)
      return z * sigma;
  }
}

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

} // namespace uni4eye
