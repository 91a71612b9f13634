#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsattr/types.hpp"

namespace dsattr {

/// Deterministic RNG used everywhere; never seeded from the environment.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  Real uniform(Real lo, Real hi) {
    std::uniform_real_distribution<Real> d(lo, hi);
    return d(gen_);
  }
  Real normal() {
    std::normal_distribution<Real> d(0.0, 1.0);
    return d(gen_);
  }
  // in [0, n)
  int uniform_int(int n) {
    std::uniform_int_distribution<int> d(0, n - 1);
    return d(gen_);
  }
  int uniform_range(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
  }
  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[uniform_int(static_cast<int>(v.size()))];
  }
  /// Sample index from unnormalized non-negative weights.
  int categorical(const Vec& weights) {
    Real total = weights.sum();
    Real u = uniform(0.0, total);
    Real acc = 0.0;
    for (int i = 0; i < weights.size(); ++i) {
      acc += weights(i);
      if (u <= acc) return i;
    }
    return static_cast<int>(weights.size()) - 1;
  }
  Mat uniform_mat(Eigen::Index rows, Eigen::Index cols, Real scale) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform(-scale, scale);
    return m;
  }
  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

inline bool deterministic_mode() {
  const char* v = std::getenv("DS_ATTR_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

inline void warn(const std::string& msg) { std::cerr << "[dsattr] warning: " << msg << "\n"; }

// File helpers. Writes go through a sibling temp file plus rename so a
// crash never leaves a truncated artifact behind.
std::string read_text_file(const std::string& path);
std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_file_atomic(const std::string& path, const void* data, std::size_t n);
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace dsattr
