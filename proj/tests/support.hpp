#pragma once

// Hand-rolled generators and fixtures shared by the unit tests.

#include <doctest.h>

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <unistd.h>
#include <random>
#include <string>
#include <vector>

#include "dfvae/media.hpp"

namespace dfvae::test {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin() { return integer(0, 1) == 1; }

  Eigen::VectorXd vector(Eigen::Index n, double lo = -1.0, double hi = 1.0) {
    Eigen::VectorXd v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
  Eigen::ArrayXd normals(Eigen::Index n) {
    Eigen::ArrayXd v(n);
    for (auto& x : v) x = normal();
    return v;
  }
  PlanarD planar(int c, int h, int w, double lo = 0.0, double hi = 1.0) {
    PlanarD p(c, h, w);
    for (auto& x : p.flat()) x = uniform(lo, hi);
    return p;
  }
  FaceFrame frame(int h, int w, std::string identity = "id", int index = 0) {
    return make_frame(planar(3, h, w), std::move(identity), index);
  }
  VideoClip clip(int frames, int h, int w, std::string id = "clip", std::string identity = "id") {
    VideoClip c;
    c.clip_id = std::move(id);
    c.fps = 25.0;
    for (int i = 0; i < frames; ++i) c.frames.push_back(frame(h, w, identity, i));
    return c;
  }
  std::vector<Point2> landmarks(int k, int h, int w, double margin = 0.0) {
    std::vector<Point2> pts;
    for (int i = 0; i < k; ++i) pts.push_back({uniform(margin, w - 1 - margin), uniform(margin, h - 1 - margin)});
    return pts;
  }

 private:
  std::mt19937_64 rng_;
};

/// Runs `body` on `cases` generators seeded from `seed`, naming the failing case.
inline void for_all(int cases, std::uint64_t seed, const std::function<void(Gen&)>& body) {
  for (int i = 0; i < cases; ++i) {
    CAPTURE(i);
    Gen g(seed * 1000003ULL + static_cast<std::uint64_t>(i));
    body(g);
  }
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dfvae-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double max_abs_diff(const PlanarD& a, const PlanarD& b) { return (a.array() - b.array()).abs().maxCoeff(); }

}  // namespace dfvae::test
