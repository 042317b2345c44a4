#pragma once

#include <Eigen/Dense>

#include <string>

#include "dfvae/error.hpp"

namespace dfvae {

/// Dense planar C×H×W tensor. Each channel is one row of a row-major
/// C×(H·W) Eigen array, so per-channel reductions are plain `rowwise()`
/// expressions and the flat storage is exactly CHW order.
template <typename Scalar>
class Planar {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Planar() = default;
  Planar(int channels, int height, int width, Scalar fill = Scalar(0))
      : height_(height), width_(width), data_(Storage::Constant(channels, height * width, fill)) {
    if (channels < 0 || height < 0 || width < 0) throw ShapeError("negative planar dimension");
  }
  Planar(int height, int width, Storage data) : height_(height), width_(width), data_(std::move(data)) {
    if (data_.cols() != static_cast<Eigen::Index>(height) * width)
      throw ShapeError("planar storage does not match H×W");
  }

  int channels() const { return static_cast<int>(data_.rows()); }
  int height() const { return height_; }
  int width() const { return width_; }
  Eigen::Index pixels() const { return data_.cols(); }
  Eigen::Index size() const { return data_.size(); }

  Scalar& operator()(int c, int y, int x) { return data_(c, static_cast<Eigen::Index>(y) * width_ + x); }
  Scalar operator()(int c, int y, int x) const { return data_(c, static_cast<Eigen::Index>(y) * width_ + x); }

  auto channel(int c) { return data_.row(c); }
  auto channel(int c) const { return data_.row(c); }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  /// Flat CHW view.
  Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> flat() { return {data_.data(), data_.size()}; }
  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> flat() const { return {data_.data(), data_.size()}; }

  bool same_shape(const Planar& other) const {
    return channels() == other.channels() && height_ == other.height_ && width_ == other.width_;
  }

  std::string shape_string() const {
    return std::to_string(channels()) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
  }

  template <typename To>
  Planar<To> cast() const {
    return Planar<To>(height_, width_, data_.template cast<To>());
  }

  friend bool operator==(const Planar& a, const Planar& b) {
    return a.same_shape(b) && (a.data_ == b.data_).all();
  }

 private:
  int height_ = 0;
  int width_ = 0;
  Storage data_;
};

using PlanarD = Planar<double>;

template <typename Scalar>
void require_same_shape(const Planar<Scalar>& a, const Planar<Scalar>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace dfvae
