#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "dfvae/autodiff.hpp"
#include "dfvae/media.hpp"
#include "dfvae/nn.hpp"

namespace dfvae {

/// Mask-weighted per-channel statistics: mean = Σ m·x / Σ m and
/// std = sqrt(Σ m·(x − mean)² / Σ m). Only pixels with m > 0 contribute.
struct StyleStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  double support = 0.0;  // Σ m
};

StyleStats masked_stats(const PlanarD& image, const Mask& mask);

/// Filled convex hull of the landmarks, rasterized at pixel centers.
Mask face_mask(std::span<const Point2> landmarks, int height, int width);

/// 3 px at 128×128, scaled with resolution.
inline double default_mask_sigma(int size) { return 3.0 * size / 128.0; }

/// Normalized separable Gaussian (radius ⌈3σ⌉, reflect-101 border).
Mask blur_mask(const Mask& mask, double sigma);

/// Masked AdaIN: inside the mask support the content is affinely mapped so
/// its mask-weighted channel moments equal the style's; outside it passes
/// through. Throws DegenerateStyleError when the masked content is flat.
/// The result is an unclamped intermediate image, so it is not a FaceFrame.
PlanarD madain(const PlanarD& content, const PlanarD& style, const Mask& mask_b);

/// Feature backbone plug-in. Stage i consumes stage i−1's output (stage 0
/// consumes the image); every stage's output is one feature layer.
class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  virtual int layers() const = 0;
  virtual std::vector<int> layer_channels() const = 0;
  virtual ad::Var stage(int index, ad::Var input) const = 0;

  std::vector<ad::Var> features(ad::Var image) const;
};

/// Returns the image itself, as one layer.
class IdentityExtractor final : public PerceptualExtractor {
 public:
  int layers() const override { return 1; }
  std::vector<int> layer_channels() const override { return {3}; }
  ad::Var stage(int, ad::Var input) const override { return input; }
};

/// Fixed random-weight conv+ReLU stack, one stage per feature layer, each
/// stage after the first preceded by 2×2 average pooling.
class RandomConvExtractor final : public PerceptualExtractor {
 public:
  explicit RandomConvExtractor(std::vector<int> channels = {8, 16, 32, 64}, std::uint64_t seed = 19);
  int layers() const override { return static_cast<int>(channels_.size()); }
  std::vector<int> layer_channels() const override { return channels_; }
  ad::Var stage(int index, ad::Var input) const override;

 private:
  std::vector<int> channels_;
  std::vector<std::pair<Eigen::ArrayXd, Eigen::ArrayXd>> weights_;  // (kernel, bias) per stage
  std::vector<ad::Shape> shapes_;
};

/// D_δ: the image-to-image decoder applied after MAdaIN.
class FusionDecoder {
 public:
  explicit FusionDecoder(int hidden_channels = 16, std::uint64_t seed = 0, double leaky_slope = 0.2);

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  int hidden_channels() const { return hidden_; }

  ad::Var forward(nn::Binding& params, ad::Var x) const;
  PlanarD operator()(const PlanarD& image) const;

 private:
  int hidden_;
  double slope_;
  nn::ParameterStore params_;
  nn::Conv2d first_;
  nn::Conv2d second_;
};

using ImageMap = std::function<PlanarD(const PlanarD&)>;

/// m ⊙ face + (1 − m) ⊙ target, clamped; equals the target wherever m = 0.
FaceFrame composite(const PlanarD& face, const FaceFrame& target, const Mask& mask_b);

/// d̄ = m ⊙ D_δ(MAdaIN(d, y, m)) + (1 − m) ⊙ y, clamped to [0,1]; equals y
/// bit-exactly wherever m = 0.
FaceFrame fuse(const FaceFrame& reenacted, const FaceFrame& target, const Mask& mask_b, const ImageMap& d_delta);

struct MadainLossTerms {
  ad::Var content;
  ad::Var style;
};

/// Content term ‖m·o − m·c‖₂ on masked images and style term
/// Σᵢ ‖μ(Φᵢ(m·o)) − μ(Φᵢ(m·s))‖₂ + ‖σ(Φᵢ(m·o)) − σ(Φᵢ(m·s))‖₂, per sample
/// and averaged over the batch. `mask` is [N,1,H,W].
MadainLossTerms madain_loss(ad::Var output, ad::Var content_ref, ad::Var style_ref, ad::Var mask,
                            const PerceptualExtractor& extractor);

std::pair<double, double> madain_loss(const FaceFrame& output, const FaceFrame& content_ref,
                                      const FaceFrame& style_ref, const Mask& mask_b,
                                      const PerceptualExtractor& extractor);

inline constexpr double kFeatureStdEps = 1e-8;

}  // namespace dfvae
