#pragma once

#include <span>
#include <vector>

#include "dfvae/media.hpp"

namespace dfvae {

inline constexpr int kDefaultLandmarkCount = 68;

/// K-channel landmark heatmaps; channel k peaks at landmark k.
struct HeatmapStack {
  PlanarD channels;  // K×H′×W′
  double render_sigma = 2.0;

  int landmark_count() const { return channels.channels(); }
};

/// Landmark source plug-in. Implementations must return the same K on every
/// call and signal failure by throwing, never by returning a default.
class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  virtual int landmark_count() const = 0;
  virtual std::vector<Point2> landmarks(const FaceFrame& frame) const = 0;
};

/// Returns the landmarks carried by the frame itself (synthetic faces and
/// clips loaded with stored annotations).
class EmbeddedLandmarkProvider final : public LandmarkProvider {
 public:
  explicit EmbeddedLandmarkProvider(int count = kDefaultLandmarkCount) : count_(count) {}
  int landmark_count() const override { return count_; }
  std::vector<Point2> landmarks(const FaceFrame& frame) const override;

 private:
  int count_;
};

/// σ of 2 px at 64×64, scaled with resolution.
inline double default_heatmap_sigma(int out_size) { return 2.0 * out_size / 64.0; }

/// Renders exp(−d²/2σ²) bumps. Landmarks are in source pixel coordinates
/// (pixel centers at integers) and are mapped onto the H′×W′ grid.
HeatmapStack render_heatmap(std::span<const Point2> landmarks, int source_height, int source_width, double sigma,
                            int out_height, int out_width);

HeatmapStack extract_heatmap(const FaceFrame& frame, const LandmarkProvider& provider, double sigma, int out_height,
                             int out_width);

}  // namespace dfvae
