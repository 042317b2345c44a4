#include "dfvae/structure.hpp"

#include <algorithm>
#include <cmath>

namespace dfvae {

std::vector<Point2> EmbeddedLandmarkProvider::landmarks(const FaceFrame& frame) const {
  if (!frame.landmarks) throw ExtractionError("frame carries no landmarks");
  if (static_cast<int>(frame.landmarks->size()) != count_)
    throw ExtractionError("frame carries " + std::to_string(frame.landmarks->size()) + " landmarks, expected " +
                          std::to_string(count_));
  return *frame.landmarks;
}

HeatmapStack render_heatmap(std::span<const Point2> landmarks, int source_height, int source_width, double sigma,
                            int out_height, int out_width) {
  if (!(sigma > 0.0)) throw DomainError("heatmap sigma must be positive");
  if (out_height < 1 || out_width < 1) throw ShapeError("heatmap size must be positive");
  const double sx = static_cast<double>(out_width) / source_width;
  const double sy = static_cast<double>(out_height) / source_height;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  HeatmapStack out{PlanarD(static_cast<int>(landmarks.size()), out_height, out_width), sigma};
  for (std::size_t k = 0; k < landmarks.size(); ++k) {
    const auto& p = landmarks[k];
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= source_width - 1 && p.y <= source_height - 1))
      throw ValidationError("landmark " + std::to_string(k) + " at (" + std::to_string(p.x) + "," +
                            std::to_string(p.y) + ") lies outside the image");
    const double cx = (p.x + 0.5) * sx - 0.5;
    const double cy = (p.y + 0.5) * sy - 0.5;
    for (int y = 0; y < out_height; ++y)
      for (int x = 0; x < out_width; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        out.channels(static_cast<int>(k), y, x) = std::clamp(std::exp(-d2 * inv), 0.0, 1.0);
      }
  }
  return out;
}

HeatmapStack extract_heatmap(const FaceFrame& frame, const LandmarkProvider& provider, double sigma, int out_height,
                             int out_width) {
  std::vector<Point2> pts;
  try {
    pts = provider.landmarks(frame);
  } catch (const std::exception& err) {
    throw ExtractionError("landmark provider failed on frame '" + frame.identity + "#" +
                          std::to_string(frame.frame_index) + "': " + err.what());
  }
  if (static_cast<int>(pts.size()) != provider.landmark_count())
    throw ValidationError("provider returned " + std::to_string(pts.size()) + " landmarks, declared " +
                          std::to_string(provider.landmark_count()));
  return render_heatmap(pts, frame.height(), frame.width(), sigma, out_height, out_width);
}

}  // namespace dfvae
