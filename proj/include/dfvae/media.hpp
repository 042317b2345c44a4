#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dfvae/planar.hpp"

namespace dfvae {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// One cropped RGB face. Pixels are reals in [0,1]; 8-bit conversion only
/// happens at container boundaries.
struct FaceFrame {
  PlanarD pixels;  // 3×H×W
  std::optional<std::vector<Point2>> landmarks;
  std::string identity;
  int frame_index = 0;

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }

  /// Throws ValidationError when any frame invariant is broken.
  void validate() const;
};

FaceFrame make_frame(PlanarD pixels, std::string identity, int frame_index,
                     std::optional<std::vector<Point2>> landmarks = std::nullopt);

enum class MaskKind { binary, blurred };

struct Mask {
  PlanarD values;  // 1×H×W
  MaskKind kind = MaskKind::binary;

  void validate() const;
};

enum class Label { real, fake, unknown };

enum class DistortionKind {
  color_saturation,
  block_wise,
  color_contrast,
  gaussian_blur,
  gaussian_noise,
  jpeg_compression,
  video_compression,
};

inline constexpr std::array<DistortionKind, 7> kAllDistortionKinds = {
    DistortionKind::color_saturation, DistortionKind::block_wise,     DistortionKind::color_contrast,
    DistortionKind::gaussian_blur,    DistortionKind::gaussian_noise, DistortionKind::jpeg_compression,
    DistortionKind::video_compression,
};

inline constexpr int kDistortionLevels = 5;

struct DistortionSpec {
  DistortionKind kind = DistortionKind::gaussian_blur;
  int level = 1;

  void validate() const;
  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

struct VideoClip {
  std::vector<FaceFrame> frames;
  double fps = 25.0;
  std::string clip_id;
  Label label = Label::unknown;
  std::vector<DistortionSpec> distortion_history;

  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }
  std::size_t size() const { return frames.size(); }

  void validate() const;
};

enum class Split { train, val, test, hidden };

struct ManifestEntry {
  std::string clip_id;
  std::string identity;
  Label label = Label::unknown;
  Split split = Split::train;
  std::vector<DistortionSpec> distortion_history;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Identity-grouped clip index. Every identity occurs in exactly one of
/// train/val/test; hidden entries are exempt from that rule.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

std::string_view to_string(Label label);
std::string_view to_string(DistortionKind kind);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
DistortionKind parse_distortion_kind(std::string_view text);
Split parse_split(std::string_view text);

/// Throws ValidationError naming every offending entry.
void validate_manifest(const DatasetManifest& manifest);

/// JSON Lines: one header line, then one line per entry, fixed field order.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Copy of the manifest safe to hand to clients: hidden entries lose their label.
DatasetManifest client_view(const DatasetManifest& manifest);

/// Reference container is a directory of NNNNNN.png frames plus meta.json.
/// Paths ending in .avi/.mp4/.mkv go through the compressed-video adapter
/// with a `<path>.meta.json` sidecar.
VideoClip load_clip(const std::filesystem::path& path);
void write_clip(const VideoClip& clip, const std::filesystem::path& path);

std::filesystem::path clip_directory(const std::filesystem::path& root, std::string_view clip_id);

std::vector<std::uint8_t> to_rgb8(const PlanarD& pixels);
PlanarD from_rgb8(const std::uint8_t* rgb, int height, int width);
/// Lossless PNG bytes of an RGB image in [0,1].
std::vector<std::uint8_t> encode_png(const PlanarD& pixels);

}  // namespace dfvae
