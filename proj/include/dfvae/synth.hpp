#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfvae/media.hpp"

namespace dfvae {

/// Colors and proportions that make one synthetic person recognizable.
struct IdentityParams {
  std::string name;
  std::array<double, 3> skin{0.85, 0.68, 0.55};
  std::array<double, 3> hair{0.25, 0.15, 0.08};
  std::array<double, 3> iris{0.20, 0.35, 0.55};
  std::array<double, 3> lips{0.70, 0.30, 0.30};
  std::array<double, 3> background{0.30, 0.45, 0.60};
  double head_width = 0.36;   // half-axes, fraction of the image side
  double head_height = 0.44;
  double eye_spacing = 0.36;  // fraction of the head half-width
  double eye_size = 0.10;
  double mouth_width = 0.38;
  double hairline = 0.45;     // hair covers the head above this fraction of the half-height

  /// Deterministic random identity.
  static IdentityParams from_seed(std::uint64_t seed, std::string name);
};

struct ExpressionParams {
  double mouth_open = 0.0;  // [0, 1]
  double smile = 0.0;       // [−1, 1]
  double eye_open = 1.0;    // [0, 1]
  double brow_raise = 0.0;  // [−1, 1]
};

struct LightDirection {
  double x = 0.0;
  double y = -0.3;
  double z = 1.0;
};

/// Parametric cartoon face with its exact 68-point landmark layout. `pose`
/// is yaw in degrees; DomainError outside [−90, 90].
FaceFrame synth_face(const IdentityParams& identity, double pose, const ExpressionParams& expression,
                     const LightDirection& light, int size = 64, int frame_index = 0);

struct SynthClipConfig {
  int frames = 8;
  int size = 64;
  double fps = 25.0;
  double pose_amplitude = 25.0;  // degrees
  double motion_rate = 0.35;     // radians of phase per frame
};

/// Smooth head turn and talking motion; phase and pose offset come from `seed`.
VideoClip synth_clip(const IdentityParams& identity, const std::string& clip_id, const SynthClipConfig& config,
                     std::uint64_t seed, int light_condition = 0);

/// One of nine fixed lighting conditions.
LightDirection lighting_condition(int index);

struct SynthDatasetConfig {
  int identities = 4;
  int clips_per_identity = 2;
  SynthClipConfig clip;
  std::uint64_t seed = 0;
};

/// Writes every clip under `root` as a clip directory and returns a manifest
/// with all entries labeled real and assigned to the train split.
DatasetManifest synth_dataset(const std::filesystem::path& root, const SynthDatasetConfig& config);

std::vector<IdentityParams> synth_identities(int count, std::uint64_t seed);

}  // namespace dfvae
